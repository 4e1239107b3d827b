"""Dataset ingestion, spin embeddings, and image export.

IDX tensors (the Fashion-MNIST container format) are parsed big-endian per
the magic header.  Grayscale values can be embedded as sums of binary
variables: value v in [0, k] maps to k binaries with exactly v ones
(canonical leading-ones fill), then to spins by 2z - 1.  Labels become
one-hot codes with a configurable repetition count per bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class DataError(ValueError):
    pass


@dataclass
class SpinDataset:
    """Spin samples plus optional replicated one-hot label codes."""

    samples: np.ndarray  # (n, n_visible) int8 in {-1, +1}
    label_codes: np.ndarray | None = None  # (n, classes * repetitions) int8
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.abs(self.samples) == 1):
            raise DataError("samples must be spins in {-1, +1}")
        if self.label_codes is not None:
            cls = self.meta.get("label_classes")
            rep = self.meta.get("repetitions")
            if cls and rep and self.label_codes.shape[1] != cls * rep:
                raise DataError("label block length must be classes * repetitions")

    @property
    def n(self) -> int:
        return len(self.samples)


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an IDX byte stream into an ndarray (native byte order)."""
    if len(data) < 4:
        raise DataError("truncated IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype_code not in _IDX_DTYPES:
        raise DataError(f"bad IDX magic {data[:4].hex()}")
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise DataError("truncated IDX dimension list")
    dims = struct.unpack(f">{ndim}I", data[4:header_len])
    dtype = _IDX_DTYPES[dtype_code]
    count = int(np.prod(dims)) if dims else 1
    payload = data[header_len:]
    if len(payload) < count * dtype.itemsize:
        raise DataError(
            f"IDX payload too short: need {count * dtype.itemsize} bytes "
            f"at offset {header_len}, have {len(payload)}")
    arr = np.frombuffer(payload, dtype=dtype, count=count).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def serialize_idx(arr: np.ndarray) -> bytes:
    """Inverse of parse_idx for u8 tensors."""
    if arr.dtype != np.uint8:
        raise DataError("only u8 tensors are serialized")
    header = struct.pack(">HBB", 0, 0x08, arr.ndim)
    header += struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def binarize(images: np.ndarray, threshold: int = 127) -> np.ndarray:
    """Pixels strictly above threshold become +1, the rest -1."""
    if not 0 <= threshold <= 255:
        raise DataError("threshold must lie in [0, 255]")
    flat = images.reshape(len(images), -1)
    return np.where(flat > threshold, 1, -1).astype(np.int8)


def embed_integer(values: np.ndarray, k_bits: int) -> np.ndarray:
    """Map integers in [0, k_bits] to spin blocks with v leading +1s."""
    values = np.asarray(values)
    if np.any(values < 0) or np.any(values > k_bits):
        raise DataError(f"values must lie in [0, {k_bits}]")
    n, d = values.shape
    out = np.full((n, d * k_bits), -1, dtype=np.int8)
    pos = np.arange(k_bits)
    blocks = np.where(pos[None, None, :] < values[:, :, None], 1, -1)
    out = blocks.reshape(n, d * k_bits).astype(np.int8)
    return out


def decode_integer(spins: np.ndarray, k_bits: int) -> np.ndarray:
    """Inverse of embed_integer: count the +1 bits in each block."""
    n = len(spins)
    blocks = spins.reshape(n, -1, k_bits)
    return ((blocks > 0).sum(axis=2)).astype(np.int64)


def one_hot_labels(labels: np.ndarray, n_classes: int,
                   repetitions: int = 5) -> np.ndarray:
    """One-hot spin code with each bit repeated `repetitions` times."""
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise DataError(f"labels must lie in [0, {n_classes})")
    onehot = np.full((len(labels), n_classes), -1, dtype=np.int8)
    onehot[np.arange(len(labels)), labels] = 1
    return np.repeat(onehot, repetitions, axis=1)


def export_pgm(samples: np.ndarray, width: int, height: int,
               bits_per_pixel: int = 1) -> list[bytes]:
    """Render spin samples as binary PGM (P5) images.

    Multi-bit pixels are decoded by the summed-binary rule; gray levels are
    scaled so that v = bits_per_pixel is white.
    """
    if samples.shape[1] != width * height * bits_per_pixel:
        raise DataError("width * height * bits_per_pixel must equal n_visible")
    images = []
    for s in samples:
        v = decode_integer(s[None, :], bits_per_pixel)[0]
        gray = (v * 255 // bits_per_pixel).astype(np.uint8).reshape(height, width)
        header = f"P5\n{width} {height}\n255\n".encode()
        images.append(header + gray.tobytes())
    return images


def synthetic_modes(n_samples: int, n_bits: int, n_modes: int,
                    flip_prob: float = 0.02, seed: int = 0,
                    min_distance: int | None = None):
    """A multimodal spin dataset: random prototypes plus flip noise.

    Returns (samples, mode_ids, prototypes).  Prototypes are redrawn until
    all pairwise Hamming distances reach min_distance (default n_bits // 3).
    """
    if min_distance is None:
        min_distance = max(1, n_bits // 3)
    rng = np.random.default_rng(seed)
    while True:
        protos = (rng.integers(0, 2, size=(n_modes, n_bits)) * 2 - 1).astype(np.int8)
        dists = [
            int(np.sum(protos[i] != protos[j]))
            for i in range(n_modes) for j in range(i + 1, n_modes)
        ]
        if not dists or min(dists) >= min_distance:
            break
    mode_ids = rng.integers(0, n_modes, size=n_samples)
    samples = protos[mode_ids].copy()
    flips = rng.random(size=samples.shape) < flip_prob
    samples[flips] *= -1
    return samples, mode_ids, protos


def save_dataset(ds: SpinDataset, path) -> None:
    """Bit-packed samples (+ labels) with a JSON manifest."""
    n, d = ds.samples.shape
    packed = np.packbits((ds.samples > 0).astype(np.uint8), axis=1)
    with open(path, "wb") as f:
        f.write(packed.tobytes())
        if ds.label_codes is not None:
            f.write(np.packbits((ds.label_codes > 0).astype(np.uint8),
                                axis=1).tobytes())
    manifest = {"n": n, "n_visible": d,
                "n_label_bits": 0 if ds.label_codes is None
                else int(ds.label_codes.shape[1]),
                "meta": ds.meta}
    with open(str(path) + ".json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_dataset(path) -> SpinDataset:
    with open(str(path) + ".json") as f:
        manifest = json.load(f)
    n, d = manifest["n"], manifest["n_visible"]
    nl = manifest["n_label_bits"]
    row = (d + 7) // 8
    lrow = (nl + 7) // 8
    with open(path, "rb") as f:
        raw = f.read()
    samples = _unpack_spins(raw[: n * row], n, d)
    labels = _unpack_spins(raw[n * row:], n, nl) if nl else None
    return SpinDataset(samples=samples, label_codes=labels,
                       meta=manifest.get("meta", {}))


def _unpack_spins(raw: bytes, n: int, d: int) -> np.ndarray:
    row = (d + 7) // 8
    packed = np.frombuffer(raw, dtype=np.uint8).reshape(n, row)
    bits = np.unpackbits(packed, axis=1)[:, :d]
    return (bits.astype(np.int8) * 2 - 1)
