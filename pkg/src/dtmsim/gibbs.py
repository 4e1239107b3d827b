"""Two-color block Gibbs sampling over batches of chains.

One sweep resamples every unclamped node exactly once: all of color block 0
conditioned on block 1, then block 1 conditioned on the updated block 0.
Randomness comes from counter-based Philox streams keyed by (run seed,
sweep index, phase), so results are bit-identical regardless of how the
work is scheduled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .boltzmann import BoltzmannMachine
from .grid import GridGraph


class SamplerError(ValueError):
    pass


@dataclass
class SamplerConfig:
    n_sweeps: int
    n_chains: int = 1
    seed: int = 0
    record_every: int = 0  # 0 = final state only

    def __post_init__(self):
        if self.n_sweeps < 1:
            raise SamplerError("n_sweeps must be >= 1")
        if self.n_chains < 1:
            raise SamplerError("n_chains must be >= 1")


@dataclass
class ChainBatch:
    """Mutable state of n_chains parallel chains over one machine's graph."""

    states: np.ndarray  # (n_chains, n_nodes) int8
    input_values: np.ndarray  # (n_chains, n_visible) int8
    clamp_mask: np.ndarray  # (n_nodes,) bool, shared by all chains
    seed: int
    sweep_index: int = 0

    @property
    def n_chains(self) -> int:
        return self.states.shape[0]


@dataclass
class SampleTrace:
    """Recorded frames plus final states from a sampling run."""

    frames: np.ndarray  # (n_chains, n_frames, n_nodes) int8
    frame_sweeps: np.ndarray  # (n_frames,) sweep stamp of each frame
    final: np.ndarray  # (n_chains, n_nodes) int8
    node_updates: int = 0
    elapsed_s: float = 0.0

    @property
    def throughput(self) -> float:
        """Node updates per second over the run."""
        return self.node_updates / self.elapsed_s if self.elapsed_s > 0 else 0.0


def random_batch(m: BoltzmannMachine, n_chains: int, seed: int,
                 clamp_mask: np.ndarray | None = None,
                 input_values: np.ndarray | None = None,
                 values: np.ndarray | None = None) -> ChainBatch:
    """Fair-coin initialization on unclamped nodes (the forward-process
    stationary state); clamped nodes take the supplied values."""
    g = m.graph
    rng = np.random.Generator(np.random.Philox(key=seed))
    states = (rng.integers(0, 2, size=(n_chains, g.n_nodes)) * 2 - 1).astype(np.int8)
    if clamp_mask is None:
        clamp_mask = np.zeros(g.n_nodes, dtype=bool)
    if values is not None:
        states[:, clamp_mask] = values[:, clamp_mask]
    if input_values is None:
        input_values = np.full((n_chains, g.n_visible), -1, dtype=np.int8)
    return ChainBatch(states=states, input_values=input_values.astype(np.int8),
                      clamp_mask=clamp_mask, seed=seed)


class GibbsEngine:
    """Chromatic sampler bound to one machine; owns the batch it mutates."""

    def __init__(self, m: BoltzmannMachine):
        self.machine = m
        g = m.graph
        self.block0, self.block1 = g.color_blocks()
        self._W = m.weight_matrix  # (n, n) CSR, float64
        # per-node clamped-input field, exponent units / (2 beta)
        self._input_field = np.zeros(g.n_nodes)
        self.sweep_count = 0  # instrumentation: total sweeps executed

    def _input_term(self, batch: ChainBatch) -> np.ndarray:
        """(n_chains, n_nodes) contribution Gamma_i/(2 beta) * input_i."""
        g = self.machine.graph
        out = np.zeros((batch.n_chains, g.n_nodes))
        out[:, g.visible] = (
            batch.input_values.astype(np.float64)
            * self.machine.input_coupling.astype(np.float64)
            / self.machine.beta
        )
        return out

    def sweep(self, batch: ChainBatch) -> ChainBatch:
        """Resample block 0 then block 1; clamped nodes are untouched."""
        m = self.machine
        g = m.graph
        if batch.states.shape[1] != g.n_nodes:
            raise SamplerError("batch state does not match the machine's graph")
        x = batch.states.astype(np.float64)
        inp = self._input_term(batch)
        free = ~batch.clamp_mask
        for phase, block in enumerate((self.block0, self.block1)):
            upd = block[free[block]]
            if upd.size == 0:
                continue
            # W is symmetric, so row-slicing gives the neighbor sums for upd
            fields = (self._W[upd, :] @ x.T).T + m.h[upd] + inp[:, upd]
            p_plus = _sigmoid(2.0 * m.beta * fields)
            # stream index 0 is reserved for chain initialization
            stream = 1 + 2 * batch.sweep_index + phase
            rng = np.random.Generator(
                np.random.Philox(key=[batch.seed, stream])
            )
            u = rng.random(size=p_plus.shape)
            x[:, upd] = np.where(u < p_plus, 1.0, -1.0)
        batch.states = x.astype(np.int8)
        batch.sweep_index += 1
        self.sweep_count += 1
        return batch

    def run(self, batch: ChainBatch, cfg: SamplerConfig) -> SampleTrace:
        """Run cfg.n_sweeps sweeps, recording every record_every sweeps."""
        import time

        t0 = time.perf_counter()
        frames = []
        stamps = []
        for k in range(cfg.n_sweeps):
            self.sweep(batch)
            if cfg.record_every and (k + 1) % cfg.record_every == 0:
                frames.append(batch.states.copy())
                stamps.append(batch.sweep_index)
        elapsed = time.perf_counter() - t0
        n_free = int(np.sum(~batch.clamp_mask))
        if frames:
            frame_arr = np.stack(frames, axis=1)
        else:
            frame_arr = np.empty((batch.n_chains, 0, batch.states.shape[1]),
                                 dtype=np.int8)
        return SampleTrace(
            frames=frame_arr,
            frame_sweeps=np.array(stamps, dtype=np.int64),
            final=batch.states.copy(),
            node_updates=cfg.n_sweeps * batch.n_chains * n_free,
            elapsed_s=elapsed,
        )


def run(m: BoltzmannMachine, cfg: SamplerConfig,
        init: ChainBatch | None = None) -> SampleTrace:
    """Convenience wrapper: random init (unless given) then sample."""
    if init is None:
        init = random_batch(m, cfg.n_chains, cfg.seed)
    return GibbsEngine(m).run(init, cfg)


def estimate_moments(trace: SampleTrace, graph: GridGraph, burn_in: int = 0):
    """Sample means of x_i and x_i x_j over retained frames and chains.

    burn_in counts recorded frames to drop, and must leave at least one.
    """
    n_frames = trace.frames.shape[1]
    if burn_in >= n_frames:
        raise SamplerError(f"burn_in {burn_in} leaves no frames (have {n_frames})")
    kept = trace.frames[:, burn_in:, :].astype(np.float64)
    means = kept.mean(axis=(0, 1))
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    corr = (kept[:, :, u] * kept[:, :, v]).mean(axis=(0, 1))
    return means, corr


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# trace export

def save_trace(trace: SampleTrace, path, manifest_extra: dict | None = None) -> None:
    """Frames as bit-packed binary (spin +1 -> bit 1) with a JSON manifest."""
    n_chains, n_frames, n_nodes = trace.frames.shape
    bits = (trace.frames > 0).astype(np.uint8).reshape(-1, n_nodes)
    packed = np.packbits(bits, axis=1)
    with open(path, "wb") as f:
        f.write(packed.tobytes())
    manifest = {
        "n_chains": n_chains,
        "n_frames": n_frames,
        "n_nodes": n_nodes,
        "frame_sweeps": trace.frame_sweeps.tolist(),
        "node_order": "row-major (y, x)",
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    with open(str(path) + ".json", "w") as f:
        json.dump(manifest, f, indent=2)


def load_trace(path) -> SampleTrace:
    with open(str(path) + ".json") as f:
        manifest = json.load(f)
    n_chains = manifest["n_chains"]
    n_frames = manifest["n_frames"]
    n_nodes = manifest["n_nodes"]
    row_bytes = (n_nodes + 7) // 8
    with open(path, "rb") as f:
        packed = np.frombuffer(f.read(), dtype=np.uint8)
    packed = packed.reshape(n_chains * n_frames, row_bytes)
    bits = np.unpackbits(packed, axis=1)[:, :n_nodes]
    frames = (bits.astype(np.int8) * 2 - 1).reshape(n_chains, n_frames, n_nodes)
    final = frames[:, -1, :].copy() if n_frames else np.empty((n_chains, n_nodes),
                                                              dtype=np.int8)
    return SampleTrace(frames=frames,
                       frame_sweeps=np.array(manifest["frame_sweeps"]),
                       final=final)
