"""Boltzmann machine parameters, energy, and the single-node update law.

Energy convention: with spins x in {-1, +1},

    E(x) = -beta * (sum_edges J_uv x_u x_v + sum_i h_i x_i)
           - sum_visible (Gamma_i / 2) x_i * input_i

J is stored once per undirected edge (the double-sum convention of the
quadratic energy is folded into the stored value).  The clamped-input term
comes from the forward-process coupling and is not scaled by beta: Gamma is
fixed by the noise schedule, so the conditional update exponent for node i is

    2 * beta * (sum_j J_ij x_j + h_i) + Gamma_i * input_i.

``local_field`` divides the input term by beta so that the probability of
node i taking +1 is always sigmoid(2 * beta * local_field).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import GridGraph

_MAGIC = b"DTMB"
_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass
class SpinState:
    """Spins for every grid node plus clamped companion-input spins."""

    values: np.ndarray  # (n_nodes,) int8 in {-1, +1}
    input_values: np.ndarray  # (n_visible,) int8 in {-1, +1}
    clamp_mask: np.ndarray  # (n_nodes,) bool; True = frozen during sampling

    @classmethod
    def zeros(cls, graph: GridGraph) -> "SpinState":
        return cls(
            values=np.full(graph.n_nodes, -1, dtype=np.int8),
            input_values=np.full(graph.n_visible, -1, dtype=np.int8),
            clamp_mask=np.zeros(graph.n_nodes, dtype=bool),
        )


@dataclass
class BoltzmannMachine:
    """Weights J (per edge), biases h, inverse temperature, input couplings."""

    graph: GridGraph
    J: np.ndarray  # (n_edges,) float32
    h: np.ndarray  # (n_nodes,) float32
    beta: float = 1.0
    input_coupling: np.ndarray = None  # (n_visible,) float32, Gamma_i / 2
    _W: sp.csr_matrix = field(default=None, repr=False)

    def __post_init__(self):
        g = self.graph
        self.J = np.asarray(self.J, dtype=np.float32)
        self.h = np.asarray(self.h, dtype=np.float32)
        if self.beta <= 0:
            raise ModelError("beta must be positive")
        if self.J.shape != (len(g.edges),):
            raise ModelError(f"J has shape {self.J.shape}, expected ({len(g.edges)},)")
        if self.h.shape != (g.n_nodes,):
            raise ModelError(f"h has shape {self.h.shape}, expected ({g.n_nodes},)")
        if self.input_coupling is None:
            self.input_coupling = np.zeros(g.n_visible, dtype=np.float32)
        self.input_coupling = np.asarray(self.input_coupling, dtype=np.float32)
        if np.any(self.input_coupling < 0):
            raise ModelError("input couplings must be non-negative")
        if self.input_coupling.shape != (g.n_visible,):
            raise ModelError("input_coupling must cover exactly the visible nodes")

    @classmethod
    def initialize(cls, graph: GridGraph, seed: int = 0, scale: float = 1.0,
                   beta: float = 1.0) -> "BoltzmannMachine":
        """Small random J, zero h: an easy-to-sample starting landscape."""
        rng = np.random.default_rng(seed)
        J = rng.uniform(-0.01, 0.01, size=len(graph.edges)).astype(np.float32) * scale
        h = np.zeros(graph.n_nodes, dtype=np.float32)
        return cls(graph=graph, J=J, h=h, beta=beta)

    @property
    def weight_matrix(self) -> sp.csr_matrix:
        """Symmetric sparse n x n matrix of couplings, built lazily."""
        if self._W is None:
            g = self.graph
            u, v = g.edges[:, 0], g.edges[:, 1]
            n = g.n_nodes
            self._W = sp.csr_matrix(
                (
                    np.concatenate([self.J, self.J]).astype(np.float64),
                    (np.concatenate([u, v]), np.concatenate([v, u])),
                ),
                shape=(n, n),
            )
        return self._W

    def invalidate_cache(self) -> None:
        self._W = None

    def copy(self) -> "BoltzmannMachine":
        return BoltzmannMachine(
            graph=self.graph, J=self.J.copy(), h=self.h.copy(), beta=self.beta,
            input_coupling=self.input_coupling.copy())


def energy(m: BoltzmannMachine, s: SpinState) -> float:
    """Total energy of a state; sums are accumulated in float64."""
    g = m.graph
    if s.values.shape != (g.n_nodes,):
        raise ModelError("state dimension does not match graph")
    if s.input_values.shape != (g.n_visible,):
        raise ModelError("input dimension does not match visible set")
    x = s.values.astype(np.float64)
    pair = np.dot(m.J.astype(np.float64), x[g.edges[:, 0]] * x[g.edges[:, 1]])
    bias = np.dot(m.h.astype(np.float64), x)
    fwd = np.dot(
        m.input_coupling.astype(np.float64),
        x[g.visible] * s.input_values.astype(np.float64),
    )
    return float(-m.beta * (pair + bias) - fwd)


def local_field(m: BoltzmannMachine, s: SpinState, i: int) -> float:
    """Effective field on node i such that P(x_i = +1) = sigmoid(2*beta*field)."""
    g = m.graph
    if not 0 <= i < g.n_nodes:
        raise ModelError(f"invalid node id {i}")
    nbrs = g.neighbors[i]
    W = m.weight_matrix
    f = float(W[i].dot(s.values.astype(np.float64))[0]) if len(nbrs) else 0.0
    f += float(m.h[i])
    slot = g.input_link.get(i)
    if slot is not None:
        f += float(m.input_coupling[slot]) * float(s.input_values[slot]) / m.beta
    return f


def flip_probability(m: BoltzmannMachine, field_value: float) -> float:
    """P(node takes +1) given its local field; saturates without overflow."""
    z = 2.0 * m.beta * field_value
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return float(e / (1.0 + e))


# ---------------------------------------------------------------------------
# checkpoints

def save_model(m: BoltzmannMachine, path, meta: dict | None = None) -> None:
    """Little-endian binary: header + J + h + Gamma/2 arrays; JSON sidecar."""
    g = m.graph
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIII", _VERSION, len(g.edges), g.n_nodes, g.n_visible))
        f.write(m.J.astype("<f4").tobytes())
        f.write(m.h.astype("<f4").tobytes())
        f.write(m.input_coupling.astype("<f4").tobytes())
    sidecar = {"beta": m.beta, "pattern": g.pattern.name, "L": g.L, "seed": g.seed}
    if meta:
        sidecar.update(meta)
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)


def load_model(path, graph: GridGraph) -> BoltzmannMachine:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ModelError(f"{path}: bad magic; not a model checkpoint")
        version, n_edges, n_nodes, n_visible = struct.unpack("<IIII", f.read(16))
        if version != _VERSION:
            raise ModelError(f"{path}: unsupported version {version}")
        if (n_edges, n_nodes, n_visible) != (
            len(graph.edges), graph.n_nodes, graph.n_visible,
        ):
            raise ModelError(f"{path}: checkpoint does not match graph dimensions")
        J = np.frombuffer(f.read(4 * n_edges), dtype="<f4").copy()
        h = np.frombuffer(f.read(4 * n_nodes), dtype="<f4").copy()
        gam = np.frombuffer(f.read(4 * n_visible), dtype="<f4").copy()
    with open(str(path) + ".json") as f:
        sidecar = json.load(f)
    return BoltzmannMachine(graph=graph, J=J, h=h, beta=float(sidecar["beta"]),
                            input_coupling=gam)
