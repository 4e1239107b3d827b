"""Sparse grid graphs for chained Boltzmann machines.

A grid of L x L binary nodes is wired by a small set of translation-invariant
connection rules.  A rule (a, b) connects node (x, y) to the four nodes
(x+a, y+b), (x-b, y+a), (x-a, y-b), (x+b, y-a); edges that would leave the
grid are dropped.  Because a + b is odd for every shipped rule, the graph is
bipartite under checkerboard coloring, which is what makes two-color block
Gibbs sampling possible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

# Named connectivity patterns. Bulk degree is 4x the number of rules.
PATTERNS = {
    "G8": [(0, 1), (4, 1)],
    "G12": [(0, 1), (4, 1), (9, 10)],
    "G16": [(0, 1), (4, 1), (8, 7), (14, 9)],
    "G20": [(0, 1), (4, 1), (3, 6), (8, 7), (14, 9)],
    "G24": [(0, 1), (1, 2), (4, 1), (3, 6), (8, 7), (14, 9)],
}

# Node roles in GridGraph.partition.
ROLE_LATENT = 0
ROLE_PIXEL = 1
ROLE_LABEL = 2

_MAGIC = b"DTMG"
_VERSION = 1


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class ConnectivityPattern:
    """An ordered list of (a, b) connection rules."""

    name: str
    rules: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for a, b in self.rules:
            if (a, b) == (0, 0):
                raise GridError("connection rule (0, 0) is a self-edge")
            if (a + b) % 2 == 0:
                raise GridError(
                    f"rule ({a}, {b}) has even a+b; checkerboard coloring would fail"
                )

    @property
    def bulk_degree(self) -> int:
        return 4 * len(self.rules)


def build_pattern(name: str, rules=None) -> ConnectivityPattern:
    """Look up a named pattern, or validate a custom rule list.

    Raises GridError for unknown names and for custom rules with even a+b.
    """
    if rules is not None:
        return ConnectivityPattern("custom", tuple((int(a), int(b)) for a, b in rules))
    if name not in PATTERNS:
        raise GridError(f"unknown pattern {name!r}; known: {sorted(PATTERNS)}")
    return ConnectivityPattern(name, tuple(PATTERNS[name]))


def _rule_offsets(rules):
    """The four rotated offsets contributed by each rule."""
    offs = []
    for a, b in rules:
        offs.extend([(a, b), (-b, a), (-a, -b), (b, -a)])
    return offs


@dataclass
class GridGraph:
    """An immutable sparse grid with coloring and node-role partition.

    Node indices are row-major by (y, x): index = y * L + x.  ``visible``
    lists pixel then label nodes in index order; every visible node owns one
    companion input node, stored implicitly as its position in ``visible``.
    """

    L: int
    pattern: ConnectivityPattern
    edges: np.ndarray  # (n_edges, 2) int32, u < v
    color: np.ndarray  # (L*L,) uint8, (x + y) % 2
    partition: np.ndarray  # (L*L,) uint8, ROLE_* codes
    seed: int
    neighbors: list[np.ndarray] = field(repr=False, default=None)
    visible: np.ndarray = field(repr=False, default=None)  # visible node ids
    input_link: dict = field(repr=False, default=None)  # node id -> input slot

    def __post_init__(self):
        if self.neighbors is None:
            nbrs = [[] for _ in range(self.n_nodes)]
            for u, v in self.edges:
                nbrs[u].append(v)
                nbrs[v].append(u)
            self.neighbors = [np.array(sorted(n), dtype=np.int32) for n in nbrs]
        if self.visible is None:
            self.visible = np.flatnonzero(self.partition != ROLE_LATENT).astype(np.int32)
        if self.input_link is None:
            self.input_link = {int(n): i for i, n in enumerate(self.visible)}

    @property
    def n_nodes(self) -> int:
        return self.L * self.L

    @property
    def n_visible(self) -> int:
        return len(self.visible)

    @property
    def pixel_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.partition == ROLE_PIXEL).astype(np.int32)

    @property
    def label_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.partition == ROLE_LABEL).astype(np.int32)

    @property
    def latent_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.partition == ROLE_LATENT).astype(np.int32)

    def degree(self, node: int) -> int:
        return len(self.neighbors[node])

    def color_blocks(self):
        """Split nodes into the two color blocks; no edge lies inside a block."""
        block0 = np.flatnonzero(self.color == 0).astype(np.int32)
        block1 = np.flatnonzero(self.color == 1).astype(np.int32)
        return block0, block1


def build_grid(
    L: int,
    pattern: ConnectivityPattern,
    n_visible: int,
    n_labels: int = 0,
    seed: int = 0,
) -> GridGraph:
    """Construct the grid graph deterministically from (L, pattern, counts, seed).

    ``n_visible`` counts pixel nodes; label nodes are separate.  Both are
    placed uniformly at random without replacement over the whole grid.
    """
    n_nodes = L * L
    if n_visible + n_labels > n_nodes:
        raise GridError(
            f"n_visible + n_labels = {n_visible + n_labels} exceeds L^2 = {n_nodes}"
        )

    xs, ys = np.meshgrid(np.arange(L), np.arange(L))
    # row-major by (y, x)
    xs = xs.ravel()
    ys = ys.ravel()

    edge_set = set()
    for da, db in _rule_offsets(pattern.rules):
        nx = xs + da
        ny = ys + db
        ok = (nx >= 0) & (nx < L) & (ny >= 0) & (ny < L)
        src = ys[ok] * L + xs[ok]
        dst = ny[ok] * L + nx[ok]
        for u, v in zip(src, dst):
            edge_set.add((min(u, v), max(u, v)))
    edges = np.array(sorted(edge_set), dtype=np.int32).reshape(-1, 2)

    color = ((xs + ys) % 2).astype(np.uint8)

    rng = np.random.default_rng(seed)
    chosen = rng.choice(n_nodes, size=n_visible + n_labels, replace=False)
    partition = np.full(n_nodes, ROLE_LATENT, dtype=np.uint8)
    partition[chosen[:n_visible]] = ROLE_PIXEL
    partition[chosen[n_visible:]] = ROLE_LABEL

    return GridGraph(L=L, pattern=pattern, edges=edges, color=color,
                     partition=partition, seed=seed)


def color_blocks(g: GridGraph):
    return g.color_blocks()


# ---------------------------------------------------------------------------
# serialization

def save_grid(g: GridGraph, path) -> None:
    """Binary layout: magic, version, L, seed, rule count, rules, partition."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIq I", _VERSION, g.L, g.seed, len(g.pattern.rules)))
        for a, b in g.pattern.rules:
            f.write(struct.pack("<ii", a, b))
        f.write(g.partition.tobytes())


def load_grid(path) -> GridGraph:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise GridError(f"{path}: bad magic; not a grid file")
        version, L, seed, n_rules = struct.unpack("<IIq I", f.read(20))
        if version != _VERSION:
            raise GridError(f"{path}: unsupported version {version}")
        rules = [struct.unpack("<ii", f.read(8)) for _ in range(n_rules)]
        partition = np.frombuffer(f.read(L * L), dtype=np.uint8).copy()
        if partition.size != L * L:
            raise GridError(f"{path}: truncated partition array")
    pattern = _pattern_from_rules(rules)
    g = rebuild_topology(L, pattern)
    g.partition = partition
    g.seed = seed
    g.visible = np.flatnonzero(partition != ROLE_LATENT).astype(np.int32)
    g.input_link = {int(n): i for i, n in enumerate(g.visible)}
    return g


def _pattern_from_rules(rules):
    rules = tuple((int(a), int(b)) for a, b in rules)
    for name, known in PATTERNS.items():
        if rules == tuple(known):
            return ConnectivityPattern(name, rules)
    return ConnectivityPattern("custom", rules)


def rebuild_topology(L: int, pattern: ConnectivityPattern) -> GridGraph:
    """Topology-only grid (all latent); used when deserializing."""
    return build_grid(L, pattern, n_visible=0, n_labels=0, seed=0)


def grid_to_json(g: GridGraph) -> str:
    """Human-readable export for debugging; not meant for round-tripping."""
    return json.dumps(
        {
            "L": g.L,
            "pattern": g.pattern.name,
            "rules": [list(r) for r in g.pattern.rules],
            "seed": g.seed,
            "n_edges": int(len(g.edges)),
            "partition": g.partition.tolist(),
            "visible": g.visible.tolist(),
        },
        indent=2,
    )
