import numpy as np
import pytest

from dtmsim.grid import (
    PATTERNS,
    GridError,
    build_grid,
    build_pattern,
    grid_to_json,
    load_grid,
    save_grid,
)


def test_named_patterns_match_published_rules():
    assert build_pattern("G12").rules == ((0, 1), (4, 1), (9, 10))
    assert build_pattern("G8").bulk_degree == 8
    assert build_pattern("G24").bulk_degree == 24


def test_unknown_pattern_rejected():
    with pytest.raises(GridError):
        build_pattern("G13")


def test_custom_rule_even_parity_rejected():
    with pytest.raises(GridError, match="even"):
        build_pattern("custom", rules=[(1, 1)])


def test_custom_rule_self_edge_rejected():
    with pytest.raises(GridError):
        build_pattern("custom", rules=[(0, 0)])


def test_bulk_degree_g12_on_large_grid():
    g = build_grid(70, build_pattern("G12"), n_visible=100, seed=0)
    # interior node far from every boundary
    center = 35 * 70 + 35
    assert g.degree(center) == 12


def test_node_count_and_block_sizes_L70():
    g = build_grid(70, build_pattern("G12"), n_visible=834, seed=3)
    assert g.n_nodes == 4900
    b0, b1 = g.color_blocks()
    assert len(b0) == 2450 and len(b1) == 2450


def test_corner_degree_smaller_than_bulk():
    # oracle: count in-bounds endpoints of every rotated offset from (0, 0)
    pat = build_pattern("G8")
    L = 3
    offsets = []
    for a, b in pat.rules:
        offsets += [(a, b), (-b, a), (-a, -b), (b, -a)]
    expected = sum(1 for dx, dy in offsets if 0 <= dx < L and 0 <= dy < L)
    g = build_grid(L, pat, n_visible=2, seed=0)
    assert g.degree(0) == expected < 8


def test_2x2_g8_blocks():
    g = build_grid(2, build_pattern("G8"), n_visible=1, seed=0)
    b0, b1 = g.color_blocks()
    assert len(b0) == 2 and len(b1) == 2


@pytest.mark.parametrize("name", sorted(PATTERNS))
@pytest.mark.parametrize("L", [4, 10, 70])
def test_bipartite_exhaustive_scan(name, L):
    g = build_grid(L, build_pattern(name), n_visible=min(L * L // 2, 50), seed=7)
    for u, v in g.edges:
        assert g.color[u] != g.color[v]


@pytest.mark.parametrize("name", sorted(PATTERNS))
def test_interior_degree_equals_bulk_degree(name):
    pat = build_pattern(name)
    L = 40
    g = build_grid(L, pat, n_visible=10, seed=0)
    margin = max(max(abs(a), abs(b)) for a, b in pat.rules)
    for y in range(margin, L - margin):
        for x in range(margin, L - margin):
            assert g.degree(y * L + x) == pat.bulk_degree


def test_grid_edges_are_valid():
    g = build_grid(10, build_pattern("G16"), n_visible=20, n_labels=5, seed=2)
    assert np.all(g.edges[:, 0] < g.edges[:, 1])  # no self-edges, canonical
    # symmetric adjacency by construction
    for u, v in g.edges[:20]:
        assert u in g.neighbors[v] and v in g.neighbors[u]


def test_partition_counts_and_input_links():
    g = build_grid(10, build_pattern("G8"), n_visible=30, n_labels=10, seed=5)
    assert len(g.pixel_nodes) == 30
    assert len(g.label_nodes) == 10
    assert len(g.latent_nodes) == 60
    assert len(g.input_link) == 40
    for node in g.latent_nodes:
        assert node not in g.input_link


def test_overfull_partition_rejected():
    with pytest.raises(GridError):
        build_grid(4, build_pattern("G8"), n_visible=15, n_labels=2, seed=0)


def test_build_grid_deterministic():
    a = build_grid(12, build_pattern("G12"), n_visible=40, n_labels=6, seed=11)
    b = build_grid(12, build_pattern("G12"), n_visible=40, n_labels=6, seed=11)
    assert np.array_equal(a.edges, b.edges)
    assert np.array_equal(a.partition, b.partition)
    c = build_grid(12, build_pattern("G12"), n_visible=40, n_labels=6, seed=12)
    assert not np.array_equal(a.partition, c.partition)


def test_grid_roundtrip(tmp_path):
    g = build_grid(9, build_pattern("G20"), n_visible=25, n_labels=5, seed=4)
    path = tmp_path / "g.dtmg"
    save_grid(g, path)
    g2 = load_grid(path)
    assert g2.L == g.L
    assert g2.pattern.rules == g.pattern.rules
    assert np.array_equal(g2.partition, g.partition)
    assert np.array_equal(g2.edges, g.edges)
    assert np.array_equal(g2.visible, g.visible)


def test_grid_json_export():
    import json

    g = build_grid(5, build_pattern("G8"), n_visible=5, seed=0)
    doc = json.loads(grid_to_json(g))
    assert doc["L"] == 5 and doc["pattern"] == "G8"
    assert len(doc["partition"]) == 25
