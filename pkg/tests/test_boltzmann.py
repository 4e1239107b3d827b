import numpy as np
import pytest

from dtmsim.boltzmann import (
    BoltzmannMachine,
    ModelError,
    SpinState,
    energy,
    flip_probability,
    load_model,
    local_field,
    save_model,
)
from dtmsim.grid import build_grid, build_pattern

from oracles import naive_energy, state_energies


def tiny_machine(L=3, n_visible=3, seed=0, beta=1.0):
    g = build_grid(L, build_pattern("G8"), n_visible=n_visible, seed=seed)
    rng = np.random.default_rng(seed)
    m = BoltzmannMachine(
        graph=g,
        J=rng.uniform(-1, 1, len(g.edges)).astype(np.float32),
        h=rng.uniform(-0.5, 0.5, g.n_nodes).astype(np.float32),
        beta=beta,
        input_coupling=rng.uniform(0, 1, g.n_visible).astype(np.float32),
    )
    return m


def random_state(m, seed=0):
    rng = np.random.default_rng(seed)
    s = SpinState.zeros(m.graph)
    s.values = (rng.integers(0, 2, m.graph.n_nodes) * 2 - 1).astype(np.int8)
    s.input_values = (rng.integers(0, 2, m.graph.n_visible) * 2 - 1).astype(np.int8)
    return s


def test_zero_parameters_zero_energy():
    g = build_grid(3, build_pattern("G8"), n_visible=2, seed=0)
    m = BoltzmannMachine(graph=g, J=np.zeros(len(g.edges)),
                         h=np.zeros(g.n_nodes))
    s = random_state(m, seed=1)
    assert energy(m, s) == 0.0


def test_single_edge_energy():
    # 2x2 grid under G8 keeps only the (0,1)-rule edges
    g = build_grid(2, build_pattern("G8"), n_visible=0, seed=0)
    J = np.zeros(len(g.edges))
    J[0] = 1.0
    m = BoltzmannMachine(graph=g, J=J, h=np.zeros(4), beta=1.0)
    s = SpinState.zeros(g)
    s.values[:] = 1
    assert energy(m, s) == pytest.approx(-1.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_energy_matches_naive_double_loop(seed):
    m = tiny_machine(seed=seed, beta=1.3)
    s = random_state(m, seed=seed + 10)
    expected = naive_energy(m, s.values, s.input_values)
    assert energy(m, s) == pytest.approx(expected, rel=1e-10)


def test_energy_dimension_mismatch():
    m = tiny_machine()
    s = random_state(m)
    s.values = s.values[:-1]
    with pytest.raises(ModelError):
        energy(m, s)


def test_local_field_isolated_node():
    g = build_grid(3, build_pattern("G8"), n_visible=0, seed=0)
    m = BoltzmannMachine(graph=g, J=np.zeros(len(g.edges)),
                         h=np.full(g.n_nodes, 0.25, dtype=np.float32))
    s = SpinState.zeros(g)
    assert local_field(m, s, 4) == pytest.approx(0.25)


def test_local_field_one_neighbor():
    g = build_grid(2, build_pattern("G8"), n_visible=0, seed=0)
    # node 0 has neighbors under the (0,1) rule; use the first edge only
    u, v = g.edges[0]
    J = np.zeros(len(g.edges))
    J[0] = 0.5
    m = BoltzmannMachine(graph=g, J=J,
                         h=np.full(4, 0.25, dtype=np.float32))
    s = SpinState.zeros(g)
    s.values[:] = 1
    assert local_field(m, s, int(u)) == pytest.approx(0.75)


def test_local_field_coupling_only():
    g = build_grid(2, build_pattern("G8"), n_visible=1, seed=0)
    m = BoltzmannMachine(graph=g, J=np.zeros(len(g.edges)), h=np.zeros(4),
                         input_coupling=np.array([1.0], dtype=np.float32))
    s = SpinState.zeros(g)
    s.values[:] = 1
    s.input_values[:] = -1
    node = int(g.visible[0])
    # Gamma = 2 stored as Gamma/2 = 1
    assert local_field(m, s, node) == pytest.approx(-1.0)


def test_local_field_invalid_node():
    m = tiny_machine()
    with pytest.raises(ModelError):
        local_field(m, random_state(m), 99)


def test_flip_probability_unbiased_point():
    m = tiny_machine()
    assert flip_probability(m, 0.0) == 0.5


def test_flip_probability_value():
    m = tiny_machine(beta=1.0)
    # sigma(1.5), cross-checked against the 2-node joint distribution below
    assert flip_probability(m, 0.75) == pytest.approx(0.817574, abs=1e-6)


def test_flip_probability_conditional_matches_enumeration():
    # brute-force the conditional P(x_i = +1 | rest) on a tiny model
    m = tiny_machine(seed=3, beta=0.7)
    g = m.graph
    s = random_state(m, seed=4)
    i = 4
    _, E = state_energies(m, np.array([i]), s.values.astype(np.float64),
                          s.input_values)
    # rows: i = -1 then i = +1 (lexicographic all_states order)
    p_plus = np.exp(-E[1]) / (np.exp(-E[0]) + np.exp(-E[1]))
    assert flip_probability(m, local_field(m, s, i)) == pytest.approx(
        p_plus, rel=1e-10)


def test_flip_probability_saturates():
    m = tiny_machine()
    assert flip_probability(m, 1e6) == 1.0
    assert flip_probability(m, -1e6) == 0.0
    assert np.isfinite(flip_probability(m, 1e308))


@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
def test_detailed_balance_tiny_model(beta):
    m = tiny_machine(seed=6, beta=beta)
    s = random_state(m, seed=7)
    e0 = energy(m, s)
    for i in range(m.graph.n_nodes):
        p_plus = flip_probability(m, local_field(m, s, i))
        s2 = SpinState(values=s.values.copy(), input_values=s.input_values,
                       clamp_mask=s.clamp_mask)
        s2.values[i] = 1
        s.values[i] = -1
        delta = energy(m, s2) - energy(m, s)
        ratio = np.exp(-delta)
        assert p_plus / (1 - p_plus) == pytest.approx(ratio, rel=1e-12)


def test_energy_summation_order_invariant():
    m = tiny_machine(seed=8)
    s = random_state(m, seed=9)
    e1 = energy(m, s)
    # reverse edge order
    perm = np.arange(len(m.graph.edges))[::-1]
    g2 = build_grid(3, build_pattern("G8"), n_visible=3, seed=8)
    g2.edges = m.graph.edges[perm].copy()
    g2.neighbors = None
    g2.__post_init__()
    m2 = BoltzmannMachine(graph=g2, J=m.J[perm], h=m.h, beta=m.beta,
                          input_coupling=m.input_coupling)
    assert energy(m2, s) == pytest.approx(e1, abs=1e-10)


def test_beta_must_be_positive():
    g = build_grid(2, build_pattern("G8"), n_visible=0, seed=0)
    with pytest.raises(ModelError):
        BoltzmannMachine(graph=g, J=np.zeros(len(g.edges)), h=np.zeros(4),
                         beta=0.0)


def test_initialize_weight_range():
    g = build_grid(10, build_pattern("G12"), n_visible=10, seed=0)
    m = BoltzmannMachine.initialize(g, seed=1)
    assert np.all(np.abs(m.J) <= 0.01)
    assert np.all(m.h == 0)
    assert m.beta == 1.0


def test_checkpoint_roundtrip(tmp_path):
    m = tiny_machine(seed=12, beta=1.7)
    path = tmp_path / "model.dtmb"
    save_model(m, path, meta={"step": 3})
    m2 = load_model(path, m.graph)
    assert np.array_equal(m2.J, m.J)
    assert np.array_equal(m2.h, m.h)
    assert np.array_equal(m2.input_coupling, m.input_coupling)
    assert m2.beta == pytest.approx(1.7)


def test_checkpoint_wrong_graph_rejected(tmp_path):
    m = tiny_machine(seed=12)
    path = tmp_path / "model.dtmb"
    save_model(m, path)
    other = build_grid(4, build_pattern("G8"), n_visible=3, seed=0)
    with pytest.raises(ModelError):
        load_model(path, other)
