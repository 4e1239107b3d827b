"""Denoising chains of Boltzmann machines: training and inference.

A model is an ordered list of T machines on one shared grid; the step-t
machine approximates the reversal of forward-noising step t.  Layers train
independently on pairs (x^{t-1}, x^t) drawn by noising the data, using the
Monte-Carlo moment-difference gradient plus an optional total-correlation
penalty whose per-layer strength is steered by autocorrelation feedback.
The T=1 case with a fixed penalty and a near-stationary schedule is the
monolithic-EBM baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boltzmann import BoltzmannMachine
from .diagnostics import ProjectionObservable, autocorrelation
from .forward import NoiseSchedule, coupling_for_step, noise_dataset
from .gibbs import ChainBatch, GibbsEngine, random_batch
from .grid import GridGraph, ROLE_LABEL


class TrainError(ValueError):
    pass


@dataclass
class AcpConfig:
    epsilon: float = 0.03
    delta: float = 0.2
    lambda_min: float = 1e-4
    probe_interval: int = 5
    probe_chains: int = 32
    probe_sweeps_factor: int = 4  # probe chain length = factor * K_grad

    def __post_init__(self):
        if min(self.epsilon, self.delta, self.lambda_min) <= 0:
            raise TrainError("ACP constants must be positive")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.05
    optimizer: str = "sgd"  # "sgd" | "momentum"
    momentum: float = 0.9
    K_grad: int = 20  # sweeps per gradient phase (half used as burn-in)
    lambda_init: float = 0.01
    acp: AcpConfig = field(default_factory=AcpConfig)
    acp_enabled: bool = True
    persistent_chains: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.K_grad < 1:
            raise TrainError("K_grad must be >= 1")
        if self.optimizer not in ("sgd", "momentum"):
            raise TrainError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class AcpState:
    """Per-layer penalty weights and the autocorrelation they react to."""

    lam: np.ndarray  # (T,) current lambda_t
    last_autocorr: np.ndarray  # (T,) a_{m-1}, NaN before the first probe
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, T: int, lambda_init: float) -> "AcpState":
        return cls(lam=np.full(T, lambda_init, dtype=np.float64),
                   last_autocorr=np.full(T, np.nan))


def acp_update(state: AcpState, t: int, a_m: float, cfg: AcpConfig) -> AcpState:
    """One step of the closed-loop penalty controller for layer t (0-based).

    Verbatim rule: lam' = max(lambda_min, lam); below epsilon shrink by
    (1 - delta); above epsilon hold if not worsening, else grow by
    (1 + delta); a proposal below lambda_min snaps to zero.
    """
    if not -1.0 <= a_m <= 1.0 + 1e-9:
        raise TrainError(f"autocorrelation {a_m} outside [-1, 1]")
    lam_prime = max(cfg.lambda_min, state.lam[t])
    prev = state.last_autocorr[t]
    if a_m < cfg.epsilon:
        new = (1.0 - cfg.delta) * lam_prime
    elif np.isnan(prev) or a_m <= prev:
        new = lam_prime
    else:
        new = (1.0 + cfg.delta) * lam_prime
    if new < cfg.lambda_min:
        new = 0.0
    state.lam[t] = new
    state.last_autocorr[t] = a_m
    return state


@dataclass
class DtmModel:
    """Chain of T machines over one grid plus the shared noise schedule."""

    steps: list  # list[BoltzmannMachine], steps[t-1] reverses noising step t
    schedule: NoiseSchedule
    graph: GridGraph

    def __post_init__(self):
        if len(self.steps) != self.schedule.T:
            raise TrainError("steps count must equal schedule.T")
        for m in self.steps:
            if m.graph is not self.graph:
                raise TrainError("all step machines must share one graph")

    @classmethod
    def create(cls, graph: GridGraph, schedule: NoiseSchedule,
               seed: int = 0) -> "DtmModel":
        steps = [
            BoltzmannMachine.initialize(graph, seed=seed + t)
            for t in range(schedule.T)
        ]
        model = cls(steps=steps, schedule=schedule, graph=graph)
        for t in range(1, schedule.T + 1):
            steps[t - 1].input_coupling = coupling_for_step(schedule, t, graph)
        return model


# ---------------------------------------------------------------------------
# data <-> visible-slot packing

def pack_visible(graph: GridGraph, pixels: np.ndarray,
                 labels: np.ndarray | None = None) -> np.ndarray:
    """Arrange pixel (and label) columns into visible-slot order."""
    is_label = graph.partition[graph.visible] == ROLE_LABEL
    n_pix = int((~is_label).sum())
    if pixels.shape[1] != n_pix:
        raise TrainError(f"dataset has {pixels.shape[1]} pixel bits, "
                         f"graph expects {n_pix}")
    out = np.empty((len(pixels), graph.n_visible), dtype=np.int8)
    out[:, ~is_label] = pixels
    if is_label.any():
        if labels is None:
            raise TrainError("graph has label nodes but no label codes given")
        if labels.shape[1] != int(is_label.sum()):
            raise TrainError("label code width does not match label node count")
        out[:, is_label] = labels
    return out


def unpack_pixels(graph: GridGraph, visible_values: np.ndarray) -> np.ndarray:
    is_label = graph.partition[graph.visible] == ROLE_LABEL
    return visible_values[:, ~is_label]


# ---------------------------------------------------------------------------
# gradient estimation

@dataclass
class PhaseStats:
    """Moments from one sampling phase.

    node/edge means are averaged over chains and retained sweeps; the
    per-chain time averages are kept so the total-correlation gradient can
    reuse the same samples.
    """

    node_means: np.ndarray  # (n_nodes,)
    edge_means: np.ndarray  # (n_edges,)
    chain_node_means: np.ndarray  # (n_chains, n_nodes)
    chain_edge_means: np.ndarray  # (n_chains, n_edges)
    sweeps_used: int = 0


@dataclass
class Gradient:
    dJ: np.ndarray
    dh: np.ndarray


def _sample_phase(m: BoltzmannMachine, batch: ChainBatch, K: int,
                  engine: GibbsEngine | None = None) -> PhaseStats:
    """Run K sweeps (first half burn-in) and time-average the moments."""
    g = m.graph
    u, v = g.edges[:, 0], g.edges[:, 1]
    engine = engine or GibbsEngine(m)
    if not np.any(~batch.clamp_mask):
        # fully determined state: moments need no sampling at all
        x = batch.states.astype(np.float64)
        return PhaseStats(
            node_means=x.mean(axis=0),
            edge_means=(x[:, u] * x[:, v]).mean(axis=0),
            chain_node_means=x,
            chain_edge_means=x[:, u] * x[:, v],
            sweeps_used=0,
        )
    burn = K // 2
    node_sum = np.zeros((batch.n_chains, g.n_nodes))
    edge_sum = np.zeros((batch.n_chains, len(g.edges)))
    retained = 0
    for k in range(K):
        engine.sweep(batch)
        if k >= burn:
            x = batch.states.astype(np.float64)
            node_sum += x
            edge_sum += x[:, u] * x[:, v]
            retained += 1
    chain_node = node_sum / retained
    chain_edge = edge_sum / retained
    return PhaseStats(
        node_means=chain_node.mean(axis=0),
        edge_means=chain_edge.mean(axis=0),
        chain_node_means=chain_node,
        chain_edge_means=chain_edge,
        sweeps_used=K,
    )


def grad_step(m: BoltzmannMachine, x_prev: np.ndarray, x_next: np.ndarray,
              cfg: TrainConfig, seed: int,
              persistent: ChainBatch | None = None):
    """Monte-Carlo gradient of the per-layer denoising loss.

    x_prev, x_next: (n_pairs, n_visible) spin matrices in visible-slot
    order.  Positive phase clamps the visibles to x_prev with inputs x_next
    and samples the latents; negative phase clamps only the inputs.
    Returns (Gradient, negative PhaseStats, updated persistent batch); the
    gradient is the ascent direction (positive minus negative moments), so
    parameters move by +learning_rate * gradient.
    """
    g = m.graph
    if len(x_prev) == 0:
        raise TrainError("empty minibatch")
    if m.input_coupling is None or m.input_coupling.shape != (g.n_visible,):
        raise TrainError("machine is missing its forward couplings")
    n = len(x_prev)

    clamp = np.zeros(g.n_nodes, dtype=bool)
    clamp[g.visible] = True
    values = np.zeros((n, g.n_nodes), dtype=np.int8)
    values[:, g.visible] = x_prev
    pos_batch = random_batch(m, n, seed, clamp_mask=clamp, values=values,
                             input_values=x_next)
    pos = _sample_phase(m, pos_batch, cfg.K_grad)

    if persistent is not None:
        neg_batch = persistent
        neg_batch.input_values = x_next.astype(np.int8)
    else:
        neg_batch = random_batch(m, n, seed + 1, input_values=x_next)
    neg = _sample_phase(m, neg_batch, cfg.K_grad)

    grad = Gradient(dJ=pos.edge_means - neg.edge_means,
                    dh=pos.node_means - neg.node_means)
    return grad, neg, neg_batch


def tc_grad(m: BoltzmannMachine, neg: PhaseStats) -> Gradient:
    """Total-correlation penalty gradient from negative-phase samples.

    The factorized phase replaces joint pair moments with products of
    per-chain node means; no extra sweeps run.  Returned in the same ascent
    convention as grad_step, so adding it shrinks excess correlation.
    """
    g = m.graph
    u, v = g.edges[:, 0], g.edges[:, 1]
    fact_edges = (neg.chain_node_means[:, u] * neg.chain_node_means[:, v]).mean(axis=0)
    dJ = fact_edges - neg.edge_means
    dh = np.zeros(g.n_nodes)  # factorized and joint node means coincide
    return Gradient(dJ=dJ, dh=dh)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # dicts per (epoch, layer)

    def record(self, **row):
        self.epochs.append(row)


def make_pairs(model: DtmModel, data_visible: np.ndarray, t: int, seed: int):
    """Draw (x^{t-1}, x^t) for layer t by forward noising in visible order."""
    g = model.graph
    label_cols = np.flatnonzero(g.partition[g.visible] == ROLE_LABEL)
    if t == 1:
        x_prev = data_visible
    else:
        x_prev = noise_dataset(
            data_visible, _prefix_schedule(model.schedule, t - 1), t - 1,
            seed, label_columns=label_cols)
    one = NoiseSchedule(
        T=1, kappa_x=model.schedule.kappa_x, kappa_l=model.schedule.kappa_l,
        times=model.schedule.times[t - 1:t + 1])
    x_next = noise_dataset(x_prev, one, 1, seed + 7919,
                           label_columns=label_cols)
    return x_prev, x_next


def _prefix_schedule(schedule: NoiseSchedule, upto: int) -> NoiseSchedule:
    return NoiseSchedule(T=upto, kappa_x=schedule.kappa_x,
                         kappa_l=schedule.kappa_l,
                         times=schedule.times[: upto + 1])


def probe_autocorr(m: BoltzmannMachine, x_next: np.ndarray, lag: int,
                   seed: int, n_chains: int = 32,
                   sweeps_factor: int = 4) -> float:
    """r_yy at the gradient-phase lag for one layer, via a longer free run
    with a random-linear-projection observable."""
    g = m.graph
    n_keep = max(sweeps_factor * lag, lag + 8)
    burn = n_keep // 2
    reps = int(np.ceil(n_chains / len(x_next))) if len(x_next) else 1
    inputs = np.tile(x_next, (reps, 1))[:n_chains]
    batch = random_batch(m, len(inputs), seed, input_values=inputs)
    engine = GibbsEngine(m)
    frames = np.empty((len(inputs), n_keep, g.n_nodes), dtype=np.int8)
    # the initial transient from random init would masquerade as slow
    # mixing, so it is burned off before recording
    for _ in range(burn):
        engine.sweep(batch)
    for k in range(n_keep):
        engine.sweep(batch)
        frames[:, k, :] = batch.states
    obs = ProjectionObservable.create(g.n_nodes, k=8, seed=seed)
    # chains carry different clamped inputs, so center each chain on its own
    # conditional mean
    res = autocorrelation(frames, obs, max_lag=lag,
                          lags=np.array([0, lag]), center="per-chain")
    return float(np.clip(res.r[1], -1.0, 1.0))


def train(model: DtmModel, data_visible: np.ndarray, cfg: TrainConfig):
    """Train every layer independently; returns (model, TrainLog, AcpState).

    data_visible: (n, n_visible) spins in visible-slot order (see
    pack_visible).  Each layer runs its own epoch loop; ACP probes happen
    every probe_interval epochs per layer.
    """
    if not np.all(np.abs(data_visible) == 1):
        raise TrainError("dataset must be binarized to spins")
    T = model.schedule.T
    log = TrainLog()
    acp = AcpState.create(T, cfg.lambda_init)
    rng = np.random.default_rng(cfg.seed)

    for t in range(1, T + 1):
        m = model.steps[t - 1]
        m.input_coupling = coupling_for_step(model.schedule, t, model.graph)
        _train_layer(model, m, t, data_visible, cfg, acp, log, rng)
    return model, log, acp


def _train_layer(model, m, t, data_visible, cfg, acp, log, rng):
    n = len(data_visible)
    velocity_J = np.zeros_like(m.J, dtype=np.float64)
    velocity_h = np.zeros_like(m.h, dtype=np.float64)
    persistent = None
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_seed = int(rng.integers(0, 2**31))
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x_prev, x_next = make_pairs(model, data_visible[idx], t,
                                        epoch_seed + start)
            grad, neg, persistent_out = grad_step(
                m, x_prev, x_next, cfg, epoch_seed + start + 1,
                persistent=persistent)
            if cfg.persistent_chains:
                persistent = persistent_out
            dJ = grad.dJ.astype(np.float64)
            dh = grad.dh.astype(np.float64)
            lam = acp.lam[t - 1]
            if lam > 0:
                tc = tc_grad(m, neg)
                dJ = dJ + lam * tc.dJ
                dh = dh + lam * tc.dh
            if cfg.optimizer == "momentum":
                velocity_J = cfg.momentum * velocity_J + dJ
                velocity_h = cfg.momentum * velocity_h + dh
                dJ, dh = velocity_J, velocity_h
            m.J = (m.J + cfg.learning_rate * dJ).astype(np.float32)
            m.h = (m.h + cfg.learning_rate * dh).astype(np.float32)
            m.invalidate_cache()

        a_m = np.nan
        if cfg.acp_enabled and (epoch + 1) % cfg.acp.probe_interval == 0:
            probe_idx = rng.permutation(n)[:cfg.acp.probe_chains]
            _, x_next = make_pairs(model, data_visible[probe_idx], t,
                                   epoch_seed + 13)
            a_m = probe_autocorr(m, x_next, cfg.K_grad, epoch_seed + 17,
                                 n_chains=cfg.acp.probe_chains,
                                 sweeps_factor=cfg.acp.probe_sweeps_factor)
            acp_update(acp, t - 1, a_m, cfg.acp)
        log.record(epoch=epoch, layer=t, lam=float(acp.lam[t - 1]),
                   autocorr=float(a_m))
        acp.history.append({"epoch": epoch, "layer": t,
                            "lam": float(acp.lam[t - 1]),
                            "autocorr": float(a_m)})


# ---------------------------------------------------------------------------
# inference

def generate(model: DtmModel, n_samples: int, seed: int, K_mix: int = 250,
             condition: np.ndarray | None = None, record_steps: bool = False):
    """Run the reverse chain from fair-coin noise.

    condition: optional (n_label_bits,) spin code; when given, label
    visibles and label inputs are clamped to it at every step.  Returns
    (pixels, per_step_frames) where per_step_frames lists the visible state
    after each reverse step (empty unless record_steps).
    """
    g = model.graph
    rng = np.random.Generator(np.random.Philox(key=seed))
    x = (rng.integers(0, 2, size=(n_samples, g.n_visible)) * 2 - 1).astype(np.int8)
    is_label = g.partition[g.visible] == ROLE_LABEL
    if condition is not None:
        if int(is_label.sum()) != len(condition):
            raise TrainError("condition width does not match label node count")
        x[:, is_label] = condition
    frames = []
    for t in range(model.schedule.T, 0, -1):
        m = model.steps[t - 1]
        clamp = np.zeros(g.n_nodes, dtype=bool)
        values = None
        if condition is not None:
            clamp[g.visible[is_label]] = True
            values = np.zeros((n_samples, g.n_nodes), dtype=np.int8)
            values[:, g.visible[is_label]] = condition
        inputs = x.copy()
        if condition is not None:
            inputs[:, is_label] = condition
        batch = random_batch(m, n_samples, seed + t, clamp_mask=clamp,
                             values=values, input_values=inputs)
        engine = GibbsEngine(m)
        for _ in range(K_mix):
            engine.sweep(batch)
        x = batch.states[:, g.visible].astype(np.int8)
        if condition is not None:
            x[:, is_label] = condition
        if record_steps:
            frames.append(x.copy())
    return unpack_pixels(g, x), frames
