"""The discrete forward noising process for spin-valued data.

Each bit independently follows a two-state jump process with effective rate
kappa.  Over an elapsed time dt the transition kernel has the exponential
form P(same) = sigmoid(Gamma) with

    Gamma = ln((1 + exp(-kappa * dt)) / (1 - exp(-kappa * dt)))

Gamma decays to 0 as dt grows (pure coin flips) and diverges as dt -> 0
(identity kernel); it is capped at GAMMA_CAP to avoid infinities.  Pixel and
label bits may use different rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridGraph, ROLE_LABEL

# P(same) is within 1e-13 of 1 at this coupling; larger values are clamped.
GAMMA_CAP = 30.0


class ForwardError(ValueError):
    pass


def gamma(kappa: float, dt: float) -> float:
    """Coupling strength of the forward kernel over elapsed time dt."""
    if dt <= 0:
        raise ForwardError("dt must be positive")
    e = np.exp(-kappa * dt)
    if e >= 1.0:
        return GAMMA_CAP
    val = float(np.log1p(e) - np.log1p(-e))
    return min(val, GAMMA_CAP)


def flip_kernel(gamma_val: float) -> float:
    """P(bit unchanged) = sigmoid(Gamma)."""
    if gamma_val < 0:
        raise ForwardError("gamma must be non-negative")
    return float(1.0 / (1.0 + np.exp(-gamma_val)))


@dataclass
class NoiseSchedule:
    """Per-step coupling strengths for pixel and label bits.

    The time grid is uniform with spacing dt by default; Gamma for step t is
    computed from the per-class kappa and the single-step elapsed time, and
    cumulative couplings (from t=0) follow from the semigroup property of
    the jump process.
    """

    T: int
    kappa_x: float
    kappa_l: float = None
    dt: float = 1.0
    times: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.T < 1:
            raise ForwardError("T must be >= 1")
        if self.kappa_l is None:
            self.kappa_l = self.kappa_x
        if self.times is None:
            self.times = np.arange(self.T + 1, dtype=np.float64) * self.dt
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.shape != (self.T + 1,) or np.any(np.diff(self.times) <= 0):
            raise ForwardError("times must be a strictly increasing grid of T+1 points")

    def step_gamma(self, t: int, kind: str = "pixel") -> float:
        """Gamma for the single noising step t (1-based)."""
        self._check_step(t)
        kappa = self.kappa_x if kind == "pixel" else self.kappa_l
        return gamma(kappa, self.times[t] - self.times[t - 1])

    def cumulative_gamma(self, t: int, kind: str = "pixel") -> float:
        """Gamma for the composed kernel from time 0 to step t."""
        self._check_step(t)
        kappa = self.kappa_x if kind == "pixel" else self.kappa_l
        return gamma(kappa, self.times[t] - self.times[0])

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ForwardError(f"step {t} out of range [1, {self.T}]")

    def validate_rate_guidance(self) -> bool:
        """True when the rates sit in the recommended conditional-generation
        ranges for 4-12 step models."""
        return 0.1 <= self.kappa_l <= 0.3 and 0.7 <= self.kappa_x <= 1.5


def noise_bits(data: np.ndarray, gamma_val: float, seed: int) -> np.ndarray:
    """Flip each spin independently with probability 1 - sigmoid(Gamma)."""
    if not np.all(np.abs(data) == 1):
        raise ForwardError("entries must be spins in {-1, +1}")
    p_same = flip_kernel(gamma_val)
    rng = np.random.Generator(np.random.Philox(key=seed))
    flip = rng.random(size=data.shape) >= p_same
    out = data.copy()
    out[flip] *= -1
    return out


def noise_dataset(data: np.ndarray, schedule: NoiseSchedule, t: int, seed: int,
                  label_columns: np.ndarray | None = None) -> np.ndarray:
    """Noise a (n_samples, n_bits) spin matrix from time 0 to step t.

    Kernel composition over steps collapses to a single jump with the total
    elapsed time.  Columns listed in label_columns use the label rate.
    """
    schedule._check_step(t)
    if not np.all(np.abs(data) == 1):
        raise ForwardError("entries must be spins in {-1, +1}")
    out = data.copy()
    pixel_cols = np.ones(data.shape[1], dtype=bool)
    if label_columns is not None and len(label_columns):
        pixel_cols[label_columns] = False
    if pixel_cols.any():
        out[:, pixel_cols] = noise_bits(
            data[:, pixel_cols], schedule.cumulative_gamma(t, "pixel"), seed)
    if label_columns is not None and len(label_columns):
        out[:, ~pixel_cols] = noise_bits(
            data[:, ~pixel_cols], schedule.cumulative_gamma(t, "label"), seed + 1)
    return out


def coupling_for_step(schedule: NoiseSchedule, t: int,
                      graph: GridGraph) -> np.ndarray:
    """Gamma_i/2 per visible node, to install as a machine's input coupling
    for the step-t reverse model.  Label nodes use the label rate."""
    schedule._check_step(t)
    gam = np.empty(graph.n_visible, dtype=np.float32)
    is_label = graph.partition[graph.visible] == ROLE_LABEL
    gam[~is_label] = schedule.step_gamma(t, "pixel") / 2.0
    gam[is_label] = schedule.step_gamma(t, "label") / 2.0
    return gam
