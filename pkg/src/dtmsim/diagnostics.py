"""Mixing diagnostics and a projection-based sample-quality proxy.

Autocorrelation is measured on low-dimensional random linear projections of
the chain state.  The slow eigenvalue sigma2 of the chain's transition
kernel is extracted by fitting a line to ln r[k] at long lags; 1/(1-sigma2)
is reported as a bound-flavored mixing-iterations estimate.  Sample quality
uses the Frechet distance between Gaussian fits of projected features; it
stands in for FID and should be read ordinally.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class DiagnosticsError(ValueError):
    pass


@dataclass
class ProjectionObservable:
    """A fixed random Gaussian projection onto k dimensions."""

    A: np.ndarray  # (k, n_features)

    @classmethod
    def create(cls, n_features: int, k: int = 16, seed: int = 0):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((k, n_features)) / np.sqrt(n_features)
        return cls(A=A)

    def __post_init__(self):
        if np.any(np.all(self.A == 0, axis=1)):
            raise DiagnosticsError("projection rows must be non-zero")


@dataclass
class AutocorrResult:
    lags: np.ndarray
    r: np.ndarray
    sigma2: float | None = None
    mixing_iterations: float | None = None
    fit_window: tuple | None = None
    fit_r2: float | None = None
    status: str = "ok"  # "ok" | "unresolved" | "single-chain"


def autocorrelation(frames: np.ndarray, obs: ProjectionObservable,
                    max_lag: int, lags: np.ndarray | None = None,
                    center: str = "global") -> AutocorrResult:
    """Normalized autocorrelation of projected chain observables.

    frames: (n_chains, n_frames, n_features).  Expectations run over chains,
    time origins, and the projection dimensions.  A single chain is allowed
    with a warning (time-averaging only), flagged in the result status.

    center="per-chain" subtracts each chain's own time-mean instead of the
    pooled mean; use it when chains target different conditionals (e.g.
    per-chain clamped inputs), where the spread of chain means would
    otherwise show up as a lag-independent offset in r.
    """
    if frames.ndim != 3:
        raise DiagnosticsError("frames must be (n_chains, n_frames, n_features)")
    n_chains, n_frames, _ = frames.shape
    if n_frames < max_lag + 1:
        raise DiagnosticsError(f"need at least max_lag+1={max_lag + 1} frames")
    status = "ok"
    if n_chains < 2:
        warnings.warn("single chain: cross-chain expectations unavailable, "
                      "falling back to time-averaging only")
        status = "single-chain"
    if lags is None:
        lags = np.arange(max_lag + 1)
    lags = np.asarray(lags)

    if center not in ("global", "per-chain"):
        raise DiagnosticsError(f"unknown centering mode {center!r}")
    y = frames.astype(np.float64) @ obs.A.T  # (chains, frames, k)
    if center == "per-chain":
        mu = y.mean(axis=1, keepdims=True)
    else:
        mu = y.mean(axis=(0, 1), keepdims=True)
    yc = y - mu
    var = (yc**2).mean(axis=(0, 1))  # per projection dim
    var = np.where(var > 0, var, 1.0)
    r = np.empty(len(lags))
    for idx, k in enumerate(lags):
        if k == 0:
            r[idx] = 1.0
            continue
        prod = (yc[:, :-k, :] * yc[:, k:, :]).mean(axis=(0, 1))
        r[idx] = float(np.mean(prod / var))
    return AutocorrResult(lags=lags, r=r, status=status)


def power_of_two_lags(max_lag: int) -> np.ndarray:
    """Lag grid 0, 1, 2, 4, ... up to max_lag, to bound trace storage."""
    lags = [0]
    k = 1
    while k <= max_lag:
        lags.append(k)
        k *= 2
    return np.array(lags)


def fit_sigma2(res: AutocorrResult, window: tuple,
               min_r2: float = 0.9) -> AutocorrResult:
    """Fit ln r[k] vs k over the lag window [lo, hi] to extract sigma2.

    Returns an updated result.  The fit is rejected ("unresolved") when r is
    non-positive anywhere in the window, when the line fits poorly, or when
    the implied decay time exceeds the observation window (the slow-chain
    regime where the rate cannot be extracted from the data).
    """
    lo, hi = window
    mask = (res.lags >= lo) & (res.lags <= hi)
    if mask.sum() < 4:
        raise DiagnosticsError("need at least 4 lag points in the fit window")
    k = res.lags[mask].astype(np.float64)
    r = res.r[mask]
    out = AutocorrResult(lags=res.lags, r=res.r, fit_window=(lo, hi),
                         status=res.status)
    if np.any(r <= 0):
        out.status = "unresolved"
        return out
    logr = np.log(r)
    slope, intercept = np.polyfit(k, logr, 1)
    pred = slope * k + intercept
    ss_res = float(np.sum((logr - pred) ** 2))
    ss_tot = float(np.sum((logr - logr.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    sigma2 = float(np.exp(slope))
    out.fit_r2 = r2
    if r2 < min_r2 or sigma2 >= 1.0:
        out.status = "unresolved"
        return out
    decay_time = 1.0 / (1.0 - sigma2)
    if decay_time > res.lags.max():
        # slower than anything the observation window can resolve
        out.status = "unresolved"
        return out
    out.sigma2 = sigma2
    out.mixing_iterations = decay_time
    return out


def proxy_frechet(samples: np.ndarray, reference: np.ndarray,
                  obs: ProjectionObservable, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of projected features.

    d^2 = ||mu1 - mu2||^2 + tr(C1 + C2 - 2 (C1 C2)^{1/2}); covariances get
    diagonal loading eps to keep the matrix square root stable.
    """
    if len(samples) == 0 or len(reference) == 0:
        raise DiagnosticsError("both sample sets must be non-empty")
    if samples.shape[1] != reference.shape[1]:
        raise DiagnosticsError("sample sets must share the visible dimension")
    f1 = samples.astype(np.float64) @ obs.A.T
    f2 = reference.astype(np.float64) @ obs.A.T
    mu1, mu2 = f1.mean(axis=0), f2.mean(axis=0)
    c1 = np.cov(f1, rowvar=False) + eps * np.eye(f1.shape[1])
    c2 = np.cov(f2, rowvar=False) + eps * np.eye(f2.shape[1])
    covmean = scipy.linalg.sqrtm(c1 @ c2)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    d2 = float(np.sum((mu1 - mu2) ** 2) + np.trace(c1 + c2 - 2.0 * covmean))
    return max(d2, 0.0)
