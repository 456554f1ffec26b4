"""Evaluation quantities: precision, W2 to a Dirac, decay-rate fits, summaries."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Array, ConfigurationError, Ensemble


class WindowError(ValueError):
    """No usable fit window (too few points or non-positive values)."""


def precision(final_consensus, theta_good) -> float:
    """Euclidean distance to the target minimizer; NaN when there is no target."""
    if theta_good is None:
        return float("nan")
    a = np.asarray(final_consensus, dtype=float)
    b = np.asarray(theta_good, dtype=float)
    if a.shape != b.shape:
        raise ConfigurationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def w2sq_to_dirac(ensemble, theta) -> float:
    """Squared 2-Wasserstein distance between the empirical measure and a Dirac.

    The only coupling to a Dirac sends all mass to it, hence the mean
    squared distance.
    """
    X = ensemble.positions if isinstance(ensemble, Ensemble) else np.asarray(ensemble, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if X.shape[-1] != theta.shape[-1]:
        raise ConfigurationError("dimension mismatch")
    diff = X - theta
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def decay_window(t: Array, V: Array) -> tuple[int, int]:
    """Index range [i0, i1) used for the rate fit.

    Starts where V first falls to half its initial value and ends where it
    first reaches max(10 * noise floor, 1e-6 * V(0)); the noise floor is the
    median of V over the last 10% of the trace.
    """
    V = np.asarray(V, dtype=float)
    n = len(V)
    if n < 10:
        raise WindowError("need at least 10 points")
    v0 = V[0]
    if not v0 > 0:
        raise WindowError("V(0) must be positive")
    floor = float(np.median(V[-max(1, n // 10):]))
    stop_level = max(10.0 * floor, 1e-6 * v0)
    below_half = np.flatnonzero(V <= 0.5 * v0)
    i0 = int(below_half[0]) if len(below_half) else 0
    hit = np.flatnonzero(V[i0:] <= stop_level)
    i1 = i0 + int(hit[0]) + 1 if len(hit) else n
    if i1 - i0 < 10:
        raise WindowError(f"fit window has {i1 - i0} points, need at least 10")
    return i0, i1


def fit_decay_rate(t, V, window: Optional[tuple[int, int]] = None) -> tuple[float, float]:
    """Least-squares slope of log V against t and the r^2 of that fit."""
    t = np.asarray(t, dtype=float)
    V = np.asarray(V, dtype=float)
    if t.shape != V.shape:
        raise ConfigurationError("t and V must have equal length")
    if window is None:
        window = decay_window(t, V) if len(V) >= 10 and V[0] > 0 and V[-1] < V[0] else (0, len(V))
    i0, i1 = window
    tt, vv = t[i0:i1], V[i0:i1]
    if len(vv) < 10:
        raise WindowError("need at least 10 points in the window")
    if np.any(vv <= 0) or not np.all(np.isfinite(vv)):
        raise WindowError("V must be positive and finite inside the fit window")
    y = np.log(vv)
    slope, intercept = np.polyfit(tt, y, 1)
    resid = y - (slope * tt + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


@dataclass
class PrecisionSummary:
    per_seed: list
    mean_runtime_s: float = float("nan")
    stop_reasons: dict = field(default_factory=dict)
    n_failed: int = 0

    @property
    def n_seeds(self) -> int:
        return len(self.per_seed)

    @property
    def mean_precision(self) -> float:
        vals = [p for p in self.per_seed if p is not None and np.isfinite(p)]
        return float(np.mean(vals)) if vals else float("nan")

    @classmethod
    def from_traces(cls, traces: Sequence) -> "PrecisionSummary":
        per_seed, reasons, times = [], Counter(), []
        for tr in traces:
            p = tr.precision[-1] if tr.precision is not None and len(tr.precision) else float("nan")
            per_seed.append(float(p))
            reasons[tr.stop_reason] += 1
            times.append(tr.summary["total_seconds"])
        return cls(
            per_seed=per_seed,
            mean_runtime_s=float(np.mean(times)) if times else float("nan"),
            stop_reasons=dict(sorted(reasons.items())),
            n_failed=reasons.get("error", 0),
        )

    def to_dict(self, runtime: bool = True) -> dict:
        out = {
            "mean_precision": self.mean_precision,
            "n_seeds": self.n_seeds,
            "per_seed": list(self.per_seed),
            "stop_reasons": dict(self.stop_reasons),
            "n_failed": self.n_failed,
            "complete": self.n_failed == 0,
        }
        if runtime:
            out["mean_runtime_s"] = self.mean_runtime_s
        return out
