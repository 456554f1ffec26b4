"""Quantile-based particle selection and the Gibbs-weighted consensus point.

The batched kernels (``select_lowest``, ``gibbs_weights``, ``weighted_mean``)
work on a leading replicate axis and are what the time steppers call; the
single-ensemble functions below wrap them with ``R = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Array,
    BiLevelProblem,
    ConfigurationError,
    DegenerateSelectionError,
    Ensemble,
    EvaluationError,
    check_beta,
)


@dataclass
class ConsensusResult:
    point: Array
    selected: Array  # ascending particle indices
    quantile_value: float
    weights: Array  # aligned with ``selected``


def check_finite(values: Array, what: str = "lower objective") -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        pos = np.argwhere(bad)[0]
        raise EvaluationError(
            f"{what} is not finite for particle {int(pos[-1])}"
            + (f" (replicate {int(pos[0])})" if values.ndim > 1 else "")
        )


def select_lowest(values: Array, k: int) -> tuple[Array, Array]:
    """Indices of the ``k`` smallest entries of each row, ties broken by index.

    ``values`` has shape ``(R, N)``; returns ``(idx, q)`` with ``idx`` of shape
    ``(R, k)`` listed in ascending index order and ``q`` the k-th smallest value.
    """
    R, N = values.shape
    if k == N:
        return np.broadcast_to(np.arange(N), (R, N)), values.max(axis=1)
    q = np.partition(values, k - 1, axis=1)[:, k - 1]
    qc = q[:, None]
    less = values < qc
    eq = values == qc
    room = k - less.sum(axis=1)
    mask = less | (eq & (np.cumsum(eq, axis=1) <= room[:, None]))
    idx = np.nonzero(mask)[1].reshape(R, k)
    return idx, q


def gibbs_weights(energies: Array, alpha: float) -> Array:
    """Normalized exp(-alpha * E) along the last axis, computed with a min shift."""
    shifted = energies - energies.min(axis=-1, keepdims=True)
    w = np.exp(-alpha * shifted)
    w /= w.sum(axis=-1, keepdims=True)
    return w


def weighted_mean(points: Array, weights: Array) -> Array:
    """sum_i w_i x_i over axis -2; the sum runs in ascending row order."""
    return np.sum(weights[..., None] * points, axis=-2)


def quantile_value(ensemble: Ensemble, lower, beta: float) -> tuple[float, Array]:
    """The ceil(beta N)-th smallest lower-level value and the stable L-order."""
    k = check_beta(beta, ensemble.n_particles)
    lv = np.asarray(lower(ensemble.positions), dtype=float)
    check_finite(lv)
    order = np.argsort(lv, kind="stable")
    return float(lv[order[k - 1]]), order


def consensus_point(
    ensemble: Ensemble, problem: BiLevelProblem, alpha: float, beta: float
) -> ConsensusResult:
    if alpha < 0:
        raise ConfigurationError("alpha must be non-negative")
    k = check_beta(beta, ensemble.n_particles)
    X = ensemble.positions
    lv = np.asarray(problem.lower(X), dtype=float)
    check_finite(lv)
    idx, q = select_lowest(lv[None, :], k)
    sel = np.asarray(idx[0])
    pts = X[sel]
    g = np.asarray(problem.upper(pts), dtype=float)
    check_finite(g, "upper objective")
    w = gibbs_weights(g, alpha)
    return ConsensusResult(weighted_mean(pts, w), sel, float(q[0]), w)


def smoothed_threshold(sorted_values: Array, beta: float) -> float:
    """(2/beta) * integral over a in [beta/2, beta] of the empirical a-quantile.

    The empirical quantile equals the j-th order statistic on ((j-1)/N, j/N],
    so the integral is an exact finite sum of overlap lengths.
    """
    N = sorted_values.shape[0]
    j = np.arange(1, N + 1)
    lo = np.maximum((j - 1) / N, beta / 2)
    hi = np.minimum(j / N, beta)
    length = np.clip(hi - lo, 0.0, None)
    return float((2.0 / beta) * np.dot(length, sorted_values))


def consensus_point_regularized(
    ensemble: Ensemble,
    problem: BiLevelProblem,
    alpha: float,
    beta: float,
    radius_R: float,
    delta_q: float,
) -> ConsensusResult:
    """Consensus over the ball-restricted set with the smoothed threshold plus slack.

    Raises DegenerateSelectionError when no particle qualifies.
    """
    if alpha < 0:
        raise ConfigurationError("alpha must be non-negative")
    if not radius_R > 0 or math.isnan(radius_R):
        raise ConfigurationError("radius_R must be positive")
    if delta_q < 0:
        raise ConfigurationError("delta_q must be non-negative")
    check_beta(beta, ensemble.n_particles)
    X = ensemble.positions
    lv = np.asarray(problem.lower(X), dtype=float)
    check_finite(lv)
    tau = smoothed_threshold(np.sort(lv), beta) + delta_q
    inside = np.sqrt(np.sum(X * X, axis=1)) <= radius_R
    sel = np.flatnonzero(inside & (lv <= tau))
    if sel.size == 0:
        raise DegenerateSelectionError(
            f"no particle within radius {radius_R} has lower value <= {tau:.6g}"
        )
    pts = X[sel]
    g = np.asarray(problem.upper(pts), dtype=float)
    check_finite(g, "upper objective")
    w = gibbs_weights(g, alpha)
    return ConsensusResult(weighted_mean(pts, w), sel, tau, w)


def _norm(x: Array) -> Array:
    return np.sqrt(np.sum(x * x, axis=-1))


def two_circle_measures(
    s: float, n_points: int = 2000, inner: float = 1.0, outer: float = 1.1
) -> tuple[Array, Array]:
    """Equal-mass atoms on two concentric circles, and the same cloud with the
    right half of the outer circle (a quarter of the mass) shifted by ``s``."""
    phi = 2 * np.pi * (np.arange(n_points) + 0.5) / n_points
    ring = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    base = np.concatenate([inner * ring, outer * ring])
    moved = base.copy()
    right = np.concatenate([np.zeros(n_points, bool), ring[:, 0] > 0])
    moved[right, 0] += s
    return base, moved


def wasserstein_instability_demo(
    s: float,
    alpha: float,
    beta: float = 0.3,
    n_points: int = 2000,
    inner: float = 1.0,
    outer: float = 1.1,
) -> tuple[float, float]:
    """Return ``(W2, consensus gap)`` for the two-circle perturbation.

    With L = G = |theta| the smoothed threshold equals the inner radius, and the
    slack is set so the outer circle sits exactly on the threshold; any shift
    s > 0 pushes the moved half out of the selection, so the gap does not
    shrink with s while W2 = s / 2 does.
    """
    if not s > 0:
        raise ConfigurationError("s must be positive")
    problem = BiLevelProblem(lower=_norm, upper=_norm, dim=2, name="two-circles")
    base, moved = two_circle_measures(s, n_points, inner, outer)
    # slack covers the rounding of |outer * (cos, sin)| but no real shift
    delta_q = (outer - inner) + 1e-9
    big_R = 10.0 * (outer + s + 1.0)
    m0 = consensus_point_regularized(Ensemble(base), problem, alpha, beta, big_R, delta_q)
    m1 = consensus_point_regularized(Ensemble(moved), problem, alpha, beta, big_R, delta_q)
    # every moved atom is displaced by exactly (s, 0) and carries mass 1/4
    w2 = math.sqrt(0.25 * s * s)
    return w2, float(np.linalg.norm(m0.point - m1.point))
