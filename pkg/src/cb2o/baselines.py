"""Consensus-based baselines for constrained problems.

All four run on the batched engine of :mod:`cb2o.dynamics`; their consensus
point is the Gibbs average over *all* particles of some energy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .consensus import gibbs_weights, weighted_mean
from .core import Array, BiLevelProblem, ConfigurationError, InitSpec
from .dynamics import (
    Cb2oParams,
    Method,
    RunTrace,
    StepContext,
    _nonfinite_eval,
    run_method,
)

log = logging.getLogger(__name__)


class CboMethod(Method):
    """Standard CBO on a single energy, default: the upper objective."""

    name = "cbo"

    def __init__(self, problem: BiLevelProblem, params: Cb2oParams, energy: Optional[Callable] = None):
        super().__init__(problem, params)
        self.energy = energy if energy is not None else problem.upper

    def validate(self, n_particles: int) -> None:
        if n_particles < 2:
            raise ConfigurationError("at least 2 particles are required")

    def energies(self, X: Array) -> Array:
        return self.energy(X)

    def consensus(self, X: Array, ctx: StepContext) -> Array:
        e = self.energies(X)
        _nonfinite_eval(e, "objective")
        return weighted_mean(X, gibbs_weights(e, ctx.alpha))


class PenalizedCbo(CboMethod):
    name = "penalized"

    def __init__(self, problem, params, chi: float):
        if chi < 0:
            raise ConfigurationError("chi must be >= 0")
        super().__init__(problem, params)
        self.chi = float(chi)

    def energies(self, X):
        return self.chi * self.problem.lower(X) + self.problem.upper(X)


# the update rule grows chi without bound; capping it keeps chi * L finite
CHI_MAX = 1e12


def adaptive_penalty_update(
    chi, zeta, violation, eta_chi: float, eta_zeta: float, chi_max: float = CHI_MAX
):
    """One update of the adaptive penalty: tighten the tolerance 1/sqrt(zeta)
    when the violation is below it, otherwise raise the penalty chi (up to
    ``chi_max``)."""
    chi = np.asarray(chi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    with np.errstate(over="ignore"):
        ok = np.asarray(violation) < 1.0 / np.sqrt(zeta)
        return (
            np.where(ok, chi, np.minimum(eta_chi * chi, np.maximum(chi, chi_max))),
            np.where(ok, eta_zeta * zeta, zeta),
        )


class AdaptivePenalizedCbo(CboMethod):
    """Penalized CBO whose chi_k grows while the consensus point violates the
    constraint by more than 1/sqrt(zeta_k); the violation is sqrt(L(m_k))."""

    name = "adaptive"

    def __init__(
        self, problem, params, chi0=1.0, eta_chi=1.1, zeta0=0.1, eta_zeta=1.4, chi_max=CHI_MAX
    ):
        if not (chi0 > 0 and zeta0 > 0 and eta_chi > 1 and eta_zeta > 1):
            raise ConfigurationError("need chi0, zeta0 > 0 and eta_chi, eta_zeta > 1")
        super().__init__(problem, params)
        self.chi0, self.eta_chi, self.zeta0, self.eta_zeta = chi0, eta_chi, zeta0, eta_zeta
        self.chi_max = chi_max
        self.chi: Optional[Array] = None
        self.zeta: Optional[Array] = None

    def prepare(self, X):
        self.chi = np.full(X.shape[0], float(self.chi0))
        self.zeta = np.full(X.shape[0], float(self.zeta0))
        return X

    def energies(self, X):
        return self.chi[:, None] * self.problem.lower(X) + self.problem.upper(X)

    def after_step(self, m, ctx):
        v = np.sqrt(np.maximum(self.problem.lower(m), 0.0))
        self.chi, self.zeta = adaptive_penalty_update(
            self.chi, self.zeta, v, self.eta_chi, self.eta_zeta, self.chi_max
        )
        log.debug("k=%d violation=%s chi=%s zeta=%s", ctx.k, v, self.chi, self.zeta)

    def keep(self, mask):
        self.chi = self.chi[mask]
        self.zeta = self.zeta[mask]


def _psd_part(H: Array) -> Array:
    """Symmetric matrix with negative eigenvalues clipped to zero."""
    w, V = np.linalg.eigh(H)
    return (V * np.maximum(w, 0.0)[..., None, :]) @ np.swapaxes(V, -1, -2)


class GradientForceCbo(CboMethod):
    """CBO on G plus the gradient force -chi * grad L.

    ``scheme="semi-implicit"`` (default) takes the force linearly implicitly,
    (I + dt chi H+)^{-1} dt chi grad L with H+ the positive part of the Hessian
    of L; ``"explicit"`` uses the plain Euler term dt chi grad L, which is
    unstable once dt * chi * |Hessian| exceeds 2.
    """

    name = "gradient-force"

    def __init__(self, problem, params, chi: float = 100.0, scheme: str = "semi-implicit"):
        if problem.lower_grad is None:
            raise ConfigurationError("the gradient-force baseline requires lower_grad")
        if scheme not in ("semi-implicit", "explicit"):
            raise ConfigurationError(f"unknown gradient scheme {scheme!r}")
        if scheme == "semi-implicit" and problem.lower_hess is None:
            raise ConfigurationError("the semi-implicit scheme requires lower_hess")
        if chi < 0:
            raise ConfigurationError("chi must be >= 0")
        super().__init__(problem, params)
        self.chi = float(chi)
        self.scheme = scheme

    def move(self, X, m, ctx, Z, extra):
        Xn = super().move(X, m, ctx, Z, extra)
        if self.chi == 0:
            return Xn
        step = (ctx.dt * self.chi) * self.problem.lower_grad(X)
        if self.scheme == "semi-implicit":
            d = X.shape[-1]
            A = np.eye(d) + (ctx.dt * self.chi) * _psd_part(self.problem.lower_hess(X))
            step = np.linalg.solve(A, step[..., None])[..., 0]
        return Xn - step


class ProjectedCbo(CboMethod):
    """CBO confined to a hypersurface: drift and diffusion are projected to the
    tangent space and each update is mapped back onto the surface."""

    name = "projected"

    def __init__(self, problem, params):
        if problem.project is None or problem.tangent is None:
            raise ConfigurationError(
                f"projected CBO needs a projector and tangent map; {problem.name} has none"
            )
        super().__init__(problem, params)

    def prepare(self, X):
        return self.problem.project(X)

    def move(self, X, m, ctx, Z, extra):
        D = X - m[:, None, :]
        inc = -(ctx.dt * ctx.lam) * D + (math.sqrt(ctx.dt) * ctx.sigma) * ctx.diffusion.apply(D, Z)
        return self.problem.project(X + self.problem.tangent(X, inc))


def standard_cbo_run(problem, params, seed, n_particles=100, init=None, **kw) -> RunTrace:
    return run_method(CboMethod(problem, params), _init(init), seed, n_particles, **kw)


def penalized_cbo_run(problem, chi, params, seed, n_particles=100, init=None, **kw) -> RunTrace:
    return run_method(PenalizedCbo(problem, params, chi), _init(init), seed, n_particles, **kw)


def adaptive_penalized_cbo_run(
    problem, chi0, eta_chi, zeta0, eta_zeta, params, seed, n_particles=100, init=None, **kw
) -> RunTrace:
    method = AdaptivePenalizedCbo(problem, params, chi0, eta_chi, zeta0, eta_zeta)
    return run_method(method, _init(init), seed, n_particles, **kw)


def cbo_gradient_force_run(problem, chi, params, seed, n_particles=100, init=None, scheme="semi-implicit", **kw) -> RunTrace:
    return run_method(GradientForceCbo(problem, params, chi, scheme), _init(init), seed, n_particles, **kw)


def projected_cbo_run(problem, params, seed, n_particles=100, init=None, **kw) -> RunTrace:
    return run_method(ProjectedCbo(problem, params), _init(init), seed, n_particles, **kw)


def _init(init: Optional[InitSpec]) -> InitSpec:
    return init if init is not None else InitSpec.uniform(-3.0, 3.0)


# adaptive-penalty hyperparameters per comparison preset, keyed by (benchmark, mode)
ADAPTIVE_PRESETS = {
    ("ackley-circle", "same-particles"): dict(chi0=1.0, eta_chi=1.1, zeta0=0.1, eta_zeta=1.4),
    ("ackley-circle", "same-time"): dict(chi0=10.0, eta_chi=1.05, zeta0=0.1, eta_zeta=1.4),
    ("ackley-star", "same-particles"): dict(chi0=1.0, eta_chi=1.1, zeta0=0.1, eta_zeta=1.4),
    ("ackley-star", "same-time"): dict(chi0=50.0, eta_chi=1.05, zeta0=0.1, eta_zeta=1.4),
}


@dataclass(frozen=True)
class BaselineKind:
    """A baseline and its hyperparameters, e.g. ``BaselineKind.penalized(100)``."""

    variant: str
    chi: float = 100.0
    chi0: float = 1.0
    eta_chi: float = 1.1
    zeta0: float = 0.1
    eta_zeta: float = 1.4

    VARIANTS = ("penalized", "adaptive", "gradient-force", "projected")

    def __post_init__(self):
        if self.variant not in self.VARIANTS:
            raise ConfigurationError(f"unknown baseline {self.variant!r}; choose from {self.VARIANTS}")
        if self.variant in ("penalized", "gradient-force") and not self.chi > 0:
            raise ConfigurationError("chi must be > 0")
        if self.variant == "adaptive" and not (
            self.chi0 > 0 and self.zeta0 > 0 and self.eta_chi > 1 and self.eta_zeta > 1
        ):
            raise ConfigurationError("need chi0, zeta0 > 0 and eta_chi, eta_zeta > 1")

    @classmethod
    def penalized(cls, chi: float) -> "BaselineKind":
        return cls("penalized", chi=chi)

    @classmethod
    def adaptive(cls, chi0=1.0, eta_chi=1.1, zeta0=0.1, eta_zeta=1.4) -> "BaselineKind":
        return cls("adaptive", chi0=chi0, eta_chi=eta_chi, zeta0=zeta0, eta_zeta=eta_zeta)

    @classmethod
    def gradient_force(cls, chi: float) -> "BaselineKind":
        return cls("gradient-force", chi=chi)

    @classmethod
    def projected(cls) -> "BaselineKind":
        return cls("projected")

    def method(self, problem: BiLevelProblem, params: Cb2oParams) -> Method:
        if self.variant == "penalized":
            return PenalizedCbo(problem, params, self.chi)
        if self.variant == "adaptive":
            return AdaptivePenalizedCbo(problem, params, self.chi0, self.eta_chi, self.zeta0, self.eta_zeta)
        if self.variant == "gradient-force":
            return GradientForceCbo(problem, params, self.chi)
        return ProjectedCbo(problem, params)
