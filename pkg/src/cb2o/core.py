"""Shared data types: ensembles, bi-level problems, seeded random streams."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray
Objective = Callable[[Array], Array]

# sub-stream tags; each purpose gets its own generator so that e.g. the
# re-initialization draws never shift the Brownian increments
_PURPOSES = {"init": 0, "noise": 1, "grad_noise": 2, "reinit": 3, "batch": 4}


class ConfigurationError(ValueError):
    """Invalid hyperparameters or problem setup."""


class EvaluationError(ArithmeticError):
    """An objective returned a non-finite value."""


class StepError(ArithmeticError):
    """A particle update produced a non-finite position."""


def min_admissible_beta(n_particles: int) -> float:
    """Smallest beta with ceil(beta * N) == 2."""
    return 2.0 / n_particles


def n_selected(beta: float, n_particles: int) -> int:
    """ceil(beta * N), robust against binary rounding such as 0.07 * 100."""
    x = beta * n_particles
    k = math.ceil(x)
    if k - x > 1 - 1e-9:
        k -= 1
    return int(k)


def check_beta(beta: float, n_particles: int) -> int:
    if not (0.0 < beta <= 1.0):
        raise ConfigurationError(f"beta must lie in (0, 1], got {beta}")
    k = n_selected(beta, n_particles)
    if k < 2:
        raise ConfigurationError(
            f"ceil(beta*N) = {k} < 2 with beta={beta}, N={n_particles}: "
            f"beta_min = 2/N = {min_admissible_beta(n_particles):g}"
        )
    return k


def sqnorm(x: Array, keepdims: bool = False) -> Array:
    """Squared Euclidean norm over the last axis, summed left to right."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    if d > 16:
        out = np.einsum("...i,...i->...", x, x)
    else:
        out = x[..., 0] * x[..., 0]
        for j in range(1, d):
            out += x[..., j] * x[..., j]
    return out[..., None] if keepdims else out


class DiffusionKind(str, enum.Enum):
    ISOTROPIC = "isotropic"
    ANISOTROPIC = "anisotropic"

    def apply(self, v: Array, z: Array) -> Array:
        """Return D(v) z for rows of v (shape (..., d)) and matching z."""
        if self is DiffusionKind.ISOTROPIC:
            return np.sqrt(sqnorm(v, keepdims=True)) * z
        return v * z


class RngStream:
    """Deterministic random stream keyed by ``(seed, stream_id)``.

    Backed by numpy's PCG64 seeded through ``SeedSequence(seed,
    spawn_key=(stream_id, purpose))``; Gaussians come from
    ``Generator.standard_normal`` (ziggurat). Separate purposes
    (``init``, ``noise``, ``grad_noise``, ``reinit``, ``batch``) get
    independent generators, created lazily.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        if self.seed < 0 or self.stream_id < 0:
            raise ConfigurationError("seed and stream_id must be non-negative")
        self._gens: dict[str, np.random.Generator] = {}

    def generator(self, purpose: str = "noise") -> np.random.Generator:
        gen = self._gens.get(purpose)
        if gen is None:
            ss = np.random.SeedSequence(
                self.seed, spawn_key=(self.stream_id, _PURPOSES[purpose])
            )
            gen = np.random.Generator(np.random.PCG64(ss))
            self._gens[purpose] = gen
        return gen

    def normal(self, shape, purpose: str = "noise") -> Array:
        return self.generator(purpose).standard_normal(shape)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def gaussian_vector(rng: RngStream, d: int) -> Array:
    if d < 1:
        raise ConfigurationError("d must be >= 1")
    return rng.normal(d)


@dataclass
class Ensemble:
    positions: Array

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float)
        if self.positions.ndim != 2:
            raise ConfigurationError("positions must be an N x d array")
        if self.n_particles < 2:
            raise ConfigurationError(
                "an ensemble needs N >= 2 particles (beta_min rule: ceil(beta*N) >= 2)"
            )
        if not np.all(np.isfinite(self.positions)):
            raise ConfigurationError("ensemble positions must be finite")

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "Ensemble":
        return Ensemble(self.positions.copy())


@dataclass(frozen=True)
class InitSpec:
    """Initial particle law: ``gaussian`` (mean, std), ``uniform`` box or ``points``."""

    kind: str = "uniform"
    low: float = -3.0
    high: float = 3.0
    mean: float = 0.0
    std: float = 1.0
    points: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform", "points"):
            raise ConfigurationError(f"unknown init kind {self.kind!r}")
        if self.kind == "uniform":
            if not (math.isfinite(self.low) and math.isfinite(self.high)):
                raise ConfigurationError("uniform init bounds must be finite")
            if self.high <= self.low:
                raise ConfigurationError("uniform init requires low < high")
        if self.kind == "gaussian" and not (
            math.isfinite(self.mean) and math.isfinite(self.std) and self.std >= 0
        ):
            raise ConfigurationError("gaussian init needs finite mean and std >= 0")
        if self.kind == "points" and self.points is None:
            raise ConfigurationError("points init needs an explicit point list")

    @classmethod
    def gaussian(cls, mean: float = 0.0, std: float = 1.0) -> "InitSpec":
        return cls(kind="gaussian", mean=mean, std=std)

    @classmethod
    def uniform(cls, low: float, high: float) -> "InitSpec":
        return cls(kind="uniform", low=low, high=high)

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]]) -> "InitSpec":
        return cls(kind="points", points=tuple(tuple(map(float, p)) for p in points))

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "low": self.low, "high": self.high}
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.mean, "std": self.std}
        return {"kind": "points", "points": [list(p) for p in self.points]}


def sample_init(init: InitSpec, n: int, d: int, gen: np.random.Generator) -> Array:
    if init.kind == "points":
        pts = np.asarray(init.points, dtype=float)
        if pts.shape != (n, d):
            raise ConfigurationError(
                f"explicit point list has shape {pts.shape}, expected {(n, d)}"
            )
        return pts.copy()
    if init.kind == "uniform":
        return gen.uniform(init.low, init.high, size=(n, d))
    return init.mean + init.std * gen.standard_normal((n, d))


def init_ensemble(n: int, d: int, init: InitSpec, rng: RngStream) -> Ensemble:
    if n < 2:
        raise ConfigurationError(
            f"n={n}: at least 2 particles are required (beta_min rule, ceil(beta*N) >= 2)"
        )
    if d < 1:
        raise ConfigurationError("d must be >= 1")
    return Ensemble(sample_init(init, n, d, rng.generator("init")))


def _vectorize(f: Callable[[Array], float]) -> Objective:
    def wrapped(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        out = np.fromiter((f(row) for row in flat), dtype=float, count=len(flat))
        return out.reshape(x.shape[:-1])

    return wrapped


@dataclass
class BiLevelProblem:
    """Upper objective ``upper`` (G) minimized over the minimizers of ``lower`` (L).

    Objectives act on arrays of shape ``(..., d)`` and return shape ``(...)``;
    pass ``vectorized=False`` to wrap plain scalar functions. ``lower_grad``
    maps ``(..., d) -> (..., d)`` and ``lower_hess`` ``(..., d) -> (..., d, d)``.
    """

    lower: Objective
    upper: Objective
    dim: int
    lower_grad: Optional[Callable[[Array], Array]] = None
    lower_hess: Optional[Callable[[Array], Array]] = None
    project: Optional[Callable[[Array], Array]] = None
    tangent: Optional[Callable[[Array, Array], Array]] = None
    theta_good: Optional[Array] = None
    lower_min: Optional[float] = None
    name: str = "problem"
    vectorized: bool = field(default=True, repr=False)

    def __post_init__(self):
        if not self.vectorized:
            self.lower = _vectorize(self.lower)
            self.upper = _vectorize(self.upper)
            self.vectorized = True
        if self.theta_good is not None:
            self.theta_good = np.asarray(self.theta_good, dtype=float)
            if self.theta_good.shape != (self.dim,):
                raise ConfigurationError("theta_good must be a point in R^d")
            if self.lower_min is not None:
                gap = abs(float(self.lower(self.theta_good)) - self.lower_min)
                if gap > 1e-9:
                    raise ConfigurationError(
                        f"lower(theta_good) differs from lower_min by {gap:.3g}"
                    )


class DegenerateSelectionError(RuntimeError):
    """The regularized quantile set contains no particle."""
