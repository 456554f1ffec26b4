"""Benchmark problems: constrained Ackley (circle, star) and the Himmelblau demo."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .core import Array, BiLevelProblem, ConfigurationError, InitSpec, sqnorm

ACKLEY_A = 20.0
ACKLEY_a = 0.2
ACKLEY_b = 3.0
ACKLEY_CENTER = np.array([0.5, 1.0 / 3.0])

CIRCLE_GOOD = np.array([0.781475, 0.623937])
STAR_GOOD = np.array([0.482208, 0.468687])

HIMMELBLAU_MINIMA = np.array(
    [
        [3.0, 2.0],
        [-2.805118086952745, 3.131312518250573],
        [-3.779310253377747, -3.283185991286170],
        [3.584428340330492, -1.848126526964404],
    ]
)
HIMMELBLAU_CENTER = np.array([3.2, 2.2])


def ackley(theta: Array) -> Array:
    """Shifted 2-D Ackley function with A=20, a=0.2, b=3, minimum 0 at (1/2, 1/3)."""
    z = np.asarray(theta, dtype=float) - ACKLEY_CENTER
    d = z.shape[-1]
    r2 = sqnorm(z)
    first = -ACKLEY_A * np.exp(-ACKLEY_a * np.sqrt(ACKLEY_b**2 / d * r2))
    second = -np.exp(np.mean(np.cos(2 * np.pi * ACKLEY_b * z), axis=-1))
    return first + second + np.e + ACKLEY_A


def circular_lower(theta: Array) -> Array:
    theta = np.asarray(theta, dtype=float)
    h = sqnorm(theta) - 1.0
    return h * h


def circular_lower_grad(theta: Array) -> Array:
    theta = np.asarray(theta, dtype=float)
    h = sqnorm(theta, keepdims=True) - 1.0
    return 4.0 * h * theta


def circular_lower_hess(theta: Array) -> Array:
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[-1]
    h = sqnorm(theta)[..., None, None] - 1.0
    return 4.0 * h * np.eye(d) + 8.0 * theta[..., :, None] * theta[..., None, :]


def _star_radius(phi: Array) -> Array:
    return 1.0 + 0.5 * np.sin(5.0 * phi)


def star_lower(theta: Array) -> Array:
    theta = np.asarray(theta, dtype=float)
    x, y = theta[..., 0], theta[..., 1]
    # np.arctan2(0, 0) == 0, the convention used at the origin
    rho = _star_radius(np.arctan2(y, x))
    h = x * x + y * y - rho * rho
    return h * h


def star_lower_grad(theta: Array) -> Array:
    theta = np.asarray(theta, dtype=float)
    x, y = theta[..., 0], theta[..., 1]
    r2 = x * x + y * y
    phi = np.arctan2(y, x)
    rho = _star_radius(phi)
    drho = 2.5 * np.cos(5.0 * phi)
    h = r2 - rho * rho
    safe = np.where(r2 > 0, r2, 1.0)
    dphi_x = np.where(r2 > 0, -y / safe, 0.0)
    dphi_y = np.where(r2 > 0, x / safe, 0.0)
    gx = 2.0 * x - 2.0 * rho * drho * dphi_x
    gy = 2.0 * y - 2.0 * rho * drho * dphi_y
    return np.stack([2.0 * h * gx, 2.0 * h * gy], axis=-1)


def fd_hessian(grad: Callable[[Array], Array], step: float = 1e-5):
    """Central-difference Jacobian of ``grad``, symmetrized."""

    def hess(theta: Array) -> Array:
        theta = np.asarray(theta, dtype=float)
        d = theta.shape[-1]
        cols = []
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            cols.append((grad(theta + e) - grad(theta - e)) / (2 * step))
        H = np.stack(cols, axis=-1)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    return hess


star_lower_hess = fd_hessian(star_lower_grad)


def sphere_project(theta: Array) -> Array:
    """Radial projection onto the unit sphere; the origin maps to e_1."""
    theta = np.asarray(theta, dtype=float)
    r = np.sqrt(sqnorm(theta, keepdims=True))
    e1 = np.zeros(theta.shape[-1])
    e1[0] = 1.0
    return np.where(r > 0, theta / np.where(r > 0, r, 1.0), e1)


def sphere_tangent(theta: Array, v: Array) -> Array:
    """Project ``v`` onto the tangent space of the sphere through ``theta``."""
    n = sphere_project(theta)
    return v - np.sum(v * n, axis=-1, keepdims=True) * n


def himmelblau(theta: Array) -> Array:
    theta = np.asarray(theta, dtype=float)
    x, y = theta[..., 0], theta[..., 1]
    return (x * x + y - 11.0) ** 2 + (x + y * y - 7.0) ** 2


def demo_parabola(theta: Array) -> Array:
    z = np.asarray(theta, dtype=float) - HIMMELBLAU_CENTER
    return sqnorm(z)


def quadratic_problem(theta_star=(1.0, -0.5)) -> BiLevelProblem:
    """L = |theta - theta_star|^2 with G = 0: a single lower minimizer."""
    ts = np.asarray(theta_star, dtype=float)

    def lower(theta):
        return sqnorm(np.asarray(theta, dtype=float) - ts)

    def upper(theta):
        return np.zeros(np.shape(theta)[:-1])

    return BiLevelProblem(
        lower=lower, upper=upper, dim=ts.size, theta_good=ts, lower_min=0.0,
        lower_grad=lambda th: 2.0 * (np.asarray(th, dtype=float) - ts),
        name="quadratic",
    )


@dataclass
class BenchmarkSpec:
    name: str
    problem: BiLevelProblem
    default_init: InitSpec
    known_precision_targets: Dict[str, Tuple[float, str]] = field(default_factory=dict)


def ackley_circle() -> BenchmarkSpec:
    problem = BiLevelProblem(
        lower=circular_lower,
        upper=ackley,
        dim=2,
        lower_grad=circular_lower_grad,
        lower_hess=circular_lower_hess,
        project=sphere_project,
        tangent=sphere_tangent,
        theta_good=CIRCLE_GOOD,
        lower_min=0.0,
        name="ackley-circle",
    )
    return BenchmarkSpec(
        "ackley-circle",
        problem,
        InitSpec.uniform(-3.0, 3.0),
        {
            "same-particles/penalized": (9.3e-3, "table1"),
            "same-particles/adaptive": (5.1e-3, "table1"),
            "same-particles/gradient-force": (1e-3, "table1"),
            "same-particles/projected": (1.4e-3, "table1"),
            "same-particles/cb2o": (4e-3, "table1"),
            "same-time/penalized": (9.3e-3, "table2"),
            "same-time/adaptive": (2e-3, "table2"),
            "same-time/gradient-force": (1.4e-3, "table2"),
            "same-time/projected": (1.8e-3, "table2"),
            "same-time/cb2o": (1e-3, "table2"),
        },
    )


def ackley_star() -> BenchmarkSpec:
    problem = BiLevelProblem(
        lower=star_lower,
        upper=ackley,
        dim=2,
        lower_grad=star_lower_grad,
        lower_hess=star_lower_hess,
        theta_good=STAR_GOOD,
        lower_min=0.0,
        name="ackley-star",
    )
    return BenchmarkSpec(
        "ackley-star",
        problem,
        InitSpec.uniform(-3.0, 3.0),
        {
            "same-particles/penalized": (8.7e-3, "table3"),
            "same-particles/adaptive": (11.2e-3, "table3"),
            "same-particles/gradient-force": (10e-3, "table3"),
            "same-particles/cb2o": (8e-3, "table3"),
            "same-time/penalized": (6.1e-3, "table4"),
            "same-time/adaptive": (4.4e-3, "table4"),
            "same-time/gradient-force": (20.9e-3, "table4"),
            "same-time/cb2o": (3.2e-3, "table4"),
        },
    )


def himmelblau_demo() -> BenchmarkSpec:
    """Himmelblau lower level with a parabola upper level centred at (3.2, 2.2).

    Of the four Himmelblau minimizers, (3, 2) is closest to the centre and is
    therefore the unique good minimizer.
    """
    problem = BiLevelProblem(
        lower=himmelblau,
        upper=demo_parabola,
        dim=2,
        theta_good=HIMMELBLAU_MINIMA[0],
        lower_min=0.0,
        name="himmelblau-demo",
    )
    return BenchmarkSpec("himmelblau-demo", problem, InitSpec.uniform(-5.0, 5.0))


REGISTRY: Dict[str, Callable[[], BenchmarkSpec]] = {
    "ackley-circle": ackley_circle,
    "ackley-star": ackley_star,
    "himmelblau-demo": himmelblau_demo,
}


def get_benchmark(name: str) -> BenchmarkSpec:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown benchmark {name!r}; registered: {', '.join(sorted(REGISTRY))}"
        ) from None
