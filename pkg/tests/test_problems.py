import math

import numpy as np
import pytest

from cb2o.core import ConfigurationError
from cb2o.problems import (
    CIRCLE_GOOD,
    HIMMELBLAU_MINIMA,
    REGISTRY,
    STAR_GOOD,
    ackley,
    circular_lower,
    circular_lower_grad,
    circular_lower_hess,
    get_benchmark,
    himmelblau,
    sphere_project,
    sphere_tangent,
    star_lower,
    star_lower_grad,
)


def ackley_scalar(x, y):
    A, a, b = 20.0, 0.2, 3.0
    dx, dy = x - 0.5, y - 1.0 / 3.0
    r = math.sqrt(b * b / 2.0 * (dx * dx + dy * dy))
    c = 0.5 * (math.cos(2 * math.pi * b * dx) + math.cos(2 * math.pi * b * dy))
    return -A * math.exp(-a * r) - math.exp(c) + math.e + A


def test_ackley_minimum_symmetry_and_transcription(rng):
    assert abs(ackley(np.array([0.5, 1 / 3]))) <= 1e-14
    centre = np.array([0.5, 1 / 3])
    v = rng.standard_normal((100, 2))
    np.testing.assert_allclose(ackley(centre + v), ackley(centre - v), atol=1e-12)
    assert abs(ackley(np.zeros(2)) - ackley_scalar(0.0, 0.0)) <= 1e-12
    for x, y in rng.uniform(-3, 3, (20, 2)):
        assert abs(ackley(np.array([x, y])) - ackley_scalar(x, y)) <= 1e-12


def test_constraint_values():
    assert circular_lower(np.array(CIRCLE_GOOD)) <= 1e-9
    assert star_lower(np.array(STAR_GOOD)) <= 1e-9
    assert circular_lower(np.array([2.0, 0.0])) == 9.0
    assert star_lower(np.zeros(2)) == 1.0  # atan2(0, 0) = 0 gives radius 1


def test_lower_vanishes_on_curves(rng):
    phi = rng.uniform(-np.pi, np.pi, 1000)
    circ = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    assert np.max(circular_lower(circ)) <= 1e-18
    r = 1 + 0.5 * np.sin(5 * phi)
    star = r[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    assert np.max(star_lower(star)) <= 1e-18
    x = rng.uniform(-3, 3, (1000, 2))
    assert np.all(circular_lower(x) >= 0) and np.all(star_lower(x) >= 0)


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[j] = h
        g[..., j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("f,grad", [(circular_lower, circular_lower_grad), (star_lower, star_lower_grad)])
def test_gradient_matches_finite_differences(rng, f, grad):
    x = rng.uniform(-2, 2, (1000, 2))
    x = x[np.linalg.norm(x, axis=1) > 0.1]
    g, fd = grad(x), central_diff(f, x)
    rel = np.linalg.norm(g - fd, axis=1) / np.maximum(np.linalg.norm(g, axis=1), 1e-3)
    assert np.max(rel) <= 1e-5


def test_circular_hessian(rng):
    x = rng.uniform(-2, 2, (50, 2))
    H = circular_lower_hess(x)
    fd = np.stack([central_diff(lambda y: circular_lower_grad(y)[..., i], x) for i in range(2)], axis=-2)
    np.testing.assert_allclose(H, fd, atol=1e-5)


def test_sphere_projection(rng):
    x = rng.standard_normal((100, 3))
    p = sphere_project(x)
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-15)
    v = rng.standard_normal((100, 3))
    t = sphere_tangent(p, v)
    np.testing.assert_allclose(np.sum(t * p, axis=1), 0.0, atol=1e-14)
    assert np.all(np.isfinite(sphere_project(np.zeros((1, 3)))))


def test_himmelblau_demo():
    b = get_benchmark("himmelblau-demo")
    minima = np.asarray(HIMMELBLAU_MINIMA)
    assert np.all(himmelblau(minima) <= 1e-6)
    assert np.array_equal(minima[np.argmin(b.problem.upper(minima))], np.asarray(b.problem.theta_good))
    np.testing.assert_array_equal(b.problem.theta_good, [3.0, 2.0])


def test_himmelblau_grid_basins():
    g = np.arange(-5, 5.0001, 0.01)
    X, Y = np.meshgrid(g, g, indexing="ij")
    V = himmelblau(np.stack([X, Y], axis=-1))
    found = []
    for m in HIMMELBLAU_MINIMA:
        mask = (np.abs(X - m[0]) < 0.5) & (np.abs(Y - m[1]) < 0.5)
        i = np.argmin(np.where(mask, V, np.inf))
        found.append((X.flat[i], Y.flat[i]))
    assert np.max(np.linalg.norm(np.asarray(found) - np.asarray(HIMMELBLAU_MINIMA), axis=1)) <= 0.02
    # local minima of the grid: exactly four basins
    inner = V[1:-1, 1:-1]
    is_min = np.ones_like(inner, bool)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                is_min &= inner < V[1 + dx:V.shape[0] - 1 + dx, 1 + dy:V.shape[1] - 1 + dy]
    assert is_min.sum() == 4


def test_registry():
    assert set(REGISTRY) == {"ackley-circle", "ackley-star", "himmelblau-demo"}
    with pytest.raises(ConfigurationError, match="ackley-circle"):
        get_benchmark("rastrigin")
    for name in REGISTRY:
        p = get_benchmark(name).problem
        assert abs(p.lower(np.asarray(p.theta_good)) - p.lower_min) <= 1e-9


def test_stated_minimizers_digits():
    assert get_benchmark("ackley-circle").problem.theta_good.tolist() == [0.781475, 0.623937]
    assert get_benchmark("ackley-star").problem.theta_good.tolist() == [0.482208, 0.468687]
