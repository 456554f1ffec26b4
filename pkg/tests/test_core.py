import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cb2o.core import (
    BiLevelProblem,
    ConfigurationError,
    DiffusionKind,
    Ensemble,
    InitSpec,
    RngStream,
    check_beta,
    gaussian_vector,
    init_ensemble,
    min_admissible_beta,
    n_selected,
    sqnorm,
)


def test_explicit_points_kept_in_order():
    pts = [(0, 0), (1, 0), (0, 1)]
    ens = init_ensemble(3, 2, InitSpec.from_points(pts), RngStream(0))
    np.testing.assert_array_equal(ens.positions, np.array(pts, dtype=float))


def test_gaussian_init_is_deterministic():
    a = init_ensemble(100, 2, InitSpec.gaussian(), RngStream(1))
    b = init_ensemble(100, 2, InitSpec.gaussian(), RngStream(1))
    assert a.positions.tobytes() == b.positions.tobytes()


def test_single_particle_rejected_with_beta_min_hint():
    with pytest.raises(ConfigurationError, match="beta_min"):
        init_ensemble(1, 2, InitSpec.gaussian(), RngStream(0))


@pytest.mark.parametrize("low,high", [(-np.inf, 1.0), (0.0, np.nan)])
def test_non_finite_uniform_bounds(low, high):
    with pytest.raises(ConfigurationError):
        InitSpec.uniform(low, high)


def test_uniform_init_inside_box():
    ens = init_ensemble(500, 3, InitSpec.uniform(-3, 3), RngStream(4))
    assert ens.positions.shape == (500, 3)
    assert ens.positions.min() >= -3 and ens.positions.max() <= 3


def test_ensemble_rejects_non_finite():
    with pytest.raises(ConfigurationError):
        Ensemble(np.array([[0.0, 1.0], [np.nan, 0.0]]))


def test_gaussian_vector_sequence_fixed():
    a = [gaussian_vector(RngStream(7, 3), 4) for _ in range(1)]
    b = [gaussian_vector(RngStream(7, 3), 4) for _ in range(1)]
    np.testing.assert_array_equal(a, b)
    r = RngStream(7, 3)
    first, second = gaussian_vector(r, 4), gaussian_vector(r, 4)
    assert not np.array_equal(first, second)


def test_gaussian_moments():
    z = RngStream(2024).normal(1_000_000)
    assert abs(z.mean()) < 5e-3
    assert 0.99 < z.var() < 1.01


def test_stream_independence():
    a = RngStream(5, 0).normal(100_000)
    b = RngStream(5, 1).normal(100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02


def test_purposes_are_independent_streams():
    r = RngStream(9)
    assert not np.array_equal(r.normal(5, "noise"), r.normal(5, "init"))


def test_diffusion_kinds():
    v = np.array([3.0, 4.0])
    z = np.array([0.5, -2.0])
    np.testing.assert_allclose(DiffusionKind.ISOTROPIC.apply(v, z), 5.0 * z)
    np.testing.assert_allclose(DiffusionKind.ANISOTROPIC.apply(v, z), v * z)


@given(st.integers(2, 10_000), st.floats(1e-6, 1.0))
def test_n_selected_is_ceiling(n, beta):
    k = n_selected(beta, n)
    assert k >= beta * n - 1e-9 * n
    assert k - 1 < beta * n


def test_beta_min_rule():
    assert min_admissible_beta(100) == 0.02
    assert check_beta(0.02, 100) == 2
    with pytest.raises(ConfigurationError, match="0.02"):
        check_beta(0.009, 100)
    with pytest.raises(ConfigurationError):
        check_beta(1.5, 100)


def test_problem_checks_known_minimum():
    f = lambda x: np.sum(np.asarray(x) ** 2, axis=-1)
    BiLevelProblem(lower=f, upper=f, dim=2, theta_good=(0.0, 0.0), lower_min=0.0)
    with pytest.raises(ConfigurationError):
        BiLevelProblem(lower=f, upper=f, dim=2, theta_good=(1.0, 0.0), lower_min=0.0)


@settings(max_examples=50)
@given(st.integers(1, 40), st.integers(1, 5))
def test_sqnorm_matches_sum(d, n):
    x = np.random.default_rng(d * 100 + n).standard_normal((n, d))
    np.testing.assert_allclose(sqnorm(x), np.sum(x * x, axis=-1), rtol=1e-14)
