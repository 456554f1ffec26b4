import math
import subprocess
import sys
import warnings

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
)
from cb2o.dynamics import (
    Cb2oMethod,
    Cb2oParams,
    RunError,
    Scheduler,
    cb2o_step,
    initial_positions,
    minibatch_objective,
    reinit_if_stuck,
    run,
    simulate,
)
from cb2o.problems import get_benchmark, quadratic_problem

from conftest import make_problem, quad


def scalar_step(pos, L, G, alpha, beta, lam, sigma, dt, z, isotropic=True):
    """Plain-Python transcription of one Euler-Maruyama step."""
    n, d = len(pos), len(pos[0])
    k = math.ceil(beta * n)
    order = sorted(range(n), key=lambda i: (L(pos[i]), i))
    chosen = sorted(order[:k])
    gs = [G(pos[i]) for i in chosen]
    gmin = min(gs)
    ws = [math.exp(-alpha * (g - gmin)) for g in gs]
    tot = sum(ws)
    m = [sum(ws[j] * pos[i][c] for j, i in enumerate(chosen)) / tot for c in range(d)]
    out = []
    for i in range(n):
        diff = [pos[i][c] - m[c] for c in range(d)]
        norm = math.sqrt(sum(v * v for v in diff))
        row = []
        for c in range(d):
            scale = norm if isotropic else diff[c]
            row.append(pos[i][c] - dt * lam * diff[c] + math.sqrt(dt) * sigma * scale * z[i][c])
        out.append(row)
    c_stop = sum((out[i][c] - m[c]) ** 2 for i in range(n) for c in range(d)) / (d * n)
    return out, m, c_stop


@pytest.mark.parametrize("diffusion", ["isotropic", "anisotropic"])
def test_three_particle_step_matches_scalar_oracle(diffusion):
    pos = [[0.3, -1.2], [1.5, 0.4], [-0.7, 0.9]]
    Lf = lambda x: (x[0] - 0.2) ** 2 + (x[1] + 0.1) ** 2
    Gf = lambda x: (x[0] - 1.0) ** 2 + x[1] ** 2
    problem = make_problem(
        lambda X: (np.asarray(X)[..., 0] - 0.2) ** 2 + (np.asarray(X)[..., 1] + 0.1) ** 2,
        lambda X: (np.asarray(X)[..., 0] - 1.0) ** 2 + np.asarray(X)[..., 1] ** 2,
    )
    params = Cb2oParams(lam=1.0, sigma=0.8, alpha=3.0, beta=2 / 3, dt=0.05, diffusion=diffusion)
    z = RngStream(42).normal((3, 2)).tolist()
    ens, cr, c = cb2o_step(Ensemble(np.array(pos)), problem, params, RngStream(42))
    ref, m, c_ref = scalar_step(pos, Lf, Gf, 3.0, 2 / 3, 1.0, 0.8, 0.05, z, diffusion == "isotropic")
    assert np.max(np.abs(cr.point - m)) <= 1e-14
    assert np.max(np.abs(ens.positions - np.array(ref))) <= 1e-14
    assert abs(c - c_ref) <= 1e-14


def test_pure_drift_collapses_onto_consensus(rng):
    ens = Ensemble(rng.standard_normal((20, 2)))
    p = make_problem(quad((0, 0)), quad((1, 0)))
    params = Cb2oParams(sigma=0.0, lam=1.0, dt=1.0, beta=0.5)
    new, cr, c = cb2o_step(ens, p, params, RngStream(0))
    assert np.all(new.positions == cr.point)
    assert c == 0.0


def test_half_step_contraction(rng):
    ens = Ensemble(rng.standard_normal((20, 2)))
    p = make_problem(quad((0, 0)), quad((1, 0)))
    new, cr, c = cb2o_step(ens, p, Cb2oParams(sigma=0.0, dt=0.5, beta=0.5), RngStream(0))
    before = np.linalg.norm(ens.positions - cr.point, axis=1)
    after = np.linalg.norm(new.positions - cr.point, axis=1)
    np.testing.assert_allclose(after, 0.5 * before, rtol=1e-12, atol=1e-15)
    # frozen-consensus contraction of the mean squared spread
    V0 = np.mean(before**2)
    assert abs(c * 2 - (1 - 0.5) ** 2 * V0) <= 1e-12 * V0


def test_gradient_drift_term(rng):
    prob = quadratic_problem((0.5, 0.5))
    ens = Ensemble(rng.standard_normal((10, 2)))
    params = Cb2oParams(sigma=0.0, dt=0.1, beta=1.0, lambda_grad=2.0)
    new, cr, _ = cb2o_step(ens, prob, params, RngStream(0))
    X = ens.positions
    expect = X - 0.1 * (X - cr.point) - 0.1 * 2.0 * prob.lower_grad(X)
    np.testing.assert_allclose(new.positions, expect, atol=1e-14)


def test_gradient_drift_requires_gradient():
    p = make_problem(quad((0, 0)), quad((1, 0)))
    with pytest.raises(ConfigurationError):
        run(p, Cb2oParams(lambda_grad=1.0, max_iters=2), InitSpec.gaussian(), 0, 10)


def test_noise_keeps_particles_distinct(rng):
    ens = Ensemble(rng.standard_normal((30, 2)))
    p = make_problem(quad((0, 0)), quad((1, 0)))
    new, _, c = cb2o_step(ens, p, Cb2oParams(sigma=1.0, beta=0.5), RngStream(1))
    assert c > 0
    assert len(np.unique(new.positions, axis=0)) == 30


def test_huge_eps_stops_after_one_step():
    b = get_benchmark("ackley-circle")
    tr = run(b.problem, Cb2oParams(eps_stop=1e300), b.default_init, 0, 50)
    assert tr.n_iters == 1 and tr.stop_reason == "converged"
    assert len(tr.iters) == 1


def test_zero_iterations_records_initial_state():
    b = get_benchmark("ackley-circle")
    tr = run(b.problem, Cb2oParams(max_iters=0), b.default_init, 0, 50)
    assert tr.n_iters == 0 and list(tr.iters) == [0] and np.isnan(tr.c_stop[0])


def test_run_equals_repeated_steps_and_c_stop_recomputes():
    b = get_benchmark("ackley-circle")
    params = Cb2oParams(max_iters=25)
    tr = run(b.problem, params, b.default_init, 11, 40)
    rng = RngStream(11)
    ens = Ensemble(initial_positions(b.default_init, 40, 2, [rng])[0])
    for k in range(25):
        new, cr, c = cb2o_step(ens, b.problem, params, rng, k)
        assert np.array_equal(tr.consensus[k], cr.point)
        recomputed = np.sum((new.positions - cr.point) ** 2) / (2 * 40)
        assert abs(tr.c_stop[k] - recomputed) <= 1e-12
        assert tr.c_stop[k] == c
        ens = new
    np.testing.assert_array_equal(tr.final_consensus, cr.point)


def test_batched_replicates_equal_single_runs():
    b = get_benchmark("ackley-star")
    params = Cb2oParams(max_iters=300, eps_stop=0.05)
    method = Cb2oMethod(b.problem, params)
    rngs = [RngStream(3 + i) for i in range(5)]
    batch = simulate(method, initial_positions(b.default_init, 30, 2, rngs), rngs)
    for i, tr in enumerate(batch):
        single = run(b.problem, params, b.default_init, 3 + i, 30)
        assert tr.stop_reason == single.stop_reason
        assert tr.n_iters == single.n_iters
        assert tr.consensus.tobytes() == single.consensus.tobytes()
        assert tr.c_stop.tobytes() == single.c_stop.tobytes()
    assert len({t.n_iters for t in batch}) > 1  # replicates stopped at different times


def test_reproducible_across_processes():
    code = (
        "import hashlib;from cb2o.dynamics import run,Cb2oParams;from cb2o.problems import get_benchmark;"
        "b=get_benchmark('ackley-circle');t=run(b.problem,Cb2oParams(max_iters=200),b.default_init,5,60);"
        "print(hashlib.sha256(t.consensus.tobytes()+t.c_stop.tobytes()).hexdigest())"
    )
    outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)}
    assert len(outs) == 1


def test_non_finite_objective_reports_error_with_trace():
    def lower(x):
        v = np.sum(np.asarray(x) ** 2, axis=-1)
        return np.where(v > 1e6, np.nan, v)

    p = make_problem(lower, quad((0, 0)))
    X = InitSpec.from_points([(0, 0), (1, 1), (2e3, 0)])
    with pytest.raises(RunError) as info:
        run(p, Cb2oParams(beta=1.0, max_iters=5), X, 0, 3)
    tr = info.value.trace
    assert tr.stop_reason == "error" and "particle 2" in tr.summary["error"]
    tr2 = run(p, Cb2oParams(beta=1.0, max_iters=5), X, 0, 3, raise_on_error=False)
    assert tr2.stop_reason == "error"


def test_well_posedness_warning():
    p = quadratic_problem()
    with pytest.warns(RuntimeWarning, match="lambda"):
        run(p, Cb2oParams(sigma=1.0, beta=0.5, warn_well_posedness=True, max_iters=1), InitSpec.gaussian(), 0, 10)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run(p, Cb2oParams(sigma=0.3, beta=0.5, warn_well_posedness=True, max_iters=1), InitSpec.gaussian(), 0, 10)
        run(p, Cb2oParams(sigma=1.0, beta=0.5, max_iters=1), InitSpec.gaussian(), 0, 10)


@given(st.integers(0, 12))
def test_scheduler_values_exact(e):
    assert Scheduler("alpha", "geometric").value(30.0, e, 100) == 30.0 * 2**e
    assert Scheduler("sigma", "log-cooling").value(1.0, e, 100) == 1.0 / math.log2(e + 2)
    s = Scheduler("beta", "geometric-floor", kappa=0.7, floor=0.01)
    assert s.value(0.5, e, 100) == max(0.5 * 0.7**e, 0.01, 0.02)
    assert s.value(0.5, e, 100) >= 0.02


def test_schedulers_fire_at_epoch_boundaries():
    from cb2o.dynamics import _scheduled

    params = Cb2oParams(schedulers=[Scheduler("alpha", "geometric", epoch_len=10),
                                    Scheduler("sigma", "log-cooling", epoch_len=10)])
    assert _scheduled(params, 9, 100).alpha == 30.0
    assert _scheduled(params, 10, 100).alpha == 60.0
    assert _scheduled(params, 25, 100).sigma == 1.0 / math.log2(4)


def test_reinit_counter_and_replay():
    ens = Ensemble(np.arange(8, dtype=float).reshape(4, 2))
    m = np.array([1.0, 1.0])
    c, out = 0, ens
    for step in range(29):
        c, out = reinit_if_stuck(c, m, m, out, 1.0, RngStream(0), patience=30)
    assert c == 29 and out is ens
    rng = RngStream(0)
    c, out = reinit_if_stuck(c, m, m, ens, 1.0, rng, patience=30)
    assert c == 0
    z = RngStream(0).normal((4, 2), "reinit")
    np.testing.assert_array_equal(out.positions, ens.positions + z)


def test_reinit_moving_consensus_and_zero_sigma():
    ens = Ensemble(np.zeros((3, 2)) + np.arange(3)[:, None])
    c = 0
    for k in range(100):
        c, out = reinit_if_stuck(c, np.array([k, 0.0]), np.array([k + 1.0, 0.0]), ens, 1.0, RngStream(0), 3)
        assert out is ens
    c = 0
    for k in range(3):
        c, out = reinit_if_stuck(c, np.zeros(2), np.zeros(2), ens, 0.0, RngStream(0), 3)
    np.testing.assert_array_equal(out.positions, ens.positions)


def _longest_frozen_stretch(cons):
    same = np.all(np.diff(cons, axis=0) == 0, axis=1)
    best = cur = 0
    for s in same:
        cur = cur + 1 if s else 0
        best = max(best, cur)
    return best


def test_reinit_in_run_breaks_frozen_consensus():
    # with a huge alpha the best selected particle sits on m and m stops moving
    b = get_benchmark("ackley-circle")
    base = dict(alpha=1e6, max_iters=200)
    frozen = run(b.problem, Cb2oParams(**base), b.default_init, 0, 30)
    assert _longest_frozen_stretch(frozen.consensus) >= 20
    kicked = run(b.problem, Cb2oParams(**base, reinit=True, reinit_patience=5), b.default_init, 0, 30)
    assert _longest_frozen_stretch(kicked.consensus) <= 5
    assert not np.array_equal(frozen.consensus, kicked.consensus)


def test_minibatch_partitions_permutation():
    data = np.arange(10.0)
    f = minibatch_objective(lambda th, idx: np.full(np.shape(th)[:-1], data[idx].sum()), 10, 3, RngStream(0))
    assert f.epoch_len == 4
    seen = [f.advance() for _ in range(4)]
    assert sorted(np.concatenate(seen).tolist()) == list(range(10))
    assert [len(s) for s in seen] == [3, 3, 3, 1]
    assert f.epoch == 0
    f.advance()
    assert f.epoch == 1


def test_minibatch_full_batch_and_determinism():
    full = lambda th, idx: np.sum(np.asarray(th) ** 2, axis=-1) + len(idx)
    f = minibatch_objective(full, 7, 7, RngStream(1))
    x = np.ones((3, 2))
    for _ in range(3):
        f.advance()
        np.testing.assert_array_equal(f(x), full(x, np.arange(7)))
    a = minibatch_objective(full, 50, 8, RngStream(2))
    b = minibatch_objective(full, 50, 8, RngStream(2))
    for _ in range(20):
        np.testing.assert_array_equal(a.advance(), b.advance())
    with pytest.raises(ConfigurationError):
        minibatch_objective(full, 5, 6, RngStream(0))


def test_minibatch_in_run_drives_epoch_schedulers():
    data = np.random.default_rng(0).standard_normal((40, 2)) + [1.0, 2.0]
    full = lambda th, idx: np.mean(
        np.sum((np.asarray(th)[..., None, :] - data[idx]) ** 2, axis=-1), axis=-1)
    lower = minibatch_objective(full, 40, 10, RngStream(0))
    p = BiLevelProblem(lower=lower, upper=quad((0, 0)), dim=2, vectorized=True)
    params = Cb2oParams(max_iters=12, beta=0.5,
                        schedulers=[Scheduler("alpha", "geometric", epoch_len=1000)])
    tr = run(p, params, InitSpec.gaussian(), 0, 20)
    assert tr.n_iters == 12 and lower.epoch == 2
