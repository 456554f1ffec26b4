"""Euler-Maruyama time stepping for CB2O and the shared batched particle engine.

The engine advances a stack of independent replicates, ``X`` of shape
``(R, N, d)``, in lock step. Every replicate owns its RngStream; noise is
pre-drawn in blocks from that stream, so a replicate's trajectory does not
depend on which other replicates share its batch.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np

from .consensus import (
    ConsensusResult,
    check_finite,
    gibbs_weights,
    select_lowest,
    smoothed_threshold,
    weighted_mean,
)
from .core import (
    Array,
    BiLevelProblem,
    ConfigurationError,
    DegenerateSelectionError,
    DiffusionKind,
    Ensemble,
    EvaluationError,
    InitSpec,
    RngStream,
    StepError,
    check_beta,
    n_selected,
    sample_init,
    sqnorm,
)

log = logging.getLogger(__name__)

REINIT_TOL = 1e-12
DEFAULT_EPOCH_LEN = 100
_NOISE_BLOCK_FLOATS = 1 << 21


@dataclass
class Scheduler:
    """Per-epoch hyperparameter schedule.

    rules: ``geometric`` (value * factor**epoch), ``log-cooling``
    (start / log2(epoch + 2)) and ``geometric-floor``
    (max(start * kappa**epoch, floor, 2/N)). ``start`` defaults to the value
    in the run parameters.
    """

    target: str
    rule: str
    factor: float = 2.0
    kappa: float = 0.5
    floor: float = 0.0
    start: Optional[float] = None
    epoch_len: int = DEFAULT_EPOCH_LEN

    def __post_init__(self):
        if self.target not in ("alpha", "sigma", "beta"):
            raise ConfigurationError(f"scheduler target {self.target!r} not in alpha/sigma/beta")
        if self.rule not in ("geometric", "log-cooling", "geometric-floor"):
            raise ConfigurationError(f"unknown scheduler rule {self.rule!r}")
        if self.epoch_len < 1:
            raise ConfigurationError("scheduler epoch_len must be >= 1")
        if self.rule == "geometric-floor" and not (0 < self.kappa <= 1):
            raise ConfigurationError("geometric-floor kappa must lie in (0, 1]")

    def value(self, base: float, epoch: int, n_particles: int) -> float:
        start = base if self.start is None else self.start
        if self.rule == "geometric":
            return start * self.factor**epoch
        if self.rule == "log-cooling":
            return start / math.log2(epoch + 2)
        return max(start * self.kappa**epoch, self.floor, 2.0 / n_particles)


@dataclass
class Cb2oParams:
    lam: float = 1.0
    sigma: float = 1.0
    alpha: float = 30.0
    beta: float = 0.05
    dt: float = 0.01
    diffusion: DiffusionKind = DiffusionKind.ISOTROPIC
    eps_stop: float = 0.0
    max_iters: int = 30000
    lambda_grad: float = 0.0
    sigma_grad: float = 0.0
    regularized: Optional[tuple] = None  # (radius_R, delta_q)
    reinit: bool = False
    reinit_patience: int = 30
    schedulers: List[Scheduler] = field(default_factory=list)
    warn_well_posedness: bool = False

    def __post_init__(self):
        self.diffusion = DiffusionKind(self.diffusion)
        if not self.lam > 0:
            raise ConfigurationError("lambda must be > 0")
        if self.sigma < 0 or self.sigma_grad < 0 or self.lambda_grad < 0:
            raise ConfigurationError("sigma, sigma_grad and lambda_grad must be >= 0")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        if not (0 < self.beta <= 1):
            raise ConfigurationError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        if self.eps_stop < 0:
            raise ConfigurationError("eps_stop must be >= 0")
        if self.max_iters < 0:
            raise ConfigurationError("max_iters must be >= 0")
        if self.reinit_patience < 1:
            raise ConfigurationError("reinit_patience must be >= 1")
        if self.regularized is not None:
            R, dq = self.regularized
            if not R > 0 or dq < 0:
                raise ConfigurationError("regularized needs radius_R > 0 and delta_q >= 0")
            self.regularized = (float(R), float(dq))

    def well_posed(self, d: int) -> bool:
        """2 lambda > d sigma^2 (isotropic) or 2 lambda > sigma^2 (anisotropic)."""
        dim = d if self.diffusion is DiffusionKind.ISOTROPIC else 1
        return 2 * self.lam > dim * self.sigma**2

    def validate_for(self, problem: BiLevelProblem, n_particles: int) -> None:
        check_beta(self.beta, n_particles)
        if self.lambda_grad > 0 or self.sigma_grad > 0:
            if problem.lower_grad is None:
                raise ConfigurationError("gradient drift requires problem.lower_grad")
        if self.warn_well_posedness and not self.well_posed(problem.dim):
            warnings.warn(
                f"2*lambda <= {'d*' if self.diffusion is DiffusionKind.ISOTROPIC else ''}"
                f"sigma^2 (lambda={self.lam}, sigma={self.sigma}, d={problem.dim})",
                RuntimeWarning,
                stacklevel=3,
            )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["diffusion"] = self.diffusion.value
        out["regularized"] = list(self.regularized) if self.regularized else None
        return out

    @property
    def horizon(self) -> float:
        return self.max_iters * self.dt


@dataclass
class RunTrace:
    """Per-iteration records plus a run summary.

    Record k holds m_k, the consensus point of the iterate theta_k, and the
    c_stop of theta_{k+1} around it. A run with ``max_iters=0`` has a single
    record of the initial consensus point with c_stop NaN.
    """

    iters: Array
    consensus: Array
    c_stop: Array
    lower_m: Array
    upper_m: Array
    precision: Optional[Array]
    wall: Array
    dt: float
    summary: dict

    @property
    def t(self) -> Array:
        return self.iters * self.dt

    @property
    def final_consensus(self) -> Array:
        return np.asarray(self.summary["final_consensus"])

    @property
    def stop_reason(self) -> str:
        return self.summary["stop_reason"]

    @property
    def n_iters(self) -> int:
        return self.summary["total_iterations"]

    def records(self) -> Iterator[dict]:
        for j in range(len(self.iters)):
            yield {
                "iter": int(self.iters[j]),
                "t": float(self.iters[j] * self.dt),
                "consensus": self.consensus[j].copy(),
                "c_stop": float(self.c_stop[j]),
                "lower_m": float(self.lower_m[j]),
                "upper_m": float(self.upper_m[j]),
                "precision": None if self.precision is None else float(self.precision[j]),
                "wall": float(self.wall[j]),
            }


class RunError(RuntimeError):
    """A run aborted; ``trace`` holds everything recorded up to the failure."""

    def __init__(self, message: str, trace: RunTrace):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# batched engine
# ---------------------------------------------------------------------------


class _NoiseFeed:
    """Standard normal draws of shape (N, d) per replicate, pre-drawn in blocks."""

    def __init__(self, rngs: Sequence[RngStream], purpose: str, shape: tuple):
        self.rngs = list(rngs)
        self.purpose = purpose
        self.shape = shape
        per = int(np.prod(shape))
        self.block = max(1, min(512, _NOISE_BLOCK_FLOATS // max(1, per * len(self.rngs))))
        self.buf: Optional[Array] = None
        self.pos = self.block

    def next(self) -> Array:
        if self.pos == self.block:
            self.buf = np.stack(
                [r.normal((self.block,) + self.shape, self.purpose) for r in self.rngs]
            )
            self.pos = 0
        z = self.buf[:, self.pos]
        self.pos += 1
        return z

    def rewind(self) -> None:
        self.pos -= 1

    def keep(self, mask: Array) -> None:
        self.rngs = [r for r, k in zip(self.rngs, mask) if k]
        if self.buf is not None:
            self.buf = self.buf[mask]


@dataclass
class StepContext:
    """Hyperparameters in force for one step (after scheduling)."""

    lam: float
    sigma: float
    alpha: float
    beta: float
    dt: float
    diffusion: DiffusionKind
    k: int


class Method:
    """A consensus-based particle method on top of the batched engine."""

    name = "method"

    def __init__(self, problem: BiLevelProblem, params: Cb2oParams):
        self.problem = problem
        self.params = params

    def validate(self, n_particles: int) -> None:
        self.params.validate_for(self.problem, n_particles)

    def prepare(self, X: Array) -> Array:
        return X

    def consensus(self, X: Array, ctx: StepContext) -> Array:
        raise NotImplementedError

    def extra_noise(self) -> tuple:
        return ()

    def move(self, X: Array, m: Array, ctx: StepContext, Z: Array, extra: tuple) -> Array:
        # theta - dt*lam*(theta - m) written around m, so lam*dt = 1 lands exactly on m
        D = X - m[:, None, :]
        noise = (math.sqrt(ctx.dt) * ctx.sigma) * ctx.diffusion.apply(D, Z)
        return m[:, None, :] + (1.0 - ctx.dt * ctx.lam) * D + noise

    def after_step(self, m: Array, ctx: StepContext) -> None:
        pass

    def keep(self, mask: Array) -> None:
        pass


def _finite_or_raise(arr: Array, what: str) -> None:
    """Raise StepError naming the first replicate/particle with a non-finite entry."""
    if np.isfinite(arr).all():
        return
    bad = np.argwhere(~np.isfinite(arr))[0]
    err = StepError(f"non-finite {what} for particle {int(bad[1])}")
    err.replicate = int(bad[0])
    raise err


class Cb2oMethod(Method):
    name = "cb2o"

    def extra_noise(self) -> tuple:
        if self.params.sigma_grad > 0:
            return ("grad_noise",)
        return ()

    def consensus(self, X: Array, ctx: StepContext) -> Array:
        R, N, _ = X.shape
        lv = self.problem.lower(X)
        _nonfinite_eval(lv, "lower objective")
        if self.params.regularized is not None:
            return _regularized_batch(self.problem, X, lv, ctx, *self.params.regularized)
        k = n_selected(ctx.beta, N)
        idx, _ = select_lowest(lv, k)
        S = np.take_along_axis(X, idx[:, :, None], axis=1)
        g = self.problem.upper(S)
        _nonfinite_eval(g, "upper objective")
        return weighted_mean(S, gibbs_weights(g, ctx.alpha))

    def move(self, X, m, ctx, Z, extra):
        Xn = super().move(X, m, ctx, Z, extra)
        p = self.params
        if p.lambda_grad > 0 or p.sigma_grad > 0:
            grad = self.problem.lower_grad(X)
            _finite_or_raise(grad, "lower gradient")
            if p.lambda_grad > 0:
                Xn = Xn - (ctx.dt * p.lambda_grad) * grad
            if p.sigma_grad > 0:
                Xn = Xn + (math.sqrt(ctx.dt) * p.sigma_grad) * ctx.diffusion.apply(grad, extra[0])
        return Xn


def _nonfinite_eval(values: Array, what: str) -> None:
    if np.isfinite(values).all():
        return
    bad = np.argwhere(~np.isfinite(values))[0]
    err = EvaluationError(f"{what} is not finite for particle {int(bad[-1])}")
    err.replicate = int(bad[0])
    raise err


def _regularized_batch(problem, X, lv, ctx, radius_R, delta_q):
    R = X.shape[0]
    out = np.empty((R, X.shape[2]))
    for r in range(R):
        tau = smoothed_threshold(np.sort(lv[r]), ctx.beta) + delta_q
        inside = np.sqrt(sqnorm(X[r])) <= radius_R
        sel = np.flatnonzero(inside & (lv[r] <= tau))
        if sel.size == 0:
            # fall back to the plain quantile selection
            log.info("regularized selection empty (replicate %d); using plain quantile", r)
            sel, _ = select_lowest(lv[r][None], n_selected(ctx.beta, X.shape[1]))
            sel = np.asarray(sel[0])
        pts = X[r, sel]
        g = problem.upper(pts)
        _nonfinite_eval(g[None], "upper objective")
        out[r] = weighted_mean(pts, gibbs_weights(g, ctx.alpha))
    return out


def _scheduled(
    params: Cb2oParams, k: int, n_particles: int, epoch: Optional[int] = None
) -> StepContext:
    """Hyperparameters for step k. Epochs count ``epoch_len`` steps unless a
    mini-batched objective supplies its own epoch counter."""
    vals = {"alpha": params.alpha, "sigma": params.sigma, "beta": params.beta}
    for s in params.schedulers:
        e = k // s.epoch_len if epoch is None else epoch
        vals[s.target] = s.value(getattr(params, s.target), e, n_particles)
    return StepContext(
        lam=params.lam,
        sigma=vals["sigma"],
        alpha=vals["alpha"],
        beta=min(1.0, vals["beta"]),
        dt=params.dt,
        diffusion=params.diffusion,
        k=k,
    )


def _stochastic_objectives(problem: BiLevelProblem) -> list:
    return [f for f in (problem.lower, problem.upper) if hasattr(f, "advance")]


def simulate(
    method: Method,
    X0: Array,
    rngs: Sequence[RngStream],
    record_every: int = 1,
    config_echo: Optional[dict] = None,
) -> List[RunTrace]:
    """Advance ``len(rngs)`` replicates from ``X0`` (R, N, d) until each stops.

    A replicate stops when c_stop <= eps_stop or after max_iters steps, or
    when a step fails (stop reason ``error``). Records are kept every
    ``record_every`` iterations; the initial and final ones always.
    """
    problem, params = method.problem, method.params
    X = np.array(X0, dtype=float)
    R, N, d = X.shape
    if len(rngs) != R:
        raise ConfigurationError("one RngStream per replicate is required")
    method.validate(N)
    stochastic = _stochastic_objectives(problem)
    if stochastic and R > 1:
        raise ConfigurationError("mini-batched objectives run one replicate at a time")
    X = method.prepare(X)
    theta_good = problem.theta_good
    eps, K = params.eps_stop, params.max_iters

    t0 = time.perf_counter()
    slots = np.arange(R)  # active row -> replicate slot
    rows: list = [[] for _ in range(R)]
    done: dict = {}
    final_m = np.zeros((R, d))

    def record(slot_ids, it, m, c):
        lm = problem.lower(m)
        gm = problem.upper(m)
        prec = (
            np.sqrt(sqnorm(m - theta_good))
            if theta_good is not None
            else np.full(len(slot_ids), np.nan)
        )
        wall = time.perf_counter() - t0
        for j, s in enumerate(slot_ids):
            rows[s].append((it, m[j].copy(), c[j], lm[j], gm[j], prec[j], wall))

    noise = _NoiseFeed(rngs, "noise", (N, d))
    extras = [_NoiseFeed(rngs, p, (N, d)) for p in method.extra_noise()]
    reinit_count = np.zeros(R, dtype=int)
    spent = np.zeros(R)
    m_prev = None
    act_rngs = list(rngs)

    def drop(mask_keep):
        nonlocal X, slots, reinit_count, m_prev, act_rngs
        X = X[mask_keep]
        slots = slots[mask_keep]
        reinit_count = reinit_count[mask_keep]
        if m_prev is not None:
            m_prev = m_prev[mask_keep]
        act_rngs = [r for r, k in zip(act_rngs, mask_keep) if k]
        noise.keep(mask_keep)
        for e in extras:
            e.keep(mask_keep)
        method.keep(mask_keep)

    def fail(exc, m_last=None):
        rep = getattr(exc, "replicate", None)
        mask = np.ones(len(slots), bool)
        if rep is None:
            mask[:] = False
        else:
            mask[rep] = False
        for j in np.flatnonzero(~mask):
            s = slots[j]
            done[s] = ("error", str(exc), k)
        drop(mask)

    # with no steps to take, report the consensus of the initial ensemble
    ctx0 = _scheduled(params, 0, N)
    k = 0
    if K == 0:
        try:
            m0 = method.consensus(X, ctx0)
            record(slots, 0, m0, np.full(len(slots), np.nan))
            final_m[slots] = m0
        except (EvaluationError, StepError) as exc:
            fail(exc)

    while len(slots) and k < K:
        for f in stochastic:
            f.advance()
        ctx = _scheduled(params, k, N, stochastic[0].epoch if stochastic else None)
        ts = time.perf_counter()
        try:
            m = method.consensus(X, ctx)
        except (EvaluationError, StepError) as exc:
            fail(exc)
            continue
        Z = noise.next()
        extra = tuple(e.next() for e in extras)
        try:
            Xn = method.move(X, m, ctx, Z, extra)
            _finite_or_raise(Xn, "particle update")
        except (EvaluationError, StepError) as exc:
            # the surviving replicates redo this step with the same draws
            for feed in [noise, *extras]:
                feed.rewind()
            fail(exc)
            continue
        k += 1
        diff = Xn - m[:, None, :]
        c = np.sum(sqnorm(diff), axis=1) / (d * N)
        method.after_step(m, ctx)
        if params.reinit:
            if m_prev is not None:
                frozen = np.sqrt(sqnorm(m - m_prev)) <= REINIT_TOL
                reinit_count = np.where(frozen, reinit_count + 1, 0)
                for j in np.flatnonzero(reinit_count >= params.reinit_patience):
                    Xn[j] = Xn[j] + ctx.sigma * act_rngs[j].normal((N, d), "reinit")
                    reinit_count[j] = 0
            m_prev = m
        X = Xn
        final_m[slots] = m
        spent[slots] += (time.perf_counter() - ts) / len(slots)
        stop = c <= eps
        last = stop | (k == K)
        # row k - 1 holds the consensus point that drove step k and its c_stop
        if record_every and ((k - 1) % record_every == 0):
            record(slots, k - 1, m, c)
        elif last.any():
            record(slots[last], k - 1, m[last], c[last])
        if stop.any():
            for s in slots[stop]:
                done[s] = ("converged", None, k)
            drop(~stop)
    for s in slots:
        done[s] = ("max_iters", None, k)

    traces = []
    for s in range(R):
        reason, err, iters = done[s]
        rec = rows[s]
        cols = list(zip(*rec)) if rec else [[], [], [], [], [], [], []]
        its = np.asarray(cols[0], dtype=int)
        cons = np.asarray(cols[1], dtype=float).reshape(len(its), d)
        summary = {
            "final_consensus": final_m[s].tolist() if rec else None,
            "stop_reason": reason,
            "total_iterations": int(iters),
            "total_seconds": float(spent[s]),
            "seed": rngs[s].seed,
            "stream_id": rngs[s].stream_id,
            "method": method.name,
            "config": config_echo if config_echo is not None else {"params": params.to_dict()},
        }
        if err:
            summary["error"] = err
        traces.append(
            RunTrace(
                iters=its,
                consensus=cons,
                c_stop=np.asarray(cols[2], dtype=float),
                lower_m=np.asarray(cols[3], dtype=float),
                upper_m=np.asarray(cols[4], dtype=float),
                precision=np.asarray(cols[5], dtype=float) if theta_good is not None else None,
                wall=np.asarray(cols[6], dtype=float),
                dt=params.dt,
                summary=summary,
            )
        )
    return traces


def initial_positions(
    init: InitSpec, n: int, d: int, rngs: Sequence[RngStream]
) -> Array:
    return np.stack([sample_init(init, n, d, r.generator("init")) for r in rngs])


# ---------------------------------------------------------------------------
# public single-ensemble API
# ---------------------------------------------------------------------------


def cb2o_step(
    ensemble: Ensemble, problem: BiLevelProblem, params: Cb2oParams, rng: RngStream,
    k: int = 0,
) -> tuple[Ensemble, ConsensusResult, float]:
    """One Euler-Maruyama step; returns (new ensemble, consensus, c_stop)."""
    from .consensus import consensus_point, consensus_point_regularized

    method = Cb2oMethod(problem, params)
    method.validate(ensemble.n_particles)
    ctx = _scheduled(params, k, ensemble.n_particles)
    if params.regularized is not None:
        cr = consensus_point_regularized(ensemble, problem, ctx.alpha, ctx.beta, *params.regularized)
    else:
        cr = consensus_point(ensemble, problem, ctx.alpha, ctx.beta)
    X = ensemble.positions[None]
    N, d = ensemble.n_particles, ensemble.dim
    Z = rng.normal((N, d), "noise")[None]
    extra = tuple(rng.normal((N, d), p)[None] for p in method.extra_noise())
    Xn = method.move(X, cr.point[None], ctx, Z, extra)
    _finite_or_raise(Xn, "particle update")
    diff = Xn[0] - cr.point
    c = float(np.sum(sqnorm(diff)[None], axis=1)[0] / (d * N))
    return Ensemble(Xn[0]), cr, c


def run(
    problem: BiLevelProblem,
    params: Cb2oParams,
    init: InitSpec,
    seed: int,
    n_particles: int = 100,
    stream_id: int = 0,
    record_every: int = 1,
    raise_on_error: bool = True,
) -> RunTrace:
    """Run CB2O until c_stop <= eps_stop or max_iters steps, with optional
    schedulers and re-initialization."""
    return run_method(
        Cb2oMethod(problem, params), init, seed, n_particles, stream_id,
        record_every, raise_on_error,
    )


def run_method(
    method: Method,
    init: InitSpec,
    seed: int,
    n_particles: int,
    stream_id: int = 0,
    record_every: int = 1,
    raise_on_error: bool = True,
) -> RunTrace:
    rng = RngStream(seed, stream_id)
    X0 = initial_positions(init, n_particles, method.problem.dim, [rng])
    (trace,) = simulate(method, X0, [rng], record_every)
    trace.summary["init"] = init.to_dict()
    if raise_on_error and trace.stop_reason == "error":
        raise RunError(trace.summary.get("error", "run failed"), trace)
    return trace


def reinit_if_stuck(
    counter: int,
    m_prev: Array,
    m_new: Array,
    ensemble: Ensemble,
    sigma: float,
    rng: RngStream,
    patience: int = 30,
) -> tuple[int, Ensemble]:
    """Perturb every particle by N(0, sigma^2) once the consensus point has not
    moved (within 1e-12) for ``patience`` consecutive steps.

    Returns the updated counter and ensemble.
    """
    if patience < 1:
        raise ConfigurationError("patience must be >= 1")
    frozen = float(np.linalg.norm(np.asarray(m_new) - np.asarray(m_prev))) <= REINIT_TOL
    counter = counter + 1 if frozen else 0
    if counter < patience:
        return counter, ensemble
    z = rng.normal((ensemble.n_particles, ensemble.dim), "reinit")
    return 0, Ensemble(ensemble.positions + sigma * z)


class MinibatchObjective:
    """Objective evaluated on successive mini-batches of a dataset.

    ``full(theta, indices)`` evaluates the objective on the data rows
    ``indices``. Each call to ``advance`` moves to the next batch of a fresh
    per-epoch permutation; an epoch lasts ceil(n_data / batch_size) batches.
    """

    def __init__(self, full, n_data: int, batch_size: int, rng: RngStream):
        if batch_size < 1 or batch_size > n_data:
            raise ConfigurationError(
                f"batch_size must lie in [1, {n_data}], got {batch_size}"
            )
        self.full = full
        self.n_data = n_data
        self.batch_size = batch_size
        self.epoch_len = -(-n_data // batch_size)
        self._gen = rng.generator("batch")
        self.epoch = -1
        self.batch_index = -1
        self._perm: Optional[Array] = None
        self.indices: Optional[Array] = None

    def advance(self) -> Array:
        if self._perm is None or self.batch_index + 1 >= self.epoch_len:
            self.epoch += 1
            self.batch_index = 0
            self._perm = self._gen.permutation(self.n_data)
        else:
            self.batch_index += 1
        b = self.batch_index * self.batch_size
        self.indices = self._perm[b : b + self.batch_size]
        return self.indices

    def __call__(self, theta: Array) -> Array:
        if self.indices is None:
            self.advance()
        return self.full(theta, self.indices)


def minibatch_objective(full, n_data: int, batch_size: int, rng: RngStream) -> MinibatchObjective:
    return MinibatchObjective(full, n_data, batch_size, rng)
