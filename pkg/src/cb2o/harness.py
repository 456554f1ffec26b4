"""Multi-seed experiment driver: tables, baseline comparisons and ablation grids.

Replicate ``i`` of an experiment with base seed ``s`` uses
``RngStream(s + i)``, so results depend only on the replicate index and never
on batching, worker count or execution order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__
from .baselines import (
    ADAPTIVE_PRESETS,
    AdaptivePenalizedCbo,
    CboMethod,
    GradientForceCbo,
    PenalizedCbo,
    ProjectedCbo,
)
from .core import ConfigurationError, InitSpec, RngStream
from .dynamics import Cb2oMethod, Cb2oParams, RunTrace, Scheduler, initial_positions, simulate
from .metrics import PrecisionSummary
from .problems import get_benchmark

log = logging.getLogger(__name__)

# replicates are batched so that R * N stays below this many particles
PARTICLE_BUDGET = 200_000

SOLVERS = ("cb2o", "penalized", "adaptive", "gradient-force", "projected", "cbo")
SOLVER_LABELS = {
    "penalized": "Penalized CBO",
    "adaptive": "Adaptive Penalized CBO",
    "gradient-force": "CBO with GF",
    "projected": "Projected CBO",
    "cb2o": "CB2O",
    "cbo": "CBO on G",
}


# ---------------------------------------------------------------------------
# configuration schema
# ---------------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SchedulerConfig(_Strict):
    target: Literal["alpha", "sigma", "beta"]
    rule: Literal["geometric", "log-cooling", "geometric-floor"]
    factor: float = 2.0
    kappa: float = 0.5
    floor: float = 0.0
    start: Optional[float] = None
    epoch_len: int = Field(100, ge=1)


class RegularizedConfig(_Strict):
    radius_R: float = Field(gt=0)
    delta_q: float = Field(ge=0)


class SolverConfig(_Strict):
    kind: Literal["cb2o", "penalized", "adaptive", "gradient-force", "projected", "cbo"] = "cb2o"
    n_particles: int = Field(100, ge=1)
    lam: float = 1.0
    sigma: float = 1.0
    alpha: float = 30.0
    beta: float = 0.05
    dt: float = 0.01
    diffusion: Literal["isotropic", "anisotropic"] = "isotropic"
    eps_stop: float = 0.0
    max_iters: int = Field(30000, ge=0)
    lambda_grad: float = 0.0
    sigma_grad: float = 0.0
    reinit: bool = False
    reinit_patience: int = 30
    regularized: Optional[RegularizedConfig] = None
    schedulers: List[SchedulerConfig] = []
    # baselines
    chi: float = 100.0
    chi0: float = 1.0
    eta_chi: float = 1.1
    zeta0: float = 0.1
    eta_zeta: float = 1.4
    gradient_scheme: Literal["semi-implicit", "explicit"] = "semi-implicit"

    def params(self) -> Cb2oParams:
        return Cb2oParams(
            lam=self.lam, sigma=self.sigma, alpha=self.alpha, beta=self.beta, dt=self.dt,
            diffusion=self.diffusion, eps_stop=self.eps_stop, max_iters=self.max_iters,
            lambda_grad=self.lambda_grad, sigma_grad=self.sigma_grad, reinit=self.reinit,
            reinit_patience=self.reinit_patience,
            regularized=(self.regularized.radius_R, self.regularized.delta_q) if self.regularized else None,
            schedulers=[Scheduler(**s.model_dump()) for s in self.schedulers],
        )


class InitConfig(_Strict):
    kind: Literal["uniform", "gaussian"] = "uniform"
    low: float = -3.0
    high: float = 3.0
    mean: float = 0.0
    std: float = 1.0

    def spec(self) -> InitSpec:
        if self.kind == "uniform":
            return InitSpec.uniform(self.low, self.high)
        return InitSpec.gaussian(self.mean, self.std)


class ExperimentConfig(_Strict):
    """One experiment: a solver on a benchmark over ``n_seeds`` replicates."""

    benchmark: str = "ackley-circle"
    solver: SolverConfig = SolverConfig()
    init: Optional[InitConfig] = None
    n_seeds: int = Field(100, ge=1)
    seed: int = Field(0, ge=0)
    out: Optional[str] = None
    trace: Literal["summary", "full"] = "summary"
    record_every: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    label: Optional[str] = None

    @field_validator("benchmark")
    @classmethod
    def _known(cls, v):
        get_benchmark(v)
        return v

    def echo(self) -> dict:
        """Config as stored in summary.json (run-location fields omitted)."""
        return self.model_dump(mode="json", exclude={"out", "workers"})


def load_config(data: dict, overrides: Optional[list] = None) -> ExperimentConfig:
    """Validate a config dict after applying ``dotted.key=value`` overrides."""
    data = json.loads(json.dumps(data))
    for item in overrides or ():
        apply_override(data, item)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_validation(exc)) from None


def apply_override(data: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not KEY=VALUE")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override key {key!r}: {p!r} is not a section")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[parts[-1]] = value


def _format_validation(exc: ValidationError) -> str:
    msgs = []
    for e in exc.errors():
        loc = ".".join(str(x) for x in e["loc"])
        msgs.append(f"{loc}: {e['msg']}")
    return "invalid config: " + "; ".join(msgs)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def build_method(cfg: ExperimentConfig):
    bench = get_benchmark(cfg.benchmark)
    s = cfg.solver
    problem, params = bench.problem, s.params()
    if s.kind == "cb2o":
        return Cb2oMethod(problem, params)
    if s.kind == "penalized":
        return PenalizedCbo(problem, params, s.chi)
    if s.kind == "adaptive":
        return AdaptivePenalizedCbo(problem, params, s.chi0, s.eta_chi, s.zeta0, s.eta_zeta)
    if s.kind == "gradient-force":
        return GradientForceCbo(problem, params, s.chi, s.gradient_scheme)
    if s.kind == "projected":
        return ProjectedCbo(problem, params)
    return CboMethod(problem, params)


def _init_spec(cfg: ExperimentConfig) -> InitSpec:
    return cfg.init.spec() if cfg.init is not None else get_benchmark(cfg.benchmark).default_init


def run_replicates(cfg: ExperimentConfig, indices) -> List[RunTrace]:
    """Run the given replicate indices of ``cfg`` (in batches) and return traces."""
    indices = list(indices)
    N = cfg.solver.n_particles
    record_every = cfg.record_every if cfg.trace == "full" else 0
    init = _init_spec(cfg)
    dim = get_benchmark(cfg.benchmark).problem.dim
    batch = max(1, PARTICLE_BUDGET // max(N, 1))
    out: List[RunTrace] = []
    for lo in range(0, len(indices), batch):
        chunk = indices[lo:lo + batch]
        method = build_method(cfg)
        rngs = [RngStream(cfg.seed + i) for i in chunk]
        X0 = initial_positions(init, N, dim, rngs)
        out.extend(simulate(method, X0, rngs, record_every, config_echo=cfg.echo()))
    return out


def _run_chunk(args):
    cfg_dict, indices = args
    return run_replicates(ExperimentConfig.model_validate(cfg_dict), indices)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summary: PrecisionSummary
    traces: List[RunTrace]
    out_dir: Optional[Path] = None


def run_experiment(cfg: ExperimentConfig, keep_traces: bool = False) -> ExperimentResult:
    """Run all replicates, aggregate, and write artifacts when ``cfg.out`` is set."""
    build_method(cfg).validate(cfg.solver.n_particles)
    idx = list(range(cfg.n_seeds))
    if cfg.workers > 1 and cfg.n_seeds > 1:
        parts = [idx[w::cfg.workers] for w in range(cfg.workers)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            res = list(pool.map(_run_chunk, [(cfg.model_dump(), p) for p in parts if p]))
        by_index = {}
        for p, trs in zip([p for p in parts if p], res):
            by_index.update(zip(p, trs))
        traces = [by_index[i] for i in idx]
    else:
        traces = run_replicates(cfg, idx)
    summary = PrecisionSummary.from_traces(traces)
    out_dir = None
    if cfg.out is not None:
        out_dir = write_artifacts(cfg, summary, traces)
    return ExperimentResult(cfg, summary, traces if keep_traces else [], out_dir)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def fmt_float(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def dumps17(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits (NaN -> null)."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps17(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps17(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps17(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format(float(obj), ".17g") if math.isfinite(obj) else "null"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def git_revision() -> str:
    here = Path(__file__).resolve().parent
    try:
        res = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, timeout=10
        )
        if res.returncode == 0:
            return res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def write_artifacts(cfg: ExperimentConfig, summary: PrecisionSummary, traces: List[RunTrace]) -> Path:
    """Write summary.json, per_seed.csv, timing.json and optional trace CSVs.

    summary.json and per_seed.csv hold only seed-determined quantities, so a
    rerun reproduces them byte for byte; wall-clock numbers go to timing.json.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "config": cfg.echo(),
        "summary": summary.to_dict(runtime=False),
        "provenance": {
            "package_version": __version__,
            "git_revision": git_revision(),
            "base_seed": cfg.seed,
            "replicate_seeds": [cfg.seed, cfg.seed + cfg.n_seeds - 1],
        },
    }
    (out / "summary.json").write_text(dumps17(doc) + "\n")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "precision", "iterations", "stop_reason"])
    for i, tr in enumerate(traces):
        p = tr.precision[-1] if tr.precision is not None and len(tr.precision) else float("nan")
        w.writerow([cfg.seed + i, fmt_float(p), tr.summary["total_iterations"], tr.stop_reason])
    (out / "per_seed.csv").write_text(buf.getvalue())

    timing = {
        "mean_runtime_s": summary.mean_runtime_s,
        "per_seed": [
            {"seed": cfg.seed + i, "runtime_s": tr.summary["total_seconds"]} for i, tr in enumerate(traces)
        ],
    }
    (out / "timing.json").write_text(dumps17(timing) + "\n")

    if cfg.trace == "full":
        for i, tr in enumerate(traces):
            write_trace_csv(out / f"trace_{cfg.seed + i}.csv", tr)
    return out


def write_trace_csv(path: Path, tr: RunTrace) -> None:
    d = tr.consensus.shape[1] if tr.consensus.ndim == 2 else 0
    mcols = ["m_x", "m_y"] if d == 2 else [f"m_{j}" for j in range(d)]
    prec = tr.precision if tr.precision is not None else np.full(len(tr.iters), np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "t", *mcols, "c_stop", "L_m", "G_m", "precision"])
        for j, it in enumerate(tr.iters):
            w.writerow([
                int(it), fmt_float(it * tr.dt), *(fmt_float(v) for v in tr.consensus[j]),
                fmt_float(tr.c_stop[j]), fmt_float(tr.lower_m[j]), fmt_float(tr.upper_m[j]),
                fmt_float(prec[j]),
            ])


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

# particle counts when all methods get roughly the same wall-clock budget
SAME_TIME_PARTICLES = {
    "ackley-circle": {"penalized": 500, "adaptive": 500, "gradient-force": 50, "projected": 80, "cb2o": 1500},
    "ackley-star": {"penalized": 500, "adaptive": 500, "gradient-force": 500, "cb2o": 2000},
}
CB2O_BETA = {
    ("ackley-circle", "same-particles"): 1 / 20,
    ("ackley-circle", "same-time"): 1 / 30,
    ("ackley-star", "same-particles"): 1 / 20,
    ("ackley-star", "same-time"): 1 / 40,
}
EPS_STOP = {"ackley-circle": 0.0, "ackley-star": 1e-3}
TABLE_OF = {
    ("ackley-circle", "same-particles"): 1,
    ("ackley-circle", "same-time"): 2,
    ("ackley-star", "same-particles"): 3,
    ("ackley-star", "same-time"): 4,
}


def solvers_for(benchmark: str) -> list:
    """Comparison line-up; projection is only available on the circle."""
    names = ["penalized", "adaptive", "gradient-force", "projected", "cb2o"]
    if get_benchmark(benchmark).problem.project is None:
        names.remove("projected")
    return names


def comparison_config(
    benchmark: str, mode: str, solver: str, solver_overrides: Optional[dict] = None, **overrides
) -> ExperimentConfig:
    """Preset experiment for one solver of a comparison table."""
    mode = mode.replace("_", "-")
    if (benchmark, mode) not in CB2O_BETA:
        raise ConfigurationError(f"no comparison preset for {benchmark!r} in mode {mode!r}")
    n = 100 if mode == "same-particles" else SAME_TIME_PARTICLES[benchmark][solver]
    s = {"kind": solver, "n_particles": n, "eps_stop": EPS_STOP[benchmark]}
    if solver == "cb2o":
        s["beta"] = CB2O_BETA[(benchmark, mode)]
    elif solver in ("penalized", "gradient-force"):
        s["chi"] = 100.0
    elif solver == "adaptive":
        s.update(ADAPTIVE_PRESETS[(benchmark, mode)])
    data = {"benchmark": benchmark, "solver": s, "label": f"table{TABLE_OF[(benchmark, mode)]}_{solver}"}
    data["solver"].update(solver_overrides or {})
    data.update(overrides)
    return load_config(data)


@dataclass
class ComparisonRow:
    solver: str
    n_particles: int
    summary: Optional[PrecisionSummary]
    error: Optional[str] = None


def compare_baselines(
    benchmark: str,
    mode: str = "same-particles",
    n_seeds: int = 100,
    seed: int = 0,
    out: Optional[str] = None,
    solvers: Optional[list] = None,
    workers: int = 1,
    solver_overrides: Optional[dict] = None,
) -> List[ComparisonRow]:
    """One PrecisionSummary per solver; a failing solver does not stop the rest."""
    rows = []
    for name in solvers or solvers_for(benchmark):
        sub = None if out is None else str(Path(out) / name)
        try:
            cfg = comparison_config(
                benchmark, mode, name, n_seeds=n_seeds, seed=seed, out=sub, workers=workers,
                solver_overrides=solver_overrides,
            )
            res = run_experiment(cfg)
            rows.append(ComparisonRow(name, cfg.solver.n_particles, res.summary))
        except (ConfigurationError, ArithmeticError, RuntimeError) as exc:
            log.error("solver %s failed: %s", name, exc)
            rows.append(ComparisonRow(name, 0, None, str(exc)))
    if out is not None:
        write_table_csv(Path(out) / "comparison.csv", rows)
    return rows


def write_table_csv(path: Path, rows: List[ComparisonRow]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "n_particles", "precision", "runtime_s", "error"])
        for r in rows:
            p = r.summary.mean_precision if r.summary else float("nan")
            t = r.summary.mean_runtime_s if r.summary else float("nan")
            w.writerow([r.solver, r.n_particles, fmt_float(p), fmt_float(t), r.error or ""])


def format_table(rows: List[ComparisonRow]) -> str:
    head = ("Methods", "Number of particles", "Precision", "Running time (s)")
    body = []
    for r in rows:
        if r.summary is None or r.summary.n_failed == r.summary.n_seeds:
            body.append((SOLVER_LABELS.get(r.solver, r.solver), str(r.n_particles), "failed", "-"))
        else:
            body.append((
                SOLVER_LABELS.get(r.solver, r.solver), str(r.n_particles),
                f"{r.summary.mean_precision:.2e}", f"{r.summary.mean_runtime_s:.2f}",
            ))
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))
    return "\n".join([line(head), "-+-".join("-" * w for w in widths), *map(line, body)])


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

ABLATION_AXES = ("N", "beta", "alpha", "eps_stop", "joint_N_beta")
ABLATION_VALUES = {
    "N": [100, 1000, 10000, 100000],
    "beta": [1 / 500, 1 / 100, 1 / 50, 1 / 20, 1 / 10, 1 / 5, 1 / 2],
    "joint_N_beta": [[100, 0.5], [1000, 0.05], [10000, 0.005], [100000, 0.0005]],
    "alpha": [2, 10, 30, 50, 100],
    "eps_stop": [0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
}


def ablation_reference(benchmark: str = "ackley-circle") -> dict:
    return {
        "benchmark": benchmark,
        "solver": {"kind": "cb2o", "n_particles": 1000, "beta": 1 / 20, "alpha": 30.0, "eps_stop": 0.0},
    }


class AblationGrid(_Strict):
    """Vary one hyperparameter (or the pair (N, beta)) around a reference config."""

    axis: Literal["N", "beta", "alpha", "eps_stop", "joint_N_beta"]
    values: List[Any]
    reference: dict = Field(default_factory=ablation_reference)
    n_seeds: int = Field(50, ge=1)
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)

    @field_validator("values")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("at least one grid value is required")
        return v

    def check(self) -> None:
        if self.axis == "joint_N_beta":
            prods = [float(n) * float(b) for n, b in self.values]
            if max(prods) - min(prods) > 1e-9 * max(prods):
                raise ConfigurationError("joint_N_beta grid must keep beta*N fixed")

    def cell(self, value, out: Optional[str] = None) -> ExperimentConfig:
        data = json.loads(json.dumps(self.reference))
        s = data.setdefault("solver", {})
        if self.axis == "N":
            s["n_particles"] = int(value)
        elif self.axis == "joint_N_beta":
            s["n_particles"], s["beta"] = int(value[0]), float(value[1])
        else:
            s[self.axis] = float(value)
        data.update(n_seeds=self.n_seeds, seed=self.seed, out=out, workers=self.workers)
        return load_config(data)


@dataclass
class AblationRow:
    value: Any
    summary: Optional[PrecisionSummary]
    error: Optional[str] = None


def run_ablation(grid: AblationGrid, out: Optional[str] = None) -> List[AblationRow]:
    grid.check()
    rows = []
    for v in grid.values:
        try:
            res = run_experiment(grid.cell(v))
            rows.append(AblationRow(v, res.summary))
        except (ConfigurationError, ArithmeticError, RuntimeError) as exc:
            log.error("ablation cell %s=%s failed: %s", grid.axis, v, exc)
            rows.append(AblationRow(v, None, str(exc)))
    if out is not None:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / f"ablation_{grid.axis}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([grid.axis, "mean_precision", "mean_runtime_s", "error"])
            for r in rows:
                val = "/".join(fmt_float(x) for x in r.value) if isinstance(r.value, (list, tuple)) else fmt_float(r.value)
                p = r.summary.mean_precision if r.summary else float("nan")
                t = r.summary.mean_runtime_s if r.summary else float("nan")
                w.writerow([val, fmt_float(p), fmt_float(t), r.error or ""])
    return rows


# ---------------------------------------------------------------------------
# analyses
# ---------------------------------------------------------------------------


@dataclass
class DecayResult:
    t: np.ndarray
    V: np.ndarray
    rate: float
    r_squared: float
    predicted: float
    window: tuple

    @property
    def relative_error(self) -> float:
        return abs(self.rate - self.predicted) / abs(self.predicted)


def decay_experiment(
    n_particles: int = 10_000,
    lam: float = 1.0,
    sigma: float = 0.3,
    alpha: float = 1e4,
    beta: float = 0.02,
    dt: float = 1e-3,
    t_max: float = 10.0,
    seed: int = 0,
    theta_star=(1.0, -0.5),
) -> DecayResult:
    """Track V(t) = W2^2(rho_t, delta_theta*) on L = |theta - theta*|^2, G = 0,
    and fit its exponential rate against -(2 lambda - d sigma^2)."""
    from .core import init_ensemble
    from .dynamics import cb2o_step
    from .metrics import decay_window, fit_decay_rate, w2sq_to_dirac
    from .problems import quadratic_problem

    problem = quadratic_problem(theta_star)
    params = Cb2oParams(lam=lam, sigma=sigma, alpha=alpha, beta=beta, dt=dt, max_iters=int(round(t_max / dt)))
    rng = RngStream(seed)
    ens = init_ensemble(n_particles, problem.dim, InitSpec.gaussian(0.0, 1.0), rng)
    ts, Vs = [0.0], [w2sq_to_dirac(ens, problem.theta_good)]
    for k in range(params.max_iters):
        ens, _, _ = cb2o_step(ens, problem, params, rng, k)
        ts.append((k + 1) * dt)
        Vs.append(w2sq_to_dirac(ens, problem.theta_good))
    t, V = np.asarray(ts), np.asarray(Vs)
    window = decay_window(t, V)
    rate, r2 = fit_decay_rate(t, V, window)
    return DecayResult(t, V, rate, r2, -(2 * lam - problem.dim * sigma**2), window)


def instability_table(s_values, alpha: float = 30.0, n_points: int = 2000) -> list:
    """Rows (s, W2, consensus gap, gap / W2) for the two-circle construction."""
    from .consensus import wasserstein_instability_demo

    rows = []
    for s in s_values:
        w2, gap = wasserstein_instability_demo(float(s), alpha, n_points=n_points)
        rows.append((float(s), w2, gap, gap / w2))
    return rows


def laplace_trend(
    alphas=(1.0, 10.0, 100.0, 1e4),
    betas=(0.5, 0.25, 0.1, 0.02),
    n_particles: int = 10_000,
    beta_for_alpha: float = 0.05,
    alpha_for_beta: float = 100.0,
    seed: int = 0,
) -> tuple[list, list]:
    """Consensus-point trends on one fixed Himmelblau-demo ensemble.

    Returns ``(alpha_rows, beta_rows)``: (alpha, |m - b|, |m - theta_good|)
    with b the selected particle of smallest G, and (beta, spread of the
    selected set, |m - theta_good|), where the spread is the largest distance
    of a selected particle to the nearest lower minimizer.
    """
    from .consensus import consensus_point
    from .core import init_ensemble
    from .problems import HIMMELBLAU_MINIMA

    bench = get_benchmark("himmelblau-demo")
    problem = bench.problem
    ens = init_ensemble(n_particles, 2, bench.default_init, RngStream(seed))
    target = np.asarray(problem.theta_good)
    minima = np.asarray(HIMMELBLAU_MINIMA)
    a_rows = []
    for a in alphas:
        cr = consensus_point(ens, problem, a, beta_for_alpha)
        sel = ens.positions[cr.selected]
        best = sel[np.argmin(problem.upper(sel))]
        a_rows.append((
            float(a), float(np.linalg.norm(cr.point - best)), float(np.linalg.norm(cr.point - target)),
        ))
    b_rows = []
    for b in betas:
        cr = consensus_point(ens, problem, alpha_for_beta, b)
        sel = ens.positions[cr.selected]
        dist = np.linalg.norm(sel[:, None, :] - minima[None], axis=-1).min(axis=1)
        b_rows.append((float(b), float(dist.max()), float(np.linalg.norm(cr.point - target))))
    return a_rows, b_rows


# ---------------------------------------------------------------------------
# shipped preset files
# ---------------------------------------------------------------------------

PRESET_DIR = Path(__file__).resolve().parent / "presets"


def preset_documents() -> dict:
    """Relative path -> JSON document for every shipped preset."""
    docs = {}
    for (bench, mode), table in TABLE_OF.items():
        for solver in solvers_for(bench):
            cfg = comparison_config(bench, mode, solver)
            s = cfg.solver.model_dump(mode="json", exclude_defaults=True)
            s.update(kind=solver, n_particles=cfg.solver.n_particles, eps_stop=cfg.solver.eps_stop)
            if solver == "cb2o":
                s["beta"] = cfg.solver.beta
            doc = {"benchmark": bench, "label": cfg.label, "solver": s}
            docs[f"tables/table{table}_{solver}.json"] = doc
    for axis in ABLATION_AXES:
        docs[f"ablations/{axis}.json"] = {
            "axis": axis,
            "values": ABLATION_VALUES[axis],
            "reference": ablation_reference(),
            "n_seeds": 100,
        }
    return docs


def resolve_preset(path: str) -> Path:
    """A file path, or a path relative to the shipped preset directory."""
    p = Path(path)
    if p.exists():
        return p
    q = PRESET_DIR / path
    if q.exists():
        return q
    raise ConfigurationError(
        f"config file {path!r} not found (shipped presets: {', '.join(sorted(preset_documents()))})"
    )


def read_json(path: str) -> dict:
    p = resolve_preset(path)
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{p}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{p}: top level must be an object")
    return data


def write_presets(root: Optional[Path] = None) -> None:
    root = root or PRESET_DIR
    for rel, doc in preset_documents().items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2) + "\n")
