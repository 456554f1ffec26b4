"""Command-line front end: ``cb2o {run,compare,ablate,analyze,demo}``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .core import ConfigurationError
from . import harness
from .problems import REGISTRY

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("cb2o")


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", metavar="PATH", help="JSON config file or shipped preset (e.g. tables/table1_cb2o.json)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry by dotted key, e.g. solver.beta=0.02 (repeatable)")
    p.add_argument("--seeds", type=int, metavar="N", help="number of replicates")
    p.add_argument("--seed", type=int, metavar="BASE", help="base seed; replicate i uses BASE + i")
    p.add_argument("--workers", type=int, metavar="W", help="worker processes for replicates")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--trace", choices=["summary", "full"], help="write per-iteration trace CSVs with 'full'")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cb2o", description="Consensus-based bi-level optimization experiments.")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment over many seeds")
    _common(p)

    p = sub.add_parser("compare", help="compare CB2O with the baselines on a benchmark")
    p.add_argument("benchmark", choices=sorted(REGISTRY))
    p.add_argument("--mode", choices=["same-particles", "same-time"], default="same-particles",
                   help="equal particle counts or the equal-time particle presets")
    _common(p, config=False)

    p = sub.add_parser("ablate", help="sweep one hyperparameter around the reference config")
    p.add_argument("--axis", choices=harness.ABLATION_AXES, help="axis to sweep (defaults to the config's)")
    p.add_argument("--values", help="comma-separated grid values (N:beta pairs for joint_N_beta)")
    _common(p)

    p = sub.add_parser("analyze", help="numerical checks of the theory")
    asub = p.add_subparsers(dest="analysis", required=True)
    q = asub.add_parser("decay", help="fit the exponential decay rate on the quadratic test")
    q.add_argument("--n", type=int, default=10_000, help="particles")
    q.add_argument("--sigma", type=float, default=0.3)
    q.add_argument("--lam", type=float, default=1.0)
    q.add_argument("--alpha", type=float, default=1e4)
    q.add_argument("--beta", type=float, default=0.02)
    q.add_argument("--dt", type=float, default=1e-3)
    q.add_argument("--t-max", type=float, default=10.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", metavar="DIR")
    q = asub.add_parser("instability", help="consensus gap vs W2 on the two-circle construction")
    q.add_argument("--s", default="0.1,0.01,0.001", help="comma-separated shifts")
    q.add_argument("--alpha", type=float, default=30.0)
    q.add_argument("--points", type=int, default=2000, help="points per circle")
    q.add_argument("--out", metavar="DIR")
    q = asub.add_parser("laplace-trend", help="consensus point vs alpha and selected-set spread vs beta")
    q.add_argument("--n", type=int, default=10_000, help="particles")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", metavar="DIR")

    p = sub.add_parser("demo", help="short CB2O run on the Himmelblau demo problem")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=200, help="particles")
    return ap


def _flag_overrides(args) -> dict:
    out = {}
    for key in ("seeds", "seed", "workers", "out", "trace"):
        val = getattr(args, key, None)
        if val is not None:
            out["n_seeds" if key == "seeds" else key] = val
    return out


def _emit_rows(header, rows, out: Optional[str], name: str) -> None:
    widths = [max(len(h), *(len(f"{r[i]:.6g}" if isinstance(r[i], float) else str(r[i])) for r in rows))
              for i, h in enumerate(header)]
    fmt = lambda v: f"{v:.6g}" if isinstance(v, float) else str(v)
    print(" | ".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print(" | ".join(fmt(v).ljust(w) for v, w in zip(r, widths)))
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([harness.fmt_float(v) if isinstance(v, float) else v for v in r])


def cmd_run(args) -> int:
    data = harness.read_json(args.config) if args.config else {}
    data.update(_flag_overrides(args))
    cfg = harness.load_config(data, args.overrides)
    res = harness.run_experiment(cfg)
    s = res.summary
    print(f"{cfg.label or cfg.solver.kind} on {cfg.benchmark}: N={cfg.solver.n_particles} "
          f"seeds={s.n_seeds} mean precision={s.mean_precision:.3e} "
          f"mean runtime={s.mean_runtime_s:.3f}s stop={s.stop_reasons}")
    if res.out_dir is not None:
        print(f"artifacts in {res.out_dir}")
    if s.n_failed:
        print(f"error: {s.n_failed} of {s.n_seeds} replicates failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _solver_overrides(items) -> dict:
    data: dict = {}
    for item in items:
        harness.apply_override(data, item)
    extra = set(data) - {"solver"}
    if extra:
        raise ConfigurationError(f"compare only accepts solver.* overrides, got {sorted(extra)}")
    return data.get("solver", {})


def cmd_compare(args) -> int:
    rows = harness.compare_baselines(
        args.benchmark, args.mode,
        n_seeds=args.seeds if args.seeds is not None else 100,
        seed=args.seed or 0, out=args.out, workers=args.workers or 1,
        solver_overrides=_solver_overrides(args.overrides),
    )
    print(harness.format_table(rows))
    return EXIT_RUNTIME if any(r.summary is None or r.summary.n_failed for r in rows) else EXIT_OK


def _parse_values(axis: str, text: str) -> list:
    vals = []
    for tok in text.split(","):
        tok = tok.strip()
        if axis == "joint_N_beta":
            n, b = tok.split(":")
            vals.append([int(float(n)), float(b)])
        else:
            vals.append(float(tok))
    return vals


def cmd_ablate(args) -> int:
    data = harness.read_json(args.config) if args.config else {}
    if args.axis:
        if data.get("axis") not in (None, args.axis):
            data.pop("values", None)
        data["axis"] = args.axis
    if args.values:
        try:
            data["values"] = _parse_values(data.get("axis", ""), args.values)
        except ValueError:
            raise ConfigurationError(f"cannot parse --values {args.values!r}") from None
    if "axis" not in data:
        raise ConfigurationError("ablate needs --axis or a grid config with an 'axis' key")
    data.setdefault("values", harness.ABLATION_VALUES[data["axis"]])
    if args.seeds is not None:
        data["n_seeds"] = args.seeds
    if args.seed is not None:
        data["seed"] = args.seed
    if args.workers is not None:
        data["workers"] = args.workers
    ref = data.setdefault("reference", harness.ablation_reference())
    for item in args.overrides:
        harness.apply_override(ref, item)
    try:
        grid = harness.AblationGrid.model_validate(data)
    except harness.ValidationError as exc:
        raise ConfigurationError(harness._format_validation(exc)) from None
    rows = harness.run_ablation(grid, out=args.out)
    _emit_rows(
        [grid.axis, "mean precision", "mean runtime (s)"],
        [(str(r.value), r.summary.mean_precision if r.summary else float("nan"),
          r.summary.mean_runtime_s if r.summary else float("nan")) for r in rows],
        None, "",
    )
    return EXIT_RUNTIME if any(r.summary is None or r.summary.n_failed for r in rows) else EXIT_OK


def cmd_analyze(args) -> int:
    if args.analysis == "decay":
        r = harness.decay_experiment(args.n, args.lam, args.sigma, args.alpha, args.beta, args.dt,
                                     args.t_max, args.seed)
        i0, i1 = r.window
        _emit_rows(
            ["fitted rate", "predicted rate", "relative error", "r^2", "window t0", "window t1"],
            [(r.rate, r.predicted, r.relative_error, r.r_squared, float(r.t[i0]), float(r.t[i1 - 1]))],
            args.out, "decay.csv",
        )
    elif args.analysis == "instability":
        try:
            s_vals = [float(x) for x in args.s.split(",")]
        except ValueError:
            raise ConfigurationError(f"cannot parse --s {args.s!r}") from None
        rows = harness.instability_table(s_vals, args.alpha, args.points)
        _emit_rows(["s", "w2", "consensus_gap", "gap/w2"], rows, args.out, "instability.csv")
    else:
        a_rows, b_rows = harness.laplace_trend(n_particles=args.n, seed=args.seed)
        _emit_rows(["alpha", "|m - best selected|", "|m - theta_good|"], a_rows, args.out, "laplace_alpha.csv")
        print()
        _emit_rows(["beta", "selected spread", "|m - theta_good|"], b_rows, args.out, "laplace_beta.csv")
    return EXIT_OK


def cmd_demo(args) -> int:
    from .dynamics import Cb2oParams, run
    from .problems import get_benchmark

    bench = get_benchmark("himmelblau-demo")
    params = Cb2oParams(beta=0.1, alpha=100.0, sigma=0.7, max_iters=3000, eps_stop=1e-8)
    tr = run(bench.problem, params, bench.default_init, args.seed, n_particles=args.n)
    m = tr.final_consensus
    print(f"consensus point ({m[0]:.5f}, {m[1]:.5f}) after {tr.n_iters} iterations ({tr.stop_reason}); "
          f"target (3, 2), precision {tr.precision[-1]:.2e}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "ablate": cmd_ablate,
            "analyze": cmd_analyze, "demo": cmd_demo}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
