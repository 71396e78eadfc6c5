"""Command line entry point: ``ctate {simulate,test,power,sweep}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .baselines import discrete_time_value_test, dml_test, welch_t_test
from .core import Alternative, CtateError, validate_dataset
from .estimator import run_test
from .features import ADDITIVE_BSPLINE, POLYNOMIAL, FeatureSpec
from .harness import (
    METHODS,
    PAPER_TABLES,
    StudyConfig,
    paper_table_configs,
    run_power_study,
    study_estimator_config,
    sweep_configs,
)
from .io import (
    POWER_FIELDS,
    _rows_csv,
    estimator_config_from_dict,
    load_json,
    measure_from_spec,
    parse_dataset_csv,
    study_config_from_dict,
    write_dataset_csv,
    write_manifest,
    write_replication_log,
    write_results,
)
from .simulate import SCHEDULES, SamplingPlan, Schedule, make_scenario, simulate_dataset

log = logging.getLogger("ctate")


class UsageError(Exception):
    pass


def _parse_measure(text: str):
    """``empirical``, ``point:0`` / ``point:0,1`` or ``grid:lo:hi[:n]`` (same box per dimension)."""
    kind, _, rest = text.partition(":")
    if kind == "empirical" and not rest:
        return measure_from_spec("empirical")
    try:
        if kind == "point":
            return measure_from_spec({"kind": "point_mass", "s0": [float(x) for x in rest.split(",")]})
        if kind == "grid":
            parts = rest.split(":")
            spec = {"kind": "uniform_grid", "lo": [float(parts[0])], "hi": [float(parts[1])]}
            if len(parts) > 2:
                spec["n_grid"] = int(parts[2])
            return measure_from_spec(spec)
    except (ValueError, IndexError):
        pass
    raise UsageError(f"bad --measure {text!r}; use empirical, point:S0[,S0..] or grid:LO:HI[:N]")


def _parse_basis(text: str) -> FeatureSpec:
    """``bspline[:n_basis]`` or ``poly[:max_degree]``."""
    kind, _, arg = text.partition(":")
    try:
        if kind in ("bspline", ADDITIVE_BSPLINE):
            return FeatureSpec(kind=ADDITIVE_BSPLINE, n_basis=int(arg) if arg else 6)
        if kind in ("poly", POLYNOMIAL):
            return FeatureSpec(kind=POLYNOMIAL, max_degree=int(arg) if arg else 2)
    except ValueError:
        pass
    raise UsageError(f"bad --basis {text!r}; use bspline[:N] or poly[:DEG]")


def _estimator_from_args(args, base=None, read_config=False):
    cfg = base or study_estimator_config()
    if read_config and args.config:
        data = load_json(args.config)
        cfg = estimator_config_from_dict(data.get("estimator", data), cfg)
    kw = {}
    if args.gamma is not None:
        kw["gamma"] = args.gamma
    if args.basis is not None:
        kw["basis"] = _parse_basis(args.basis)
    if args.measure is not None:
        kw["reference_measure"] = _parse_measure(args.measure)
    if args.alternative is not None:
        kw["alternative"] = Alternative.parse(args.alternative)
    if getattr(args, "smoothing_basis", None) is not None:
        kw["smoothing"] = dataclasses.replace(cfg.smoothing, n_basis=args.smoothing_basis)
    return dataclasses.replace(cfg, **kw) if kw else cfg


def _add_estimator_flags(p):
    p.add_argument("--gamma", type=float, help="discount factor in (0, 1)")
    p.add_argument("--basis", help="value sieve: bspline[:N] or poly[:DEG]")
    p.add_argument("--measure", help="reference measure: empirical, point:S0 or grid:LO:HI[:N]")
    p.add_argument("--alternative", choices=["greater", "two-sided"])
    p.add_argument("--smoothing-basis", type=int, help="fixed number of spline basis functions per subject")


def _add_study_flags(p):
    p.add_argument("--scenario", choices=["sim0", "sim1", "sim2", "sim3"])
    p.add_argument("--delta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--schedule", choices=sorted(SCHEDULES))
    p.add_argument("--reps", type=int)
    p.add_argument("--subjects", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--method", action="append", choices=list(METHODS),
                   help="repeatable; defaults to all methods")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--paper-table", choices=list(PAPER_TABLES), help="preset study grid: 1, 2, sim2 or sim3")
    p.add_argument("--config", help="study JSON (see docs/config.md)")
    p.add_argument("--out", help="output prefix: writes PREFIX.csv, PREFIX.json and PREFIX.reps.csv")
    _add_estimator_flags(p)


def _study_overrides(args) -> dict:
    kw = {}
    for name, field in (("scenario", "scenario"), ("delta", "delta"), ("eps", "eps"), ("reps", "reps"),
                        ("subjects", "subjects"), ("seed", "master_seed"), ("alpha", "alpha")):
        v = getattr(args, name)
        if v is not None:
            kw[field] = v
    if args.schedule is not None:
        kw["schedule"] = Schedule.from_dict(args.schedule)
    if args.method:
        kw["methods"] = tuple(dict.fromkeys(args.method))
    if args.alternative is not None:
        kw["alternative"] = Alternative.parse(args.alternative)
    return kw


def _studies(args, sweep_mode: bool) -> list[StudyConfig]:
    data = load_json(args.config) if args.config else {}
    grid = data.pop("sweep", None) if isinstance(data, dict) else None
    if args.paper_table:
        if data:
            raise UsageError("--paper-table cannot be combined with --config")
        configs = paper_table_configs(args.paper_table, master_seed=args.seed or 0,
                                      reps=args.reps or 200, subjects=args.subjects or 20)
        over = {k: v for k, v in _study_overrides(args).items() if k not in ("master_seed", "reps", "subjects")}
        est = _estimator_from_args(args, configs[0].estimator)
        return [c.replace(estimator=est, **over) for c in configs]
    base = study_config_from_dict(data.get("study", data) if data else {})
    base = base.replace(**_study_overrides(args))
    base = base.replace(estimator=_estimator_from_args(args, base.estimator))
    if not sweep_mode:
        return [base]
    deltas = args.deltas if getattr(args, "deltas", None) else None
    sizes = args.sample_sizes if getattr(args, "sample_sizes", None) else None
    if grid:
        deltas = deltas or grid.get("delta")
        sizes = sizes or grid.get("sample_sizes")
    if deltas is None and sizes is None:
        raise UsageError("sweep needs --deltas, --sample-sizes or a 'sweep' block in the config")
    if deltas is not None and sizes is not None:
        raise UsageError("sweep over either delta or sample sizes, not both")
    if (deltas is not None and len(deltas) == 0) or (sizes is not None and len(sizes) == 0):
        return []
    return sweep_configs(base, delta=deltas, sample_sizes=sizes)


def _emit_tables(tables, args) -> None:
    rows = [r for t in tables for r in t.rows()]
    if args.out:
        prefix = Path(args.out)
        csv_path = prefix.with_suffix(".csv")
        log_path = prefix.with_suffix(".reps.csv")
        write_results(csv_path, tables, "csv") if tables else csv_path.write_text(_rows_csv([], POWER_FIELDS))
        write_replication_log(log_path, tables)
        write_manifest(prefix.with_suffix(".json"), tables, log_path, args.workers)
        print(f"wrote {csv_path}", file=sys.stderr)
    else:
        sys.stdout.write(_rows_csv(rows, POWER_FIELDS))


def cmd_simulate(args) -> int:
    scenario = make_scenario(args.scenario, args.delta, args.eps)
    schedule = Schedule.from_dict(args.schedule)
    if args.sample_sizes:
        plan = SamplingPlan.from_sample_sizes(*args.sample_sizes[0], scenario.t_end, scenario.dt,
                                              obs_noise_sd=args.obs_noise, jitter=args.jitter)
    else:
        plan = SamplingPlan(args.state_interval, args.outcome_interval, args.obs_noise, args.jitter)
    ds = simulate_dataset(scenario, schedule, plan, args.subjects, args.seed)
    if args.out:
        write_dataset_csv(ds, args.out)
    else:
        sys.stdout.write(write_dataset_csv(ds))
    return 0


def cmd_test(args) -> int:
    cfg = _estimator_from_args(args, read_config=True)
    ds = parse_dataset_csv(args.data)
    for d in validate_dataset(ds):
        log.warning("%s", d)
    method = args.method or "proposed"
    if method == "proposed":
        res = run_test(ds, cfg)
    elif method == "dtvalue":
        res = discrete_time_value_test(ds, cfg)
    elif method == "t":
        res = welch_t_test(ds, cfg.alternative)
    else:
        res = dml_test(ds, alternative=cfg.alternative)
    alpha = args.alpha if args.alpha is not None else 0.05
    if args.out:
        write_results(args.out, res, config=cfg if method in ("proposed", "dtvalue") else None, alpha=alpha)
    else:
        import json

        from .io import result_to_dict

        sys.stdout.write(json.dumps(result_to_dict(res, cfg, alpha), indent=2) + "\n")
    return 0


def cmd_power(args) -> int:
    tables = [run_power_study(c, args.workers) for c in _studies(args, sweep_mode=False)]
    _emit_tables(tables, args)
    return 0


def cmd_sweep(args) -> int:
    if args.paper_table and args.paper_table not in ("sim2", "sim3"):
        raise UsageError("sweep --paper-table accepts sim2 or sim3")
    tables = [run_power_study(c, args.workers) for c in _studies(args, sweep_mode=not args.paper_table)]
    _emit_tables(tables, args)
    return 0


def _size_pair(text: str) -> tuple:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N_SxN_Y, e.g. 100x50, got {text!r}") from None


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctate", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset CSV")
    p.add_argument("--scenario", default="sim0", choices=["sim0", "sim1", "sim2", "sim3"])
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--schedule", default="treatment2", choices=sorted(SCHEDULES))
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--state-interval", type=float, default=0.1)
    p.add_argument("--outcome-interval", type=float, default=0.2)
    p.add_argument("--sample-sizes", type=_size_pair, nargs=1, help="N_SxN_Y, overrides the intervals")
    p.add_argument("--obs-noise", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("test", help="run a test on a dataset CSV")
    p.add_argument("data")
    p.add_argument("--config", help="estimator JSON (see docs/config.md)")
    p.add_argument("--method", choices=list(METHODS))
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", help="result file (.json or .csv)")
    _add_estimator_flags(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("power", help="Monte Carlo power study")
    _add_study_flags(p)
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("sweep", help="power over a grid of delta or sample sizes")
    _add_study_flags(p)
    p.add_argument("--deltas", type=_float_list)
    p.add_argument("--sample-sizes", type=_size_pair, nargs="+")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (CtateError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
