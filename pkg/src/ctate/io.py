"""Dataset CSV ingestion, JSON configs and result serialization.

Datasets use one long-format file with header ``subject,time,channel,value``.
Channels are ``s1 .. sd`` for state coordinates, ``y`` for the outcome and
``a`` for the binary action. Action rows are compressed to change points on
load.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import re
from collections import OrderedDict
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import numpy as np

from .core import (
    Alternative,
    AteTestResult,
    Dataset,
    DuplicateTimestamp,
    EmpiricalInitialStates,
    IoError,
    MixedDimensions,
    MultiResTrajectory,
    NonBinaryAction,
    ParseError,
    PointMass,
    UniformGrid,
)
from .estimator import EstimatorConfig
from .features import FeatureSpec
from .simulate import SamplingPlan, Schedule
from .splines import SmoothingSpec

HEADER = ("subject", "time", "channel", "value")
SIG_DIGITS = 12
_STATE_CHANNEL = re.compile(r"^s([1-9][0-9]*)$")

PathLike = Union[str, os.PathLike]


def fmt(x: float) -> str:
    return f"{float(x):.{SIG_DIGITS}g}"


# datasets


def parse_dataset_csv(path: PathLike) -> Dataset:
    """Load a long-format dataset; rows may come in any order."""
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return parse_dataset_rows(rows)


def parse_dataset_rows(rows: list) -> Dataset:
    if not rows or tuple(c.strip() for c in rows[0]) != HEADER:
        raise ParseError(1, f"header must be exactly {','.join(HEADER)}")
    subjects: "OrderedDict[str, dict]" = OrderedDict()
    d = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ParseError(lineno, f"expected 4 fields, got {len(row)}")
        sid, t_raw, chan, v_raw = (c.strip() for c in row)
        if not sid:
            raise ParseError(lineno, "empty subject id")
        t = _parse_number(t_raw, lineno, "time")
        v = _parse_number(v_raw, lineno, "value")
        rec = subjects.setdefault(sid, {"s": {}, "y": {}, "a": {}})
        m = _STATE_CHANNEL.match(chan)
        if m:
            k = int(m.group(1))
            d = max(d, k)
            slot = rec["s"].setdefault(k, {})
        elif chan in ("y", "a"):
            slot = rec[chan]
            if chan == "a" and v not in (0.0, 1.0):
                raise NonBinaryAction(f"line {lineno}: action value {v_raw!r} is not 0 or 1")
        else:
            raise ParseError(lineno, f"unknown channel {chan!r}")
        if t in slot:
            raise DuplicateTimestamp(chan, f"subject {sid}, channel {chan}, time {t_raw} appears twice (line {lineno})")
        slot[t] = v
    if not subjects:
        raise ParseError(2, "no data rows")
    trajs = [_build_trajectory(sid, rec, d) for sid, rec in subjects.items()]
    return Dataset(tuple(trajs), d)


def _parse_number(raw: str, lineno: int, what: str) -> float:
    try:
        x = float(raw)
    except ValueError:
        raise ParseError(lineno, f"{what} {raw!r} is not a number") from None
    if not math.isfinite(x):
        raise ParseError(lineno, f"{what} {raw!r} is not finite")
    return x


def _build_trajectory(sid: str, rec: dict, d: int) -> MultiResTrajectory:
    chans = rec["s"]
    if d and set(chans) != set(range(1, d + 1)):
        missing = sorted(set(range(1, d + 1)) - set(chans))
        raise MixedDimensions(f"subject {sid}: no observations for state channel(s) {missing} (d={d})")
    times = sorted(chans[1]) if d else []
    for k in range(2, d + 1):
        if sorted(chans[k]) != times:
            raise MixedDimensions(f"subject {sid}: channel s{k} observed at different times than s1")
    st = np.array(times, dtype=float)
    sv = np.array([[chans[k][t] for k in range(1, d + 1)] for t in times], dtype=float).reshape(len(times), max(d, 1))
    yt = sorted(rec["y"])
    at = sorted(rec["a"])
    av = [int(rec["a"][t]) for t in at]
    # compress a sampled action series to its change points
    keep = [i for i in range(len(at)) if i == 0 or av[i] != av[i - 1]]
    return MultiResTrajectory(
        sid, st, sv, np.array(yt, dtype=float), np.array([rec["y"][t] for t in yt], dtype=float),
        np.array([at[i] for i in keep], dtype=float), np.array([av[i] for i in keep], dtype=int),
    )


def dataset_rows(dataset: Dataset) -> list[tuple]:
    rows = []
    for tr in dataset:
        sid = str(tr.subject_id)
        for t, a in zip(tr.action_times, tr.action_values):
            rows.append((sid, fmt(t), "a", str(int(a))))
        for t, vec in zip(tr.state_times, tr.state_values):
            for k, v in enumerate(vec, start=1):
                rows.append((sid, fmt(t), f"s{k}", fmt(v)))
        for t, y in zip(tr.outcome_times, tr.outcome_values):
            rows.append((sid, fmt(t), "y", fmt(y)))
    return rows


def write_dataset_csv(dataset: Dataset, path: Optional[PathLike] = None) -> str:
    """Write (or return, when ``path`` is None) the long-format CSV text."""
    lines = [",".join(HEADER)] + [",".join(r) for r in dataset_rows(dataset)]
    text = "\n".join(lines) + "\n"
    if path is not None:
        _write_text(path, text)
    return text


def _write_text(path: PathLike, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# configs


def _strict(cls, data: dict, what: str):
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - names
    if extra:
        raise ValueError(f"{what}: unknown key(s) {sorted(extra)}; allowed {sorted(names)}")
    return cls(**data)


def measure_from_spec(spec) -> object:
    """``"empirical"``, ``{"kind": "point_mass", "s0": [...]}`` or
    ``{"kind": "uniform_grid", "lo": [...], "hi": [...], "n_grid": 101}``."""
    if spec is None or spec == "empirical":
        return EmpiricalInitialStates()
    if isinstance(spec, str):
        raise ValueError(f"unknown reference measure {spec!r}")
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "empirical":
        return EmpiricalInitialStates()
    if kind == "point_mass":
        return PointMass(tuple(float(x) for x in np.atleast_1d(spec.pop("s0"))))
    if kind == "uniform_grid":
        lo = tuple(float(x) for x in np.atleast_1d(spec.pop("lo")))
        hi = tuple(float(x) for x in np.atleast_1d(spec.pop("hi")))
        n = int(spec.pop("n_grid", 101))
        if spec:
            raise ValueError(f"uniform_grid: unknown key(s) {sorted(spec)}")
        return UniformGrid(lo, hi, n)
    raise ValueError(f"unknown reference measure kind {kind!r}")


def measure_to_spec(m) -> Any:
    if isinstance(m, PointMass):
        return {"kind": "point_mass", "s0": [float(x) for x in np.atleast_1d(m.s0)]}
    if isinstance(m, UniformGrid):
        return {"kind": "uniform_grid", "lo": [float(x) for x in np.atleast_1d(m.lo)],
                "hi": [float(x) for x in np.atleast_1d(m.hi)], "n_grid": int(m.n_grid)}
    return "empirical"


def estimator_config_from_dict(data: dict, base: Optional[EstimatorConfig] = None) -> EstimatorConfig:
    """Fields missing from ``data`` keep their value in ``base``."""
    base = base or EstimatorConfig()
    data = dict(data)
    kw: dict = {}
    if "basis" in data:
        basis = dict(data.pop("basis"))
        if basis.get("state_domain") is not None:
            basis["state_domain"] = tuple(tuple(map(float, r)) for r in basis["state_domain"])
        kw["basis"] = _strict(FeatureSpec, basis, "basis")
    if "smoothing" in data:
        kw["smoothing"] = _strict(SmoothingSpec, dict(data.pop("smoothing")), "smoothing")
    if "measure" in data:
        kw["reference_measure"] = measure_from_spec(data.pop("measure"))
    for key in ("gamma", "ridge"):
        if key in data:
            kw[key] = float(data.pop(key))
    if "alternative" in data:
        kw["alternative"] = Alternative.parse(data.pop("alternative"))
    if data:
        raise ValueError(f"estimator: unknown key(s) {sorted(data)}")
    return dataclasses.replace(base, **kw)


def estimator_config_to_dict(cfg: EstimatorConfig) -> dict:
    basis = dataclasses.asdict(cfg.basis)
    if basis["state_domain"] is not None:
        basis["state_domain"] = [list(map(float, r)) for r in basis["state_domain"]]
    return {
        "gamma": cfg.gamma,
        "basis": basis,
        "smoothing": dataclasses.asdict(cfg.smoothing),
        "measure": measure_to_spec(cfg.reference_measure),
        "ridge": cfg.ridge,
        "alternative": cfg.alternative.value,
    }


def study_config_from_dict(data: dict, base=None):
    from .harness import StudyConfig, study_estimator_config

    base = base or StudyConfig()
    data = dict(data)
    kw: dict = {}
    if "schedule" in data:
        kw["schedule"] = Schedule.from_dict(data.pop("schedule"))
    if "plan" in data and "sample_sizes" in data:
        raise ValueError("study: give either plan or sample_sizes, not both")
    if "plan" in data:
        kw["plan"] = _strict(SamplingPlan, dict(data.pop("plan")), "plan")
    if "sample_sizes" in data:
        n_s, n_y = data.pop("sample_sizes")
        kw["plan"] = SamplingPlan.from_sample_sizes(int(n_s), int(n_y))
    if "estimator" in data:
        kw["estimator"] = estimator_config_from_dict(data.pop("estimator"), study_estimator_config())
    if "methods" in data:
        kw["methods"] = tuple(data.pop("methods"))
    if "alternative" in data:
        kw["alternative"] = Alternative.parse(data.pop("alternative"))
    allowed = {"scenario", "delta", "eps", "subjects", "reps", "alpha", "master_seed", "dt_pair_rule",
               "dml_folds", "label"}
    extra = set(data) - allowed
    if extra:
        raise ValueError(f"study: unknown key(s) {sorted(extra)}")
    kw.update(data)
    return base.replace(**kw)


def study_config_to_dict(cfg) -> dict:
    return {
        "scenario": cfg.scenario,
        "delta": cfg.delta,
        "eps": cfg.eps,
        "schedule": cfg.schedule.to_dict(),
        "plan": dataclasses.asdict(cfg.plan),
        "subjects": cfg.subjects,
        "reps": cfg.reps,
        "alpha": cfg.alpha,
        "alternative": cfg.alternative.value,
        "methods": list(cfg.methods),
        "master_seed": cfg.master_seed,
        "estimator": estimator_config_to_dict(cfg.estimator),
        "dt_pair_rule": cfg.dt_pair_rule,
        "dml_folds": cfg.dml_folds,
        "label": cfg.label,
    }


def load_json(path: PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, f"invalid JSON: {exc.msg}") from exc


# results

RESULT_FIELDS = ("method", "tau_hat", "sigma_hat", "z", "p_one_sided", "p_two_sided", "beta0", "beta1", "n_eff",
                 "cond_sigma", "gamma", "alternative", "n_subjects", "diagnostics")
POWER_FIELDS = ("label", "scenario", "schedule", "delta", "eps", "state_interval", "outcome_interval", "subjects",
                "reps", "method", "p_hat", "se", "failures")


def result_to_dict(result, config: Optional[EstimatorConfig] = None, alpha: Optional[float] = None) -> dict:
    """Stable-ordered dict of an ``AteTestResult`` (or baseline result) plus a config echo."""
    from . import __version__

    if isinstance(result, AteTestResult):
        out = OrderedDict(
            method=result.method,
            tau_hat=result.tau_hat,
            sigma_hat=result.sigma_hat,
            z=result.z,
            p_one_sided=result.p_one_sided,
            p_two_sided=result.p_two_sided,
            beta0=[float(x) for x in result.beta0],
            beta1=[float(x) for x in result.beta1],
            n_eff=int(result.n_eff),
            cond_sigma=result.cond_sigma,
            gamma=result.gamma,
            alternative=result.alternative.value,
            n_subjects=int(result.n_subjects),
            diagnostics=[str(d) for d in result.diagnostics],
        )
    else:
        out = OrderedDict(
            method=result.method,
            statistic=result.statistic,
            estimate=result.estimate,
            p_one_sided=result.p_one_sided,
            p_two_sided=result.p_two_sided,
            alternative=result.alternative.value,
            diagnostics=[str(d) for d in result.diagnostics],
            extra={k: _jsonable(v) for k, v in result.extra.items()},
        )
    if alpha is not None:
        out["alpha"] = alpha
        out["reject"] = bool(result.p_value < alpha)
    if config is not None:
        out["config"] = estimator_config_to_dict(config)
    out["version"] = __version__
    return dict(out)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [float(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def write_results(path: PathLike, obj, fmt_: Optional[str] = None, config=None, alpha=None) -> None:
    """Write a test result (JSON or one-row CSV) or power tables (CSV or JSON rows).

    ``fmt_`` defaults to the file suffix. Raises ``IoError`` on failure.
    """
    from .harness import PowerTable

    fmt_ = (fmt_ or Path(path).suffix.lstrip(".") or "json").lower()
    if fmt_ not in ("json", "csv"):
        raise ValueError(f"unknown format {fmt_!r}")
    if isinstance(obj, PowerTable) or (isinstance(obj, (list, tuple)) and obj and isinstance(obj[0], PowerTable)):
        tables = [obj] if isinstance(obj, PowerTable) else list(obj)
        rows = [r for t in tables for r in t.rows()]
        text = _rows_csv(rows, POWER_FIELDS) if fmt_ == "csv" else json.dumps(rows, indent=2) + "\n"
    else:
        record = obj if isinstance(obj, dict) else result_to_dict(obj, config, alpha)
        if fmt_ == "json":
            text = json.dumps(record, indent=2) + "\n"
        else:
            flat = {k: (";".join(fmt(x) if isinstance(x, float) else str(x) for x in v) if isinstance(v, list) else v)
                    for k, v in record.items() if not isinstance(v, dict)}
            text = _rows_csv([flat], list(flat))
    _write_text(path, text)


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return fmt(v)
    return str(v)


def _rows_csv(rows: list, fields: Iterable[str]) -> str:
    fields = list(fields)
    lines = [",".join(fields)]
    for r in rows:
        lines.append(",".join(_csv_escape(_cell(r[f])) for f in fields))
    return "\n".join(lines) + "\n"


def _csv_escape(s: str) -> str:
    if any(c in s for c in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def read_results(path: PathLike) -> Union[dict, list]:
    """Inverse of ``write_results``: JSON is returned as written; CSV rows come
    back as dicts with numeric cells converted."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        return load_json(p)
    try:
        with open(p, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return [{k: _uncell(v) for k, v in r.items()} for r in rows]


def _uncell(s: str):
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def write_replication_log(path: PathLike, tables) -> None:
    fields = ("label", "rep", "seed", "method", "reject", "p_value", "statistic", "estimate", "failed", "error",
              "diagnostics")
    rows = []
    for t in tables:
        for r in t.records:
            rows.append({
                "label": t.config.label, "rep": r.rep, "seed": "-".join(map(str, r.seed)), "method": r.method,
                "reject": r.reject, "p_value": r.p_value, "statistic": r.statistic, "estimate": r.estimate,
                "failed": r.failed, "error": r.error, "diagnostics": ";".join(r.diagnostics),
            })
    _write_text(path, _rows_csv(rows, fields))


def write_manifest(path: PathLike, tables, log_path: Optional[PathLike] = None, workers: int = 1) -> None:
    from . import __version__

    manifest = {
        "version": __version__,
        "workers": workers,
        "replication_log": str(log_path) if log_path is not None else None,
        "studies": [
            {
                "config": study_config_to_dict(t.config),
                "seeds": [[t.config.master_seed, r] for r in range(t.config.reps)],
                "elapsed_s": round(t.elapsed, 3),
                "power": t.rows(),
            }
            for t in tables
        ],
    }
    _write_text(path, json.dumps(manifest, indent=2) + "\n")
