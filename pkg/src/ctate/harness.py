"""Monte Carlo power studies: replicate, test with every method, tabulate.

Replication ``r`` of a study draws all of its randomness from
``SeedSequence([master_seed, r])``, so a table is a pure function of its
config and does not depend on how replications are spread over workers.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .baselines import METHOD_LABELS, discrete_time_value_test, dml_test, welch_t_test
from .core import Alternative, CtateError
from .estimator import EstimatorConfig, run_test
from .features import POLYNOMIAL, FeatureSpec
from .simulate import (
    SamplingPlan,
    Schedule,
    make_rng,
    make_scenario,
    simulate_dataset,
    treatment_long,
    treatment_short,
)
from .splines import SmoothingSpec

log = logging.getLogger(__name__)

METHODS = ("proposed", "dtvalue", "t", "dml")


def study_estimator_config(**overrides) -> EstimatorConfig:
    """Estimator settings used by the simulation presets.

    A linear sieve, gamma = 0.5 and a smoother allowed up to 30 basis
    functions. These differ from the ``EstimatorConfig`` defaults; see the
    README for the calibration runs behind them.
    """
    kw = dict(
        gamma=0.5,
        basis=FeatureSpec(kind=POLYNOMIAL, max_degree=1),
        smoothing=SmoothingSpec(max_basis=30),
    )
    kw.update(overrides)
    return EstimatorConfig(**kw)


@dataclass(frozen=True)
class StudyConfig:
    scenario: str = "sim0"
    delta: float = 0.3
    eps: float = 0.1
    schedule: Schedule = field(default_factory=treatment_long)
    plan: SamplingPlan = field(default_factory=SamplingPlan)
    subjects: int = 20
    reps: int = 200
    alpha: float = 0.05
    alternative: Alternative = Alternative.ONE_SIDED_GREATER
    methods: tuple = METHODS
    master_seed: int = 0
    estimator: EstimatorConfig = field(default_factory=study_estimator_config)
    dt_pair_rule: str = "endpoints"
    dml_folds: int = 2
    label: str = ""

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.subjects < 1:
            raise ValueError("subjects must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown method(s) {sorted(unknown)}; choose from {METHODS}")
        alt = Alternative.parse(self.alternative)
        object.__setattr__(self, "alternative", alt)
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.estimator.alternative is not alt:
            object.__setattr__(self, "estimator", dataclasses.replace(self.estimator, alternative=alt))

    def replace(self, **kw) -> "StudyConfig":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class ReplicationRecord:
    rep: int
    seed: tuple
    method: str
    reject: bool
    p_value: float
    statistic: float
    estimate: float
    failed: bool = False
    error: str = ""
    diagnostics: tuple = ()


@dataclass(frozen=True)
class MethodPower:
    method: str
    p_hat: float
    se: float
    failures: int
    reps: int

    @property
    def label(self) -> str:
        return METHOD_LABELS.get(self.method, self.method)


@dataclass
class PowerTable:
    config: StudyConfig
    records: list
    elapsed: float = 0.0

    def methods(self) -> tuple:
        return self.config.methods

    def power(self, method: str) -> MethodPower:
        recs = [r for r in self.records if r.method == method]
        R = len(recs)
        if R == 0:
            raise KeyError(method)
        p = sum(r.reject for r in recs) / R
        se = math.sqrt(p * (1.0 - p) / R)
        return MethodPower(method, p, se, sum(r.failed for r in recs), R)

    def rows(self) -> list[dict]:
        c = self.config
        out = []
        for m in c.methods:
            mp = self.power(m)
            out.append(
                {
                    "label": c.label,
                    "scenario": c.scenario,
                    "schedule": c.schedule.describe(),
                    "delta": c.delta,
                    "eps": c.eps,
                    "state_interval": c.plan.state_interval,
                    "outcome_interval": c.plan.outcome_interval,
                    "subjects": c.subjects,
                    "reps": c.reps,
                    "method": m,
                    "p_hat": mp.p_hat,
                    "se": mp.se,
                    "failures": mp.failures,
                }
            )
        return out


def replication_seed(master_seed: int, rep: int) -> tuple:
    return (int(master_seed), int(rep))


def _run_method(method: str, dataset, cfg: StudyConfig):
    if method == "proposed":
        res = run_test(dataset, cfg.estimator)
        return res.p_value, res.z, res.tau_hat, res.diagnostics
    if method == "dtvalue":
        res = discrete_time_value_test(dataset, cfg.estimator, cfg.dt_pair_rule)
    elif method == "t":
        res = welch_t_test(dataset, cfg.alternative)
    else:
        res = dml_test(dataset, cfg.dml_folds, cfg.alternative)
    return res.p_value, res.statistic, res.estimate, res.diagnostics


def run_replication(cfg: StudyConfig, rep: int) -> list[ReplicationRecord]:
    seed = replication_seed(cfg.master_seed, rep)
    scenario = make_scenario(cfg.scenario, cfg.delta, cfg.eps)
    dataset = simulate_dataset(scenario, cfg.schedule, cfg.plan, cfg.subjects, make_rng(*seed))
    out = []
    for m in cfg.methods:
        try:
            p, stat, est, diags = _run_method(m, dataset, cfg)
            out.append(
                ReplicationRecord(rep, seed, m, bool(p < cfg.alpha), float(p), float(stat), float(est),
                                  diagnostics=tuple(d.code for d in diags))
            )
        except (CtateError, np.linalg.LinAlgError, FloatingPointError) as exc:
            # counted as a non-rejection, never dropped
            out.append(
                ReplicationRecord(rep, seed, m, False, math.nan, math.nan, math.nan, True,
                                  f"{type(exc).__name__}: {exc}")
            )
    return out


def _run_chunk(args) -> list[ReplicationRecord]:
    cfg, reps = args
    recs = []
    for r in reps:
        recs.extend(run_replication(cfg, r))
    return recs


def run_power_study(cfg: StudyConfig, workers: int = 1) -> PowerTable:
    """Run ``cfg.reps`` replications; identical output for any ``workers``."""
    t0 = time.perf_counter()
    reps = list(range(cfg.reps))
    if workers <= 1 or cfg.reps == 1:
        records = _run_chunk((cfg, reps))
    else:
        chunks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [rec for part in pool.map(_run_chunk, [(cfg, c) for c in chunks if c]) for rec in part]
    order = {m: i for i, m in enumerate(cfg.methods)}
    records.sort(key=lambda rec: (rec.rep, order[rec.method]))
    table = PowerTable(cfg, records, time.perf_counter() - t0)
    log.info("%s: %s", cfg.label or cfg.scenario, {m: round(table.power(m).p_hat, 3) for m in cfg.methods})
    return table


def sweep_configs(base: StudyConfig, delta: Optional[Sequence[float]] = None,
                  sample_sizes: Optional[Sequence[tuple]] = None) -> list[StudyConfig]:
    """One config per grid point; grid point ``g`` uses ``master_seed + g``."""
    if (delta is None) == (sample_sizes is None):
        raise ValueError("sweep over exactly one of delta or sample_sizes")
    out = []
    if delta is not None:
        for g, d in enumerate(delta):
            out.append(base.replace(delta=float(d), master_seed=base.master_seed + g,
                                    label=base.label or f"delta={d:g}"))
    else:
        for g, (n_s, n_y) in enumerate(sample_sizes):
            sc = make_scenario(base.scenario, base.delta, base.eps)
            plan = SamplingPlan.from_sample_sizes(int(n_s), int(n_y), sc.t_end, sc.dt,
                                                  obs_noise_sd=base.plan.obs_noise_sd, jitter=base.plan.jitter)
            out.append(base.replace(plan=plan, master_seed=base.master_seed + g,
                                    label=base.label or f"n_s={n_s},n_y={n_y}"))
    return out


def sweep(base: StudyConfig, delta=None, sample_sizes=None, workers: int = 1) -> list[PowerTable]:
    return [run_power_study(c, workers) for c in sweep_configs(base, delta, sample_sizes)]


def combined_rows(tables: Iterable[PowerTable]) -> list[dict]:
    return [row for t in tables for row in t.rows()]


# presets reproducing the layout of the published simulation tables

PAPER_TABLES = ("1", "2", "sim2", "sim3")


def paper_table_configs(which: str, master_seed: int = 0, reps: int = 200, subjects: int = 20,
                        estimator: Optional[EstimatorConfig] = None,
                        methods: Sequence[str] = METHODS) -> list[StudyConfig]:
    which = str(which)
    if which not in PAPER_TABLES:
        raise ValueError(f"unknown table {which!r}; choose from {PAPER_TABLES}")
    base = StudyConfig(reps=reps, subjects=subjects, master_seed=master_seed,
                       methods=tuple(methods), estimator=estimator or study_estimator_config())
    if which == "1":
        out = []
        for sname, sched in (("treatment1", treatment_short()), ("treatment2", treatment_long())):
            for eps in (0.1, 0.3):
                for delta in (0.3, 0.0):
                    out.append(base.replace(scenario="sim0", schedule=sched, eps=eps, delta=delta,
                                            label=f"{sname} eps={eps:g} delta={delta:g}"))
        return out
    multi = base.replace(schedule=treatment_short(), eps=0.1, delta=0.3)
    if which == "2":
        return [multi.replace(scenario=s, label=s) for s in ("sim1", "sim2", "sim3")]
    if which == "sim2":
        return [c.replace(label=f"sim1 n_s={n_s} n_y={n_y}") for c, (n_s, n_y) in
                zip(sweep_configs(multi.replace(scenario="sim1"), sample_sizes=SAMPLE_SIZE_GRID), SAMPLE_SIZE_GRID)]
    return [c.replace(label=f"sim1 delta={d:g}") for c, d in
            zip(sweep_configs(multi.replace(scenario="sim1"), delta=DELTA_GRID), DELTA_GRID)]


SAMPLE_SIZE_GRID = ((25, 12), (50, 25), (100, 50))
DELTA_GRID = (0.0, 0.1, 0.2, 0.3)
