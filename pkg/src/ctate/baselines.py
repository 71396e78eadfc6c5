"""Comparator tests: Welch t-test, a discrete-time value test and a cross-fitted DML-lite.

These are in-repo analogues for power comparisons; they are not the
third-party packages of the same names and carry their own method labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .core import (
    TIME_TOL,
    Alternative,
    Dataset,
    Diagnostic,
    EmptyGroup,
    SingularNuisance,
)
from .estimator import AssembledSystem, EstimatorConfig, _match_times, run_test_on_system
from .features import POLYNOMIAL, FeatureSpec, build_feature_map

METHOD_LABELS = {
    "proposed": "proposed (continuous-time value test)",
    "t": "Welch t-test",
    "dtvalue": "discrete-time value test (SAVE analogue)",
    "dml": "DML-lite, not the packaged implementation",
}


@dataclass(frozen=True)
class BaselineResult:
    method: str
    statistic: float
    p_one_sided: float
    p_two_sided: float
    estimate: float = float("nan")
    alternative: Alternative = Alternative.ONE_SIDED_GREATER
    diagnostics: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def p_value(self) -> float:
        if self.alternative is Alternative.TWO_SIDED:
            return self.p_two_sided
        return self.p_one_sided

    def reject(self, alpha: float = 0.05) -> bool:
        return bool(self.p_value < alpha)


def _outcomes_by_action(dataset: Dataset):
    ys, acts = [], []
    for tr in dataset:
        ys.append(tr.outcome_values)
        acts.append(np.asarray(tr.resolve_action(tr.outcome_times)).reshape(-1))
    y = np.concatenate(ys) if ys else np.zeros(0)
    a = np.concatenate(acts) if acts else np.zeros(0, int)
    return y, a


def welch(x, y, alternative="greater", method: str = "t") -> BaselineResult:
    """Welch statistic for mean(x) - mean(y) with Satterthwaite degrees of freedom."""
    alternative = Alternative.parse(alternative)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or y.size < 2:
        raise EmptyGroup(f"need >= 2 observations per group, got {x.size} and {y.size}")
    diff = x.mean() - y.mean()
    vx, vy = x.var(ddof=1) / x.size, y.var(ddof=1) / y.size
    se2 = vx + vy
    if se2 <= 0:
        # both groups constant: the limit of the statistic is +-inf (or 0)
        sign = float(np.sign(diff))
        p1 = 0.0 if sign > 0 else (1.0 if sign < 0 else 0.5)
        p2 = 0.0 if sign != 0 else 1.0
        stat = sign * math.inf if sign != 0 else 0.0
        diag = (Diagnostic("ZeroVariance", "both groups have zero within-group variance"),)
        return BaselineResult(method, stat, p1, p2, float(diff), alternative, diag, {"df": float("nan")})
    t = diff / math.sqrt(se2)
    df = se2**2 / (vx**2 / (x.size - 1) + vy**2 / (y.size - 1))
    p1 = float(stats.t.sf(t, df))
    p2 = float(2 * stats.t.sf(abs(t), df))
    return BaselineResult(method, float(t), p1, p2, float(diff), alternative, (), {"df": float(df)})


def welch_t_test(dataset: Dataset, alternative="greater") -> BaselineResult:
    """Outcomes pooled and split by the action in force at each outcome time (treated minus control)."""
    y, a = _outcomes_by_action(dataset)
    treated, control = y[a == 1], y[a == 0]
    if treated.size == 0 or control.size == 0:
        raise EmptyGroup("one action group has no outcomes")
    return welch(treated, control, alternative)


PAIR_RULES = ("endpoints", "constant", "decision")


def discrete_time_system(dataset: Dataset, config: EstimatorConfig, fm=None, pair_rule: str = "endpoints"):
    """TD system built from consecutive co-observed (state, outcome) times.

    Each pair ``(t, t_next)`` with gap ``h`` contributes the one-step Bellman row
    ``(Psi(S_t) - gamma**h Psi(S_next)) / h`` against ``y_t``. With ``h = 1``
    this is the usual residual ``y + gamma V(S_next) - V(S_t)``; as ``h -> 0``
    it tends to the continuous-time row.

    ``pair_rule`` decides which pairs survive:
    ``"endpoints"`` keeps pairs whose two endpoints carry the same action,
    ``"constant"`` additionally drops pairs with a change point strictly inside,
    ``"decision"`` keeps every pair and labels it with the action at ``t``.
    """
    if pair_rule not in PAIR_RULES:
        raise ValueError(f"unknown pair_rule {pair_rule!r}; expected one of {PAIR_RULES}")
    if fm is None:
        fm = build_feature_map(config.basis, dataset.pooled_states())
    gamma = config.gamma
    parts = {k: [] for k in ("psi", "rows", "y", "a", "sid", "t", "S", "D")}
    diags = []
    dropped = 0
    for tr in dataset:
        match = _match_times(tr.state_times, tr.outcome_times)
        hit = match >= 0
        t = tr.outcome_times[hit]
        if t.size < 2:
            diags.append(Diagnostic("TooFewCoObserved", f"{t.size} co-observed time(s)", tr.subject_id))
            continue
        S = tr.state_values[match[hit]]
        y = tr.outcome_values[hit]
        t0, t1 = t[:-1], t[1:]
        a0 = np.asarray(tr.resolve_action(t0)).reshape(-1)
        inside = np.zeros(t0.size, dtype=bool)
        if pair_rule != "decision":
            inside |= a0 != np.asarray(tr.resolve_action(t1)).reshape(-1)
        if pair_rule == "constant":
            inside |= np.array(
                [np.any((tr.action_times > lo + TIME_TOL) & (tr.action_times < hi - TIME_TOL)) for lo, hi in zip(t0, t1)],
                dtype=bool,
            )
        keep = ~inside
        dropped += int(np.sum(inside))
        if not np.any(keep):
            continue
        dt = (t1 - t0)[keep]
        p0 = fm.psi(S[:-1][keep])
        p1 = fm.psi(S[1:][keep])
        parts["psi"].append(p0)
        parts["rows"].append((p0 - (gamma**dt)[:, None] * p1) / dt[:, None])
        parts["y"].append(y[:-1][keep])
        parts["a"].append(a0[keep])
        parts["sid"].append(np.array([tr.subject_id] * int(np.sum(keep)), dtype=object))
        parts["t"].append(t0[keep])
        parts["S"].append(S[:-1][keep])
        parts["D"].append((S[1:][keep] - S[:-1][keep]) / dt[:, None])
    if dropped:
        diags.append(Diagnostic("DroppedPairs", f"{dropped} pair(s) straddle an action change ({pair_rule} rule)"))
    if not parts["y"]:
        empty = np.zeros((0, fm.M))
        system = AssembledSystem(empty, empty, np.zeros(0), np.zeros(0, int), np.zeros(0, object),
                                 np.zeros(0), np.zeros((0, fm.d)), np.zeros((0, fm.d)), diags)
    else:
        system = AssembledSystem(
            np.vstack(parts["psi"]), np.vstack(parts["rows"]), np.concatenate(parts["y"]),
            np.concatenate(parts["a"]).astype(int), np.concatenate(parts["sid"]), np.concatenate(parts["t"]),
            np.vstack(parts["S"]), np.vstack(parts["D"]), diags,
        )
    system.check_nonempty()
    return system, fm


def discrete_time_value_test(
    dataset: Dataset, config: EstimatorConfig = EstimatorConfig(), pair_rule: str = "endpoints"
) -> BaselineResult:
    system, fm = discrete_time_system(dataset, config, pair_rule=pair_rule)
    res = run_test_on_system(system, fm, config, dataset.initial_states(), method="dtvalue",
                             n_subjects=dataset.n_subjects)
    return BaselineResult(
        "dtvalue", res.z, res.p_one_sided, res.p_two_sided, res.tau_hat, config.alternative,
        res.diagnostics, {"sigma_hat": res.sigma_hat, "n_eff": res.n_eff, "beta0": res.beta0, "beta1": res.beta1},
    )


def _interp_states(tr, t: np.ndarray) -> np.ndarray:
    match = _match_times(tr.state_times, t)
    out = np.column_stack([np.interp(t, tr.state_times, tr.state_values[:, k]) for k in range(tr.d)])
    hit = match >= 0
    out[hit] = tr.state_values[match[hit]]
    return out


def _ridge_fit_predict(Xtr, ytr, Xte, lam):
    # intercept left unpenalised
    gram = Xtr.T @ Xtr
    pen = lam * np.eye(gram.shape[0])
    pen[0, 0] = 0.0
    try:
        coef = np.linalg.solve(gram + pen, Xtr.T @ ytr)
    except np.linalg.LinAlgError as exc:
        raise SingularNuisance("nuisance regression is singular") from exc
    if not np.all(np.isfinite(coef)):
        raise SingularNuisance("nuisance regression produced non-finite coefficients")
    return Xte @ coef


def dml_test(
    dataset: Dataset,
    folds: int = 2,
    alternative="greater",
    basis: Optional[FeatureSpec] = None,
    ridge: float = 1e-3,
) -> BaselineResult:
    """Cross-fitted partially linear model ``Y = theta A + g(S) + u``.

    Nuisances E[Y|S] and E[A|S] are ridge regressions on a sieve of S, fitted
    on the other folds (folds split by subject). ``theta`` solves the
    orthogonal score; its variance is the usual plug-in.
    """
    alternative = Alternative.parse(alternative)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    basis = basis or FeatureSpec(kind=POLYNOMIAL, max_degree=2)
    rows_S, rows_y, rows_a, rows_f = [], [], [], []
    n_sub = dataset.n_subjects
    fold_of = np.arange(n_sub) % folds
    for i, tr in enumerate(dataset):
        t = tr.outcome_times
        rows_S.append(_interp_states(tr, t))
        rows_y.append(tr.outcome_values)
        rows_a.append(np.asarray(tr.resolve_action(t)).reshape(-1))
        rows_f.append(np.full(t.size, fold_of[i]))
    S = np.vstack(rows_S)
    y = np.concatenate(rows_y)
    a = np.concatenate(rows_a).astype(float)
    fidx = np.concatenate(rows_f)
    if np.all(a == 1) or np.all(a == 0):
        raise EmptyGroup("one action group has no outcomes")
    # constant state channels carry no information and would break the sieve domain
    varying = np.ptp(S, axis=0) > 0
    if np.any(varying):
        fm = build_feature_map(basis, S[:, varying])
        X = fm.psi(S[:, varying])
        if X.ndim == 1:
            X = X.reshape(-1, 1)
    else:
        X = np.ones((y.size, 1))
    y_res = np.empty_like(y)
    a_res = np.empty_like(a)
    active_folds = np.unique(fidx)
    for k in active_folds:
        te = fidx == k
        tr_ = ~te if len(active_folds) > 1 else te
        y_res[te] = y[te] - _ridge_fit_predict(X[tr_], y[tr_], X[te], ridge)
        a_res[te] = a[te] - _ridge_fit_predict(X[tr_], a[tr_], X[te], ridge)
    J = np.mean(a_res * a_res)
    if J <= 1e-12:
        raise SingularNuisance("treatment fully explained by the state")
    theta = float(np.mean(a_res * y_res) / J)
    psi = (y_res - theta * a_res) * a_res
    se = math.sqrt(np.mean(psi**2) / J**2 / y.size)
    if se <= 0:
        stat = math.inf * np.sign(theta) if theta != 0 else 0.0
    else:
        stat = theta / se
    p1 = float(stats.norm.sf(stat))
    p2 = float(2 * stats.norm.sf(abs(stat)))
    return BaselineResult("dml", float(stat), p1, p2, theta, alternative, (), {"se": se, "folds": int(folds)})
