"""Continuous-time value-function estimating equations and the ATE Z-test.

For each usable outcome time the temporal-difference row

    row = -log(gamma) * Psi(S) - D' grad Psi(S)

is paired with Psi(S) and the observed action. Averaging ``Psi row'`` and
``Psi y`` per action gives the two diagonal blocks of Sigma and eta; each
block is solved on its own.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .core import (
    TIME_TOL,
    Alternative,
    AteTestResult,
    Dataset,
    Diagnostic,
    EmpiricalInitialStates,
    EmptySystem,
    NonPositiveVariance,
    SingleActionSystem,
    SingularSigma,
)
from .features import FeatureMap, FeatureSpec, build_feature_map, integrate_psi
from .splines import SmoothingSpec, fit_trajectory

log = logging.getLogger(__name__)

COND_LIMIT = 1e10


@dataclass(frozen=True)
class EstimatorConfig:
    gamma: float = 0.9
    basis: FeatureSpec = field(default_factory=FeatureSpec)
    smoothing: SmoothingSpec = field(default_factory=SmoothingSpec)
    reference_measure: object = field(default_factory=EmpiricalInitialStates)
    ridge: float = 1e-8
    alternative: Alternative = Alternative.ONE_SIDED_GREATER

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        object.__setattr__(self, "alternative", Alternative.parse(self.alternative))

    @property
    def discount_rate(self) -> float:
        return -math.log(self.gamma)


@dataclass(frozen=True)
class AnalyticPath:
    """Known state path and derivative; stands in for a fitted spline."""

    state_fn: Callable
    drift_fn: Callable
    domain: tuple

    def state(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.asarray(self.state_fn(t), dtype=float).reshape(t.size, -1)

    def drift(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.asarray(self.drift_fn(t), dtype=float).reshape(t.size, -1)


@dataclass(frozen=True)
class TdTerm:
    subject: object
    time: float
    action: int
    psi_vec: np.ndarray
    row_vec: np.ndarray
    outcome: float
    drift: np.ndarray


@dataclass(eq=False)
class AssembledSystem:
    """Per-term arrays plus the averaged block system."""

    psi: np.ndarray  # (n, M)
    rows: np.ndarray  # (n, M)
    y: np.ndarray  # (n,)
    actions: np.ndarray  # (n,)
    subjects: np.ndarray
    times: np.ndarray
    states: np.ndarray  # (n, d)
    drifts: np.ndarray  # (n, d)
    diagnostics: list = field(default_factory=list)

    @property
    def n_eff(self) -> int:
        return int(self.y.size)

    @property
    def M(self) -> int:
        return int(self.psi.shape[1])

    def block(self, a: int) -> np.ndarray:
        m = self.actions == a
        return self.psi[m].T @ self.rows[m] / self.n_eff

    def eta_block(self, a: int) -> np.ndarray:
        m = self.actions == a
        return self.psi[m].T @ self.y[m] / self.n_eff

    @property
    def Sigma_hat(self) -> np.ndarray:
        M = self.M
        out = np.zeros((2 * M, 2 * M))
        out[:M, :M] = self.block(0)
        out[M:, M:] = self.block(1)
        return out

    @property
    def eta_hat(self) -> np.ndarray:
        return np.concatenate([self.eta_block(0), self.eta_block(1)])

    @property
    def terms(self) -> list[TdTerm]:
        return [
            TdTerm(
                self.subjects[k],
                float(self.times[k]),
                int(self.actions[k]),
                self.psi[k],
                self.rows[k],
                float(self.y[k]),
                self.drifts[k],
            )
            for k in range(self.n_eff)
        ]

    def check_nonempty(self) -> None:
        if self.n_eff == 0:
            raise EmptySystem("no temporal-difference terms survived assembly")
        present = set(np.unique(self.actions).tolist())
        if present != {0, 1}:
            raise SingleActionSystem(f"all terms share action(s) {sorted(present)}")

    def scaled_outcomes(self, c: float) -> "AssembledSystem":
        return AssembledSystem(
            self.psi, self.rows, c * self.y, self.actions, self.subjects,
            self.times, self.states, self.drifts, list(self.diagnostics),
        )


def fit_splines(dataset: Dataset, spec: SmoothingSpec) -> list:
    return [fit_trajectory((tr.state_times, tr.state_values), spec) for tr in dataset]


def _match_times(obs_times: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Index of an observation within TIME_TOL of each query time, else -1."""
    out = np.full(query.size, -1, dtype=int)
    if obs_times.size == 0:
        return out
    idx = np.searchsorted(obs_times, query)
    for cand in (idx - 1, idx):
        c = np.clip(cand, 0, obs_times.size - 1)
        hit = (out < 0) & (np.abs(obs_times[c] - query) <= TIME_TOL)
        out[hit] = c[hit]
    return out


def assemble(
    dataset: Dataset,
    config: EstimatorConfig,
    spline_models: Optional[Sequence] = None,
    fm: Optional[FeatureMap] = None,
) -> AssembledSystem:
    """Build one TD term per outcome time inside its subject's spline domain.

    The state is the exact observation when one exists at the outcome time,
    otherwise the spline prediction; the drift always comes from the spline.
    """
    if spline_models is None:
        spline_models = fit_splines(dataset, config.smoothing)
    if fm is None:
        fm = build_feature_map(config.basis, dataset.pooled_states())
    diags: list[Diagnostic] = []
    parts = {k: [] for k in ("S", "D", "y", "a", "sid", "t")}
    n_imputed = 0
    for tr, model in zip(dataset, spline_models):
        t = tr.outcome_times
        lo, hi = model.domain
        keep = (t >= lo - TIME_TOL) & (t <= hi + TIME_TOL)
        if not np.all(keep):
            diags.append(
                Diagnostic(
                    "DroppedTerms",
                    f"{int(np.sum(~keep))} outcome time(s) outside state domain [{lo:g}, {hi:g}]",
                    tr.subject_id,
                )
            )
        t = t[keep]
        if t.size == 0:
            continue
        match = _match_times(tr.state_times, t)
        S = model.state(t)
        hit = match >= 0
        S[hit] = tr.state_values[match[hit]]
        n_imputed += int(np.sum(~hit))
        parts["S"].append(S)
        parts["D"].append(model.drift(t))
        parts["y"].append(tr.outcome_values[keep])
        parts["a"].append(np.asarray(tr.resolve_action(t)).reshape(-1))
        parts["sid"].append(np.array([tr.subject_id] * t.size, dtype=object))
        parts["t"].append(t)
    if n_imputed:
        diags.append(Diagnostic("ImputedStates", f"{n_imputed} state(s) predicted from the spline fit"))
    d = fm.d
    if not parts["y"]:
        empty = np.zeros((0, fm.M))
        sys_ = AssembledSystem(empty, empty, np.zeros(0), np.zeros(0, int), np.zeros(0, object),
                               np.zeros(0), np.zeros((0, d)), np.zeros((0, d)), diags)
        sys_.check_nonempty()
    S = np.vstack(parts["S"])
    D = np.vstack(parts["D"])
    psi = fm.psi(S)
    grad = fm.grad_psi(S)
    gd = np.einsum("nk,nkm->nm", D, grad)
    rows = config.discount_rate * psi - gd
    system = AssembledSystem(
        psi, rows, np.concatenate(parts["y"]), np.concatenate(parts["a"]).astype(int),
        np.concatenate(parts["sid"]), np.concatenate(parts["t"]), S, D, diags,
    )
    system.check_nonempty()
    return system


@dataclass(eq=False)
class BetaSolution:
    beta0: np.ndarray
    beta1: np.ndarray
    # linear maps eta_a -> beta_a actually used (inverse or regularised pseudo-inverse)
    solve_ops: tuple
    conds: tuple
    diagnostics: list = field(default_factory=list)

    def __iter__(self):
        yield self.beta0
        yield self.beta1

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.beta0, self.beta1])

    @property
    def cond_sigma(self) -> float:
        return float(max(self.conds))


def _solve_block(B: np.ndarray, eta: np.ndarray, ridge: float, a: int, diags: list):
    M = B.shape[0]
    cond = float(np.linalg.cond(B)) if np.all(np.isfinite(B)) else math.inf
    if cond <= COND_LIMIT:
        op = np.linalg.solve(B, np.eye(M))
        return np.linalg.solve(B, eta), op, cond
    if ridge <= 0:
        if not np.isfinite(cond) or cond > 1e15:
            raise SingularSigma(f"Sigma block for action {a} is singular (cond={cond:.3g}) and ridge=0")
        diags.append(Diagnostic("IllConditionedSigma", f"action {a} block cond={cond:.3g}, solved unregularised"))
        op = np.linalg.solve(B, np.eye(M))
        return np.linalg.solve(B, eta), op, cond
    normal = B.T @ B
    lam = ridge * np.trace(normal) / M
    op = np.linalg.solve(normal + lam * np.eye(M), B.T)
    diags.append(
        Diagnostic("RidgeFallback", f"action {a} block cond={cond:.3g}; Tikhonov lambda={lam:.3g}")
    )
    return op @ eta, op, cond


def solve_beta(system: AssembledSystem, ridge: float = 1e-8) -> BetaSolution:
    """Solve each M x M block of Sigma beta = eta independently."""
    system.check_nonempty()
    diags: list[Diagnostic] = []
    b0, op0, c0 = _solve_block(system.block(0), system.eta_block(0), ridge, 0, diags)
    b1, op1, c1 = _solve_block(system.block(1), system.eta_block(1), ridge, 1, diags)
    return BetaSolution(b0, b1, (op0, op1), (c0, c1), diags)


def td_residuals(system: AssembledSystem, beta: BetaSolution) -> np.ndarray:
    """y + log(gamma) Psi'beta_a + <grad Psi' beta_a, D> at the observed action."""
    fitted = np.where(system.actions == 1, system.rows @ beta.beta1, system.rows @ beta.beta0)
    return system.y - fitted


def reference_vector(fm: FeatureMap, measure, dataset: Optional[Dataset] = None) -> np.ndarray:
    samples = dataset.initial_states() if dataset is not None else None
    return integrate_psi(fm, measure, samples)


def estimate_tau(beta: BetaSolution, fm: FeatureMap, measure, samples=None) -> float:
    b0, b1 = beta
    if len(b0) != fm.M or len(b1) != fm.M:
        raise ValueError("coefficient length does not match the feature map")
    v = integrate_psi(fm, measure, samples)
    return float(v @ (b1 - b0))


def estimate_variance(system: AssembledSystem, beta: BetaSolution, fm: FeatureMap, measure, samples=None):
    """Sandwich variance ``U' Sigma^-1 Omega Sigma^-T U``.

    Returns ``(sigma2, Omega)``. Only the observed action's half of each
    score vector is nonzero.
    """
    v = integrate_psi(fm, measure, samples)
    return _sandwich(system, beta, v)


def _sandwich(system: AssembledSystem, beta: BetaSolution, v: np.ndarray):
    n, M = system.n_eff, system.M
    eps = td_residuals(system, beta)
    a = system.actions
    g = np.zeros((n, 2 * M))
    g[:, :M] = system.psi * ((1 - a) * eps)[:, None]
    g[:, M:] = system.psi * (a * eps)[:, None]
    omega = g.T @ g / n
    q = np.concatenate([-beta.solve_ops[0].T @ v, beta.solve_ops[1].T @ v])
    proj = g @ q
    sigma2 = float(proj @ proj / n)
    # scale of the same quadratic form with residuals replaced by raw outcomes
    g_y = np.where(a == 1, system.psi @ q[M:], system.psi @ q[:M]) * system.y
    floor = 1e-20 * float(g_y @ g_y / n)
    if not sigma2 > floor:
        raise NonPositiveVariance(f"sigma^2={sigma2:.3g} (residuals vanish or rank collapse)")
    return sigma2, omega


def z_test(tau_hat: float, sigma_hat: float, n_eff: int) -> tuple[float, float, float]:
    z = math.sqrt(n_eff) * tau_hat / sigma_hat
    return z, float(norm.sf(z)), float(2.0 * norm.sf(abs(z)))


def run_test_on_system(
    system: AssembledSystem,
    fm: FeatureMap,
    config: EstimatorConfig,
    samples=None,
    method: str = "proposed",
    n_subjects: int = 0,
) -> AteTestResult:
    beta = solve_beta(system, config.ridge)
    v = integrate_psi(fm, config.reference_measure, samples)
    tau = float(v @ (beta.beta1 - beta.beta0))
    sigma2, _ = _sandwich(system, beta, v)
    sigma = math.sqrt(sigma2)
    z, p1, p2 = z_test(tau, sigma, system.n_eff)
    return AteTestResult(
        tau_hat=tau,
        sigma_hat=sigma,
        z=z,
        p_one_sided=p1,
        p_two_sided=p2,
        beta0=beta.beta0,
        beta1=beta.beta1,
        n_eff=system.n_eff,
        cond_sigma=beta.cond_sigma,
        gamma=config.gamma,
        alternative=config.alternative,
        n_subjects=n_subjects,
        diagnostics=tuple(system.diagnostics) + tuple(beta.diagnostics),
        method=method,
    )


def run_test(dataset: Dataset, config: EstimatorConfig = EstimatorConfig(), spline_models=None) -> AteTestResult:
    """Full pipeline: splines, sieve, assembly, block solve, tau, sandwich, Z."""
    if spline_models is None:
        spline_models = fit_splines(dataset, config.smoothing)
    fm = build_feature_map(config.basis, dataset.pooled_states())
    system = assemble(dataset, config, spline_models, fm)
    return run_test_on_system(system, fm, config, dataset.initial_states(), n_subjects=dataset.n_subjects)
