"""B-spline bases and the least-squares trajectory smoother.

The smoother is the first step of a two-step drift estimator: each state
channel of a subject is regressed on a clamped B-spline basis in time, and
the derivative of the fitted curve serves as the drift estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg

from .core import DegenerateDomain, InsufficientObservations, SingularDesign

TIME_QUANTILES = "quantiles"
UNIFORM = "uniform"
COND_LIMIT = 1e10


@dataclass(frozen=True, eq=False)
class KnotVector:
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[-self.degree - 1])

    @property
    def interior(self) -> np.ndarray:
        return self.knots[self.degree + 1 : -self.degree - 1]


def make_knot_vector(times, n_basis: int, degree: int = 3, placement: str = TIME_QUANTILES) -> KnotVector:
    """Clamped knot vector over ``[min(times), max(times)]``.

    Interior knots sit at empirical quantiles of ``times`` (``"quantiles"``)
    or are equally spaced (``"uniform"``). Quantile knots that collide fall
    back to uniform spacing.
    """
    t = np.asarray(times, dtype=float)
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if n_basis < degree + 1:
        raise ValueError(f"n_basis={n_basis} < degree+1={degree + 1}")
    if t.size == 0:
        raise DegenerateDomain("no time points")
    lo, hi = float(t.min()), float(t.max())
    if not hi > lo:
        raise DegenerateDomain(f"all times equal ({lo})")
    n_int = n_basis - degree - 1
    probs = np.arange(1, n_int + 1) / (n_int + 1)
    interior = lo + (hi - lo) * probs
    if placement == TIME_QUANTILES and n_int > 0:
        q = np.quantile(t, probs)
        if np.all(np.diff(np.concatenate([[lo], q, [hi]])) > 1e-12 * (hi - lo)):
            interior = q
    elif placement not in (TIME_QUANTILES, UNIFORM):
        raise ValueError(f"unknown knot placement {placement!r}")
    knots = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
    return KnotVector(degree, knots)


def _basis_table(knots: np.ndarray, degree: int, t: np.ndarray) -> np.ndarray:
    """Cox-de Boor recursion; returns all degree-``degree`` basis values at ``t``."""
    lo, hi = knots[degree], knots[-degree - 1]
    n0 = len(knots) - 1
    B = np.zeros((t.size, n0))
    # half-open spans, except the last non-empty span also owns the right end
    for i in range(n0):
        if knots[i + 1] > knots[i]:
            B[:, i] = (knots[i] <= t) & (t < knots[i + 1])
    last = np.max(np.nonzero(np.diff(knots[: len(knots) - degree]) > 0)[0])
    B[t >= hi, :] = 0.0
    B[t >= hi, last] = 1.0
    B[t < lo, :] = 0.0
    for k in range(1, degree + 1):
        n_k = len(knots) - k - 1
        nxt = np.zeros((t.size, n_k))
        for i in range(n_k):
            den_l = knots[i + k] - knots[i]
            den_r = knots[i + k + 1] - knots[i + 1]
            if den_l > 0:
                nxt[:, i] += (t - knots[i]) / den_l * B[:, i]
            if den_r > 0:
                nxt[:, i] += (knots[i + k + 1] - t) / den_r * B[:, i + 1]
        B = nxt
    return B


def basis_matrix(kv: KnotVector, t, derivative_order: int = 0) -> np.ndarray:
    """Basis values (or first derivatives) at each ``t``; shape ``(len(t), n_basis)``.

    ``t`` is clamped to the knot domain.
    """
    lo, hi = kv.domain
    tt = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), lo, hi)
    knots, p = kv.knots, kv.degree
    if derivative_order == 0:
        return _basis_table(knots, p, tt)
    if derivative_order != 1:
        raise ValueError("derivative_order must be 0 or 1")
    lower = _basis_table(knots, p - 1, tt)
    out = np.zeros((tt.size, kv.n_basis))
    for i in range(kv.n_basis):
        den_l = knots[i + p] - knots[i]
        den_r = knots[i + p + 1] - knots[i + 1]
        if den_l > 0:
            out[:, i] += lower[:, i] / den_l
        if den_r > 0:
            out[:, i] -= lower[:, i + 1] / den_r
    return p * out


def eval_basis(kv: KnotVector, t: float, derivative_order: int = 0) -> np.ndarray:
    return basis_matrix(kv, [t], derivative_order)[0]


@dataclass(frozen=True)
class SmoothingSpec:
    """How each subject's state path is smoothed.

    ``n_basis=None`` applies the rule ``min(n_obs // 2, max_basis)``. The
    ridge is added to the normal matrix only when its condition number
    exceeds ``COND_LIMIT``.
    """

    degree: int = 3
    n_basis: Optional[int] = None
    max_basis: int = 15
    ridge: float = 1e-8
    knot_placement: str = TIME_QUANTILES

    def resolve_n_basis(self, n_obs: int) -> int:
        if self.n_basis is not None:
            m = int(self.n_basis)
        else:
            m = min(n_obs // 2, self.max_basis)
        return max(m, self.degree + 1)


@dataclass(frozen=True, eq=False)
class SplineModel:
    knot_vector: KnotVector
    coef: np.ndarray  # (n_basis, d)
    residual_rms: np.ndarray  # (d,)

    @property
    def d(self) -> int:
        return int(self.coef.shape[1])

    @property
    def domain(self) -> tuple[float, float]:
        return self.knot_vector.domain

    def state(self, t) -> np.ndarray:
        """Smoothed state at each ``t``; shape ``(len(t), d)``."""
        return basis_matrix(self.knot_vector, t, 0) @ self.coef

    def drift(self, t) -> np.ndarray:
        return basis_matrix(self.knot_vector, t, 1) @ self.coef


def fit_trajectory(state_obs, spec: SmoothingSpec = SmoothingSpec()) -> SplineModel:
    """Least-squares spline fit of each state dimension against time.

    ``state_obs`` is either a ``(times, values)`` pair of arrays or a list of
    ``(time, value_vector)`` tuples. Minimises
    ``sum_j |x_j - chi(t_j)' w|^2 + ridge |w|^2`` per dimension, with the
    ridge term active only for ill-conditioned designs.
    """
    times, values = _split_obs(state_obs)
    n = times.size
    if n < 2 or np.ptp(times) <= 0:
        raise InsufficientObservations(f"need >= 2 distinct observation times, got {n}")
    m = spec.resolve_n_basis(n)
    if n < m:
        raise InsufficientObservations(f"{n} observations < {m} basis functions")
    kv = make_knot_vector(times, m, spec.degree, spec.knot_placement)
    X = basis_matrix(kv, times, 0)
    gram = X.T @ X
    # ridge only engages for ill-conditioned designs so well-posed fits stay exact
    if spec.ridge > 0 and np.linalg.cond(gram) > COND_LIMIT:
        gram = gram + spec.ridge * np.eye(m)
    try:
        cf = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        if np.min(np.abs(np.diag(cf[0]))) <= 1e-7 * np.sqrt(np.max(np.diag(gram))):
            raise np.linalg.LinAlgError("numerically singular")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularDesign(f"spline normal matrix is singular (ridge={spec.ridge})") from exc
    coef = scipy.linalg.cho_solve(cf, X.T @ values, check_finite=False)
    resid = values - X @ coef
    rms = np.sqrt(np.mean(resid**2, axis=0))
    return SplineModel(kv, coef, rms)


def _split_obs(state_obs) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(state_obs, tuple) and len(state_obs) == 2 and np.ndim(state_obs[0]) == 1:
        times = np.asarray(state_obs[0], dtype=float)
        values = np.asarray(state_obs[1], dtype=float)
    else:
        times = np.array([float(t) for t, _ in state_obs])
        values = np.array([np.atleast_1d(v) for _, v in state_obs], dtype=float)
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    return times, values


def eval_state(model: SplineModel, t: Union[float, np.ndarray]) -> np.ndarray:
    out = model.state(t)
    return out[0] if np.ndim(t) == 0 else out


def eval_drift(model: SplineModel, t: Union[float, np.ndarray]) -> np.ndarray:
    out = model.drift(t)
    return out[0] if np.ndim(t) == 0 else out
