"""Linear sieve for the value functions: features, gradients and G-integrals."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    DegenerateDomain,
    EmpiricalInitialStates,
    NoSamples,
    PointMass,
    UniformGrid,
)
from .splines import UNIFORM, KnotVector, basis_matrix, make_knot_vector

ADDITIVE_BSPLINE = "additive_bspline"
POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class FeatureSpec:
    kind: str = ADDITIVE_BSPLINE
    n_basis: int = 6
    degree: int = 3
    max_degree: int = 2
    include_intercept: bool = True
    state_domain: Optional[Sequence[Sequence[float]]] = None
    domain_margin: float = 0.05


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Evaluates Psi(s) in R^M and its Jacobian in R^{d x M}.

    For the additive B-spline kind each coordinate is clamped to its domain
    before evaluation, so features (and gradients) are flat outside it.
    """

    spec: FeatureSpec
    d: int
    lo: np.ndarray
    hi: np.ndarray
    knot_vectors: tuple = ()
    exponents: Optional[np.ndarray] = None

    @property
    def M(self) -> int:
        if self.spec.kind == POLYNOMIAL:
            return int(self.exponents.shape[0])
        per_dim = sum(kv.n_basis - int(self.spec.include_intercept) for kv in self.knot_vectors)
        return per_dim + int(self.spec.include_intercept)

    def psi(self, s) -> np.ndarray:
        S, single = _as_states(s, self.d)
        if self.spec.kind == POLYNOMIAL:
            out = np.prod(S[:, None, :] ** self.exponents[None, :, :], axis=2)
        else:
            blocks = [np.ones((S.shape[0], 1))] if self.spec.include_intercept else []
            drop = int(self.spec.include_intercept)
            for k, kv in enumerate(self.knot_vectors):
                blocks.append(basis_matrix(kv, S[:, k], 0)[:, drop:])
            out = np.hstack(blocks)
        return out[0] if single else out

    def grad_psi(self, s) -> np.ndarray:
        """Jacobian rows: ``out[..., k, m] = d Psi_m / d s_k``."""
        S, single = _as_states(s, self.d)
        n = S.shape[0]
        out = np.zeros((n, self.d, self.M))
        if self.spec.kind == POLYNOMIAL:
            E = self.exponents
            for k in range(self.d):
                ek = E[:, k]
                lowered = E.copy()
                lowered[:, k] = np.maximum(ek - 1, 0)
                out[:, k, :] = ek[None, :] * np.prod(S[:, None, :] ** lowered[None, :, :], axis=2)
        else:
            drop = int(self.spec.include_intercept)
            col = drop
            for k, kv in enumerate(self.knot_vectors):
                width = kv.n_basis - drop
                inside = (S[:, k] >= self.lo[k]) & (S[:, k] <= self.hi[k])
                g = basis_matrix(kv, S[:, k], 1)[:, drop:]
                out[:, k, col : col + width] = g * inside[:, None]
                col += width
        return out[0] if single else out


def _as_states(s, d: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(s, dtype=float)
    single = arr.ndim <= 1 and (arr.size == d)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, d) if single else arr.reshape(-1, d)
    if arr.shape[1] != d:
        raise ValueError(f"state dimension {arr.shape[1]} != {d}")
    return arr, single


def _monomial_exponents(d: int, max_degree: int, include_intercept: bool) -> np.ndarray:
    rows = []
    for deg in range(0 if include_intercept else 1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            e = np.zeros(d, dtype=int)
            for k in combo:
                e[k] += 1
            rows.append(e)
    return np.array(rows, dtype=int).reshape(-1, d)


def build_feature_map(spec: FeatureSpec, pooled_states=None, d: Optional[int] = None) -> FeatureMap:
    """Construct the sieve; the domain defaults to the pooled state range widened by 5%."""
    if spec.state_domain is not None:
        dom = np.asarray(spec.state_domain, dtype=float).reshape(-1, 2)
        lo, hi = dom[:, 0].copy(), dom[:, 1].copy()
        d = dom.shape[0]
    else:
        S = np.asarray(pooled_states, dtype=float) if pooled_states is not None else np.zeros((0, d or 1))
        if S.ndim == 1:
            S = S.reshape(-1, 1)
        if S.shape[0] == 0:
            if spec.kind != POLYNOMIAL:
                raise NoSamples("empirical feature domain needs pooled states")
            d = d or S.shape[1]
            lo, hi = np.zeros(d), np.ones(d)
        else:
            d = S.shape[1]
            lo, hi = S.min(axis=0), S.max(axis=0)
            pad = spec.domain_margin * (hi - lo)
            lo, hi = lo - pad, hi + pad
    if spec.kind == POLYNOMIAL:
        E = _monomial_exponents(d, spec.max_degree, spec.include_intercept)
        fm = FeatureMap(spec, d, lo, hi, (), E)
    elif spec.kind == ADDITIVE_BSPLINE:
        kvs = []
        for k in range(d):
            if not hi[k] > lo[k]:
                raise DegenerateDomain(f"state dimension {k} has zero width domain [{lo[k]}, {hi[k]}]")
            kvs.append(make_knot_vector([lo[k], hi[k]], spec.n_basis, spec.degree, UNIFORM))
        fm = FeatureMap(spec, d, lo, hi, tuple(kvs))
    else:
        raise ValueError(f"unknown feature kind {spec.kind!r}")
    if fm.M < 2:
        raise ValueError(f"feature map has M={fm.M} < 2")
    return fm


def intercept_only_map(d: int) -> FeatureMap:
    """Psi(s) = (1,); used for scalar checks and the degenerate baselines."""
    spec = FeatureSpec(kind=POLYNOMIAL, max_degree=0)
    return FeatureMap(spec, d, np.zeros(d), np.ones(d), (), np.zeros((1, d), dtype=int))


def integrate_psi(fm: FeatureMap, measure, samples=None) -> np.ndarray:
    """Integral of Psi against the reference measure.

    Returns the vector ``v``; callers build ``U = (-v, v)`` so that
    ``tau = v' (beta1 - beta0)``.
    """
    if isinstance(measure, PointMass):
        return fm.psi(np.asarray(measure.s0, dtype=float).reshape(fm.d))
    if isinstance(measure, EmpiricalInitialStates):
        if samples is None or len(samples) == 0:
            raise NoSamples("empirical reference measure needs at least one initial state")
        return fm.psi(np.asarray(samples, dtype=float).reshape(-1, fm.d)).mean(axis=0)
    if isinstance(measure, UniformGrid):
        lo = np.broadcast_to(np.asarray(measure.lo, dtype=float), (fm.d,))
        hi = np.broadcast_to(np.asarray(measure.hi, dtype=float), (fm.d,))
        axes = [np.linspace(lo[k], hi[k], measure.n_grid) for k in range(fm.d)]
        grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        return fm.psi(grid).mean(axis=0)
    raise TypeError(f"unsupported reference measure {measure!r}")
