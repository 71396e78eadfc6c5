"""Shared domain types, error classes and dataset validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np

# Observation times closer than this are treated as the same instant.
TIME_TOL = 1e-9


class CtateError(ValueError):
    """Base class for all library errors."""


class DegenerateDomain(CtateError):
    pass


class InsufficientObservations(CtateError):
    pass


class SingularDesign(CtateError):
    pass


class NoSamples(CtateError):
    pass


class EmptySystem(CtateError):
    pass


class SingleActionSystem(CtateError):
    pass


class SingularSigma(CtateError):
    pass


class NonPositiveVariance(CtateError):
    pass


class GridMismatch(CtateError):
    pass


class EmptyGroup(CtateError):
    pass


class SingularNuisance(CtateError):
    pass


class ParseError(CtateError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class MixedDimensions(CtateError):
    pass


class NonBinaryAction(CtateError):
    pass


class DuplicateTimestamp(CtateError):
    def __init__(self, channel: str, message: str = ""):
        super().__init__(message or f"duplicate timestamp in channel {channel!r}")
        self.channel = channel


class IoError(CtateError, OSError):
    pass


class Alternative(str, Enum):
    ONE_SIDED_GREATER = "greater"
    TWO_SIDED = "two-sided"

    @classmethod
    def parse(cls, value: Union[str, "Alternative"]) -> "Alternative":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "greater": cls.ONE_SIDED_GREATER,
            "one-sided": cls.ONE_SIDED_GREATER,
            "onesidedgreater": cls.ONE_SIDED_GREATER,
            "one-sided-greater": cls.ONE_SIDED_GREATER,
            "two-sided": cls.TWO_SIDED,
            "twosided": cls.TWO_SIDED,
            "two": cls.TWO_SIDED,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown alternative {value!r}") from None


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    subject: object = None

    def __str__(self) -> str:
        where = f" [{self.subject}]" if self.subject is not None else ""
        return f"{self.code}{where}: {self.message}"


def _frozen(a, dtype=float, ndim=1) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MultiResTrajectory:
    """One subject's state, outcome and action channels on separate grids.

    ``state_values`` has shape ``(n_states, d)``. Actions are stored as change
    points: ``action_values[k]`` holds from ``action_times[k]`` until the next
    change point.
    """

    subject_id: object
    state_times: np.ndarray
    state_values: np.ndarray
    outcome_times: np.ndarray
    outcome_values: np.ndarray
    action_times: np.ndarray
    action_values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "state_times", _frozen(self.state_times))
        object.__setattr__(self, "state_values", _frozen(self.state_values, ndim=2))
        object.__setattr__(self, "outcome_times", _frozen(self.outcome_times))
        object.__setattr__(self, "outcome_values", _frozen(self.outcome_values))
        object.__setattr__(self, "action_times", _frozen(self.action_times))
        object.__setattr__(self, "action_values", _frozen(self.action_values, dtype=int))

    @classmethod
    def from_observations(cls, subject_id, state_obs, outcome_obs, action_obs):
        """Build from lists of ``(time, values)``, ``(time, y)`` and ``(time, a)``."""
        st = [float(t) for t, _ in state_obs]
        sv = [np.atleast_1d(np.asarray(v, dtype=float)) for _, v in state_obs]
        d = len(sv[0]) if sv else 1
        if any(len(v) != d for v in sv):
            raise MixedDimensions(f"subject {subject_id}: ragged state vectors")
        return cls(
            subject_id,
            st,
            np.array(sv, dtype=float).reshape(len(sv), d),
            [float(t) for t, _ in outcome_obs],
            [float(y) for _, y in outcome_obs],
            [float(t) for t, _ in action_obs],
            [int(a) for _, a in action_obs],
        )

    @property
    def d(self) -> int:
        return int(self.state_values.shape[1])

    @property
    def state_obs(self):
        return list(zip(self.state_times.tolist(), self.state_values.tolist()))

    @property
    def outcome_obs(self):
        return list(zip(self.outcome_times.tolist(), self.outcome_values.tolist()))

    @property
    def action_obs(self):
        return list(zip(self.action_times.tolist(), self.action_values.tolist()))

    def resolve_action(self, t):
        """Action in force at ``t`` (latest change point <= t, right-continuous)."""
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.action_times, t_arr + TIME_TOL, side="right") - 1
        idx = np.clip(idx, 0, len(self.action_times) - 1)
        out = self.action_values[idx]
        return int(out) if out.ndim == 0 else out

    def initial_state(self) -> np.ndarray:
        return np.array(self.state_values[int(np.argmin(self.state_times))])

    def with_actions_flipped(self) -> "MultiResTrajectory":
        return MultiResTrajectory(
            self.subject_id,
            self.state_times,
            self.state_values,
            self.outcome_times,
            self.outcome_values,
            self.action_times,
            1 - self.action_values,
        )

    def with_outcomes_scaled(self, c: float) -> "MultiResTrajectory":
        return MultiResTrajectory(
            self.subject_id,
            self.state_times,
            self.state_values,
            self.outcome_times,
            c * self.outcome_values,
            self.action_times,
            self.action_values,
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    trajectories: tuple
    d: int = field(default=-1)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        if self.d < 0:
            object.__setattr__(self, "d", trajs[0].d if trajs else 0)

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def n_subjects(self) -> int:
        return len(self.trajectories)

    def pooled_states(self) -> np.ndarray:
        if not self.trajectories:
            return np.zeros((0, max(self.d, 1)))
        return np.vstack([tr.state_values for tr in self.trajectories])

    def initial_states(self) -> np.ndarray:
        return np.vstack([tr.initial_state() for tr in self.trajectories])

    def map(self, fn) -> "Dataset":
        return Dataset(tuple(fn(tr) for tr in self.trajectories), self.d)


def _strictly_increasing(t: np.ndarray) -> bool:
    return bool(np.all(np.diff(t) > 0))


def validate_dataset(dataset: Dataset) -> list[Diagnostic]:
    """Check every dataset invariant; one diagnostic per violation, never raises."""
    diags: list[Diagnostic] = []
    if len(dataset.trajectories) == 0:
        return [Diagnostic("EmptyDataset", "dataset has no trajectories")]
    seen_actions: set[int] = set()
    for tr in dataset.trajectories:
        sid = tr.subject_id
        if tr.d < 1 or tr.d != dataset.d:
            diags.append(
                Diagnostic("DimensionMismatch", f"state dimension {tr.d} != dataset d={dataset.d}", sid)
            )
        for name, times in (
            ("state", tr.state_times),
            ("outcome", tr.outcome_times),
            ("action", tr.action_times),
        ):
            if not _strictly_increasing(times):
                diags.append(Diagnostic("NonMonotoneTimes", f"{name} times not strictly increasing", sid))
        if np.any(tr.state_times < 0) or np.any(tr.outcome_times < 0) or np.any(tr.action_times < 0):
            diags.append(Diagnostic("NegativeTime", "observation time below 0", sid))
        if tr.action_times.size == 0 or not np.any(np.abs(tr.action_times) <= TIME_TOL):
            diags.append(Diagnostic("MissingInitialAction", "no action recorded at time 0", sid))
        if np.any((tr.action_values != 0) & (tr.action_values != 1)):
            diags.append(Diagnostic("NonBinaryAction", "actions must be 0 or 1", sid))
        if tr.action_times.size and tr.outcome_times.size:
            seen_actions.update(np.unique(tr.resolve_action(tr.outcome_times)).tolist())
    if len(seen_actions) < 2:
        diags.append(
            Diagnostic(
                "SingleActionData",
                f"outcomes observed under action(s) {sorted(seen_actions)} only",
            )
        )
    return diags


MeasureLike = Union["EmpiricalInitialStates", "PointMass", "UniformGrid"]


@dataclass(frozen=True)
class EmpiricalInitialStates:
    """Reference distribution given by the subjects' first state observations."""


@dataclass(frozen=True)
class PointMass:
    s0: Sequence[float]


@dataclass(frozen=True)
class UniformGrid:
    lo: Sequence[float]
    hi: Sequence[float]
    n_grid: int = 101


@dataclass(frozen=True)
class AteTestResult:
    tau_hat: float
    sigma_hat: float
    z: float
    p_one_sided: float
    p_two_sided: float
    beta0: np.ndarray
    beta1: np.ndarray
    n_eff: int
    cond_sigma: float
    gamma: float = 0.9
    alternative: Alternative = Alternative.ONE_SIDED_GREATER
    n_subjects: int = 0
    diagnostics: tuple = ()
    method: str = "proposed"

    @property
    def statistic(self) -> float:
        return self.z

    @property
    def estimate(self) -> float:
        return self.tau_hat

    @property
    def p_value(self) -> float:
        if self.alternative is Alternative.TWO_SIDED:
            return self.p_two_sided
        return self.p_one_sided

    def reject(self, alpha: float = 0.05) -> bool:
        return bool(self.p_value < alpha)
