"""Euler-Maruyama simulation of the benchmark scenarios and multi-resolution sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Dataset, GridMismatch, MultiResTrajectory

GRID_DECIMALS = 12
_EPS = 1e-9


def _grid(step: float, n: int, start: int = 0) -> np.ndarray:
    return np.round(np.arange(start, n + 1) * step, GRID_DECIMALS)


def _n_steps(total: float, step: float, what: str) -> int:
    k = total / step
    n = int(round(k))
    if n < 1 or abs(k - n) > 1e-9 * max(1.0, abs(k)):
        raise GridMismatch(f"{what}: {total} is not an integer multiple of {step}")
    return n


def make_rng(*keys: int) -> np.random.Generator:
    """Counter-style generator: the stream depends only on ``keys``."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


@dataclass(frozen=True)
class Schedule:
    """Deterministic treatment assignment A(t) in {0, 1}.

    kinds: ``always_off``, ``always_on``, ``square_wave`` (on for the first
    ``duty`` fraction of each ``period``, shifted by ``phase``) and ``pulses``
    (on during ``[t_k, t_k + width)``).
    """

    kind: str = "square_wave"
    period: float = 1.0
    duty: float = 0.2
    phase: float = 0.0
    times: tuple = ()
    width: float = 0.2

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "always_off":
            out = np.zeros(t.shape, dtype=int)
        elif self.kind == "always_on":
            out = np.ones(t.shape, dtype=int)
        elif self.kind == "square_wave":
            x = (t - self.phase) / self.period
            frac = x - np.floor(x + _EPS)
            out = (frac < self.duty - _EPS).astype(int)
        elif self.kind == "pulses":
            out = np.zeros(t.shape, dtype=int)
            for s in self.times:
                out |= ((t >= s - _EPS) & (t < s + self.width - _EPS)).astype(int)
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        return int(out) if out.ndim == 0 else out

    def change_points(self, t_end: float) -> tuple[np.ndarray, np.ndarray]:
        """Times (starting at 0) where A changes, and the action from each on."""
        if self.kind in ("always_off", "always_on"):
            return np.array([0.0]), np.array([int(self.kind == "always_on")])
        cands = [0.0]
        if self.kind == "square_wave":
            k0 = int(np.floor(-self.phase / self.period)) - 1
            k1 = int(np.ceil((t_end - self.phase) / self.period)) + 1
            for k in range(k0, k1 + 1):
                start = self.phase + k * self.period
                cands += [start, start + self.duty * self.period]
        else:
            for s in self.times:
                cands += [s, s + self.width]
        cands = np.unique(np.round([c for c in cands if -_EPS <= c <= t_end + _EPS], GRID_DECIMALS))
        cands = np.clip(cands, 0.0, None)
        acts = np.asarray(self(cands)).reshape(-1)
        keep = np.concatenate([[True], acts[1:] != acts[:-1]])
        return cands[keep], acts[keep]

    def describe(self) -> str:
        if self.kind in ("always_off", "always_on"):
            return self.kind
        if self.kind == "square_wave":
            return f"square_wave(period={self.period:g},duty={self.duty:g},phase={self.phase:g})"
        return f"pulses(n={len(self.times)},width={self.width:g})"

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "square_wave":
            out.update(period=self.period, duty=self.duty, phase=self.phase)
        elif self.kind == "pulses":
            out.update(times=list(self.times), width=self.width)
        return out

    @classmethod
    def from_dict(cls, spec) -> "Schedule":
        """Accepts a preset name (``"treatment1"``, ...) or a dict of fields."""
        if isinstance(spec, str):
            if spec not in SCHEDULES:
                raise ValueError(f"unknown schedule {spec!r}; presets are {sorted(SCHEDULES)}")
            return SCHEDULES[spec]()
        spec = dict(spec)
        if "times" in spec:
            spec["times"] = tuple(float(t) for t in spec["times"])
        sched = cls(**spec)
        sched(0.0)  # rejects unknown kinds early
        return sched


def treatment_short() -> Schedule:
    """Short treatment bouts: on 20% of every unit period."""
    return Schedule("square_wave", period=1.0, duty=0.2)


def treatment_long() -> Schedule:
    """Long treatment bouts: on for half of every 5-unit period."""
    return Schedule("square_wave", period=5.0, duty=0.5)


SCHEDULES = {
    "treatment1": treatment_short,
    "treatment2": treatment_long,
    "always_on": lambda: Schedule("always_on"),
    "always_off": lambda: Schedule("always_off"),
}


@dataclass(frozen=True, eq=False)
class Scenario:
    """Drift-diffusion model ``dS = drift(S, A) dt + diffusion * dW`` with ``Y = outcome(S)``.

    ``drift`` and ``outcome`` operate on batches: ``drift(S (n, d), A (n,))``
    returns ``(n, d)`` and ``outcome(S (n, d))`` returns ``(n,)``.
    """

    name: str
    d: int
    drift: Callable
    diffusion: np.ndarray
    outcome: Callable
    t_end: float = 10.0
    dt: float = 0.01
    s0: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        _n_steps(self.t_end, self.dt, "t_end/dt")
        object.__setattr__(self, "diffusion", np.broadcast_to(np.asarray(self.diffusion, float), (self.d,)).copy())
        s0 = np.zeros(self.d) if self.s0 is None else np.broadcast_to(np.asarray(self.s0, float), (self.d,)).copy()
        object.__setattr__(self, "s0", s0)

    @property
    def n_steps(self) -> int:
        return _n_steps(self.t_end, self.dt, "t_end/dt")

    def replace(self, **kw) -> "Scenario":
        fields_ = dict(
            name=self.name, d=self.d, drift=self.drift, diffusion=self.diffusion, outcome=self.outcome,
            t_end=self.t_end, dt=self.dt, s0=self.s0, params=self.params,
        )
        fields_.update(kw)
        return Scenario(**fields_)


def _mean_outcome(S):
    return S.mean(axis=1)


def scenario_sim0(delta: float = 0.3, eps: float = 0.1, theta: float = 0.2) -> Scenario:
    """dS = (-theta S + delta A) dt + eps dW, Y = S."""

    def drift(S, A):
        return -theta * S + delta * A[:, None]

    return Scenario("sim0", 1, drift, np.array([eps]), lambda S: S[:, 0],
                    params=dict(delta=delta, eps=eps, theta=theta))


def scenario_sim1(delta: float = 0.3) -> Scenario:
    def drift(S, A):
        out = np.empty_like(S)
        out[:, 0] = -0.1 * S[:, 0] + delta * A
        out[:, 1] = -0.3 * S[:, 1] + 0.5 * delta * A
        return out

    return Scenario("sim1", 2, drift, np.array([0.1, 0.2]), _mean_outcome, params=dict(delta=delta))


def _coupled_feedback(S):
    out = np.empty_like(S)
    out[:, 0] = -0.1 * S[:, 0] + 0.2 * S[:, 1]
    out[:, 1] = 0.1 * S[:, 0] - 0.3 * S[:, 1]
    return out


def scenario_sim2(delta: float = 0.3) -> Scenario:
    def drift(S, A):
        push = delta * A[:, None] * np.array([1.0, 0.5])
        return _coupled_feedback(S) + push

    return Scenario("sim2", 2, drift, np.array([0.1, 0.2]), _mean_outcome, params=dict(delta=delta))


def scenario_sim3(delta: float = 0.3) -> Scenario:
    """Sim2 feedback with its sign flipped off treatment: (2A - 1) * feedback + push."""

    def drift(S, A):
        push = delta * A[:, None] * np.array([1.0, 0.5])
        return (2 * A[:, None] - 1) * _coupled_feedback(S) + push

    return Scenario("sim3", 2, drift, np.array([0.1, 0.2]), _mean_outcome, params=dict(delta=delta))


def make_scenario(name: str, delta: float = 0.3, eps: Optional[float] = None) -> Scenario:
    name = name.lower()
    if name == "sim0":
        return scenario_sim0(delta, 0.1 if eps is None else eps)
    builders = {"sim1": scenario_sim1, "sim2": scenario_sim2, "sim3": scenario_sim3}
    if name not in builders:
        raise ValueError(f"unknown scenario {name!r}")
    sc = builders[name](delta)
    if eps is not None:
        # scales both channels' noise relative to the printed levels at eps = 0.1
        sc = sc.replace(diffusion=sc.diffusion * (eps / 0.1))
    return sc


@dataclass(frozen=True, eq=False)
class DensePath:
    times: np.ndarray  # (n_t,)
    states: np.ndarray  # (n_t, d)
    actions: np.ndarray  # (n_t,)
    schedule: Optional[Schedule] = None


def euler_maruyama_batch(scenario: Scenario, schedule: Schedule, rng, n_paths: int = 1) -> list[DensePath]:
    """Simulate ``n_paths`` independent paths sharing one schedule.

    ``S_{k+1} = S_k + drift(S_k, A(t_k)) dt + diffusion * sqrt(dt) * xi_k``.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n = scenario.n_steps
    dt = scenario.dt
    times = _grid(dt, n)
    actions = np.asarray(schedule(times)).reshape(-1).astype(int)
    xi = rng.standard_normal((n, n_paths, scenario.d))
    scale = scenario.diffusion * np.sqrt(dt)
    S = np.empty((n + 1, n_paths, scenario.d))
    S[0] = scenario.s0
    for k in range(n):
        A = np.full(n_paths, actions[k])
        S[k + 1] = S[k] + scenario.drift(S[k], A) * dt + scale * xi[k]
    return [DensePath(times, S[:, j, :].copy(), actions, schedule) for j in range(n_paths)]


def euler_maruyama(scenario: Scenario, schedule: Schedule, rng_seed) -> DensePath:
    return euler_maruyama_batch(scenario, schedule, rng_seed, 1)[0]


@dataclass(frozen=True)
class SamplingPlan:
    state_interval: float = 0.1
    outcome_interval: float = 0.2
    obs_noise_sd: float = 0.0
    jitter: float = 0.0

    @classmethod
    def from_sample_sizes(cls, n_s: int, n_y: int, t_end: float = 10.0, dt: float = 0.01, **kw) -> "SamplingPlan":
        """Intervals giving ``n_s`` state and ``n_y`` outcome samples after t = 0, snapped to dt."""
        ds = max(1, int(round(t_end / n_s / dt))) * dt
        dy = max(1, int(round(t_end / n_y / dt))) * dt
        return cls(round(ds, GRID_DECIMALS), round(dy, GRID_DECIMALS), **kw)


def _sample_indices(n_dense: int, step: int, start: int, jitter_steps: int, rng) -> np.ndarray:
    idx = np.arange(start, n_dense, step)
    if jitter_steps > 0:
        idx = idx + rng.integers(-jitter_steps, jitter_steps + 1, size=idx.size)
        idx = np.unique(np.clip(idx, 0, n_dense - 1))
    return idx


def sample_multiresolution(
    path: DensePath,
    plan: SamplingPlan,
    outcome_fn: Callable,
    rng,
    subject_id: object = 0,
    schedule: Optional[Schedule] = None,
) -> MultiResTrajectory:
    """Observe a dense path on coarser state/outcome grids.

    States are read at ``0, ds, 2 ds, ...`` plus iid N(0, obs_noise_sd^2)
    noise; outcomes ``outcome_fn(S)`` at ``dy, 2 dy, ...`` from the noise-free
    state. Jitter moves each time by up to ``jitter`` (snapped to the dense
    grid, clamped, duplicates removed).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    dt = float(path.times[1] - path.times[0])
    t_end = float(path.times[-1])
    ks = _n_steps(plan.state_interval, dt, "state_interval/dt")
    ky = _n_steps(plan.outcome_interval, dt, "outcome_interval/dt")
    nj = int(round(plan.jitter / dt)) if plan.jitter > 0 else 0
    n_dense = path.times.size
    si = _sample_indices(n_dense, ks, 0, nj, rng)
    yi = _sample_indices(n_dense, ky, ky, nj, rng)
    states = path.states[si].copy()
    if plan.obs_noise_sd > 0:
        states = states + plan.obs_noise_sd * rng.standard_normal(states.shape)
    y = np.asarray(outcome_fn(path.states[yi]), dtype=float).reshape(-1)
    schedule = schedule or path.schedule
    if schedule is not None:
        cp_t, cp_a = schedule.change_points(t_end)
    else:
        a = path.actions
        keep = np.concatenate([[True], a[1:] != a[:-1]])
        cp_t, cp_a = path.times[keep], a[keep]
    return MultiResTrajectory(subject_id, path.times[si], states, path.times[yi], y, cp_t, cp_a)


def simulate_dataset(
    scenario: Scenario,
    schedule: Schedule,
    plan: SamplingPlan,
    n_subjects: int,
    seed,
) -> Dataset:
    """``n_subjects`` iid subjects; all randomness flows from ``seed``.

    ``seed`` may be an int, a tuple of ints (counter-style) or a Generator.
    """
    if isinstance(seed, np.random.Generator):
        rng = seed
    elif isinstance(seed, (tuple, list)):
        rng = make_rng(*seed)
    else:
        rng = make_rng(seed)
    paths = euler_maruyama_batch(scenario, schedule, rng, n_subjects)
    trajs = [
        sample_multiresolution(p, plan, scenario.outcome, rng, subject_id=f"p{i + 1}", schedule=schedule)
        for i, p in enumerate(paths)
    ]
    return Dataset(tuple(trajs), scenario.d)
