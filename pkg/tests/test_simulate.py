import numpy as np
import pytest

from ctate.core import GridMismatch
from ctate.simulate import (
    SamplingPlan,
    Schedule,
    euler_maruyama,
    euler_maruyama_batch,
    make_rng,
    make_scenario,
    sample_multiresolution,
    scenario_sim0,
    scenario_sim1,
    scenario_sim2,
    scenario_sim3,
    simulate_dataset,
    treatment_long,
    treatment_short,
)

ON, OFF = Schedule("always_on"), Schedule("always_off")


def test_noise_free_ode_solution():
    path = euler_maruyama(scenario_sim0(0.3, 0.0), ON, 0)
    assert abs(path.states[-1, 0] - 1.5 * (1 - np.exp(-2))) < 2e-3
    assert path.times.size == 1001 and path.times[-1] == 10.0


def test_fixed_point_when_off():
    path = euler_maruyama(scenario_sim0(0.3, 0.0), OFF, 0)
    assert np.all(path.states == 0)


def test_same_seed_same_path():
    sc = scenario_sim0(0.3, 0.1)
    a, b = euler_maruyama(sc, treatment_short(), 5), euler_maruyama(sc, treatment_short(), 5)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, euler_maruyama(sc, treatment_short(), 6).states)


def test_mean_path_monte_carlo():
    paths = euler_maruyama_batch(scenario_sim0(0.3, 0.1), ON, make_rng(9), 2000)
    end = np.array([p.states[-1, 0] for p in paths])
    target = 1.5 * (1 - np.exp(-2))
    se = end.std(ddof=1) / np.sqrt(end.size)
    # Euler bias at dt = 0.01 is ~1e-3, well inside the band
    assert abs(end.mean() - target) < 3 * se


def test_grid_counts_and_exact_states():
    sc = scenario_sim0(0.3, 0.1)
    path = euler_maruyama(sc, treatment_long(), 1)
    tr = sample_multiresolution(path, SamplingPlan(0.1, 0.2), sc.outcome, 1)
    assert tr.state_times.size == 101 and tr.outcome_times.size == 50
    np.testing.assert_array_equal(tr.state_values[:, 0], path.states[::10, 0])
    np.testing.assert_array_equal(tr.outcome_values, path.states[20::20, 0])


def test_observation_noise():
    sc = scenario_sim0(0.3, 0.1)
    path = euler_maruyama(sc, treatment_long(), 1)
    tr = sample_multiresolution(path, SamplingPlan(obs_noise_sd=0.5), sc.outcome, 1)
    resid = tr.state_values[:, 0] - path.states[::10, 0]
    assert 0.35 < resid.std() < 0.65


def test_jitter_keeps_times_valid():
    sc = scenario_sim0(0.3, 0.1)
    path = euler_maruyama(sc, treatment_long(), 1)
    for seed in range(5):
        tr = sample_multiresolution(path, SamplingPlan(jitter=0.02), sc.outcome, seed)
        for t in (tr.state_times, tr.outcome_times):
            assert np.all(np.diff(t) > 0) and t[0] >= 0 and t[-1] <= 10.0


def test_grid_mismatch():
    sc = scenario_sim0()
    path = euler_maruyama(sc, ON, 0)
    with pytest.raises(GridMismatch):
        sample_multiresolution(path, SamplingPlan(0.015, 0.2), sc.outcome, 0)


def test_sample_size_plan():
    p = SamplingPlan.from_sample_sizes(100, 50)
    assert (p.state_interval, p.outcome_interval) == (0.1, 0.2)
    p = SamplingPlan.from_sample_sizes(25, 12)
    assert (p.state_interval, p.outcome_interval) == (0.4, 0.83)


def test_sim1_quiet_at_zero_effect():
    path = euler_maruyama(scenario_sim1(0.0).replace(diffusion=np.zeros(2)), treatment_short(), 0)
    assert np.all(path.states == 0)


def test_sim2_is_stable():
    J = np.array([[-0.1, 0.2], [0.1, -0.3]])
    assert np.all(np.linalg.eigvals(J).real < 0)
    sc = scenario_sim2(0.3)
    np.testing.assert_allclose(sc.drift(np.eye(2), np.zeros(2)), J.T)
    for p in euler_maruyama_batch(sc, treatment_long(), make_rng(3), 50):
        assert np.max(np.abs(p.states)) < 10


def test_sim3_always_on_matches_explicit_drift():
    sc3 = scenario_sim3(0.3)

    def explicit(S, A):
        out = np.empty_like(S)
        out[:, 0] = (-0.1 * S[:, 0] + 0.2 * S[:, 1]) + 0.3 * A
        out[:, 1] = (0.1 * S[:, 0] - 0.3 * S[:, 1]) + 0.15 * A
        return out

    a = euler_maruyama(sc3, ON, 4)
    b = euler_maruyama(sc3.replace(drift=explicit), ON, 4)
    np.testing.assert_array_equal(a.states, b.states)
    # trend reverses when treatment is off
    S = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(sc3.drift(S, np.zeros(1)), -explicit(S, np.zeros(1)))


def test_make_scenario_noise_scaling():
    assert make_scenario("sim0", 0.3, 0.3).diffusion[0] == 0.3
    np.testing.assert_allclose(make_scenario("sim1", 0.3, 0.1).diffusion, [0.1, 0.2])
    np.testing.assert_allclose(make_scenario("sim1", 0.3, 0.3).diffusion, [0.3, 0.6])
    with pytest.raises(ValueError):
        make_scenario("sim9")


def test_schedules():
    t = np.round(np.arange(0, 1001) * 0.01, 12)
    for sched in (treatment_short(), treatment_long(), Schedule(phase=0.13), Schedule("pulses", times=(1.0, 4.5))):
        cp_t, cp_a = sched.change_points(10.0)
        idx = np.searchsorted(cp_t, t + 1e-9, side="right") - 1
        np.testing.assert_array_equal(cp_a[idx], sched(t))
    assert treatment_short()(0.1) == 1 and treatment_short()(0.2) == 0
    assert treatment_long()(2.49) == 1 and treatment_long()(2.5) == 0
    assert Schedule.from_dict(treatment_short().to_dict()) == treatment_short()
    assert Schedule.from_dict("treatment2") == treatment_long()


def test_simulate_dataset_seed_forms():
    sc, sch, plan = scenario_sim0(), treatment_short(), SamplingPlan()
    a = simulate_dataset(sc, sch, plan, 3, (1, 2))
    b = simulate_dataset(sc, sch, plan, 3, make_rng(1, 2))
    assert all(np.array_equal(x.state_values, y.state_values) for x, y in zip(a, b))
    assert [tr.subject_id for tr in a] == ["p1", "p2", "p3"]
