import math

import numpy as np
import pytest

from ctate.baselines import (
    discrete_time_system,
    discrete_time_value_test,
    dml_test,
    welch,
    welch_t_test,
)
from ctate.core import Dataset, EmptyGroup, MultiResTrajectory, SingleActionSystem
from ctate.estimator import EstimatorConfig, solve_beta
from ctate.features import intercept_only_map
from ctate.harness import study_estimator_config
from ctate.simulate import SamplingPlan, Schedule, scenario_sim0, simulate_dataset, treatment_long, treatment_short

from conftest import traj


def test_welch_hand_example():
    r = welch([1, 2, 3], [2, 3, 4], "two-sided")
    assert r.statistic == pytest.approx(-1.224744871, abs=1e-8)
    assert r.extra["df"] == pytest.approx(4.0)
    assert r.p_two_sided == pytest.approx(0.2878641347, abs=1e-8)


def test_welch_identical_and_degenerate():
    r = welch([1, 2, 3], [1, 2, 3])
    assert r.statistic == 0.0 and r.p_one_sided == pytest.approx(0.5)
    d = welch([1, 1, 1], [0, 0, 0])
    assert d.p_one_sided == 0.0 and d.p_two_sided == 0.0
    assert d.diagnostics[0].code == "ZeroVariance"
    with pytest.raises(EmptyGroup):
        welch([1.0], [1.0, 2.0])


def test_welch_matches_scipy():
    from scipy import stats

    rng = np.random.default_rng(0)
    x, y = rng.normal(0.3, 1, 30), rng.normal(0, 2, 20)
    ref = stats.ttest_ind(x, y, equal_var=False, alternative="greater")
    r = welch(x, y)
    assert r.statistic == pytest.approx(ref.statistic) and r.p_one_sided == pytest.approx(ref.pvalue)


def test_welch_t_test_groups_by_action_at_outcome_time():
    tr = traj("p", [(0.0, 0.0), (1.0, 0.0)], [(0.1, 1.0), (0.2, 1.2), (0.6, 3.0), (0.7, 3.3), (0.8, 2.9)],
              [(0.0, 0), (0.5, 1)])
    r = welch_t_test(Dataset((tr,), 1))
    assert r.estimate == pytest.approx(np.mean([3.0, 3.3, 2.9]) - 1.1)
    with pytest.raises(EmptyGroup):
        welch_t_test(Dataset((traj("q", [(0.0, 0.0)], [(0.1, 1.0)], [(0.0, 1)]),), 1))


def _constant_outcome_dataset(c=2.0):
    trs = []
    for a in (0, 1):
        t = np.arange(0, 11.0)
        trs.append(MultiResTrajectory(f"p{a}", t, np.zeros((11, 1)), t, np.full(11, c), [0.0], [a]))
    return Dataset(tuple(trs), 1)


def test_constant_outcome_geometric_series():
    gamma, c = 0.9, 2.0
    ds = _constant_outcome_dataset(c)
    sys_, _ = discrete_time_system(ds, EstimatorConfig(gamma=gamma), intercept_only_map(1))
    beta = solve_beta(sys_, 0.0)
    np.testing.assert_allclose([beta.beta0[0], beta.beta1[0]], c / (1 - gamma), atol=1e-6)


def test_pair_rules():
    ds = simulate_dataset(scenario_sim0(0.3, 0.1), treatment_short(), SamplingPlan(), 4, 0)
    cfg = study_estimator_config()
    with pytest.raises(SingleActionSystem):
        discrete_time_system(ds, cfg, pair_rule="endpoints")
    sys_dec, _ = discrete_time_system(ds, cfg, pair_rule="decision")
    assert sys_dec.n_eff == 4 * 49 and set(sys_dec.actions) == {0, 1}
    # on over [2, 4.45) and [4.48, 6.93): the gap sits strictly inside the pair (4.4, 4.6)
    gap = Schedule("pulses", times=(2.0, 4.48), width=2.45)
    ds_gap = simulate_dataset(scenario_sim0(0.3, 0.1), gap, SamplingPlan(), 4, 0)
    n = {rule: discrete_time_system(ds_gap, cfg, pair_rule=rule)[0].n_eff for rule in ("endpoints", "constant", "decision")}
    assert n["decision"] == 4 * 49
    assert n["endpoints"] == n["decision"] - 4 * 2
    assert n["constant"] == n["endpoints"] - 4
    with pytest.raises(ValueError):
        discrete_time_system(ds, cfg, pair_rule="nearest")


def test_discrete_time_scale_invariance():
    ds = simulate_dataset(scenario_sim0(0.3, 0.1), treatment_long(), SamplingPlan(), 6, 1)
    cfg = study_estimator_config()
    a = discrete_time_value_test(ds, cfg)
    b = discrete_time_value_test(ds.map(lambda tr: tr.with_outcomes_scaled(4.0)), cfg)
    assert a.statistic == pytest.approx(b.statistic, rel=1e-10)
    assert a.method == "dtvalue"


def _iid_dataset(rng, n_sub, per, effect):
    trs = []
    for i in range(n_sub):
        t = np.arange(1, per + 1, dtype=float)
        s = rng.normal(size=per)
        a = rng.integers(0, 2, per)
        y = s + effect * a + 0.5 * rng.normal(size=per)
        # one action change point per outcome time keeps A(t) exact at every t
        trs.append(MultiResTrajectory(f"p{i}", t, s.reshape(-1, 1), t, y, np.concatenate([[0.0], t]),
                                      np.concatenate([[0], a])))
    return Dataset(tuple(trs), 1)


def test_dml_recovers_coefficient():
    rng = np.random.default_rng(0)
    ds = _iid_dataset(rng, 20, 50, 0.5)
    r = dml_test(ds)
    se = r.extra["se"]
    a = np.concatenate([tr.resolve_action(tr.outcome_times) for tr in ds])
    s = np.concatenate([tr.state_values[:, 0] for tr in ds])
    y = np.concatenate([tr.outcome_values for tr in ds])
    ols = np.linalg.lstsq(np.column_stack([np.ones_like(s), s, s**2, a]), y, rcond=None)[0][-1]
    assert abs(r.estimate - ols) < 2 * se
    assert abs(r.estimate - 0.5) < 4 * se
    assert "DML-lite" in __import__("ctate.baselines", fromlist=["METHOD_LABELS"]).METHOD_LABELS["dml"]


def test_dml_null_calibration():
    rejections = [dml_test(_iid_dataset(np.random.default_rng(s), 10, 20, 0.0)).reject(0.05) for s in range(200)]
    rate = np.mean(rejections)
    assert 0.01 <= rate <= 0.10


def test_dml_constant_state_is_difference_in_means():
    rng = np.random.default_rng(2)
    trs = []
    for i in range(6):
        t = np.arange(1, 21, dtype=float)
        a = rng.integers(0, 2, 20)
        y = a + rng.normal(size=20)
        trs.append(MultiResTrajectory(f"p{i}", t, np.ones((20, 1)), t, y, np.concatenate([[0.0], t]),
                                      np.concatenate([[0], a])))
    ds = Dataset(tuple(trs), 1)
    r = dml_test(ds)
    y = np.concatenate([tr.outcome_values for tr in ds])
    a = np.concatenate([tr.resolve_action(tr.outcome_times) for tr in ds])
    # fold-specific means make this approximate
    assert r.estimate == pytest.approx(y[a == 1].mean() - y[a == 0].mean(), abs=0.05)
    with pytest.raises(ValueError):
        dml_test(ds, folds=1)


def test_baselines_share_result_shape():
    ds = simulate_dataset(scenario_sim0(0.3, 0.1), treatment_long(), SamplingPlan(), 6, 1)
    for r in (welch_t_test(ds), dml_test(ds), discrete_time_value_test(ds, study_estimator_config())):
        assert 0 <= r.p_one_sided <= 1 and 0 <= r.p_two_sided <= 1
        assert math.isfinite(r.statistic)
        assert isinstance(r.reject(0.05), bool)
