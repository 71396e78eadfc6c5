import numpy as np
import pytest

from ctate.core import (
    Alternative,
    AteTestResult,
    Dataset,
    MultiResTrajectory,
    validate_dataset,
)

from conftest import traj


def good():
    return traj("p1", [(0.0, 0.0), (0.1, 0.05)], [(0.2, 0.1), (0.4, 0.2)], [(0.0, 0), (0.3, 1)])


def codes(diags):
    return [d.code for d in diags]


def test_well_formed_dataset_has_no_diagnostics():
    assert validate_dataset(Dataset((good(),), 1)) == []


def test_missing_initial_action():
    tr = traj("p1", [(0.0, 0.0), (0.1, 0.1)], [(0.2, 1.0), (0.4, 0.0)], [(0.1, 0), (0.3, 1)])
    assert "MissingInitialAction" in codes(validate_dataset(Dataset((tr,), 1)))


def test_single_action_data():
    tr = traj("p1", [(0.0, 0.0), (0.1, 0.1)], [(0.2, 1.0)], [(0.0, 1)])
    assert codes(validate_dataset(Dataset((tr,), 1))) == ["SingleActionData"]


def test_non_monotone_and_dimension_mismatch():
    bad = MultiResTrajectory("p2", [0.2, 0.1], np.zeros((2, 2)), [0.3], [1.0], [0.0], [0])
    diags = codes(validate_dataset(Dataset((good(), bad), 1)))
    assert "NonMonotoneTimes" in diags
    assert "DimensionMismatch" in diags


def test_empty_dataset():
    assert codes(validate_dataset(Dataset((), 1))) == ["EmptyDataset"]


def test_validate_is_idempotent_and_pure():
    ds = Dataset((good(),), 1)
    before = good().state_values.copy()
    assert validate_dataset(ds) == validate_dataset(ds)
    np.testing.assert_array_equal(ds.trajectories[0].state_values, before)


def test_resolve_action_right_continuous():
    tr = good()
    assert tr.resolve_action(0.0) == 0
    assert tr.resolve_action(0.2999) == 0
    assert tr.resolve_action(0.3) == 1
    assert tr.resolve_action(5.0) == 1
    np.testing.assert_array_equal(tr.resolve_action(np.array([0.0, 0.3, 0.31])), [0, 1, 1])


def test_trajectory_arrays_are_read_only():
    tr = good()
    with pytest.raises(ValueError):
        tr.state_values[0, 0] = 1.0


def test_flip_and_scale_helpers():
    tr = good()
    np.testing.assert_array_equal(tr.with_actions_flipped().action_values, [1, 0])
    np.testing.assert_allclose(tr.with_outcomes_scaled(3.0).outcome_values, [0.3, 0.6])


def test_alternative_parse():
    assert Alternative.parse("two_sided") is Alternative.TWO_SIDED
    assert Alternative.parse("greater") is Alternative.ONE_SIDED_GREATER
    with pytest.raises(ValueError):
        Alternative.parse("less")


def test_result_p_value_follows_alternative():
    kw = dict(tau_hat=1.0, sigma_hat=1.0, z=2.0, p_one_sided=0.02, p_two_sided=0.04, beta0=np.zeros(2),
              beta1=np.ones(2), n_eff=4, cond_sigma=1.0)
    assert AteTestResult(**kw).p_value == 0.02
    r2 = AteTestResult(**kw, alternative=Alternative.TWO_SIDED)
    assert r2.p_value == 0.04 and r2.reject(0.05) and not r2.reject(0.01)
