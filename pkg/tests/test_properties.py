"""Randomized property checks (hypothesis)."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ctate.core import Dataset, MultiResTrajectory, validate_dataset
from ctate.features import POLYNOMIAL, FeatureSpec, build_feature_map
from ctate.harness import study_estimator_config
from ctate.estimator import run_test
from ctate.io import HEADER, dataset_rows, parse_dataset_rows
from ctate.simulate import SamplingPlan, scenario_sim0, simulate_dataset, treatment_long
from ctate.splines import SmoothingSpec, basis_matrix, fit_trajectory, make_knot_vector

FAST = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def change_points(draw):
    n = draw(st.integers(1, 6))
    gaps = draw(st.lists(st.floats(0.01, 2.0), min_size=n - 1, max_size=n - 1))
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    acts = [draw(st.integers(0, 1))]
    for _ in range(n - 1):
        acts.append(1 - acts[-1])
    return times, np.array(acts)


@FAST
@given(change_points(), st.floats(0.0, 1.0))
def test_resolve_action_piecewise_constant(cp, frac):
    times, acts = cp
    tr = MultiResTrajectory("p", [0.0, 1.0], [[0.0], [1.0]], [0.5], [1.0], times, acts)
    for k in range(times.size):
        hi = times[k + 1] if k + 1 < times.size else times[k] + 1.0
        t = times[k] + frac * (hi - times[k]) * 0.999
        assert tr.resolve_action(t) == acts[k]
        assert tr.resolve_action(times[k]) == acts[k]


@FAST
@given(st.integers(0, 10_000))
def test_validate_is_idempotent(seed):
    ds = simulate_dataset(scenario_sim0(0.3, 0.1), treatment_long(), SamplingPlan(), 2, seed)
    before = [tr.state_values.copy() for tr in ds]
    assert validate_dataset(ds) == validate_dataset(ds) == []
    assert all(np.array_equal(a, tr.state_values) for a, tr in zip(before, ds))


@FAST
@given(st.integers(4, 20), st.integers(1, 3), st.integers(0, 10_000))
def test_partition_of_unity(n_basis, degree, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 5, 40))
    kv = make_knot_vector(t, max(n_basis, degree + 1), degree)
    x = rng.uniform(*kv.domain, 100)
    assert np.max(np.abs(basis_matrix(kv, x).sum(axis=1) - 1.0)) <= 1e-12


@FAST
@given(st.sampled_from(["bspline", "poly"]), st.integers(1, 3), st.integers(0, 10_000))
def test_feature_gradient_finite_differences(kind, d, seed):
    rng = np.random.default_rng(seed)
    spec = FeatureSpec(n_basis=int(rng.integers(4, 10))) if kind == "bspline" else \
        FeatureSpec(kind=POLYNOMIAL, max_degree=int(rng.integers(1, 4)))
    fm = build_feature_map(spec, rng.normal(size=(100, d)))
    x = rng.uniform(-1, 1, (10, d))
    h = 1e-5
    g = fm.grad_psi(x)
    assert fm.M == fm.psi(x).shape[1] == g.shape[2]
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        fd = (fm.psi(x + e) - fm.psi(x - e)) / (2 * h)
        assert np.max(np.abs(fd - g[:, k, :])) < 1e-6


@FAST
@given(st.integers(8, 40), st.integers(0, 10_000))
def test_spline_derivative_finite_differences(n_basis, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 10, 80))
    m = fit_trajectory((t, np.cos(t) + rng.normal(0, 0.2, 80)), SmoothingSpec(n_basis=n_basis))
    lo, hi = m.domain
    x = rng.uniform(lo + 0.01, hi - 0.01, 30)
    h = 1e-5
    fd = (m.state(x + h) - m.state(x - h)) / (2 * h)
    assert np.max(np.abs(fd - m.drift(x))) < 1e-6


@st.composite
def small_dataset(draw):
    seed = draw(st.integers(0, 10_000))
    return simulate_dataset(scenario_sim0(0.3, 0.1), treatment_long(), SamplingPlan(), 4, seed)


@FAST
@given(small_dataset(), st.floats(0.01, 100.0))
def test_z_scale_invariance_and_label_swap(ds, c):
    cfg = study_estimator_config()
    r = run_test(ds, cfg)
    rc = run_test(ds.map(lambda tr: tr.with_outcomes_scaled(c)), cfg)
    rs = run_test(ds.map(lambda tr: tr.with_actions_flipped()), cfg)
    assert abs(rc.z - r.z) <= 1e-9 * max(1.0, abs(r.z))
    assert abs(rs.z + r.z) <= 1e-9 * max(1.0, abs(r.z))


@FAST
@given(st.lists(st.floats(-1e6, 1e6, allow_subnormal=False), min_size=3, max_size=12), st.integers(0, 1))
def test_csv_round_trip_random_values(values, a0):
    n = len(values)
    t = np.cumsum(np.full(n, 0.137))
    tr = MultiResTrajectory("s-1", t, np.array(values).reshape(-1, 1), t[1:], np.array(values[1:]),
                            [0.0, float(t[n // 2])], [a0, 1 - a0])
    back = parse_dataset_rows([HEADER] + dataset_rows(Dataset((tr,), 1))).trajectories[0]
    np.testing.assert_allclose(back.state_values, tr.state_values, rtol=1e-11, atol=0)
    np.testing.assert_allclose(back.outcome_times, tr.outcome_times, rtol=1e-11)
    np.testing.assert_array_equal(back.action_values, tr.action_values)
