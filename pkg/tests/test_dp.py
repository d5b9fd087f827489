"""Sensitivity calibration, budget allocation, the Laplace mechanism
and the empirical privacy-bound verifier."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqdp.dp import (
    BudgetAllocation,
    PerturbStats,
    SensitivityMap,
    calibrate_sensitivity,
    clamp_to_range,
    derive_rng,
    element_distance,
    laplace_sample,
    merge_sensitivity,
    noise_scales,
    perturb,
    softmax_over_support,
    tensor_distance,
    verify_dp_bound,
)

finite_floats = st.floats(-10, 10, allow_nan=False)


def random_map(rng, size=16, degenerate=0):
    r_min = rng.uniform(-5, 0, size)
    r_max = r_min + rng.uniform(0.1, 5, size)
    if degenerate:
        idx = rng.choice(size, degenerate, replace=False)
        r_max[idx] = r_min[idx]
    return SensitivityMap(r_min, r_max)


class TestSensitivityMap:
    def test_support_and_width(self, rng):
        s = random_map(rng, degenerate=3)
        assert s.support.sum() == 13
        assert np.all(s.sensitivity[s.support] > 0)
        assert np.all(s.sensitivity[~s.support] == 0)

    def test_calibrate_matches_batch_minmax(self, rng):
        tensors = rng.uniform(-3, 3, (10, 2, 2, 5))
        s = calibrate_sensitivity(iter(tensors), "d")
        assert np.allclose(s.r_min, tensors.min(axis=0))
        assert np.allclose(s.r_max, tensors.max(axis=0))
        assert s.image_count == 10
        assert s.dataset_id == "d"

    def test_calibrate_rejects_empty(self):
        with pytest.raises(Exception):
            calibrate_sensitivity(iter([]))

    def test_merge(self, rng):
        tensors = rng.uniform(-3, 3, (10, 4))
        merged = merge_sensitivity(
            calibrate_sensitivity(iter(tensors[:5])),
            calibrate_sensitivity(iter(tensors[5:])),
        )
        full = calibrate_sensitivity(iter(tensors))
        assert np.allclose(merged.r_min, full.r_min)
        assert np.allclose(merged.r_max, full.r_max)
        assert merged.image_count == 10


class TestBudgets:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 1000))
    def test_budgets_conserve_total(self, seed, eps):
        rng = np.random.default_rng(seed)
        theta = rng.normal(scale=3, size=20)
        support = rng.random(20) < 0.7
        if not support.any():
            support[0] = True
        b = BudgetAllocation(theta, eps, support=support)
        assert b.budgets.sum() == pytest.approx(eps, rel=1e-9)
        assert np.all(b.budgets[~support] == 0)
        assert np.all(b.budgets[support] > 0)

    def test_softmax_empty_support_rejected(self):
        with pytest.raises(ValueError):
            softmax_over_support(np.zeros(4), np.zeros(4, dtype=bool))

    def test_softmax_extreme_theta_stable(self):
        p = softmax_over_support(np.array([1000.0, -1000.0, 0.0]), None)
        assert np.isfinite(p).all() and p.sum() == pytest.approx(1.0)

    def test_allocation_validation(self):
        with pytest.raises(ValueError):
            BudgetAllocation(np.zeros(3), -1.0)
        with pytest.raises(ValueError):
            BudgetAllocation(np.array([np.inf, 0.0]), 1.0)

    def test_noise_scale_formula(self, rng):
        """sigma = (r_max - r_min) / epsilon_element, elementwise."""
        s = random_map(rng, degenerate=2)
        b = BudgetAllocation(rng.normal(size=16), 3.0, support=s.support)
        scales = noise_scales(s, b)
        eps = b.budgets
        sup = s.support
        assert np.allclose(scales[sup], s.sensitivity[sup] / eps[sup])
        assert np.all(scales[~sup] == 0)


class TestDistances:
    def test_element_distance_normalizes(self):
        assert element_distance(1.0, 3.0, 0.0, 4.0) == pytest.approx(0.5)
        assert element_distance(-10.0, 10.0, 0.0, 4.0) == pytest.approx(1.0)

    def test_element_distance_zero_range(self):
        with pytest.raises(ValueError):
            element_distance(0.0, 1.0, 2.0, 2.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_tensor_distance_pseudometric(self, seed):
        rng = np.random.default_rng(seed)
        s = random_map(rng, size=8)
        a, b, c = (rng.uniform(s.r_min, s.r_max) for _ in range(3))
        dab, dba = tensor_distance(a, b, s), tensor_distance(b, a, s)
        assert dab == pytest.approx(dba)
        assert tensor_distance(a, a, s) == 0.0
        assert 0 <= dab <= 1.0
        assert dab <= tensor_distance(a, c, s) + tensor_distance(c, b, s) + 1e-12

    def test_tensor_distance_ignores_degenerate(self, rng):
        s = random_map(rng, degenerate=16)
        a = rng.normal(size=16)
        assert tensor_distance(a, a + 1.0, s) == 0.0

    def test_shape_mismatch(self, rng):
        s = random_map(rng)
        with pytest.raises(ValueError):
            tensor_distance(np.zeros(4), np.zeros(4), s)


class TestLaplace:
    def test_zero_scale_is_exactly_zero(self, rng):
        assert np.all(laplace_sample(np.zeros(100), rng) == 0.0)

    def test_scalar_draw(self, rng):
        assert isinstance(laplace_sample(2.0, rng), float)

    def test_moments(self):
        draws = laplace_sample(np.full(200000, 2.0), np.random.default_rng(5))
        assert abs(draws.mean()) < 0.05
        assert draws.var() == pytest.approx(8.0, rel=0.05)

    def test_symmetric_tails(self):
        draws = laplace_sample(np.full(100000, 1.0), np.random.default_rng(6))
        assert np.mean(draws > 0) == pytest.approx(0.5, abs=0.01)


class TestPerturb:
    def test_clamps_and_counts(self, rng):
        s = random_map(rng)
        stats = PerturbStats()
        out = clamp_to_range(s.r_max + 1.0, s, stats)
        assert np.allclose(out, s.r_max)
        assert stats.clamped == 16

    def test_output_not_clipped(self, rng):
        """The mechanism must not post-process noise away."""
        s = random_map(rng)
        b = BudgetAllocation(np.zeros(16), 1e-3, support=s.support)
        noisy = perturb(s.r_min, s, b, rng)
        assert noisy.min() < s.r_min.min() or noisy.max() > s.r_max.max()

    def test_derive_rng_reproducible_and_independent(self):
        a1 = derive_rng(7, 0).random(4)
        a2 = derive_rng(7, 0).random(4)
        b = derive_rng(7, 1).random(4)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)


class TestDpBound:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 50))
    def test_no_violations(self, seed, eps):
        rng = np.random.default_rng(seed)
        s = random_map(rng, size=6, degenerate=1)
        b = BudgetAllocation(rng.normal(size=6), eps, support=s.support)
        t1, t2 = rng.uniform(s.r_min, s.r_max), rng.uniform(s.r_min, s.r_max)
        rep = verify_dp_bound(t1, t2, s, b, draws=200, rng=rng)
        assert rep.violations == 0
        assert rep.max_log_ratio <= rep.bound + 1e-9

    def test_bound_is_epsilon_times_distance(self, rng):
        s = random_map(rng, size=6)
        b = BudgetAllocation(np.zeros(6), 2.0, support=s.support)
        t1, t2 = rng.uniform(s.r_min, s.r_max), rng.uniform(s.r_min, s.r_max)
        rep = verify_dp_bound(t1, t2, s, b, draws=10, rng=rng)
        assert rep.bound == pytest.approx(2.0 * tensor_distance(t1, t2, s))

    def test_identical_inputs_zero_bound_holds(self, rng):
        """d(t, t) = 0, so the log-ratio must be <= 0 up to slack."""
        s = random_map(rng, size=6)
        b = BudgetAllocation(np.zeros(6), 5.0, support=s.support)
        t = rng.uniform(s.r_min, s.r_max)
        rep = verify_dp_bound(t, t, s, b, draws=100, rng=rng)
        assert rep.violations == 0 and rep.bound == 0.0
