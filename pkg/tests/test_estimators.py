import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from panelcount import (
    IcmConfig,
    PanelDataset,
    StepEstimate,
    build_time_grid,
    empirical_l2_distance,
    eval_step,
    gradient_and_curvature,
    isotonic_regression,
    weighted_score_residual,
    log_likelihood,
    npmle,
    npmple,
)
from conftest import TIGHT, path, random_dataset
from _oracles import brute_force_npmle, isotonic_brute_force, loglik_direct


class TestIsotonicRegression:
    def test_matches_brute_force_on_spec_example(self):
        expected = isotonic_brute_force([3.0, 1.0, 2.0], [1.0, 1.0, 1.0])
        np.testing.assert_allclose(expected, [2.0, 2.0, 2.0])
        np.testing.assert_allclose(
            isotonic_regression([3.0, 1.0, 2.0], [1.0, 1.0, 1.0]), expected
        )

    def test_nondecreasing_input_is_fixed_point(self):
        y = [0.0, 1.0, 1.0, 4.5]
        np.testing.assert_array_equal(isotonic_regression(y, np.ones(4)), y)

    def test_singleton(self):
        np.testing.assert_array_equal(isotonic_regression([5.0], [2.0]), [5.0])

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            isotonic_regression([1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            isotonic_regression([1.0, 2.0], [1.0, 0.0])

    @given(
        yw=st.lists(
            st.tuples(st.floats(-20, 20), st.floats(0.1, 5)), min_size=1, max_size=9
        )
    )
    def test_properties_and_brute_force(self, yw):
        y = np.array([a for a, _ in yw])
        w = np.array([b for _, b in yw])
        fit = isotonic_regression(y, w)
        assert np.all(np.diff(fit) >= 0)
        assert math.isclose(np.dot(w, fit), np.dot(w, y), rel_tol=1e-9, abs_tol=1e-9)
        # optimality against the exhaustive minimizer (values may tie at
        # float resolution, so compare objectives, not coordinates)
        brute = isotonic_brute_force(y, w)
        assert np.dot(w, (fit - y) ** 2) <= np.dot(w, (brute - y) ** 2) + 1e-9

    def test_idempotent(self, rng):
        y = rng.normal(size=8)
        w = rng.uniform(0.5, 2.0, size=8)
        fit = isotonic_regression(y, w)
        np.testing.assert_allclose(isotonic_regression(fit, w), fit, atol=1e-12)


class TestIcmConfig:
    def test_defaults_valid(self):
        cfg = IcmConfig()
        assert cfg.max_iterations == 500
        assert cfg.rel_tol == 1e-8
        assert cfg.fenchel_tol == 1e-6

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            IcmConfig(max_iterations=0)
        with pytest.raises(ValueError):
            IcmConfig(rel_tol=1.5)
        with pytest.raises(ValueError):
            IcmConfig(fenchel_tol=0.0)
        with pytest.raises(ValueError):
            IcmConfig(init_slope_epsilon=-1.0)


class TestNpmple:
    def test_monotone_raw_means_pass_through(self):
        d = PanelDataset.from_paths([path("a", 1, [1.0, 2.0], [2, 5])])
        np.testing.assert_allclose(npmple(d).values, [2.0, 5.0])

    def test_shared_time_point_averages(self):
        d = PanelDataset.from_paths(
            [path("a", 1, [1.0], [2]), path("b", 1, [1.0], [4])]
        )
        est = npmple(d)
        np.testing.assert_allclose(est.values, [3.0])

    def test_violating_means_pooled(self):
        d = PanelDataset.from_paths(
            [path("a", 1, [1.0], [4]), path("b", 1, [2.0], [1])]
        )
        np.testing.assert_allclose(npmple(d).values, [2.5, 2.5])

    def test_pseudo_score_identity(self, rng):
        # the isotonic fit zeroes sum_l phi(L(t_l)) * w_l * (L(t_l) - mean_l)
        d = random_dataset(rng, 25)
        est = npmple(d)
        grid = build_time_grid(d)
        obs_vals = []
        for p in d.paths:
            for t, c in zip(p.times, p.counts):
                obs_vals.append((eval_step(est, t), c))
        for phi in (lambda x: 1.0, lambda x: x, lambda x: x * x):
            resid = sum(phi(v) * (v - c) for v, c in obs_vals)
            assert abs(resid) <= 1e-8 * d.n


class TestLogLikelihood:
    def test_hand_value(self):
        d = PanelDataset.from_paths([path("a", 1, [1.0, 2.0], [2, 5])])
        e = StepEstimate(support=[1.0, 2.0], values=[2.0, 5.0])
        expected = 2 * math.log(2) + 3 * math.log(3) - 5
        assert math.isclose(log_likelihood(d, e), expected, rel_tol=1e-12)
        assert math.isclose(expected, -0.317869, abs_tol=5e-7)

    def test_zero_count_zero_estimate_contributes_zero(self):
        d = PanelDataset.from_paths([path("a", 1, [1.0, 2.0], [0, 0])])
        e = StepEstimate(support=[1.0, 2.0], values=[0.0, 0.0])
        assert log_likelihood(d, e) == 0.0

    def test_infeasible_returns_neg_inf(self):
        d = PanelDataset.from_paths([path("a", 1, [1.0, 2.0], [0, 1])])
        e = StepEstimate(support=[1.0, 2.0], values=[1.0, 1.0])
        assert log_likelihood(d, e) == float("-inf")

    def test_matches_direct_loops(self, rng, two_subject_dataset):
        d = two_subject_dataset
        est = npmple(d)
        direct = loglik_direct(d, est.support.tolist(), est.values.tolist())
        assert math.isclose(log_likelihood(d, est), direct, rel_tol=1e-12)


class TestGradientAndCurvature:
    def test_stationary_at_single_subject_mle(self):
        d = PanelDataset.from_paths([path("a", 1, [1.0, 2.0], [2, 5])])
        grid = build_time_grid(d)
        g, c = gradient_and_curvature(d, grid, [2.0, 5.0])
        np.testing.assert_allclose(g, [0.0, 0.0], atol=1e-14)
        assert np.all(c > 0)

    def test_hand_value_off_optimum(self):
        d = PanelDataset.from_paths([path("a", 1, [1.0, 2.0], [2, 5])])
        grid = build_time_grid(d)
        g, _ = gradient_and_curvature(d, grid, [1.0, 5.0])
        assert math.isclose(g[0], 2.0 / 1.0 - 3.0 / 4.0, rel_tol=1e-12)

    def test_terminal_exposure_only(self):
        d = PanelDataset.from_paths([path("a", 1, [1.0], [0])])
        grid = build_time_grid(d)
        g, _ = gradient_and_curvature(d, grid, [1.0])
        np.testing.assert_allclose(g, [-1.0])

    def test_infeasible_u_raises(self):
        d = PanelDataset.from_paths([path("a", 1, [1.0, 2.0], [0, 1])])
        grid = build_time_grid(d)
        with pytest.raises(ValueError):
            gradient_and_curvature(d, grid, [1.0, 1.0])

    def test_matches_finite_differences(self, two_subject_dataset):
        d = two_subject_dataset
        grid = build_time_grid(d)
        u = np.array([0.8, 1.9, 3.1, 4.4])
        g, _ = gradient_and_curvature(d, grid, u)
        h = 1e-6
        for ell in range(grid.m):
            up, dn = u.copy(), u.copy()
            up[ell] += h
            dn[ell] -= h
            fd = (
                loglik_direct(d, grid.points, up) - loglik_direct(d, grid.points, dn)
            ) / (2 * h)
            assert math.isclose(g[ell], fd, rel_tol=1e-5, abs_tol=1e-5)


class TestNpmle:
    def test_single_subject_equals_counts(self):
        d = PanelDataset.from_paths([path("a", 1, [1.0, 2.0, 5.0], [2, 5, 5])])
        est, diag = npmle(d, TIGHT)
        assert diag.converged
        np.testing.assert_allclose(est.values, [2.0, 5.0, 5.0], atol=1e-8)

    def test_matches_brute_force_two_points(self):
        d = PanelDataset.from_paths(
            [path("a", 1, [1.0], [3]), path("b", 1, [2.0], [1])]
        )
        est, diag = npmle(d, TIGHT)
        _, best_ll = brute_force_npmle(d)
        assert abs(log_likelihood(d, est) - best_ll) <= 1e-6

    def test_dominates_npmple(self, rng):
        for _ in range(5):
            d = random_dataset(rng, int(rng.integers(2, 30)))
            est, _ = npmle(d, TIGHT)
            assert log_likelihood(d, est) >= log_likelihood(d, npmple(d)) - 1e-9

    def test_monotone_ascent_trace(self, rng):
        d = random_dataset(rng, 40)
        _, diag = npmle(d, TIGHT)
        assert np.all(np.diff(diag.loglik_trace) >= 0)

    def test_converged_implies_residual_within_tol(self, rng):
        d = random_dataset(rng, 30)
        _, diag = npmle(d, TIGHT)
        assert diag.converged
        assert diag.fenchel_residual <= TIGHT.fenchel_tol

    def test_permutation_invariance(self, rng):
        d = random_dataset(rng, 20)
        perm = rng.permutation(d.n)
        shuffled = PanelDataset.from_paths([d.paths[i] for i in perm], k=1)
        est1, _ = npmle(d, TIGHT)
        est2, _ = npmle(shuffled, TIGHT)
        np.testing.assert_allclose(est1.values, est2.values, rtol=1e-7, atol=1e-9)

    def test_values_nonnegative_nondecreasing(self, rng):
        d = random_dataset(rng, 15)
        est, _ = npmle(d)
        assert est.values[0] >= 0
        assert np.all(np.diff(est.values) >= 0)

    def test_boundary_zero_start_reports_nonconvergence(self):
        # no events in any first interval: the fitted value at the first grid
        # point is 0 and the two-sided certificate at l=1 cannot hold, so the
        # solver must return the exact maximizer flagged converged=False
        d = PanelDataset.from_paths([path("a", 1, [1.0, 2.0], [0, 2])])
        est, diag = npmle(d, TIGHT)
        assert not diag.converged
        np.testing.assert_allclose(est.values, [0.0, 2.0], atol=1e-9)
        assert diag.iterations < 50


class TestWeightedScoreResidual:
    def test_zero_at_exact_interior_mle(self):
        d = PanelDataset.from_paths([path("a", 1, [1.0, 2.0], [2, 5])])
        e = StepEstimate(support=[1.0, 2.0], values=[2.0, 5.0])
        assert abs(weighted_score_residual(d, e, lambda x: x * x)) <= 1e-12

    def test_solver_certificate_on_random_data(self, rng):
        for _ in range(5):
            d = random_dataset(rng, int(rng.integers(3, 25)))
            est, diag = npmle(d, TIGHT)
            assert diag.converged
            for phi in (lambda x: 1.0, lambda x: x, lambda x: x * x):
                assert abs(weighted_score_residual(d, est, phi)) <= 1e-6 * d.n

    def test_sensitive_to_perturbation(self):
        d = PanelDataset.from_paths(
            [path("a", 1, [1.0, 2.0], [2, 5]), path("b", 1, [1.0, 2.0], [1, 4])]
        )
        est, _ = npmle(d, TIGHT)
        bumped = StepEstimate(support=est.support, values=est.values + [0.1, 0.1])
        assert abs(weighted_score_residual(d, bumped, lambda x: x)) > 1e-3


class TestD1Distance:
    def test_identity(self, two_subject_dataset):
        e = npmple(two_subject_dataset)
        assert empirical_l2_distance(two_subject_dataset, e, e) == 0.0

    def test_constant_offset(self):
        d = PanelDataset.from_paths(
            [path("a", 1, [1.0], [1]), path("b", 1, [2.0], [2])]
        )
        e1 = StepEstimate(support=[0.5], values=[1.0])
        e2 = StepEstimate(support=[0.5], values=[2.0])
        assert math.isclose(empirical_l2_distance(d, e1, e2), 1.0, rel_tol=1e-12)

    def test_matches_direct_sum(self, rng):
        d = random_dataset(rng, 12)
        e1, _ = npmle(d)
        e2 = npmple(d)
        total = 0.0
        for p in d.paths:
            for t in p.times:
                total += (eval_step(e1, t) - eval_step(e2, t)) ** 2
        assert math.isclose(empirical_l2_distance(d, e1, e2), math.sqrt(total / d.n), rel_tol=1e-12)
