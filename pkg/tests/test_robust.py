import math

import numpy as np
import pytest

from medbn_lab import robust
from medbn_lab.robust import (
    GeomedConvergenceError,
    SampleSet,
    cwmed,
    geomed,
    lemma9_factor,
    mad,
    mean,
    median,
    median_breach_search,
    worst_case_mean_shift,
)


def sort_median_oracle(values):
    """Independent order-statistic oracle: k-th smallest, k = floor(n/2)+1."""
    s = sorted(values)
    return s[len(s) // 2]


def grid_geomed_oracle(points, lo, hi, steps=3):
    """Grid-refinement brute force minimizer of the summed distances."""
    pts = np.asarray(points, dtype=float)
    (x0, y0), (x1, y1) = lo, hi
    best = None
    for _ in range(steps):
        xs = np.linspace(x0, x1, 101)
        ys = np.linspace(y0, y1, 101)
        gx, gy = np.meshgrid(xs, ys)
        grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
        dist = np.zeros(grid.shape[0])
        for p in pts:
            dist += np.linalg.norm(grid - p, axis=1)
        best = grid[np.argmin(dist)]
        dx, dy = (x1 - x0) / 100, (y1 - y0) / 100
        x0, x1 = best[0] - dx, best[0] + dx
        y0, y1 = best[1] - dy, best[1] + dy
    return best


class TestMedian:
    def test_even_four(self):
        # formula min{a : #{x < a} >= n/2} picks the 3rd smallest of 4
        assert median([1, 2, 3, 4]) == 3.0

    def test_singleton(self):
        assert median([5]) == 5.0

    def test_outlier_matches_sort_oracle(self):
        vals = [1, 2, 100]
        assert median(vals) == sort_median_oracle(vals) == 2.0

    def test_empty_error(self):
        with pytest.raises(ValueError):
            median([])

    def test_membership_fuzz(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            vals = rng.uniform(-10, 10, size=rng.integers(1, 30))
            m = median(vals)
            assert m in vals
            assert m == sort_median_oracle(vals)


class TestMean:
    def test_basic(self):
        assert mean([1, 2, 3]) == 2.0

    def test_singleton(self):
        assert mean([7.5]) == 7.5

    def test_symmetric_extremes(self):
        assert mean([-1e12, 1e12]) == 0.0

    def test_empty_error(self):
        with pytest.raises(ValueError):
            mean([])


class TestCwmed:
    def test_three_vectors(self):
        got = cwmed([(1, 10), (2, 20), (3, 30)])
        np.testing.assert_array_equal(got, [2, 20])

    def test_single_vector(self):
        np.testing.assert_array_equal(cwmed([(4, 5, 6)]), [4, 5, 6])

    def test_mixed_signs(self):
        got = cwmed([(0, 0), (0, 0), (5, -5)])
        np.testing.assert_array_equal(got, [0, 0])

    def test_per_axis_sort_oracle_fuzz(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            arr = rng.uniform(-5, 5, size=(rng.integers(1, 12), rng.integers(1, 6)))
            got = cwmed(arr)
            want = [sort_median_oracle(arr[:, j]) for j in range(arr.shape[1])]
            np.testing.assert_array_equal(got, want)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cwmed([np.array([1.0, 2.0]), np.array([1.0])])


class TestGeomed:
    def test_symmetric_cross(self):
        got = geomed([(1, 0), (-1, 0), (0, 1), (0, -1)])
        np.testing.assert_allclose(got, [0, 0], atol=1e-8)

    def test_single_point(self):
        np.testing.assert_array_equal(geomed([(3.0, -2.0)]), [3.0, -2.0])

    def test_triangle_matches_grid_oracle(self):
        pts = [(0, 0), (4, 0), (2, 3)]
        oracle = grid_geomed_oracle(pts, (0, 0), (4, 3))
        got = geomed(pts)
        assert np.linalg.norm(got - oracle) < 2e-3

    def test_distance_sum_contract(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            pts = rng.uniform(-5, 5, size=(rng.integers(2, 10), rng.integers(2, 5)))
            z = geomed(pts, tol=1e-9)
            total = np.linalg.norm(pts - z, axis=1).sum()
            for p in pts:
                assert total <= np.linalg.norm(pts - p, axis=1).sum() + 1e-6

    def test_majority_point_anchor(self):
        pts = np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [9.0, -3.0]])
        np.testing.assert_allclose(geomed(pts), [1.0, 1.0], atol=1e-12)

    def test_non_convergence_carries_iterate(self):
        pts = np.array([[0.0, 0.0], [4.0, 0.0], [2.0, 3.0]])
        with pytest.raises(GeomedConvergenceError) as err:
            geomed(pts, tol=1e-15, max_iter=2)
        assert err.value.last_iterate.shape == (2,)

    def test_tol_validation(self):
        with pytest.raises(ValueError):
            geomed([(0.0, 0.0)], tol=0.0)


class TestMad:
    def test_constant_set(self):
        assert mad([1, 1, 1]) == 0.0

    def test_hand_oracle(self):
        # median 4, |deviations| {3,2,1,0,1,2,3}, median of those is 2
        assert mad([1, 2, 3, 4, 5, 6, 7]) == 2.0

    def test_two_point_order_statistic_rule(self):
        # median of {0, 1e12} is 1e12; deviations {1e12, 0}; mad is 1e12
        assert mad([0.0, 1e12]) == 1e12

    def test_translation_and_scale_fuzz(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            x = rng.integers(-50, 50, size=rng.integers(1, 15)).astype(float)
            a = float(2.0 ** rng.integers(-2, 3))
            assert mad(a * x + 3.0) == a * mad(x)

    def test_negation_breaks_equivariance_at_even_n(self):
        # the asymmetric order-statistic rule selects a different median
        # element under reflection when n is even
        x = np.array([0.0, 1.0, 2.0, 100.0])
        assert mad(x) == 2.0
        assert mad(-x) == 1.0

    def test_negation_keeps_equivariance_at_odd_n(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            x = rng.integers(-50, 50, size=2 * int(rng.integers(1, 8)) + 1)
            x = x.astype(float)
            assert mad(-x) == mad(x)


class TestWorstCaseMeanShift:
    def test_theorem_example(self):
        # m/n * L with n = 5: one sample at mean+10 shifts the mean by 2
        assert worst_case_mean_shift([0, 0, 0, 0], 1, 10.0) == pytest.approx(2.0)

    def test_zero_offset(self):
        assert worst_case_mean_shift([1.0, 5.0], 2, 0.0) == 0.0

    def test_direct_mean_oracle(self):
        # ben {1,2,3}, mean 2, two samples at 7: mean {1,2,3,7,7} = 4
        assert worst_case_mean_shift([1, 2, 3], 2, 5.0) == pytest.approx(2.0)

    def test_slope_is_m_over_n(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            b = int(rng.integers(1, 40))
            m = int(rng.integers(1, 20))
            ben = rng.uniform(-1e3, 1e3, size=b)
            for L in (1.0, -1e3, 1e9):
                got = worst_case_mean_shift(ben, m, L)
                want = m / (m + b) * abs(L)
                assert got == pytest.approx(want, rel=1e-9)

    def test_m_validation(self):
        with pytest.raises(ValueError):
            worst_case_mean_shift([1.0], 0, 1.0)


class TestMedianBreachSearch:
    def test_theorem_bound(self):
        got = median_breach_search([1, 2, 3], 1, trials=500, magnitude=1e12)
        assert got <= 2.0  # max benign spread

    def test_no_adversary(self):
        assert median_breach_search([3, 4], 0, trials=10, magnitude=1e12) == 0.0

    def test_exhaustive_two_benign(self):
        # enumerate all placements over the candidate grid by hand
        ben = np.array([0.0, 10.0])
        shifts = []
        for v in (-1e12, 0.0, 5.0, 10.0, 1e12):
            shifts.append(abs(median(np.r_[[v], ben]) - median(ben)))
        assert max(shifts) == 10.0
        got = median_breach_search(ben, 1, trials=2000, magnitude=1e12)
        assert got <= 10.0

    def test_search_finds_nontrivial_shift(self):
        got = median_breach_search([1, 2, 3, 4, 5], 2, trials=2000,
                                   magnitude=1e12)
        assert 0.0 < got <= 4.0


class TestLemma9Factor:
    def test_value(self):
        assert lemma9_factor(10, 3) == pytest.approx(7 / math.sqrt(40), rel=1e-12)
        assert lemma9_factor(10, 3) == pytest.approx(1.10680, abs=1e-5)

    def test_near_zero_ratio(self):
        assert lemma9_factor(100, 1) == pytest.approx(1.0000510, abs=1e-7)

    def test_breakdown_boundary(self):
        with pytest.raises(ValueError, match="breakdown point exceeded"):
            lemma9_factor(4, 2)

    def test_m_zero_rejected(self):
        with pytest.raises(ValueError):
            lemma9_factor(10, 0)


class TestSampleSet:
    def test_partition(self):
        s = SampleSet(np.array([9.0, 1.0, 2.0]), mal_count=1)
        np.testing.assert_array_equal(s.malicious, [9.0])
        np.testing.assert_array_equal(s.benign, [1.0, 2.0])
        assert s.n == 3

    def test_validation(self):
        with pytest.raises(ValueError):
            SampleSet(np.array([]), 0)
        with pytest.raises(ValueError):
            SampleSet(np.array([1.0]), 2)
