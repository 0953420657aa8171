import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import hull_distance_oracle
from sqoglab import hull


class TestProjDataset:
    def test_dataset_point_projects_to_itself(self):
        q = hull.ChnQuery(points=np.array([[0.0, 1.0], [2.0, 3.0]]), radius_r=0.0, hull_diameter_B=10.0)
        point, dist = hull.proj_dataset(np.array([2.0, 3.0]), q)
        np.testing.assert_array_equal(point, [2.0, 3.0])
        assert dist == 0.0

    def test_hand_geometry(self):
        q = hull.ChnQuery(points=np.array([[0.0, 0.0], [1.0, 0.0]]), radius_r=0.0, hull_diameter_B=10.0)
        point, dist = hull.proj_dataset(np.array([0.4, 0.0]), q)
        np.testing.assert_array_equal(point, [0.0, 0.0])
        assert dist == pytest.approx(0.4)

    def test_matches_linear_scan_oracle(self):
        rng = np.random.default_rng(0)
        points = rng.normal(size=(500, 6))
        q = hull.ChnQuery(points=points, radius_r=0.0, hull_diameter_B=1e9)
        for _ in range(100):
            x = rng.normal(size=6)
            point, dist = hull.proj_dataset(x, q)
            dists = np.sqrt(((points - x) ** 2).sum(axis=1))
            idx = int(np.argmin(dists))
            np.testing.assert_array_equal(point, points[idx])
            assert dist == pytest.approx(float(dists[idx]), abs=1e-12)

    def test_tie_breaks_to_lowest_index(self):
        q = hull.ChnQuery(
            points=np.array([[1.0, 0.0], [-1.0, 0.0]]), radius_r=0.0, hull_diameter_B=10.0
        )
        point, _ = hull.proj_dataset(np.array([0.0, 0.0]), q)
        np.testing.assert_array_equal(point, [1.0, 0.0])


class TestDistToHull:
    def test_convex_combination_is_inside(self):
        pts = np.array([[0.0, 0.0], [1.0, 2.0]])
        q = hull.ChnQuery(points=pts, radius_r=0.0, hull_diameter_B=10.0)
        x = 0.3 * pts[0] + 0.7 * pts[1]
        assert hull.dist_to_hull(x, q) == pytest.approx(0.0, abs=1e-6)

    def test_triangle_hand_value(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        q = hull.ChnQuery(points=pts, radius_r=0.0, hull_diameter_B=10.0)
        assert hull.dist_to_hull(np.array([1.0, 1.0]), q) == pytest.approx(
            math.sqrt(2) / 2, abs=1e-6
        )

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(2, 9))
            d = int(rng.integers(1, 4))
            points = rng.normal(size=(n, d))
            q = hull.ChnQuery(points=points, radius_r=0.0, hull_diameter_B=1e9)
            x = rng.normal(size=d) * 1.5
            got = hull.dist_to_hull(x, q, tol=1e-9)
            want = hull_distance_oracle(points, x)
            assert got == pytest.approx(want, abs=1e-6)

    def test_single_point_cloud(self):
        q = hull.ChnQuery(points=np.array([[1.0, 1.0]]), radius_r=0.0, hull_diameter_B=0.0)
        assert hull.dist_to_hull(np.array([4.0, 5.0]), q) == pytest.approx(5.0)

    def test_bounded_by_projection_distance(self):
        rng = np.random.default_rng(6)
        points = rng.normal(size=(40, 3))
        q = hull.ChnQuery(points=points, radius_r=0.0, hull_diameter_B=1e9)
        for _ in range(25):
            x = rng.normal(size=3) * 2
            _, proj_dist = hull.proj_dataset(x, q)
            assert hull.dist_to_hull(x, q) <= proj_dist + 1e-9

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=20, deadline=None)
    def test_zero_on_random_simplex_combinations(self, seed):
        rng = np.random.default_rng(seed)
        points = rng.normal(size=(12, 4))
        q = hull.ChnQuery(points=points, radius_r=0.0, hull_diameter_B=1e9)
        lam = rng.dirichlet(np.ones(12))
        assert hull.dist_to_hull(lam @ points, q) <= 1e-6

    def test_nonconvergence_reports_best_and_gap(self):
        rng = np.random.default_rng(1)
        points = rng.normal(size=(30, 3))
        q = hull.ChnQuery(points=points, radius_r=0.0, hull_diameter_B=1e9)
        with pytest.raises(hull.HullDistanceError) as err:
            hull.dist_to_hull(rng.normal(size=3), q, tol=1e-14, max_iter=2)
        assert err.value.best_distance >= 0.0
        assert math.isfinite(err.value.duality_gap)

    def test_tol_must_be_positive(self):
        q = hull.ChnQuery(points=np.zeros((1, 2)), radius_r=0.0, hull_diameter_B=0.0)
        with pytest.raises(ValueError):
            hull.dist_to_hull(np.zeros(2), q, tol=0.0)


class TestChnContains:
    def test_dataset_points_inside(self):
        rng = np.random.default_rng(2)
        points = rng.normal(size=(20, 3))
        q = hull.chn_query_from_points(points, n_samples=100, seed=0)
        for i in range(0, 20, 5):
            assert hull.chn_contains(points[i], q)

    def test_segment_with_radius(self):
        q = hull.ChnQuery(points=np.array([[0.0], [1.0]]), radius_r=0.1, hull_diameter_B=1.0)
        assert hull.chn_contains(np.array([1.05]), q)
        assert not hull.chn_contains(np.array([1.2]), q)

    def test_agrees_with_enumeration_oracle(self):
        rng = np.random.default_rng(9)
        points = rng.normal(size=(8, 3))
        radius = 0.4
        q = hull.ChnQuery(points=points, radius_r=radius, hull_diameter_B=1e9)
        for _ in range(40):
            x = rng.normal(size=3) * 1.3
            want = hull_distance_oracle(points, x) <= radius
            if abs(hull_distance_oracle(points, x) - radius) < 1e-6:
                continue  # boundary queries are tolerance-ambiguous by design
            assert hull.chn_contains(x, q) == want

    def test_monotone_in_radius(self):
        rng = np.random.default_rng(12)
        points = rng.normal(size=(10, 2))
        diam = hull.max_pairwise_distance(points)
        queries = [
            hull.ChnQuery(points=points, radius_r=r, hull_diameter_B=diam)
            for r in (0.0, 0.2, 0.5)
        ]
        for _ in range(30):
            x = rng.normal(size=2) * 1.5
            flags = [hull.chn_contains(x, q) for q in queries]
            assert flags == sorted(flags)  # enlarging r never flips true -> false


class TestRadiusAndDiameter:
    def test_two_point_diameter(self):
        q = hull.ChnQuery(points=np.array([[0.0, 0.0], [1.0, 0.0]]), radius_r=0.0, hull_diameter_B=1.0)
        r, b = hull.estimate_radius_and_diameter(q, n_samples=100, seed=0)
        assert b == pytest.approx(1.0)
        assert r <= 0.5 + 1e-9  # farthest hull point from the endpoints is the midpoint

    def test_unit_square_radius_near_grid_oracle(self):
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        q = hull.ChnQuery(points=corners, radius_r=0.0, hull_diameter_B=2.0)
        r, b = hull.estimate_radius_and_diameter(q, n_samples=10_000, seed=1)
        assert b == pytest.approx(math.sqrt(2))
        # grid oracle: max over the square of the distance to the nearest corner
        grid = np.linspace(0, 1, 101)
        xs, ys = np.meshgrid(grid, grid)
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
        dists = np.min(
            np.sqrt(((pts[:, None, :] - corners[None, :, :]) ** 2).sum(axis=2)), axis=1
        )
        oracle_r = float(dists.max())
        assert oracle_r == pytest.approx(math.sqrt(2) / 2, abs=1e-2)
        assert r >= 0.95 * oracle_r
        assert r <= oracle_r + 1e-9

    def test_radius_clamped_to_diameter(self):
        points = np.array([[0.0], [1.0]])
        q = hull.chn_query_from_points(points, radius_r=5.0, n_samples=10, seed=0)
        assert q.radius_r <= q.hull_diameter_B

    def test_invariant_radius_le_diameter_enforced(self):
        with pytest.raises(ValueError):
            hull.ChnQuery(points=np.array([[0.0], [1.0]]), radius_r=2.0, hull_diameter_B=1.0)


class TestBounds:
    def test_smoothness_zero_at_coincident_inputs(self):
        x = np.array([1.0, 2.0])
        assert hull.smoothness_bound(x, x, C=3.0) == 0.0

    def test_formula_arithmetic(self):
        # min norm 4, distance 1, C=1: 1*sqrt(4)*sqrt(1) + 2*1 = 4
        assert hull.smoothness_envelope(4.0, 1.0, 1.0) == pytest.approx(4.0)

    def test_matches_independent_reevaluation(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.normal(size=4)
            y = rng.normal(size=4)
            c = float(rng.uniform(0.1, 5.0))
            d = float(np.linalg.norm(x - y))
            expected = c * math.sqrt(min(np.linalg.norm(x), np.linalg.norm(y))) * math.sqrt(d) + 2 * d
            assert hull.smoothness_bound(x, y, c) == pytest.approx(expected, rel=1e-12)

    def _params(self, rng):
        return hull.NtkBoundParams(
            C=float(rng.uniform(0.1, 5)),
            C_r_delta=float(rng.uniform(0, 3)),
            C_T_delta=float(rng.uniform(0, 3)),
            dataset_size=int(rng.integers(1, 10_000)),
            gamma=float(rng.uniform(0, 0.99)),
            r_max=float(rng.uniform(0.1, 10)),
            epsilon_kl=float(rng.uniform(0, 2)),
            a_min_norm=float(rng.uniform(0, 2)),
            a_max_norm=float(rng.uniform(0, 2)),
        )

    def test_gap_bound_zero_when_constants_vanish(self):
        p = hull.NtkBoundParams(
            C=1.0, C_r_delta=0.0, C_T_delta=0.0, dataset_size=100, gamma=0.9,
            r_max=1.0, epsilon_kl=0.1, a_min_norm=1.0, a_max_norm=1.0,
        )
        assert hull.bellman_gap_bound(p, d=0.7, min_norm=2.0) == 0.0

    def test_gap_bound_reduces_to_sampling_term_at_zero_distance(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            p = self._params(rng)
            sampling = (
                p.C_r_delta + p.gamma * p.C_T_delta * p.r_max / (1 - p.gamma)
            ) / math.sqrt(p.dataset_size)
            assert hull.bellman_gap_bound(p, 0.0, min_norm=1.0) == pytest.approx(sampling, rel=1e-12)

    def test_gap_bound_matches_independent_reevaluation(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            p = self._params(rng)
            d = float(rng.uniform(0, 3))
            mn = float(rng.uniform(0, 3))
            zeta = p.gamma * p.C_T_delta / math.sqrt(p.dataset_size)
            expected = (
                (p.C_r_delta + p.gamma * p.C_T_delta * p.r_max / (1 - p.gamma))
                / math.sqrt(p.dataset_size)
                + zeta * (p.C * math.sqrt(mn) * math.sqrt(d) + 2 * d)
            )
            assert hull.bellman_gap_bound(p, d, mn) == pytest.approx(expected, rel=1e-12)

    def test_distance_cap_formula(self):
        p = hull.NtkBoundParams(
            C=1.0, C_r_delta=1.0, C_T_delta=1.0, dataset_size=10, gamma=0.9,
            r_max=1.0, epsilon_kl=0.5, a_min_norm=1.0, a_max_norm=2.0,
        )
        assert p.d_cap() == pytest.approx((1.0 + 4.0) / 2.0 * math.sqrt(0.25), rel=1e-12)

    def test_bounds_monotone_in_distance(self):
        rng = np.random.default_rng(30)
        grid = np.linspace(0.0, 4.0, 60)
        for _ in range(20):
            c = float(rng.uniform(0.1, 5))
            mn = float(rng.uniform(0, 3))
            vals = [hull.smoothness_envelope(mn, d, c) for d in grid]
            assert all(b >= a for a, b in zip(vals, vals[1:]))
            p = self._params(rng)
            vals = [hull.bellman_gap_bound(p, d, mn) for d in grid]
            assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
