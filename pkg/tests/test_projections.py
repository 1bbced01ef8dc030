import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wbary.projections import (
    MultiPlan,
    averaging_weights,
    dist_balanced,
    project_balanced,
    project_simplex,
    project_simplex_columns,
    project_simplex_sorted,
)

from oracles import project_balanced_pinv, qp_project_simplex, random_balanced_like


class TestProjectSimplex:
    def test_feasible_point_is_fixed(self):
        np.testing.assert_allclose(
            project_simplex(np.array([0.5, 0.5]), 1.0), [0.5, 0.5], atol=1e-15
        )

    def test_single_active_coordinate(self):
        # brute-force QP over active sets gives (1, 0)
        np.testing.assert_allclose(
            project_simplex(np.array([2.0, 0.0]), 1.0), [1.0, 0.0], atol=1e-12
        )

    def test_symmetric_input_splits_mass_evenly(self):
        np.testing.assert_allclose(
            project_simplex(np.array([1.0, 1.0, 1.0]), 2.0),
            [2 / 3, 2 / 3, 2 / 3],
            atol=1e-15,
        )

    def test_zero_mass_gives_zero_vector(self):
        out = project_simplex(np.array([3.0, -5.0, 0.1]), 0.0)
        np.testing.assert_array_equal(out, np.zeros(3))

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            project_simplex(np.array([1.0]), -0.5)
        with pytest.raises(ValueError):
            project_simplex(np.array([np.nan, 1.0]), 1.0)
        with pytest.raises(ValueError):
            project_simplex(np.array([1.0]), np.inf)
        with pytest.raises(ValueError):
            project_simplex(np.array([[1.0, 2.0]]), 1.0)

    def test_matches_brute_force_qp(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            n = int(rng.integers(1, 5))
            w = rng.normal(0, 3, n)
            tau = float(rng.uniform(0, 4))
            np.testing.assert_allclose(
                project_simplex(w, tau), qp_project_simplex(w, tau), atol=1e-10
            )

    def test_matches_sorted_reference(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            n = int(rng.integers(1, 40))
            w = rng.normal(0, rng.uniform(0.01, 50), n)
            tau = float(rng.uniform(0, 10))
            np.testing.assert_allclose(
                project_simplex(w, tau), project_simplex_sorted(w, tau), atol=1e-11
            )

    @given(
        st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20),
        st.floats(0.0, 1e4),
    )
    @settings(max_examples=200, deadline=None)
    def test_optimality_certificate(self, values, tau):
        w = np.array(values)
        u = project_simplex(w, tau)
        scale = max(1.0, tau, float(np.abs(w).max()))
        assert (u >= 0).all()
        assert abs(u.sum() - tau) <= 1e-9 * scale
        if tau > 0:
            # some lam must reproduce u as max(w - lam, 0)
            active = u > 0
            if active.any():
                lams = w[active] - u[active]
                lam = lams.mean()
                assert np.abs(lams - lam).max() <= 1e-8 * scale
                assert (w[~active] <= lam + 1e-8 * scale).all()

    def test_batch_column_helper(self):
        rng = np.random.default_rng(3)
        W = rng.normal(size=(4, 6))
        taus = np.array([0.0, 1.0, 0.5, 2.0, 0.0, 3.0])
        out = project_simplex_columns(W, taus)
        for s in range(6):
            np.testing.assert_allclose(
                out[:, s], project_simplex(W[:, s], taus[s]), atol=1e-12
            )


class TestAveragingWeights:
    def test_two_measure_example(self):
        np.testing.assert_allclose(averaging_weights([1, 2]), [2 / 3, 1 / 3])

    def test_equal_sizes_collapse_to_uniform(self):
        np.testing.assert_allclose(averaging_weights([7, 7, 7]), np.full(3, 1 / 3))

    def test_always_positive_and_normalized(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            sizes = rng.integers(1, 100, size=int(rng.integers(1, 8)))
            a = averaging_weights(sizes)
            assert (a > 0).all()
            assert abs(a.sum() - 1.0) < 1e-12

    def test_rejects_nonpositive_sizes(self):
        with pytest.raises(ValueError):
            averaging_weights([3, 0])


def _random_plan(rng, M=None, R=None):
    M = M or int(rng.integers(2, 5))
    R = R or int(rng.integers(1, 5))
    return MultiPlan([rng.normal(size=(R, int(rng.integers(1, 6)))) for _ in range(M)])


class TestProjectBalanced:
    def test_hand_example(self):
        # two slabs: 1x1 holding [1] and 1x2 holding zeros
        plan = MultiPlan([np.array([[1.0]]), np.zeros((1, 2))])
        pi, p = project_balanced(plan)
        np.testing.assert_allclose(p, [2 / 3])
        np.testing.assert_allclose(pi.slabs[0], [[2 / 3]])
        np.testing.assert_allclose(pi.slabs[1], [[1 / 3, 1 / 3]])

    def test_balanced_plan_is_fixed(self):
        rng = np.random.default_rng(1)
        slabs = random_balanced_like(rng, [3, 5, 2], 4)
        plan = MultiPlan(slabs)
        pi, p = project_balanced(plan)
        for orig, proj in zip(slabs, pi.slabs):
            np.testing.assert_allclose(proj, orig, atol=1e-12)

    def test_equal_sizes_average_marginals(self):
        rng = np.random.default_rng(2)
        plan = MultiPlan([rng.normal(size=(3, 4)) for _ in range(5)])
        _, p = project_balanced(plan)
        np.testing.assert_allclose(p, plan.marginals.mean(axis=0), atol=1e-12)

    def test_matches_generic_subspace_projection(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            plan = _random_plan(rng)
            pi, _ = project_balanced(plan)
            expected = project_balanced_pinv(plan.slabs)
            for got, ref in zip(pi.slabs, expected):
                np.testing.assert_allclose(got, ref, atol=1e-9)

    def test_idempotent(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            plan = _random_plan(rng)
            pi, _ = project_balanced(plan)
            pi2, _ = project_balanced(pi)
            for a, b in zip(pi.slabs, pi2.slabs):
                np.testing.assert_allclose(a, b, atol=1e-10)

    def test_orthogonality_against_subspace_members(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            plan = _random_plan(rng)
            pi, _ = project_balanced(plan)
            member = random_balanced_like(rng, plan.sizes, plan.n_rows)
            inner = 0.0
            for theta, proj, l in zip(plan.slabs, pi.slabs, member):
                inner += float(((theta - proj) * (proj - l)).sum())
            assert abs(inner) < 1e-9

    def test_projected_rows_all_sum_to_p(self):
        rng = np.random.default_rng(8)
        plan = _random_plan(rng, M=4, R=3)
        pi, p = project_balanced(plan)
        for slab in pi.slabs:
            np.testing.assert_allclose(slab.sum(axis=1), p, atol=1e-10)


class TestDistBalanced:
    def test_zero_on_the_subspace(self):
        rng = np.random.default_rng(9)
        slabs = random_balanced_like(rng, [2, 3], 3)
        plan = MultiPlan(slabs)
        _, p = project_balanced(plan)
        assert dist_balanced(plan.marginals, p, plan.sizes) < 1e-12

    def test_hand_example(self):
        plan = MultiPlan([np.array([[1.0]]), np.zeros((1, 2))])
        _, p = project_balanced(plan)
        assert dist_balanced(plan.marginals, p, plan.sizes) == pytest.approx(
            np.sqrt(1 / 3), abs=1e-13
        )

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(10)
        plan = _random_plan(rng)
        _, p = project_balanced(plan)
        d1 = dist_balanced(plan.marginals, p, plan.sizes)
        c = 3.7
        scaled = MultiPlan([c * s for s in plan.slabs])
        _, p_c = project_balanced(scaled)
        d2 = dist_balanced(scaled.marginals, p_c, scaled.sizes)
        assert d2 == pytest.approx(c * d1, rel=1e-12)

    def test_equals_frobenius_distance_to_projection(self):
        rng = np.random.default_rng(12)
        for _ in range(40):
            plan = _random_plan(rng)
            pi, p = project_balanced(plan)
            frob = np.sqrt(
                sum(float(((a - b) ** 2).sum()) for a, b in zip(pi.slabs, plan.slabs))
            )
            assert dist_balanced(plan.marginals, p, plan.sizes) == pytest.approx(
                frob, abs=1e-10
            )


class TestMultiPlan:
    def test_marginals_cached_on_construction(self):
        slabs = [np.arange(6.0).reshape(2, 3), np.ones((2, 2))]
        plan = MultiPlan(slabs)
        np.testing.assert_allclose(plan.marginals[0], [3.0, 12.0])
        np.testing.assert_allclose(plan.marginals[1], [2.0, 2.0])
        assert plan.marginal_cache_error() == 0.0

    def test_cache_error_detects_drift(self):
        plan = MultiPlan([np.ones((2, 2))])
        plan.marginals[0, 0] += 1.0
        assert plan.marginal_cache_error() == pytest.approx(1.0)
        plan.refresh_marginal(0)
        assert plan.marginal_cache_error() == 0.0

    def test_copy_is_deep(self):
        plan = MultiPlan([np.ones((2, 2))])
        clone = plan.copy()
        clone.slabs[0][0, 0] = 9.0
        assert plan.slabs[0][0, 0] == 1.0

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ValueError):
            MultiPlan([np.ones((2, 2)), np.ones((3, 2))])
        with pytest.raises(ValueError):
            MultiPlan([])
        with pytest.raises(ValueError):
            MultiPlan([np.ones((2, 2))], marginals=np.zeros((2, 2)))
