import numpy as np
import pytest

from sqoglab import envs, tabular, verify
from sqoglab.tabular import SboSpec, make_sbo_spec


def _mdp(n_states=5, n_actions=3, gamma=0.9, seed=0):
    rng = np.random.default_rng(seed)
    return verify.random_mdp(n_states, n_actions, gamma, rng), verify.random_policy(
        n_states, n_actions, rng
    )


def _spec(n_states=5, n_actions=3, seed=0):
    return verify.full_region_spec(n_states, n_actions, np.random.default_rng(seed))


def _naive_backup(mdp, policy, q):
    out = np.empty_like(q)
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            acc = 0.0
            for s2 in range(mdp.n_states):
                if mdp.terminal[s2]:
                    continue
                ev = sum(policy[s2, a2] * q[s2, a2] for a2 in range(mdp.n_actions))
                acc += mdp.transition[s, a, s2] * ev
            out[s, a] = mdp.reward[s, a] + mdp.gamma * acc
    return out


def _oracle_g1(q, spec):
    out = q.copy()
    for s in range(q.shape[0]):
        for a in range(q.shape[1]):
            if not spec.in_sample[s, a] and spec.chn[s, a]:
                out[s, a] = q[s, spec.neighbor[s, a]]
    return out


def _oracle_sbo(q, spec, mdp, policy):
    """Per-entry case analysis, written independently of the vectorized path."""
    smoothed = _oracle_g1(q, spec)
    backed = _naive_backup(mdp, policy, smoothed)
    mid = np.where(spec.in_sample, backed, q)
    return _oracle_g1(mid, spec)


class TestEmpiricalBellman:
    def test_unit_reward_from_zero_q(self):
        mdp, policy = _mdp()
        mdp = envs.TabularMdp(
            transition=mdp.transition,
            reward=np.ones_like(mdp.reward),
            gamma=mdp.gamma,
            terminal=mdp.terminal,
            r_max=1.0,
        )
        out = tabular.empirical_bellman(np.zeros((5, 3)), mdp, policy)
        np.testing.assert_allclose(out, 1.0)

    def test_gamma_zero_returns_rewards(self):
        mdp, policy = _mdp(gamma=0.0)
        q = np.random.default_rng(1).normal(size=(5, 3))
        np.testing.assert_array_equal(tabular.empirical_bellman(q, mdp, policy), mdp.reward)

    def test_matches_triple_loop_oracle(self):
        mdp, policy = _mdp(seed=3)
        q = np.random.default_rng(2).normal(size=(5, 3))
        got = tabular.empirical_bellman(q, mdp, policy)
        np.testing.assert_allclose(got, _naive_backup(mdp, policy, q), atol=1e-12)


class TestG1:
    def test_identity_when_everything_in_sample(self):
        spec = make_sbo_spec(
            np.ones((3, 2), dtype=bool), np.ones((3, 2), dtype=bool), np.arange(2.0)[:, None]
        )
        q = np.random.default_rng(0).normal(size=(3, 2))
        np.testing.assert_array_equal(tabular.g1_apply(q, spec), q)

    def test_single_ood_entry_takes_neighbor_value(self):
        in_sample = np.array([[True, False], [True, True]])
        spec = make_sbo_spec(in_sample, np.ones((2, 2), dtype=bool), np.arange(2.0)[:, None])
        q = np.array([[3.7, -1.0], [0.5, 0.2]])
        out = tabular.g1_apply(q, spec)
        assert out[0, 1] == 3.7
        assert out[0, 0] == 3.7 and out[1, 0] == 0.5 and out[1, 1] == 0.2

    def test_matches_per_entry_oracle(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            spec = _spec(seed=trial)
            q = rng.normal(size=(5, 3))
            np.testing.assert_array_equal(tabular.g1_apply(q, spec), _oracle_g1(q, spec))

    def test_idempotent(self):
        rng = np.random.default_rng(8)
        for trial in range(20):
            spec = _spec(seed=100 + trial)
            q = rng.normal(size=(5, 3))
            once = tabular.g1_apply(q, spec)
            np.testing.assert_array_equal(tabular.g1_apply(once, spec), once)


class TestB2AndSbo:
    def test_all_in_sample_equals_empirical_bellman(self):
        mdp, policy = _mdp()
        spec = make_sbo_spec(
            np.ones((5, 3), dtype=bool), np.ones((5, 3), dtype=bool), np.arange(3.0)[:, None]
        )
        q = np.random.default_rng(0).normal(size=(5, 3))
        expected = tabular.empirical_bellman(q, mdp, policy)
        np.testing.assert_allclose(tabular.b2_apply(q, spec, mdp, policy), expected, atol=1e-14)
        np.testing.assert_allclose(tabular.sbo_apply(q, spec, mdp, policy), expected, atol=1e-14)

    def test_all_ood_is_identity_for_b2(self):
        mdp, policy = _mdp()
        # one in-sample action per state (required), everything else OOD
        in_sample = np.zeros((5, 3), dtype=bool)
        in_sample[:, 0] = True
        spec = make_sbo_spec(in_sample, np.ones((5, 3), dtype=bool), np.arange(3.0)[:, None])
        q = np.random.default_rng(1).normal(size=(5, 3))
        out = tabular.b2_apply(q, spec, mdp, policy)
        np.testing.assert_array_equal(out[~spec.in_sample], q[~spec.in_sample])

    def test_mixed_mask_matches_oracle(self):
        rng = np.random.default_rng(9)
        for trial in range(20):
            mdp, policy = _mdp(seed=trial)
            spec = _spec(seed=trial)
            q = rng.normal(size=(5, 3))
            np.testing.assert_allclose(
                tabular.sbo_apply(q, spec, mdp, policy), _oracle_sbo(q, spec, mdp, policy), atol=1e-12
            )

    def test_composition_definition(self):
        mdp, policy = _mdp(seed=2)
        spec = _spec(seed=2)
        q = np.random.default_rng(3).normal(size=(5, 3))
        np.testing.assert_array_equal(
            tabular.sbo_apply(q, spec, mdp, policy),
            tabular.g1_apply(tabular.b2_apply(q, spec, mdp, policy), spec),
        )

    def test_fixed_point_is_stationary(self):
        mdp, policy = _mdp(seed=4)
        spec = _spec(seed=4)
        q_star, _ = tabular.fixed_point(np.zeros((5, 3)), spec, mdp, policy, tol=1e-12)
        moved = tabular.sbo_apply(q_star, spec, mdp, policy)
        assert np.max(np.abs(moved - q_star)) <= 1e-8


class TestFixedPoint:
    def test_starting_at_fixed_point_converges_immediately(self):
        mdp, policy = _mdp(seed=6)
        spec = _spec(seed=6)
        q_star, _ = tabular.fixed_point(np.zeros((5, 3)), spec, mdp, policy, tol=1e-12)
        again, iters = tabular.fixed_point(q_star, spec, mdp, policy, tol=1e-8)
        assert iters == 1
        np.testing.assert_allclose(again, q_star, atol=1e-10)

    def test_geometric_residual_decay(self):
        mdp, policy = _mdp(seed=7, gamma=0.9)
        spec = _spec(seed=7)
        q = np.random.default_rng(0).uniform(-5, 5, size=(5, 3))
        residuals = []
        for _ in range(60):
            q_next = tabular.sbo_apply(q, spec, mdp, policy)
            residuals.append(float(np.max(np.abs(q_next - q))))
            q = q_next
        for r_prev, r_next in zip(residuals, residuals[1:]):
            assert r_next <= 0.9 * r_prev + 1e-12

    def test_uniqueness_across_initializations(self):
        mdp, policy = _mdp(seed=8)
        spec = _spec(seed=8)
        rng = np.random.default_rng(10)
        tol = 1e-8
        q1, _ = tabular.fixed_point(rng.uniform(-10, 10, size=(5, 3)), spec, mdp, policy, tol=tol)
        q2, _ = tabular.fixed_point(rng.uniform(-10, 10, size=(5, 3)), spec, mdp, policy, tol=tol)
        assert np.max(np.abs(q1 - q2)) <= 2 * tol / (1 - 0.9)

    def test_max_iter_exceeded_reports_residual(self):
        mdp, policy = _mdp(seed=9)
        spec = _spec(seed=9)
        with pytest.raises(tabular.FixedPointError) as err:
            tabular.fixed_point(np.full((5, 3), 50.0), spec, mdp, policy, tol=1e-12, max_iter=2)
        assert err.value.residual > 0

    def test_policy_support_outside_region_rejected(self):
        mdp, policy = _mdp(seed=1)
        chn = np.ones((5, 3), dtype=bool)
        chn[0, 2] = False
        in_sample = np.ones((5, 3), dtype=bool)
        in_sample[0, 2] = False
        spec = make_sbo_spec(in_sample, chn, np.arange(3.0)[:, None])
        with pytest.raises(ValueError, match="support"):
            tabular.fixed_point(np.zeros((5, 3)), spec, mdp, policy)


class TestContraction:
    def test_constant_shift_contracts_exactly_gamma(self):
        mdp, policy = _mdp(seed=11, gamma=0.9)
        spec = _spec(seed=11)
        q = np.random.default_rng(1).normal(size=(5, 3))
        ratio = tabular.contraction_ratio(q, q + 2.5, spec, mdp, policy)
        assert ratio == pytest.approx(0.9, abs=1e-12)

    def test_gamma_zero_gives_zero_ratio(self):
        mdp, policy = _mdp(seed=12, gamma=0.0)
        spec = _spec(seed=12)
        rng = np.random.default_rng(2)
        ratio = tabular.contraction_ratio(
            rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), spec, mdp, policy
        )
        assert ratio == 0.0

    def test_random_sweep_below_gamma(self):
        mdp, policy = _mdp(seed=13, gamma=0.9)
        spec = _spec(seed=13)
        ratios = verify.contraction_sweep(mdp, policy, spec, 200, np.random.default_rng(3))
        assert float(ratios.max()) <= 0.9 + 1e-9

    def test_identical_tables_rejected(self):
        mdp, policy = _mdp(seed=14)
        spec = _spec(seed=14)
        q = np.zeros((5, 3))
        with pytest.raises(ValueError):
            tabular.contraction_ratio(q, q, spec, mdp, policy)


class TestOodUpdateStep:
    def _spec_with_ood(self):
        in_sample = np.array([[True, False, True]])
        chn = np.ones((1, 3), dtype=bool)
        return make_sbo_spec(in_sample, chn, np.arange(3.0)[:, None])

    def test_no_change_at_target(self):
        spec = self._spec_with_ood()
        q = np.array([[2.0, 2.0, 5.0]])  # neighbor of action 1 is action 0
        out = tabular.ood_update_step(q, (0, 1), spec, lr=0.2)
        np.testing.assert_array_equal(out, q)

    def test_quarter_step_arithmetic(self):
        spec = self._spec_with_ood()
        q = np.array([[1.0, 0.0, 9.0]])
        out = tabular.ood_update_step(q, (0, 1), spec, lr=0.25)
        assert out[0, 1] == pytest.approx(0.5)

    def test_in_sample_pair_rejected(self):
        spec = self._spec_with_ood()
        with pytest.raises(ValueError, match="in-sample"):
            tabular.ood_update_step(np.zeros((1, 3)), (0, 0), spec, lr=0.1)

    def test_learning_rate_bounds(self):
        spec = self._spec_with_ood()
        with pytest.raises(ValueError):
            tabular.ood_update_step(np.zeros((1, 3)), (0, 1), spec, lr=0.3)

    def test_monotone_error_decrease_on_premise_instances(self):
        cases = verify.ood_update_cases(40, np.random.default_rng(15))
        assert all(c.decreased for c in cases)

    def test_sign_preserved(self):
        spec = self._spec_with_ood()
        q = np.array([[1.0, 0.0, 9.0]])
        out = tabular.ood_update_step(q, (0, 1), spec, lr=0.25)
        assert (1.0 - out[0, 1]) > 0  # still below the target, no overshoot


class TestInsampleEffectGap:
    def test_zero_when_all_successors_in_sample(self):
        mdp, policy = _mdp(seed=16)
        spec = make_sbo_spec(
            np.ones((5, 3), dtype=bool), np.ones((5, 3), dtype=bool), np.arange(3.0)[:, None]
        )
        q = np.random.default_rng(4).normal(size=(5, 3))
        assert tabular.insample_effect_gap(q, spec, mdp, policy) == 0.0

    def test_delta_ladder_monotone_and_bounded(self):
        points = verify.insample_gap_ladder()
        gaps = [p.gap for p in points]
        assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
        for p in points:
            assert p.gap <= p.bound + 1e-12

    def test_bounded_by_gamma_times_neighbor_spread(self):
        rng = np.random.default_rng(17)
        for trial in range(10):
            mdp, policy = _mdp(seed=trial, gamma=0.9)
            spec = _spec(seed=trial + 50)
            q = rng.normal(size=(5, 3))
            gap = tabular.insample_effect_gap(q, spec, mdp, policy)
            s_idx, a_idx = np.nonzero(spec.ood_in_region)
            spread = float(np.max(np.abs(q[s_idx, a_idx] - q[s_idx, spec.neighbor[s_idx, a_idx]])))
            assert gap <= 0.9 * spread + 1e-12


class TestSboSpecValidation:
    def test_neighbor_must_be_in_sample_at_same_state(self):
        in_sample = np.array([[True, False], [False, True]])
        chn = np.ones((2, 2), dtype=bool)
        neighbor = np.array([[-1, 0], [1, -1]])
        good = SboSpec(
            in_sample=in_sample,
            chn=chn,
            neighbor=neighbor,
            action_coords=np.arange(2.0)[:, None],
            delta_neighbor=1.0,
        )
        assert good.delta_neighbor == 1.0
        bad_neighbor = np.array([[-1, 1], [1, -1]])  # points at an OOD action
        with pytest.raises(ValueError, match="in-sample"):
            SboSpec(
                in_sample=in_sample,
                chn=chn,
                neighbor=bad_neighbor,
                action_coords=np.arange(2.0)[:, None],
                delta_neighbor=1.0,
            )

    def test_neighbor_map_must_cover_exactly_ood_region(self):
        in_sample = np.array([[True, True]])
        chn = np.ones((1, 2), dtype=bool)
        neighbor = np.array([[0, -1]])  # defined on an in-sample entry
        with pytest.raises(ValueError, match="exactly"):
            SboSpec(
                in_sample=in_sample,
                chn=chn,
                neighbor=neighbor,
                action_coords=np.arange(2.0)[:, None],
                delta_neighbor=1.0,
            )

    def test_delta_bound_enforced(self):
        in_sample = np.array([[True, False]])
        chn = np.ones((1, 2), dtype=bool)
        neighbor = np.array([[-1, 0]])
        with pytest.raises(ValueError, match="delta"):
            SboSpec(
                in_sample=in_sample,
                chn=chn,
                neighbor=neighbor,
                action_coords=np.array([[0.0], [5.0]]),
                delta_neighbor=1.0,
            )

    def test_state_without_in_sample_action_rejected_by_builder(self):
        in_sample = np.zeros((1, 2), dtype=bool)
        chn = np.ones((1, 2), dtype=bool)
        with pytest.raises(ValueError, match="no in-sample"):
            make_sbo_spec(in_sample, chn, np.arange(2.0)[:, None])


class TestNeighborTargetTriangle:
    def test_estimate_is_within_epsilon_of_true_value(self):
        # in-sample estimates eps/2-accurate + neighbor eps/2-close in true value
        # imply the neighbor estimate is an eps-accurate OOD target
        rng = np.random.default_rng(18)
        for trial in range(25):
            mdp, policy = _mdp(seed=trial, gamma=0.9)
            q_true = envs.exact_policy_q(mdp, policy)
            s = int(rng.integers(0, 5))
            a_ood = int(rng.integers(0, 3))
            in_sample = np.ones((5, 3), dtype=bool)
            in_sample[s, a_ood] = False
            spec = make_sbo_spec(in_sample, np.ones((5, 3), dtype=bool), np.arange(3.0)[:, None])
            nb = int(spec.neighbor[s, a_ood])
            eps = max(2.001 * abs(float(q_true[s, a_ood] - q_true[s, nb])), 0.01)
            q_hat = q_true + rng.uniform(-0.499 * eps, 0.499 * eps, size=(5, 3))
            assert abs(q_true[s, a_ood] - q_hat[s, nb]) < eps
