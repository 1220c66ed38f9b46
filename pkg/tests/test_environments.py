import numpy as np
import pytest

from impatient.environments import (
    CensoredTrace,
    DelaySchedule,
    SyntheticEnvSpec,
    TraceDataset,
    binary_trace,
    censor,
    gen_binary_traces,
    make_synthetic,
    make_two_outcome,
    read_traces_csv,
    replay_sample,
    rotate_actions,
    sample_outcomes,
    write_traces_csv,
)


class TestSyntheticSpec:
    def test_alpha_zero_identity(self):
        spec = SyntheticEnvSpec(alpha=0.0, j_outcomes=25)
        np.testing.assert_array_equal(spec.sigma1(), np.eye(25))
        assert spec.reward_scale == pytest.approx(5.0)

    def test_information_regime_presets_accepted(self):
        for alpha in (0.1, 0.4, 0.8):
            SyntheticEnvSpec(alpha=alpha)

    def test_alpha_range_rejected(self):
        with pytest.raises(ValueError):
            SyntheticEnvSpec(alpha=1.0)
        with pytest.raises(ValueError):
            SyntheticEnvSpec(alpha=-0.1)

    def test_sigma1_eigenvalues(self):
        spec = SyntheticEnvSpec(alpha=0.4, j_outcomes=10)
        eigs = np.sort(np.linalg.eigvalsh(spec.sigma1()))
        low = 1 - 0.4**2
        np.testing.assert_allclose(eigs[:-1], low, atol=1e-12)
        assert eigs[-1] == pytest.approx(low + 0.4**2 * 10)

    def test_mean_reward_unit_variance(self):
        for alpha in (0.1, 0.4, 0.8):
            spec = SyntheticEnvSpec(alpha=alpha, j_outcomes=25)
            r1 = np.ones(25) / spec.reward_scale
            assert r1 @ spec.sigma1() @ r1 == pytest.approx(1.0, abs=1e-12)


class TestMakeSynthetic:
    def test_structure(self):
        spec = SyntheticEnvSpec(alpha=0.8, j_outcomes=25, batch_size=10, num_arms=20)
        prior, arms, reward, delays = make_synthetic(spec, np.random.default_rng(0))
        assert len(arms) == 20
        assert reward.r0 == 0.0
        np.testing.assert_array_equal(delays.delays, np.arange(25))
        assert delays.d_max == 24
        np.testing.assert_array_equal(prior.mu1, np.zeros(25))
        np.testing.assert_allclose(prior.v, 10.0 * np.eye(25))

    def test_r_bar_recomputable(self):
        spec = SyntheticEnvSpec(alpha=0.4, j_outcomes=5, num_arms=7)
        _, arms, reward, _ = make_synthetic(spec, np.random.default_rng(1))
        for arm in arms:
            assert arm.r_bar == pytest.approx(float(reward.of(arm.theta)), abs=1e-12)

    def test_two_outcome_clips_perfect_correlation(self):
        prior, arms, reward, delays = make_two_outcome(
            1.0, 1.0, d_max=10, num_arms=3, rng=np.random.default_rng(2)
        )
        assert delays.d_max == 10
        assert np.all(np.linalg.eigvalsh(prior.sigma1) > 0)
        np.testing.assert_array_equal(reward.r1, [0.0, 1.0])


class TestSampleOutcomes:
    def test_zero_count(self):
        spec = SyntheticEnvSpec(alpha=0.0, j_outcomes=3, num_arms=1)
        _, arms, _, _ = make_synthetic(spec, np.random.default_rng(0))
        out = sample_outcomes(arms[0], np.eye(3), 0, np.random.default_rng(0))
        assert out.shape == (0, 3)

    def test_tiny_noise_recovers_theta(self):
        spec = SyntheticEnvSpec(alpha=0.0, j_outcomes=4, num_arms=1)
        _, arms, _, _ = make_synthetic(spec, np.random.default_rng(3))
        out = sample_outcomes(arms[0], 1e-12 * np.eye(4), 5, np.random.default_rng(4))
        np.testing.assert_allclose(out, np.tile(arms[0].theta, (5, 1)), atol=1e-5)

    def test_monte_carlo_mean(self):
        spec = SyntheticEnvSpec(alpha=0.0, j_outcomes=3, num_arms=1)
        _, arms, _, _ = make_synthetic(spec, np.random.default_rng(5))
        v = np.diag([1.0, 2.0, 0.5])
        n = 10**5
        out = sample_outcomes(arms[0], v, n, np.random.default_rng(6))
        band = 4.0 * np.sqrt(np.diag(v)) / np.sqrt(n)
        np.testing.assert_array_less(np.abs(out.mean(axis=0) - arms[0].theta), band)


class TestReplay:
    def make_dataset(self):
        return TraceDataset(
            arms={
                0: ("z0", np.array([[1.0, 2.0]])),
                1: ("z0", np.array([[0.0, 0.0], [1.0, 1.0]])),
            }
        )

    def test_single_trace_always(self):
        ds = self.make_dataset()
        rng = np.random.default_rng(0)
        for _ in range(10):
            np.testing.assert_array_equal(replay_sample(ds, 0, rng), [1.0, 2.0])

    def test_uniformity(self):
        ds = self.make_dataset()
        rng = np.random.default_rng(7)
        hits = sum(replay_sample(ds, 1, rng)[0] for _ in range(10**5))
        assert abs(hits / 10**5 - 0.5) < 0.01

    def test_unknown_arm(self):
        with pytest.raises(KeyError):
            replay_sample(self.make_dataset(), 99, np.random.default_rng(0))


class TestBinaryTraces:
    def test_first_day_always_engaged(self):
        ds = gen_binary_traces(10, 20, 30, np.random.default_rng(8))
        for arm_id in ds.arm_ids:
            assert np.all(ds.traces_of(arm_id)[:, 0] == 1.0)

    def test_rewards_in_range(self):
        ds = gen_binary_traces(5, 50, 60, np.random.default_rng(9))
        for arm_id in ds.arm_ids:
            totals = ds.traces_of(arm_id).sum(axis=1)
            assert totals.min() >= 1.0 and totals.max() <= 60.0

    def test_retention_orders_mean_reward(self):
        rng = np.random.default_rng(10)
        low = np.array([binary_trace(0.05, 0.0125, 60, rng).sum() for _ in range(10**4)])
        high = np.array([binary_trace(0.9, 0.225, 60, rng).sum() for _ in range(10**4)])
        assert high.mean() > low.mean() + 5.0

    def test_classes_label_arms(self):
        ds = gen_binary_traces(6, 5, 10, np.random.default_rng(11), num_classes=2)
        assert {ds.class_of(a) for a in ds.arm_ids} == {"z0", "z1"}


class TestRotation:
    def test_basic_rotation(self):
        active = [(0, 0), (0, 1), (0, 2)]
        new_active, reservoir = rotate_actions(active, [7], t=4)
        ids = [a for _, a in new_active]
        assert 0 not in ids and 7 in ids and len(ids) == 3
        assert reservoir == []

    def test_exhausted_reservoir(self):
        with pytest.raises(RuntimeError, match="exhausted"):
            rotate_actions([(0, 0)], [], t=1)

    def test_tie_break_lowest_id(self):
        new_active, _ = rotate_actions([(0, 5), (0, 2)], [9], t=3)
        assert [a for _, a in new_active] == [5, 9]


class TestCensoring:
    def test_spec_example(self):
        delays = DelaySchedule(delays=np.array([0, 1, 2]))
        trace = CensoredTrace(user_id=0, arm_id=0, tau_u=3, outcomes=np.array([1.0, 2.0, 3.0]))
        mask = trace.observed_through(5, delays)
        np.testing.assert_array_equal(mask, [True, True, False])
        assert censor(trace, 5, delays) == [(2, 2.0)]

    def test_nothing_visible_at_assignment(self):
        delays = DelaySchedule(delays=np.array([0, 1]))
        trace = CensoredTrace(user_id=0, arm_id=0, tau_u=4, outcomes=np.array([1.0, 2.0]))
        assert not trace.observed_through(4, delays).any()

    def test_pure_delay_all_at_once(self):
        delays = DelaySchedule(delays=np.array([3, 3, 3]))
        trace = CensoredTrace(user_id=0, arm_id=0, tau_u=1, outcomes=np.array([1.0, 2.0, 3.0]))
        assert censor(trace, 5, delays) == [(1, 1.0), (2, 2.0), (3, 3.0)]
        assert not trace.observed_through(4, delays).any()
        assert trace.observed_through(5, delays).all()

    def test_mask_monotone_in_t(self):
        rng = np.random.default_rng(12)
        delays = DelaySchedule(delays=rng.integers(0, 6, size=5))
        trace = CensoredTrace(user_id=0, arm_id=0, tau_u=2, outcomes=rng.standard_normal(5))
        prev = np.zeros(5, dtype=bool)
        for t in range(2, 12):
            mask = trace.observed_through(t, delays)
            assert np.all(prev <= mask)
            prev = mask


class TestEnvironmentInterface:
    def test_all_environments_share_sampling_interface(self):
        from impatient.environments import (
            ReplayEnvironment,
            RollingEnvironment,
            SyntheticEnvironment,
        )

        methods = ("selectable_arm_ids", "batch_outcomes", "mean_reward",
                   "optimal_arm", "end_of_batch")
        for cls in (SyntheticEnvironment, ReplayEnvironment, RollingEnvironment):
            for name in methods:
                assert callable(getattr(cls, name))


class TestTraceCsv:
    def test_round_trip(self, tmp_path):
        ds = gen_binary_traces(4, 3, 5, np.random.default_rng(13), num_classes=2)
        path = tmp_path / "traces.csv"
        write_traces_csv(ds, path)
        loaded = read_traces_csv(path)
        assert loaded.arm_ids == ds.arm_ids
        for arm_id in ds.arm_ids:
            assert loaded.class_of(arm_id) == ds.class_of(arm_id)
            np.testing.assert_array_equal(loaded.traces_of(arm_id), ds.traces_of(arm_id))

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("foo,z,y1\n1,a,2.0\n")
        with pytest.raises(ValueError, match="header"):
            read_traces_csv(path)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("arm_id,z,y1,y2\n1,a,2.0,3.0\n1,a,oops,3.0\n")
        with pytest.raises(ValueError, match="line 3"):
            read_traces_csv(path)

    def test_context_columns_round_trip(self, tmp_path):
        arms = {0: ("z0", np.array([[1.0, 0.0], [0.5, 0.5]]))}
        contexts = {0: np.array([[0.1, 0.2], [0.3, 0.4]])}
        ds = TraceDataset(arms=arms, contexts=contexts)
        path = tmp_path / "ctx.csv"
        write_traces_csv(ds, path)
        loaded = read_traces_csv(path)
        np.testing.assert_array_equal(loaded.contexts[0], contexts[0])
