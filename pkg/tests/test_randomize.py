"""Randomization suite: identity at zero, bounds, distributions, determinism."""

import numpy as np
import pytest

from vtinsert.env import EpisodeConfig, InsertionEnv
from vtinsert.errors import ConfigError, PreconditionError
from vtinsert.geom import DeltaPose, Pose, quat_distance
from vtinsert.randomize import (RandomizationConfig, RandomizationState,
                                DelayQueue, MaskHistory, delay_action,
                                perturb_socket, scale_action, augment_tactile,
                                corrupt_mask, augment_cloud, randomize_camera)
from vtinsert.sensing import (CameraModel, PointCloud, SegMask, TactileImage,
                              LABEL_BACKGROUND, LABEL_OBJECT, LABEL_SOCKET,
                              look_at)


def zero_cfg():
    return RandomizationConfig.zeroed()


class TestConfig:
    def test_defaults_validate(self):
        RandomizationConfig().validate()

    def test_action_delay_bound(self):
        with pytest.raises(ConfigError, match="10"):
            RandomizationConfig(max_action_delay=11).validate()
        RandomizationConfig(max_action_delay=10).validate()

    def test_probability_range(self):
        with pytest.raises(ConfigError):
            RandomizationConfig(socket_perturb_prob=1.5).validate()

    def test_scale_range_bounds(self):
        with pytest.raises(ConfigError):
            RandomizationConfig(action_scale_range=(0.0, 1.0)).validate()
        with pytest.raises(ConfigError):
            RandomizationConfig(action_scale_range=(1.2, 0.8)).validate()

    def test_zeroed_validates(self):
        zero_cfg().validate()


class TestDelayQueue:
    def test_zero_delay_is_identity(self):
        q = DelayQueue(0, np.random.default_rng(0))
        for t in range(20):
            a = DeltaPose.from_vector(np.full(6, float(t)))
            out = delay_action(q, a, t)
            assert np.array_equal(out.as_vector(), a.as_vector())

    def test_fixed_delay_trace(self):
        class Fixed:
            def integers(self, lo, hi):
                return 3
        q = DelayQueue(10, Fixed())
        seen = {}
        for t in range(30):
            a = DeltaPose.from_vector(np.full(6, float(t + 1)))
            out = q_pop = delay_action(q, a, t)
            if out.translation[0] != 0:
                seen[t] = out.translation[0]
        # action issued at t (value t+1) emerges at exactly t+3
        for t, v in seen.items():
            assert v == t - 3 + 1

    def test_never_reorders_and_never_exceeds_max(self):
        rng = np.random.default_rng(2)
        q = DelayQueue(10, rng)
        emerged = []
        for t in range(4000):
            out = delay_action(q, DeltaPose.from_vector(np.full(6, float(t + 1))), t)
            if out.translation[0] != 0:
                issued = int(out.translation[0]) - 1
                emerged.append(issued)
                assert t - issued <= 10
        assert emerged == sorted(emerged)
        assert len(emerged) > 3000

    def test_sampled_delays_within_bound(self):
        rng = np.random.default_rng(3)
        q = DelayQueue(10, rng)
        for t in range(2000):
            q.push(DeltaPose.zero(), t)
            release, _ = q.pending[-1]
            assert release - t <= 10
            q.pop_due(t)

    def test_monotone_step_precondition(self):
        q = DelayQueue(5, np.random.default_rng(0))
        q.push(DeltaPose.zero(), 4)
        with pytest.raises(PreconditionError):
            q.push(DeltaPose.zero(), 4)


def make_state(seed=0):
    env = InsertionEnv(EpisodeConfig(shapes=("cylinder",)))
    return env.reset(seed=seed)


class TestPerturbSocket:
    def test_probability_zero_unchanged(self):
        s = make_state()
        out = perturb_socket(s, zero_cfg(), np.random.default_rng(0))
        assert out is s

    def test_forced_branch_within_bounds(self):
        s = make_state()
        cfg = RandomizationConfig(socket_perturb_prob=1.0)
        out = perturb_socket(s, cfg, np.random.default_rng(1))
        dp = out.socket.pose.position - s.socket.pose.position
        assert np.abs(dp[:2]).max() <= cfg.socket_perturb_translation + 1e-12
        assert dp[2] == 0.0
        assert quat_distance(out.socket.pose.orientation,
                             s.socket.pose.orientation) > 0

    def test_bernoulli_frequency(self):
        s = make_state()
        cfg = RandomizationConfig(socket_perturb_prob=0.1)
        rng = np.random.default_rng(5)
        fired = sum(perturb_socket(s, cfg, rng) is not s for _ in range(10000))
        assert fired / 10000 == pytest.approx(0.1, abs=0.01)


class TestScaleAction:
    def test_unit_range_identity(self):
        a = DeltaPose.from_vector(np.array([4e-3, 0, 0, 0, 0, 0]))
        cfg = RandomizationConfig(action_scale_range=(1.0, 1.0))
        out = scale_action(a, cfg, np.random.default_rng(0))
        assert out is a

    def test_half_scale(self):
        a = DeltaPose.from_vector(np.array([0.004, 0, 0, 0, 0, 0]))
        out = scale_action(a, zero_cfg(), np.random.default_rng(0), scale=0.5)
        assert np.allclose(out.as_vector(), [0.002, 0, 0, 0, 0, 0], atol=1e-15)

    def test_scaled_never_exceeds_bounds(self):
        mt, mr = 5e-3, np.deg2rad(2.0)
        corners = [np.array([s * mt] * 3 + [s * mr] * 3) for s in (-1.0, 1.0)]
        for v in corners:
            for scale in (0.5, 0.8, 1.0, 1.2, 2.0):
                out = scale_action(DeltaPose.from_vector(v), zero_cfg(),
                                   np.random.default_rng(0), scale=scale,
                                   max_translation=mt, max_rotation=mr)
                assert np.abs(out.translation).max() <= mt + 1e-15
                assert np.abs(out.rotation).max() <= mr + 1e-15


class TestAugmentTactile:
    def test_zero_knobs_identity(self):
        img = TactileImage(np.random.default_rng(0).uniform(-1, 1, (32, 32)))
        out = augment_tactile(img, zero_cfg(), np.random.default_rng(1))
        assert out is img

    def test_lighting_offset_applied(self):
        img = TactileImage(np.zeros((16, 16)))

        class Uniform:
            def uniform(self, lo, hi):
                return 0.1
        cfg = zero_cfg().replace(tactile_lighting_range=0.1)
        out = augment_tactile(img, cfg, Uniform())
        assert np.allclose(out.values, 0.1, atol=1e-15)

    def test_noise_std_matches(self):
        cfg = zero_cfg().replace(tactile_noise_sigma=0.05)
        rng = np.random.default_rng(7)
        img = TactileImage(np.zeros((32, 32)))
        samples = np.concatenate([
            augment_tactile(img, cfg, rng).values.ravel() for _ in range(10)])
        assert 0.04 < samples.std() < 0.06

    def test_clamped_range(self):
        cfg = zero_cfg().replace(tactile_noise_sigma=2.0)
        img = TactileImage(np.zeros((32, 32)))
        out = augment_tactile(img, cfg, np.random.default_rng(0))
        assert out.values.min() >= -1.0
        assert out.values.max() <= 1.0


def object_mask(n=64, block=16):
    labels = np.zeros((n, n), dtype=np.uint8)
    labels[10:10 + block, 20:20 + block] = LABEL_OBJECT
    labels[40:50, 5:15] = LABEL_SOCKET
    return SegMask(labels)


class TestCorruptMask:
    def test_zero_knobs_identity(self):
        m = object_mask()
        out = corrupt_mask(m, zero_cfg(), np.random.default_rng(0))
        assert out is m

    def test_erase_fraction_bounded(self):
        cfg = zero_cfg().replace(visibility_mask_fraction=0.15)
        for seed in range(40):
            m = object_mask()
            before = int((m.labels == LABEL_OBJECT).sum())
            out = corrupt_mask(m, cfg, np.random.default_rng(seed))
            after = int((out.labels == LABEL_OBJECT).sum())
            assert before - after <= int(0.15 * before)

    def test_erased_patch_is_contiguous_square_region(self):
        cfg = zero_cfg().replace(visibility_mask_fraction=0.15)
        m = object_mask()
        out = corrupt_mask(m, cfg, np.random.default_rng(3))
        gone = (m.labels == LABEL_OBJECT) & (out.labels == LABEL_BACKGROUND)
        if gone.any():
            vs, us = np.nonzero(gone)
            side = max(vs.max() - vs.min(), us.max() - us.min()) + 1
            assert side**2 <= 4 * gone.sum() + 8  # compact, not scattered

    def test_staleness_trace(self):
        cfg = zero_cfg().replace(seg_update_delay=2)
        hist = MaskHistory(cfg.seg_update_delay)
        frames = []
        for t in range(6):
            labels = np.full((8, 8), t, dtype=np.uint8)
            frames.append(SegMask(labels))
            out = corrupt_mask(frames[-1], cfg, np.random.default_rng(0),
                               t=t, history=hist)
            expected = frames[max(t - 2, 0)]
            assert np.array_equal(out.labels, expected.labels)

    def test_pixel_flips_change_labels(self):
        cfg = zero_cfg().replace(pixel_flip_prob=0.5)
        m = object_mask()
        out = corrupt_mask(m, cfg, np.random.default_rng(1))
        changed = (out.labels != m.labels).mean()
        assert 0.3 < changed < 0.7
        assert set(np.unique(out.labels)) <= {0, 1, 2}


class TestAugmentCloud:
    def test_zero_knobs_identity(self):
        c = PointCloud(np.random.default_rng(0).normal(size=(64, 3)))
        out = augment_cloud(c, zero_cfg(), np.random.default_rng(1))
        assert out is c

    def test_cardinality_preserved(self):
        cfg = RandomizationConfig()
        rng = np.random.default_rng(2)
        c = PointCloud(rng.normal(size=(128, 3)))
        for _ in range(20):
            out = augment_cloud(c, cfg, rng)
            assert out.points.shape == (128, 3)
            assert np.isfinite(out.points).all()

    def test_jitter_displacement_statistics(self):
        sigma = 1e-3
        cfg = zero_cfg().replace(cloud_jitter_sigma=sigma)
        rng = np.random.default_rng(3)
        c = PointCloud(np.zeros((20000, 3)))
        out = augment_cloud(c, cfg, rng)
        disp = np.linalg.norm(out.points, axis=1).mean()
        # mean norm of an isotropic Gaussian: sigma * sqrt(2) * gamma(2)/gamma(1.5)
        expected = sigma * np.sqrt(2) / (np.sqrt(np.pi) / 2)
        assert disp == pytest.approx(expected, rel=0.1)

    def test_eval_gamma_noise_variance(self):
        gamma = 4e-6
        cfg = zero_cfg()
        rng = np.random.default_rng(4)
        c = PointCloud(np.zeros((30000, 3)))
        out = augment_cloud(c, cfg, rng, gamma=gamma)
        assert out.points.var() == pytest.approx(gamma, rel=0.05)

    def test_empty_cloud_untouched(self):
        c = PointCloud(np.zeros((16, 3)), empty=True)
        out = augment_cloud(c, RandomizationConfig(), np.random.default_rng(0))
        assert out is c

    def test_dropout_duplicates_survivors(self):
        cfg = zero_cfg().replace(cloud_dropout_prob=0.5)
        rng = np.random.default_rng(5)
        pts = np.arange(300.0).reshape(100, 3)
        out = augment_cloud(PointCloud(pts), cfg, rng)
        rows = set(map(tuple, pts))
        assert all(tuple(p) in rows for p in out.points)
        assert len(set(map(tuple, out.points))) < 100


class TestRandomizeCamera:
    def make_cam(self):
        return CameraModel.from_fov(np.deg2rad(55),
                                    look_at([0.4, 0.0, 0.4], [0.0, 0.0, 0.0]))

    def test_zero_sigma_identity(self):
        cam = self.make_cam()
        out = randomize_camera(cam, zero_cfg(), np.random.default_rng(0))
        assert out is cam

    def test_fov_clamped_under_large_draws(self):
        cfg = zero_cfg().replace(camera_fov_sigma=np.deg2rad(40))
        cam = self.make_cam()
        rng = np.random.default_rng(1)
        for _ in range(200):
            out = randomize_camera(cam, cfg, rng)
            assert np.deg2rad(20) <= out.fov <= np.deg2rad(120)
            assert out.fx > 0

    def test_same_seed_same_perturbation(self):
        cfg = RandomizationConfig()
        cam = self.make_cam()
        a = randomize_camera(cam, cfg, np.random.default_rng(9))
        b = randomize_camera(cam, cfg, np.random.default_rng(9))
        assert np.array_equal(a.pose.position, b.pose.position)
        assert np.array_equal(a.pose.orientation, b.pose.orientation)
        assert a.fov == b.fov


class TestRandomizationState:
    def test_reproducible_from_seed(self):
        cfg = RandomizationConfig()
        outs = []
        for _ in range(2):
            st = RandomizationState(cfg, seed=42)
            trace = []
            for t in range(50):
                a = DeltaPose.from_vector(np.full(6, 1e-3))
                trace.append(st.process_action(a, t).as_vector())
            outs.append(np.array(trace))
        assert np.array_equal(outs[0], outs[1])

    def test_episode_scale_constant_within_episode(self):
        st = RandomizationState(RandomizationConfig(), seed=0)
        s1 = st.action_scale
        assert 0.8 <= s1 <= 1.2
        st.begin_episode()
        assert 0.8 <= st.action_scale <= 1.2

    def test_frozen_suite_is_passthrough(self):
        st = RandomizationState(RandomizationConfig.zeroed(), seed=1)
        for t in range(10):
            a = DeltaPose.from_vector(np.full(6, 2e-4 * t))
            out = st.process_action(a, t)
            assert np.array_equal(out.as_vector(), a.as_vector())
