"""Student architecture, dataset windows, BC/DAgger training contracts."""

import numpy as np
import pytest

from vtinsert.distill import (AggregatedDataset, BetaSchedule, DistillConfig,
                              EpisodeCollector, FeatureHistory, StudentPolicy,
                              StudentSpec, VARIANTS, bc_warmup, dagger_iterate,
                              dataset_geometry, distill_student, eval_loss,
                              load_student, modality_ablation_spec,
                              save_student, student_act, train_mse)
from vtinsert.env import EpisodeConfig
from vtinsert.errors import ConfigError, PreconditionError
from vtinsert.nets import Adam
from vtinsert.randomize import RandomizationConfig
from vtinsert.teacher import TeacherPolicy

ENV_CFG = EpisodeConfig(shapes=("cylinder",), max_steps=40)


def small_spec(variant="visuotactile", **kw):
    base = dict(variant=variant, tactile_resolution=8, cloud_points=8,
                image_size=8, k=3, d_model=16, heads=2, depth=1, ffn_mult=2,
                tactile_dim=8, cloud_feature=8, joint_dim=8, obs_feature=8,
                point_widths=(8, 8), conv_channels=(2, 4))
    base.update(kw)
    return StudentSpec(**base)


def small_teacher(seed=0):
    return TeacherPolicy(ENV_CFG, encoder_hidden=(16,), trunk_hidden=(16, 16),
                         seed=seed)


def random_batch(spec, B, rng, valid=None):
    k = spec.k
    batch = {"obs": rng.uniform(-1, 1, (B, k, spec.obs_dim))}
    if "tactile" in spec.modalities:
        batch["tactile"] = rng.uniform(-1, 1, (B, k, 3, spec.tactile_resolution,
                                                spec.tactile_resolution))
    if "cloud" in spec.modalities:
        batch["object_cloud"] = rng.uniform(-1, 1, (B, k, spec.cloud_points, 3))
        batch["socket_cloud"] = rng.uniform(-1, 1, (B, k, spec.cloud_points, 3))
    if "depth_image" in spec.modalities:
        batch["depth_image"] = rng.uniform(
            -1, 1, (B, k, 2, spec.image_size, spec.image_size))
    if valid is None:
        valid = np.ones((B, k), dtype=bool)
    return batch, valid


class TestStudentSpec:
    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError, match="variant"):
            StudentSpec(variant="audio")

    def test_blind_variants_get_socket_estimate(self):
        assert small_spec("ee").obs_dim == 16
        assert small_spec("tactile").obs_dim == 16
        assert small_spec("visual_pcl").obs_dim == 13
        assert small_spec("visuotactile").obs_dim == 13

    def test_feature_layout_arithmetic(self):
        spec = small_spec("visuotactile")
        assert spec.feature_dim == spec.tactile_dim + spec.joint_dim + spec.obs_feature
        assert small_spec("ee").feature_dim == 8
        assert small_spec("visual_depth").feature_dim == 8 + 8

    def test_ablation_full_set_is_default_architecture(self):
        spec = modality_ablation_spec(small_spec(), {"tactile", "cloud", "obs"})
        assert spec.variant == "visuotactile"
        assert spec == small_spec("visuotactile")

    def test_ablation_obs_only(self):
        assert modality_ablation_spec(small_spec(), {"obs"}).variant == "ee"

    def test_ablation_empty_set_rejected(self):
        with pytest.raises(ConfigError, match="empty"):
            modality_ablation_spec(small_spec(), set())

    def test_ablation_unknown_modality_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            modality_ablation_spec(small_spec(), {"obs", "sonar"})


class TestStudentForward:
    def test_same_history_same_action(self):
        spec = small_spec()
        policy = StudentPolicy(ENV_CFG, spec, seed=1)
        hist = np.random.default_rng(0).uniform(-1, 1, (spec.k, spec.feature_dim))
        a = student_act(policy, hist)
        b = student_act(policy, hist)
        assert np.array_equal(a.as_vector(), b.as_vector())

    def test_actions_within_bounds(self):
        spec = small_spec()
        policy = StudentPolicy(ENV_CFG, spec, seed=1)
        rng = np.random.default_rng(3)
        batch, valid = random_batch(spec, 16, rng)
        act = policy.forward(batch, valid)
        assert np.all(np.abs(act[:, :3]) <= ENV_CFG.max_translation)
        assert np.all(np.abs(act[:, 3:]) <= ENV_CFG.max_rotation)

    def test_zero_head_zero_action(self):
        spec = small_spec()
        policy = StudentPolicy(ENV_CFG, spec, seed=1)
        policy.store.params["tf.head_w"][:] = 0.0
        policy.store.params["tf.head_b"][:] = 0.0
        hist = np.random.default_rng(0).uniform(-1, 1, (spec.k, spec.feature_dim))
        assert np.array_equal(student_act(policy, hist).as_vector(), np.zeros(6))

    def test_cloud_permutation_invariance(self):
        spec = small_spec("visuotactile")
        policy = StudentPolicy(ENV_CFG, spec, seed=2)
        rng = np.random.default_rng(5)
        batch, valid = random_batch(spec, 4, rng)
        base = policy.forward(batch, valid)
        perm = rng.permutation(spec.cloud_points)
        batch["object_cloud"] = batch["object_cloud"][:, :, perm]
        batch["socket_cloud"] = batch["socket_cloud"][:, :, rng.permutation(spec.cloud_points)]
        again = policy.forward(batch, valid)
        np.testing.assert_allclose(again, base, atol=1e-9)

    def test_pad_slots_ignore_contents(self):
        spec = small_spec()
        policy = StudentPolicy(ENV_CFG, spec, seed=4)
        rng = np.random.default_rng(7)
        valid = np.ones((5, spec.k), dtype=bool)
        valid[:, 0] = False
        batch, _ = random_batch(spec, 5, rng, valid)
        a = policy.forward({k: v.copy() for k, v in batch.items()}, valid)
        for v in batch.values():
            v[:, 0] = 1e6 * np.sign(v[:, 0] + 0.1)
        b = policy.forward(batch, valid)
        assert np.array_equal(a, b)

    def test_bad_history_shape_rejected(self):
        spec = small_spec()
        policy = StudentPolicy(ENV_CFG, spec, seed=1)
        with pytest.raises(ConfigError, match="history"):
            student_act(policy, np.zeros((spec.k + 1, spec.feature_dim)))

    def test_obs_dim_mismatch_names_variant(self):
        spec = small_spec("ee")
        policy = StudentPolicy(ENV_CFG, spec, seed=1)
        with pytest.raises(ConfigError, match="ee"):
            policy.encode_step({"obs": np.zeros((2, 13))})

    def test_backward_matches_finite_difference(self):
        spec = small_spec()
        policy = StudentPolicy(ENV_CFG, spec, seed=6)
        rng = np.random.default_rng(11)
        batch, valid = random_batch(spec, 3, rng)
        valid[:, 0] = False
        probe = rng.standard_normal((3, 6))

        def loss():
            return float((policy.forward(batch, valid) * probe).sum())

        loss()
        policy.store.zero_grads()
        policy.backward(probe)
        grads = {k: v.copy() for k, v in policy.store.grads.items()}
        h = 1e-6
        worst = 0.0
        for name in ("tactile_enc.k0", "joint.w0", "obs_mlp.w0", "proj.w0",
                     "tf.b0.wq", "tf.head_w"):
            flat = policy.store.params[name].reshape(-1)
            for j in rng.choice(flat.size, size=4, replace=False):
                keep = flat[j]
                flat[j] = keep + h
                lp = loss()
                flat[j] = keep - h
                lm = loss()
                flat[j] = keep
                fd = (lp - lm) / (2 * h)
                an = grads[name].reshape(-1)[j]
                worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
        assert worst < 1e-4


class TestFeatureHistory:
    def test_rolls_and_pads(self):
        spec = small_spec()
        hist = FeatureHistory(spec)
        f1 = np.ones(spec.feature_dim)
        w = hist.push(f1)
        assert np.array_equal(w[-1], f1)
        assert np.array_equal(w[:-1], np.zeros((spec.k - 1, spec.feature_dim)))
        w = hist.push(2 * f1)
        assert np.array_equal(w[-1], 2 * f1)
        assert np.array_equal(w[-2], f1)


class TestBetaSchedule:
    def test_starts_at_one(self):
        assert BetaSchedule("linear", 0.0, 10).beta(0) == 1.0
        assert BetaSchedule("exponential", 0.1, 10).beta(0) == 1.0

    def test_linear_midpoint(self):
        sched = BetaSchedule("linear", 0.2, 10)
        assert sched.beta(5) == pytest.approx((1 + 0.2) / 2, abs=1e-12)

    def test_reaches_final_and_clamps(self):
        for kind, bf in (("linear", 0.0), ("exponential", 0.05)):
            sched = BetaSchedule(kind, bf, 8)
            assert sched.beta(8) == pytest.approx(bf, abs=1e-12)
            assert sched.beta(20) == pytest.approx(bf, abs=1e-12)

    def test_monotone_nonincreasing(self):
        for sched in (BetaSchedule("linear", 0.0, 17),
                      BetaSchedule("exponential", 0.03, 17)):
            vals = [sched.beta(i) for i in range(40)]
            assert all(a >= b for a, b in zip(vals, vals[1:]))
            assert all(0.0 <= v <= 1.0 for v in vals)

    def test_validation(self):
        with pytest.raises(ConfigError, match="kind"):
            BetaSchedule("cosine", 0.0, 10)
        with pytest.raises(ConfigError, match="exponential"):
            BetaSchedule("exponential", 0.0, 10)
        with pytest.raises(ConfigError, match="horizon"):
            BetaSchedule("linear", 0.0, 0)
        with pytest.raises(ConfigError, match="nonnegative"):
            BetaSchedule("linear", 0.0, 10).beta(-1)


# plausible magnitude per obs slot: position, quaternion, last action
OBS_RANGES = np.array([0.1] * 3 + [1.0] * 4 + [ENV_CFG.max_translation] * 3
                      + [ENV_CFG.max_rotation] * 3)
ACTION_BOUNDS = np.array([ENV_CFG.max_translation] * 3
                         + [ENV_CFG.max_rotation] * 3)


def synthetic_dataset(spec, n_steps, rng, label_fn=None, ep_len=8):
    """Episodes of zero sensors with controllable obs/labels."""
    ds = AggregatedDataset(dataset_geometry(spec))
    r, p, s = spec.tactile_resolution, spec.cloud_points, spec.image_size
    made = 0
    while made < n_steps:
        ds.begin_episode("cylinder", seed=made, driver="teacher")
        for _ in range(min(ep_len, n_steps - made)):
            obs = rng.uniform(-1, 1, 13) * OBS_RANGES
            label = label_fn(obs) if label_fn else rng.uniform(-1, 1, 6) * 1e-3
            ds.add_step(tactile=np.zeros((3, r, r)),
                        object_cloud=np.zeros((p, 3)),
                        socket_cloud=np.zeros((p, 3)),
                        depth_image=np.zeros((2, s, s)),
                        obs=obs, priv=np.zeros(63),
                        socket_estimate=np.zeros(3), label=label)
            made += 1
        ds.end_episode()
    return ds


def linear_label_fn(seed=99, scale=0.3):
    """A linear map from obs to bounded actions, the realizable toy target."""
    w = np.random.default_rng(seed).uniform(-scale, scale, (6, 13))
    w = w / OBS_RANGES[None, :]
    return lambda obs: (w @ obs) * ACTION_BOUNDS


class TestDataset:
    def test_windows_zero_pad_at_episode_start(self):
        spec = small_spec()
        ds = synthetic_dataset(spec, 10, np.random.default_rng(0), ep_len=4)
        batch, valid = ds.windows(np.array([0, 1, 4, 5]), k=3, fields=("obs",))
        assert valid.tolist() == [[False, False, True], [False, True, True],
                                  [False, False, True], [False, True, True]]
        assert np.array_equal(batch["obs"][0, :2], np.zeros((2, 13)))
        np.testing.assert_array_equal(batch["obs"][1, 1], ds.field("obs")[0])

    def test_windows_never_cross_episodes(self):
        spec = small_spec()
        ds = synthetic_dataset(spec, 8, np.random.default_rng(1), ep_len=4)
        batch, valid = ds.windows(np.array([4]), k=3, fields=("obs",))
        # step 4 opens the second episode; its window must not see steps 2-3
        assert valid.tolist() == [[False, False, True]]
        assert np.array_equal(batch["obs"][0, :2], np.zeros((2, 13)))

    def test_stratified_sampling_balances_shapes(self):
        spec = small_spec()
        ds = AggregatedDataset(dataset_geometry(spec))
        r, p, s = spec.tactile_resolution, spec.cloud_points, spec.image_size
        rec = dict(tactile=np.zeros((3, r, r)), object_cloud=np.zeros((p, 3)),
                   socket_cloud=np.zeros((p, 3)), depth_image=np.zeros((2, s, s)),
                   obs=np.zeros(13), priv=np.zeros(63),
                   socket_estimate=np.zeros(3), label=np.zeros(6))
        for shape, count in (("cylinder", 30), ("hexagonal", 6)):
            ds.begin_episode(shape, seed=0, driver="teacher")
            for _ in range(count):
                ds.add_step(**rec)
            ds.end_episode()
        rng = np.random.default_rng(2)
        idx = ds.sample_indices(rng, 12, stratify=True)
        sid = ds._shape_id.data[idx]
        assert (sid == 0).sum() == 6 and (sid == 1).sum() == 6

    def test_open_episode_contracts(self):
        spec = small_spec()
        ds = AggregatedDataset(dataset_geometry(spec))
        with pytest.raises(PreconditionError):
            ds.add_step()
        with pytest.raises(PreconditionError):
            ds.end_episode()
        ds.begin_episode("cylinder", 0, "teacher")
        with pytest.raises(PreconditionError):
            ds.begin_episode("cylinder", 1, "teacher")
        with pytest.raises(PreconditionError):
            ds.save("/tmp/never.vtds")

    def test_record_shape_checked(self):
        spec = small_spec()
        ds = AggregatedDataset(dataset_geometry(spec))
        ds.begin_episode("cylinder", 0, "teacher")
        with pytest.raises(ConfigError, match="shape"):
            ds.add_step(tactile=np.zeros((3, 2, 2)),
                        object_cloud=np.zeros((spec.cloud_points, 3)),
                        socket_cloud=np.zeros((spec.cloud_points, 3)),
                        depth_image=np.zeros((2, spec.image_size, spec.image_size)),
                        obs=np.zeros(13), priv=np.zeros(63),
                        socket_estimate=np.zeros(3), label=np.zeros(6))

    def test_save_load_roundtrip(self, tmp_path):
        spec = small_spec()
        ds = synthetic_dataset(spec, 12, np.random.default_rng(3), ep_len=5)
        path = tmp_path / "data.vtds"
        ds.save(path)
        back = AggregatedDataset.load(path)
        assert len(back) == len(ds)
        assert back.episodes == ds.episodes
        for name in AggregatedDataset.STEP_FIELDS:
            np.testing.assert_array_equal(back.field(name), ds.field(name))
        b1, v1 = ds.windows(np.arange(12), 3, ("obs", "label"))
        b2, v2 = back.windows(np.arange(12), 3, ("obs", "label"))
        assert np.array_equal(v1, v2)
        np.testing.assert_array_equal(b1["obs"], b2["obs"])

    def test_load_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "junk.vtds"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ConfigError, match="not a dataset"):
            AggregatedDataset.load(path)


class TestCollector:
    def test_labels_replay_from_stored_state(self):
        spec = small_spec()
        teacher = small_teacher()
        ds = AggregatedDataset(dataset_geometry(spec))
        coll = EpisodeCollector(ENV_CFG, teacher, spec,
                                RandomizationConfig(), seed=5)
        coll.collect(ds, steps=25, beta=1.0)
        obs = ds.field("obs")
        priv = ds.field("priv")
        labels = ds.field("label")
        act, _, _, _ = teacher.act_batch(obs, priv, rng=None)
        np.testing.assert_allclose(act, labels, atol=1e-9)

    def test_mixing_frequency_tracks_beta(self):
        spec = small_spec()
        teacher = small_teacher()
        student = StudentPolicy(ENV_CFG, spec, seed=9)
        ds = AggregatedDataset(dataset_geometry(spec))
        coll = EpisodeCollector(ENV_CFG, teacher, spec,
                                RandomizationConfig.zeroed(), seed=6,
                                student=student, max_burn_in=0)
        stats = coll.collect(ds, steps=10_000, beta=0.4)
        frac = stats["teacher_steps"] / stats["steps"]
        assert abs(frac - 0.4) < 0.02

    def test_beta_one_never_needs_student(self):
        spec = small_spec()
        teacher = small_teacher()
        ds = AggregatedDataset(dataset_geometry(spec))
        coll = EpisodeCollector(ENV_CFG, teacher, spec,
                                RandomizationConfig.zeroed(), seed=7)
        stats = coll.collect(ds, steps=30, beta=1.0)
        assert stats["teacher_steps"] == stats["steps"] == 30
        assert len(ds) == 30

    def test_beta_zero_pure_student(self):
        spec = small_spec()
        teacher = small_teacher()
        student = StudentPolicy(ENV_CFG, spec, seed=10)
        ds = AggregatedDataset(dataset_geometry(spec))
        coll = EpisodeCollector(ENV_CFG, teacher, spec,
                                RandomizationConfig.zeroed(), seed=8,
                                student=student)
        stats = coll.collect(ds, steps=30, beta=0.0)
        assert stats["teacher_steps"] == 0
        act, _, _, _ = teacher.act_batch(ds.field("obs"), ds.field("priv"),
                                         rng=None)
        np.testing.assert_allclose(act, ds.field("label"), atol=1e-9)

    def test_student_required_below_beta_one(self):
        spec = small_spec()
        ds = AggregatedDataset(dataset_geometry(spec))
        coll = EpisodeCollector(ENV_CFG, small_teacher(), spec,
                                RandomizationConfig.zeroed(), seed=8)
        with pytest.raises(ConfigError, match="student"):
            coll.collect(ds, steps=10, beta=0.5)

    def test_collection_deterministic(self):
        spec = small_spec()
        teacher = small_teacher()
        sets = []
        for _ in range(2):
            ds = AggregatedDataset(dataset_geometry(spec))
            coll = EpisodeCollector(ENV_CFG, teacher, spec,
                                    RandomizationConfig(), seed=12)
            coll.collect(ds, steps=20, beta=1.0)
            sets.append(ds)
        for name in AggregatedDataset.STEP_FIELDS:
            np.testing.assert_array_equal(sets[0].field(name),
                                          sets[1].field(name))


class TestTraining:
    def test_realizable_linear_labels_fit_below_1e4(self):
        spec = small_spec("ee", k=2, obs_feature=16, d_model=32)
        ds = synthetic_dataset(spec, 192, np.random.default_rng(13),
                               label_fn=linear_label_fn())
        student = StudentPolicy(ENV_CFG, spec, seed=14)
        cfg = DistillConfig(spec=spec, batch_size=32)
        rng = np.random.default_rng(15)
        final = None
        for lr, epochs in ((3e-3, 120), (1e-3, 120), (3e-4, 120), (1e-4, 120)):
            opt = Adam(student.store, lr=lr)
            final = train_mse(student, ds, opt, epochs=epochs, cfg=cfg,
                              rng=rng)[-1]
        assert final < 1e-4

    def test_heldout_loss_decreases_smoothed(self):
        spec = small_spec("ee", k=2)
        rng = np.random.default_rng(16)
        ds = synthetic_dataset(spec, 256, rng, label_fn=linear_label_fn())
        held = np.arange(192, 256)
        student = StudentPolicy(ENV_CFG, spec, seed=17)
        cfg = DistillConfig(spec=spec, batch_size=32, learning_rate=1e-3)
        opt = Adam(student.store, lr=cfg.learning_rate)
        curve = []
        for _ in range(12):
            train_mse(student, ds, opt, epochs=1, cfg=cfg,
                      rng=np.random.default_rng(18))
            curve.append(eval_loss(student, ds, held, cfg))
        smooth = np.convolve(curve, np.ones(3) / 3, mode="valid")
        assert all(b <= a + 1e-7 for a, b in zip(smooth, smooth[1:]))
        assert curve[-1] < curve[0]

    def test_divergent_loss_aborts(self):
        spec = small_spec("ee", k=2)
        ds = synthetic_dataset(spec, 64, np.random.default_rng(19))
        student = StudentPolicy(ENV_CFG, spec, seed=20)
        student.store.params["tf.head_w"][:] = np.nan
        cfg = DistillConfig(spec=spec, batch_size=32)
        opt = Adam(student.store, lr=1e-3)
        with pytest.raises(Exception, match="(?i)loss|finite|nan"):
            train_mse(student, ds, opt, epochs=1, cfg=cfg,
                      rng=np.random.default_rng(21))


class TestPipeline:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_all_variants_smoke(self, variant, tmp_path):
        spec = small_spec(variant)
        cfg = DistillConfig(spec=spec, bc_transitions=30, bc_epochs=2,
                            dagger_iterations=2, dagger_transitions=12,
                            dagger_epochs=1, batch_size=16,
                            learning_rate=1e-3,
                            schedule=BetaSchedule("linear", 0.0, 1))
        res = distill_student(small_teacher(), ENV_CFG,
                              RandomizationConfig.zeroed(), cfg, seed=22,
                              out_dir=tmp_path / variant)
        assert np.isfinite(res.bc_losses).all()
        assert len(res.dagger_rows) == 2
        assert res.dagger_rows[0]["beta"] == 1.0
        assert res.dagger_rows[1]["beta"] == 0.0
        assert (tmp_path / variant / f"student_{variant}.ckpt").exists()

    def test_student_checkpoint_roundtrip(self, tmp_path):
        spec = small_spec()
        student = StudentPolicy(ENV_CFG, spec, seed=23)
        path = tmp_path / "student.ckpt"
        save_student(path, student, metadata={"note": 1})
        back, meta = load_student(path, ENV_CFG)
        assert meta == {"note": 1}
        assert back.spec == spec
        for name, val in student.store.params.items():
            np.testing.assert_allclose(back.store.get(name), val, atol=1e-6)

    def test_teacher_checkpoint_refused_as_student(self, tmp_path):
        from vtinsert.teacher import save_teacher
        path = tmp_path / "teach.ckpt"
        save_teacher(path, small_teacher())
        with pytest.raises(ConfigError, match="student"):
            load_student(path, ENV_CFG)

    def test_bc_warmup_runs_and_reports(self):
        spec = small_spec()
        cfg = DistillConfig(spec=spec, bc_transitions=24, bc_epochs=2,
                            batch_size=12)
        student = StudentPolicy(ENV_CFG, spec, seed=24)
        ds, losses = bc_warmup(small_teacher(), student, ENV_CFG,
                               RandomizationConfig.zeroed(), cfg, seed=25)
        assert len(ds) == 24
        assert len(losses) == 2 and np.isfinite(losses).all()
