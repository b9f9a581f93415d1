"""Student-view sensing and teacher-labeled episode collection.

SensorRig owns the camera, tactile reference pool and randomization hooks
and turns an EnvState into the per-step sensor record the dataset stores.
EpisodeCollector drives episodes with the teacher/student mixture, always
labels with the teacher's eval-mode action on the true state, and records
the executed (scaled, delayed) action stream so stored observations match
what the policies actually saw.
"""

from __future__ import annotations

import numpy as np

from ..env import EpisodeConfig, InsertionEnv, privileged_state
from ..errors import ConfigError
from ..geom import DeltaPose
from ..randomize import (RandomizationConfig, RandomizationState, augment_cloud,
                         augment_tactile, corrupt_mask, perturb_socket,
                         randomize_camera)
from ..sensing import (DEFAULT_GRASP_FORCE, LABEL_OBJECT, LABEL_SOCKET,
                       CameraModel, SocketLayerCache, backproject, downsample,
                       look_at, make_reference_pool, render_depth,
                       render_tactile, subtract_reference)
from ..teacher.policy import observation_vector, privileged_vector
from .student import FeatureHistory, StudentPolicy, StudentSpec

DEPTH_OFFSET = 0.6
DEPTH_GAIN = 5.0
DEFAULT_CAMERA_EYE = (0.35, 0.0, 0.30)
DEFAULT_CAMERA_FOV = np.deg2rad(70.0)


def default_camera(image_size: int) -> CameraModel:
    """Fixed overhead-oblique view covering the sampled socket workspace."""
    return CameraModel.from_fov(DEFAULT_CAMERA_FOV,
                                look_at(DEFAULT_CAMERA_EYE, (0.0, 0.0, 0.0)),
                                width=image_size, height=image_size)


def depth_channels(depth, seg) -> np.ndarray:
    """(2, H, W) object/socket depth channels, O(1) scaled, background zero."""
    base = (DEPTH_OFFSET - depth.depth) * DEPTH_GAIN
    obj = np.where(depth.valid & (seg.labels == LABEL_OBJECT), base, 0.0)
    sock = np.where(depth.valid & (seg.labels == LABEL_SOCKET), base, 0.0)
    return np.stack([obj, sock])


class SensorRig:
    """Per-episode randomized sensing pipeline for one environment."""

    def __init__(self, spec: StudentSpec, rand_cfg: RandomizationConfig,
                 seed: int, gamma: float | None = None):
        self.spec = spec
        self.rand = RandomizationState(rand_cfg, seed)
        self.base_cam = default_camera(spec.image_size)
        self.ref_pool = make_reference_pool(resolution=spec.tactile_resolution,
                                            seed=0)
        self.cache = SocketLayerCache()
        self.gamma = gamma
        self.cam = self.base_cam
        self._t = 0

    def begin_episode(self, env: InsertionEnv, rng) -> None:
        """Perturb the socket, redraw the camera, reset per-episode streams."""
        self.rand.begin_episode()
        env.set_state(perturb_socket(env.state, self.rand.cfg, self.rand.rng))
        self.cam = randomize_camera(self.base_cam, self.rand.cfg, self.rand.rng)
        self._t = 0

    def socket_estimate(self, state, rng) -> np.ndarray:
        sigma = self.spec.socket_estimate_sigma
        return state.socket.pose.position + rng.normal(0.0, sigma, size=3)

    def sense(self, state, rng, modalities=None) -> dict:
        """One student-view record; draw order is part of the determinism
        contract (clouds, tactile references, then augmentations).

        modalities limits the record to what a variant consumes (plus obs
        and priv, always present); None renders everything for datasets.
        """
        spec = self.spec
        want = (frozenset(("tactile", "cloud", "depth_image"))
                if modalities is None else frozenset(modalities))
        record = {
            "obs": observation_vector(state),
            "priv": privileged_vector(privileged_state(state)),
        }
        if want & {"cloud", "depth_image"}:
            layer = self.cache.get(state.socket, self.cam)
            depth, seg = render_depth(state, self.cam, socket_layer=layer)
            seg = corrupt_mask(seg, self.rand.cfg, rng,
                               history=self.rand.mask_history)
            if "cloud" in want:
                obj_cloud = downsample(
                    backproject(depth, seg, LABEL_OBJECT, self.cam),
                    spec.cloud_points, rng)
                sock_cloud = downsample(
                    backproject(depth, seg, LABEL_SOCKET, self.cam),
                    spec.cloud_points, rng)
                obj_cloud = augment_cloud(obj_cloud, self.rand.cfg, rng,
                                          gamma=self.gamma)
                sock_cloud = augment_cloud(sock_cloud, self.rand.cfg, rng,
                                           gamma=self.gamma)
                record["object_cloud"] = obj_cloud.points
                record["socket_cloud"] = sock_cloud.points
            if "depth_image" in want:
                record["depth_image"] = depth_channels(depth, seg)
        if "tactile" in want:
            tactile = []
            for finger in range(3):
                raw = render_tactile(state.contact_wrench, DEFAULT_GRASP_FORCE,
                                     finger, grasp_offset=state.grasp_offset,
                                     resolution=spec.tactile_resolution)
                ref = self.ref_pool[int(rng.integers(len(self.ref_pool)))]
                tactile.append(augment_tactile(subtract_reference(raw, ref),
                                               self.rand.cfg, rng).values)
            record["tactile"] = np.stack(tactile)
        return record

    def process_action(self, a: DeltaPose, env_cfg: EpisodeConfig) -> DeltaPose:
        """Apply the per-episode action scale and the delay queue."""
        out = self.rand.process_action(a, self._t,
                                       max_translation=env_cfg.max_translation,
                                       max_rotation=env_cfg.max_rotation)
        self._t += 1
        return out


def student_step_features(policy: StudentPolicy, record: dict,
                          socket_estimate: np.ndarray) -> np.ndarray:
    """Encode one sensor record into the student's per-step feature vector."""
    spec = policy.spec
    obs = record["obs"]
    if spec.needs_socket_estimate:
        obs = np.concatenate([obs, socket_estimate])
    batch = {"obs": obs[None]}
    if "tactile" in spec.modalities:
        batch["tactile"] = np.asarray(record["tactile"], dtype=float)[None]
    if "cloud" in spec.modalities:
        batch["object_cloud"] = np.asarray(record["object_cloud"], dtype=float)[None]
        batch["socket_cloud"] = np.asarray(record["socket_cloud"], dtype=float)[None]
    if "depth_image" in spec.modalities:
        batch["depth_image"] = np.asarray(record["depth_image"], dtype=float)[None]
    return policy.encode_step(batch)[0]


class EpisodeCollector:
    """Runs mixed teacher/student episodes and appends them to a dataset."""

    def __init__(self, env_cfg: EpisodeConfig, teacher, spec: StudentSpec,
                 rand_cfg: RandomizationConfig, seed: int,
                 student: StudentPolicy | None = None,
                 max_burn_in: int | None = None):
        self.env_cfg = env_cfg
        self.teacher = teacher
        self.spec = spec
        self.env = InsertionEnv(env_cfg)
        self.rig = SensorRig(spec, rand_cfg, seed)
        self.student = student
        self.max_burn_in = spec.k if max_burn_in is None else int(max_burn_in)
        self._ss = np.random.SeedSequence(seed)
        self.history = FeatureHistory(spec)

    def collect(self, dataset, steps: int, beta: float, rng=None) -> dict:
        """Append `steps` records; per step the teacher drives w.p. beta.

        The teacher's eval-mode action on the true state is always the label.
        Returns counting stats for the run.
        """
        from ..teacher import teacher_action
        if not 0.0 <= beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {beta}")
        if beta < 1.0 and self.student is None:
            raise ConfigError("student policy required when beta < 1")
        stats = {"steps": 0, "episodes": 0, "teacher_steps": 0, "successes": 0}
        while stats["steps"] < steps:
            ep_seed = self._ss.spawn(1)[0]
            streams = [np.random.default_rng(s) for s in ep_seed.spawn(4)]
            env_rng, sense_rng, est_rng, coin_rng = streams
            state = self.env.reset(int(env_rng.integers(0, 2**63 - 1)))
            self.rig.begin_episode(self.env, sense_rng)
            state = self.env.state
            estimate = self.rig.socket_estimate(state, est_rng)
            self.history.reset()
            burn_cap = min(self.max_burn_in, self.env_cfg.max_steps - 1)
            burn_in = int(coin_rng.integers(0, burn_cap + 1))
            dataset.begin_episode(state.object.shape, state.episode_seed,
                                  "teacher" if beta >= 1.0 else "mixed")
            done = False
            for t in range(self.env_cfg.max_steps):
                record = self.rig.sense(state, sense_rng)
                if self.student is not None:
                    feats = student_step_features(self.student, record, estimate)
                    window = self.history.push(feats)
                recording = t >= burn_in
                use_teacher = beta >= 1.0 or coin_rng.uniform() < beta
                teacher_cmd = (teacher_action(self.teacher, state)
                               if recording or use_teacher else None)
                if recording:
                    dataset.add_step(socket_estimate=estimate,
                                     label=teacher_cmd.as_vector(), **record)
                    stats["steps"] += 1
                    stats["teacher_steps"] += use_teacher
                if use_teacher:
                    command = teacher_cmd
                else:
                    act = self.student.head_forward(window[None])[0]
                    command = DeltaPose.from_vector(act)
                if stats["steps"] >= steps:
                    break
                executed = self.rig.process_action(command, self.env_cfg)
                state, rb, done, info = self.env.step(executed)
                if done:
                    stats["successes"] += bool(info["success"])
                    break
            dataset.end_episode()
            stats["episodes"] += 1
        return stats
