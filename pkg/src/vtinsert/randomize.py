"""Domain randomization between env and policy: delays, perturbations, noise.

Every operation with all of its knobs at zero is the bitwise identity, so a
frozen configuration (see RandomizationConfig.zeroed) turns the whole suite
into a pass-through. All sampling goes through explicitly passed generators;
per-environment state (delay queue, per-episode action scale, mask history)
lives in RandomizationState.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError
from .geom import (DeltaPose, Pose, axis_angle_to_quat, quat_mul,
                   quat_normalize, quat_rotate)
from .sensing.camera import CameraModel, PointCloud, SegMask, LABEL_BACKGROUND, LABEL_OBJECT
from .sensing.tactile import TactileImage

MAX_ACTION_DELAY_BOUND = 10
FOV_CLAMP = (np.deg2rad(20.0), np.deg2rad(120.0))


@dataclass(frozen=True)
class RandomizationConfig:
    """Knobs for the whole suite; defaults are the training-time settings."""

    max_action_delay: int = 10
    socket_perturb_prob: float = 0.1
    socket_perturb_translation: float = 5e-3
    socket_perturb_yaw: float = np.deg2rad(2.0)
    action_scale_range: tuple = (0.8, 1.2)
    tactile_noise_sigma: float = 0.01
    tactile_lighting_range: float = 0.05
    tactile_grayscale: bool = True
    camera_pos_sigma: float = 3e-3
    camera_rot_sigma: float = np.deg2rad(0.5)
    camera_fov_sigma: float = np.deg2rad(1.0)
    pixel_flip_prob: float = 1e-3
    seg_update_delay: int = 1
    visibility_mask_fraction: float = 0.15
    cloud_dropout_prob: float = 0.05
    cloud_jitter_sigma: float = 1e-3
    cloud_rotation_range: float = np.deg2rad(3.0)
    cloud_scale_range: tuple = (0.98, 1.02)
    cloud_eval_gamma: float = 0.0

    def validate(self) -> "RandomizationConfig":
        if not 0 <= self.max_action_delay <= MAX_ACTION_DELAY_BOUND:
            raise ConfigError(
                f"max_action_delay {self.max_action_delay} outside "
                f"[0, {MAX_ACTION_DELAY_BOUND}]")
        for name in ("socket_perturb_prob", "pixel_flip_prob", "cloud_dropout_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {v}")
        lo, hi = self.action_scale_range
        if not (0.0 < lo <= hi <= 2.0):
            raise ConfigError(f"action_scale_range {self.action_scale_range} "
                              "must be inside (0, 2]")
        lo, hi = self.cloud_scale_range
        if not (0.0 < lo <= hi):
            raise ConfigError(f"cloud_scale_range {self.cloud_scale_range} malformed")
        if not 0.0 <= self.visibility_mask_fraction <= 1.0:
            raise ConfigError(
                f"visibility_mask_fraction {self.visibility_mask_fraction} not in [0,1]")
        for name in ("tactile_noise_sigma", "tactile_lighting_range",
                     "camera_pos_sigma", "camera_rot_sigma", "camera_fov_sigma",
                     "cloud_jitter_sigma", "cloud_rotation_range",
                     "socket_perturb_translation", "socket_perturb_yaw",
                     "cloud_eval_gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.seg_update_delay < 0:
            raise ConfigError(f"seg_update_delay must be nonnegative")
        return self

    @staticmethod
    def zeroed() -> "RandomizationConfig":
        """Everything off: the suite becomes an exact pass-through."""
        return RandomizationConfig(
            max_action_delay=0, socket_perturb_prob=0.0,
            socket_perturb_translation=0.0, socket_perturb_yaw=0.0,
            action_scale_range=(1.0, 1.0), tactile_noise_sigma=0.0,
            tactile_lighting_range=0.0, tactile_grayscale=False,
            camera_pos_sigma=0.0, camera_rot_sigma=0.0, camera_fov_sigma=0.0,
            pixel_flip_prob=0.0, seg_update_delay=0,
            visibility_mask_fraction=0.0, cloud_dropout_prob=0.0,
            cloud_jitter_sigma=0.0, cloud_rotation_range=0.0,
            cloud_scale_range=(1.0, 1.0), cloud_eval_gamma=0.0)

    def replace(self, **kw) -> "RandomizationConfig":
        return dataclasses.replace(self, **kw).validate()


class DelayQueue:
    """FIFO of pending actions; emergence order always equals issue order.

    Each action's release step is clamped to stay after the previous one, so
    independent per-action delay draws can never reorder; the clamp also
    keeps every effective delay within max_delay.
    """

    def __init__(self, max_delay: int, rng):
        if max_delay < 0:
            raise ConfigError(f"max delay must be nonnegative, got {max_delay}")
        self.max_delay = max_delay
        self.rng = rng
        self.pending = deque()
        self.last_release = -1
        self.last_step = None

    def push(self, a: DeltaPose, t: int) -> None:
        if self.last_step is not None and t <= self.last_step:
            raise PreconditionError(f"steps must increase, got {t} after {self.last_step}")
        self.last_step = t
        d = int(self.rng.integers(0, self.max_delay + 1)) if self.max_delay else 0
        release = max(t + d, self.last_release + 1)
        self.last_release = release
        self.pending.append((release, a))

    def pop_due(self, t: int) -> DeltaPose:
        if self.pending and self.pending[0][0] <= t:
            return self.pending.popleft()[1]
        return DeltaPose.zero()


def delay_action(q: DelayQueue, a: DeltaPose, t: int) -> DeltaPose:
    """Enqueue a at step t and return whatever action is due now (zero if none)."""
    q.push(a, t)
    return q.pop_due(t)


def perturb_socket(s, cfg: RandomizationConfig, rng):
    """With socket_perturb_prob, displace the socket pose by a bounded offset."""
    if cfg.socket_perturb_prob <= 0.0 or rng.uniform() >= cfg.socket_perturb_prob:
        return s
    dxy = rng.uniform(-cfg.socket_perturb_translation,
                      cfg.socket_perturb_translation, size=2)
    yaw = rng.uniform(-cfg.socket_perturb_yaw, cfg.socket_perturb_yaw)
    pose = s.socket.pose
    new_pose = Pose(pose.position + np.array([dxy[0], dxy[1], 0.0]),
                    quat_normalize(quat_mul(axis_angle_to_quat(
                        np.array([0.0, 0.0, yaw])), pose.orientation)))
    return dataclasses.replace(s, socket=dataclasses.replace(s.socket, pose=new_pose))


def scale_action(a: DeltaPose, cfg: RandomizationConfig, rng,
                 scale: float | None = None,
                 max_translation: float = 5e-3,
                 max_rotation: float = np.deg2rad(2.0)) -> DeltaPose:
    """Multiply all six components by a scalar and re-clamp to action bounds.

    scale is normally the per-episode value held by RandomizationState; when
    absent one is drawn from the configured range.
    """
    if scale is None:
        lo, hi = cfg.action_scale_range
        scale = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    if scale == 1.0:
        return a
    return DeltaPose(a.translation * scale, a.rotation * scale).clamped(
        max_translation, max_rotation)


def augment_tactile(img: TactileImage, cfg: RandomizationConfig, rng) -> TactileImage:
    """Lighting offset + per-taxel Gaussian noise, clamped to [-1, 1]."""
    if cfg.tactile_noise_sigma == 0.0 and cfg.tactile_lighting_range == 0.0:
        return img
    out = img.values.copy()
    if cfg.tactile_lighting_range > 0.0:
        out = out + rng.uniform(-cfg.tactile_lighting_range,
                                cfg.tactile_lighting_range)
    if cfg.tactile_noise_sigma > 0.0:
        out = out + rng.normal(0.0, cfg.tactile_noise_sigma, size=out.shape)
    # grayscale collapse is a no-op for scalar taxel grids; the flag is kept
    # for multi-channel configurations
    return TactileImage(np.clip(out, -1.0, 1.0))


class MaskHistory:
    """Recent true masks, newest last; serves stale masks for update delays."""

    def __init__(self, depth: int):
        self.frames = deque(maxlen=max(depth, 0) + 1)

    def push(self, m: SegMask) -> None:
        self.frames.append(m)

    def stale(self, delay: int) -> SegMask:
        idx = max(len(self.frames) - 1 - delay, 0)
        return self.frames[idx]


def corrupt_mask(m: SegMask, cfg: RandomizationConfig, rng,
                 t: int = 0, history: MaskHistory | None = None) -> SegMask:
    """Pixel flips, staleness, and a contiguous erased patch of object pixels."""
    if history is not None:
        history.push(m)
        m = history.stale(cfg.seg_update_delay)
    if cfg.pixel_flip_prob == 0.0 and cfg.visibility_mask_fraction == 0.0:
        return m
    labels = m.labels.copy()
    if cfg.pixel_flip_prob > 0.0:
        flips = rng.uniform(size=labels.shape) < cfg.pixel_flip_prob
        if flips.any():
            bump = rng.integers(1, 3, size=int(flips.sum())).astype(np.uint8)
            labels[flips] = (labels[flips] + bump) % 3
    if cfg.visibility_mask_fraction > 0.0:
        vs, us = np.nonzero(labels == LABEL_OBJECT)
        n = len(vs)
        if n:
            frac = rng.uniform(0.0, cfg.visibility_mask_fraction)
            k = int(frac * n)
            if k:
                pick = rng.integers(n)
                # erase the k object pixels nearest the picked one in
                # Chebyshev distance: a square patch intersected with the mask
                cheb = np.maximum(np.abs(vs - vs[pick]), np.abs(us - us[pick]))
                order = np.argsort(cheb, kind="stable")[:k]
                labels[vs[order], us[order]] = LABEL_BACKGROUND
    return SegMask(labels)


def augment_cloud(c: PointCloud, cfg: RandomizationConfig, rng,
                  gamma: float | None = None) -> PointCloud:
    """Dropout (cardinality preserved), jitter, global rotation/scale, eval noise."""
    if gamma is None:
        gamma = cfg.cloud_eval_gamma
    lo, hi = cfg.cloud_scale_range
    inert = (cfg.cloud_dropout_prob == 0.0 and cfg.cloud_jitter_sigma == 0.0
             and cfg.cloud_rotation_range == 0.0 and lo == hi == 1.0
             and gamma == 0.0)
    if inert or c.empty or not len(c.points):
        return c
    pts = c.points.copy()
    n = len(pts)
    if cfg.cloud_dropout_prob > 0.0:
        keep = rng.uniform(size=n) >= cfg.cloud_dropout_prob
        if not keep.any():
            keep[rng.integers(n)] = True
        idx = np.nonzero(keep)[0]
        repl = rng.choice(idx, size=n - len(idx)) if len(idx) < n else np.empty(0, int)
        pts[~keep] = pts[repl]
    if cfg.cloud_jitter_sigma > 0.0:
        pts = pts + rng.normal(0.0, cfg.cloud_jitter_sigma, size=pts.shape)
    center = pts.mean(axis=0)
    if cfg.cloud_rotation_range > 0.0:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(-cfg.cloud_rotation_range, cfg.cloud_rotation_range)
        pts = quat_rotate(axis_angle_to_quat(axis * angle), pts - center) + center
    if lo != 1.0 or hi != 1.0:
        pts = center + rng.uniform(lo, hi) * (pts - center)
    if gamma > 0.0:
        pts = pts + rng.normal(0.0, np.sqrt(gamma), size=pts.shape)
    return PointCloud(pts)


def randomize_camera(cam: CameraModel, cfg: RandomizationConfig, rng) -> CameraModel:
    """Gaussian pose and field-of-view perturbation; intrinsics recomputed."""
    if (cfg.camera_pos_sigma == 0.0 and cfg.camera_rot_sigma == 0.0
            and cfg.camera_fov_sigma == 0.0):
        return cam
    pos = cam.pose.position + rng.normal(0.0, cfg.camera_pos_sigma, size=3)
    rot = rng.normal(0.0, cfg.camera_rot_sigma, size=3)
    q = quat_normalize(quat_mul(axis_angle_to_quat(rot), cam.pose.orientation))
    fov = cam.fov if cam.fov > 0 else 2.0 * np.arctan((cam.width / 2.0) / cam.fx)
    fov = float(np.clip(fov + rng.normal(0.0, cfg.camera_fov_sigma),
                        FOV_CLAMP[0], FOV_CLAMP[1]))
    return CameraModel.from_fov(fov, Pose(pos, q), cam.width, cam.height)


class RandomizationState:
    """Per-environment randomization state: streams, queue, episodic draws."""

    def __init__(self, cfg: RandomizationConfig, seed):
        cfg.validate()
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.queue = None
        self.action_scale = 1.0
        self.mask_history = None
        self.begin_episode()

    def begin_episode(self) -> None:
        self.queue = DelayQueue(self.cfg.max_action_delay, self.rng)
        lo, hi = self.cfg.action_scale_range
        self.action_scale = float(self.rng.uniform(lo, hi)) if hi > lo else float(lo)
        self.mask_history = MaskHistory(self.cfg.seg_update_delay)

    def process_action(self, a: DeltaPose, t: int,
                       max_translation: float = 5e-3,
                       max_rotation: float = np.deg2rad(2.0)) -> DeltaPose:
        """Episode-scale then delay, the order the real pipeline applies them."""
        scaled = scale_action(a, self.cfg, self.rng, scale=self.action_scale,
                              max_translation=max_translation,
                              max_rotation=max_rotation)
        return delay_action(self.queue, scaled, t)
