"""Quasi-static insertion episodes: sampling, stepping, reward, success.

The EE is position-controlled: each step applies a bounded world-frame
delta, contact pushes the hand+object back as a unit, and the latent grasp
offset only changes when the contact force exceeds the drift threshold
(compliant grasp). Episodes end on success, drop (grasp offset past the
drop threshold), or timeout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import PreconditionError
from ..geom import (
    DeltaPose,
    Pose,
    apply_delta,
    axis_angle_to_quat,
    compose,
    keypoints_along_axis,
    quat_conj,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_axis_angle,
)
from ..shapes import DEFAULT_DIMENSIONS
from .config import EpisodeConfig, ObjectSpec, SocketSpec
from .contact import resolve_contact

E_TASK_DIM = 50
E_PHYS_DIM = 13
KEYPOINT_COUNT = 4


class EpisodeDone(PreconditionError):
    """step() was called on a finished (or never reset) episode."""


@dataclass(frozen=True, eq=False)
class EnvState:
    ee_pose: Pose
    grasp_offset: Pose          # EE -> object; identity means a perfect grasp
    object_pose: Pose           # always compose(ee_pose, grasp_offset)
    socket: SocketSpec
    object: ObjectSpec
    ee_velocity: np.ndarray     # (6,) m/s, rad/s, finite-differenced
    step: int
    last_action: DeltaPose
    contact_wrench: np.ndarray  # (6,) N, N*m from the last contact resolution
    grasp_angles: np.ndarray    # (3,) sampled grasp-error Euler angles
    compliance_gain: float
    episode_seed: int


@dataclass(frozen=True)
class RewardBreakdown:
    r_d: float      # summed key-point distances
    r_e: float      # engagement indicator
    r_o: float      # quaternion misalignment
    r_a: float      # action magnitude
    r_w: float      # action difference
    total: float

    def components(self) -> np.ndarray:
        return np.array([self.r_d, self.r_e, self.r_o, self.r_a, self.r_w])


@dataclass(frozen=True)
class PrivilegedState:
    e_task: np.ndarray   # (50,)
    e_phys: np.ndarray   # (13,)


def _grasp_quat(angles: np.ndarray) -> np.ndarray:
    qx = axis_angle_to_quat(np.array([angles[0], 0.0, 0.0]))
    qy = axis_angle_to_quat(np.array([0.0, angles[1], 0.0]))
    qz = axis_angle_to_quat(np.array([0.0, 0.0, angles[2]]))
    return quat_normalize(quat_mul(qx, quat_mul(qy, qz)))


def reset(cfg: EpisodeConfig, seed: int) -> EnvState:
    """Sample one episode. The draw order below is part of the determinism
    contract; inserting draws would silently reshuffle every seed."""
    rng = np.random.default_rng(seed)
    shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
    scale = float(rng.uniform(*cfg.scale_range))
    clearance = float(rng.uniform(*cfg.clearance_range))
    socket_height = float(rng.uniform(*cfg.socket_height_range))
    yaw = float(rng.uniform(-cfg.socket_yaw_range, cfg.socket_yaw_range))
    socket_xy = rng.uniform(-cfg.position_range, cfg.position_range, 2)
    mass = float(rng.uniform(*cfg.mass_range))
    friction = float(rng.uniform(*cfg.friction_range))
    grasp_angles = rng.uniform(-cfg.object_angle_range, cfg.object_angle_range, 3)
    grasp_t = rng.uniform(-cfg.grasp_translation_range, cfg.grasp_translation_range, 3)
    start_height = float(rng.uniform(*cfg.start_height_range))
    start_xy = rng.uniform(-cfg.start_xy_jitter, cfg.start_xy_jitter, 2)

    obj = ObjectSpec(shape=shape, dimensions=DEFAULT_DIMENSIONS[shape],
                     height=cfg.object_height * scale, mass=mass,
                     friction=friction, scale=scale)
    socket = SocketSpec(shape=shape, dimensions=obj.dimensions, scale=scale,
                        clearance=clearance, height=socket_height,
                        pose=Pose(np.array([socket_xy[0], socket_xy[1], 0.0]),
                                  axis_angle_to_quat(np.array([0.0, 0.0, yaw]))))
    ee = Pose(np.array([start_xy[0], start_xy[1], socket_height + start_height]))
    offset = Pose(grasp_t, _grasp_quat(grasp_angles))
    return EnvState(
        ee_pose=ee,
        grasp_offset=offset,
        object_pose=compose(ee, offset),
        socket=socket,
        object=obj,
        ee_velocity=np.zeros(6),
        step=0,
        last_action=DeltaPose.zero(),
        contact_wrench=np.zeros(6),
        grasp_angles=grasp_angles,
        compliance_gain=cfg.rotation_slip_gain,
        episode_seed=int(seed),
    )


def reward(s: EnvState, a: DeltaPose, prev_a: DeltaPose,
           cfg: EpisodeConfig) -> RewardBreakdown:
    """Components are nonnegative magnitudes; the weights carry the signs."""
    obj_kp = keypoints_along_axis(s.object_pose, s.socket.height, KEYPOINT_COUNT)
    sock_kp = keypoints_along_axis(s.socket.pose, s.socket.height, KEYPOINT_COUNT)
    r_d = float(np.linalg.norm(obj_kp - sock_kp, axis=1).sum())
    gap = float(np.linalg.norm(s.object_pose.position - s.socket.pose.position))
    r_e = 1.0 if gap < cfg.engagement_threshold else 0.0
    d_minus = np.linalg.norm(s.object_pose.orientation - s.socket.pose.orientation)
    d_plus = np.linalg.norm(s.object_pose.orientation + s.socket.pose.orientation)
    r_o = float(min(d_minus, d_plus))
    r_a = float(np.linalg.norm(a.as_vector()))
    r_w = float(np.linalg.norm(a.as_vector() - prev_a.as_vector()))
    w = cfg.reward_weights
    total = w[0] * r_d + w[1] * r_e + w[2] * r_o + w[3] * r_a + w[4] * r_w
    return RewardBreakdown(r_d, r_e, r_o, r_a, r_w, total)


def insertion_depth(s: EnvState) -> float:
    rel = compose(s.socket.pose.inverse(), s.object_pose)
    return s.socket.height - float(rel.position[2])


def check_success(s: EnvState, depth_fraction: float = 0.9,
                  tilt_tolerance: float = 0.10) -> bool:
    rel = compose(s.socket.pose.inverse(), s.object_pose)
    depth = s.socket.height - float(rel.position[2])
    if depth < depth_fraction * s.socket.height:
        return False
    if math.hypot(rel.position[0], rel.position[1]) >= s.socket.clearance:
        return False
    tilt = math.acos(min(max(float(rel.matrix()[2, 2]), -1.0), 1.0))
    return tilt < tilt_tolerance


def privileged_state(s: EnvState) -> PrivilegedState:
    q_o = s.object_pose.orientation
    q_s = s.socket.pose.orientation
    quat_err = q_o - q_s if np.linalg.norm(q_o - q_s) <= np.linalg.norm(q_o + q_s) else q_o + q_s
    obj_kp = keypoints_along_axis(s.object_pose, s.socket.height, KEYPOINT_COUNT)
    sock_kp = keypoints_along_axis(s.socket.pose, s.socket.height, KEYPOINT_COUNT)
    kp_vec = obj_kp - sock_kp
    e_task = np.concatenate([
        s.ee_pose.as_vector(),                                  # 7
        s.ee_velocity,                                          # 6
        s.object_pose.as_vector(),                              # 7
        s.socket.pose.as_vector(),                              # 7
        s.object_pose.position - s.socket.pose.position,        # 3
        quat_err,                                               # 4
        np.linalg.norm(kp_vec, axis=1),                         # 4
        kp_vec.ravel(),                                         # 12
    ])
    o = s.object
    e_phys = np.concatenate([
        [o.mass, o.friction], o.dimensions, [o.height, o.scale,
         s.socket.clearance, s.socket.height],
        s.grasp_offset.position, [s.compliance_gain],
    ])
    if e_task.shape != (E_TASK_DIM,) or e_phys.shape != (E_PHYS_DIM,):
        raise AssertionError("privileged layout drifted")
    return PrivilegedState(e_task=e_task, e_phys=e_phys)


def _step_state(s: EnvState, a: DeltaPose, cfg: EpisodeConfig):
    """Pure transition: returns (new_state, dropped)."""
    a = a.clamped(cfg.max_translation, cfg.max_rotation)
    ee = apply_delta(s.ee_pose, a)
    obj_pose = compose(ee, s.grasp_offset)
    corrected, wrench = resolve_contact(obj_pose, s.socket, s.object, cfg.stiffness)
    ee = Pose(ee.position + (corrected.position - obj_pose.position), ee.orientation)
    obj_pose = corrected

    offset = s.grasp_offset
    force = wrench[:3]
    f_norm = float(np.linalg.norm(force))
    if f_norm > cfg.drift_threshold:
        # Grasp slip: the object yields along the contact force; stiffer
        # grips (higher friction) slip less.
        slip_scale = 1.0 / s.object.friction
        excess = f_norm - cfg.drift_threshold
        dt_world = cfg.translation_slip_gain * slip_scale * excess * force / f_norm
        drot_world = cfg.rotation_slip_gain * slip_scale * wrench[3:]
        q_ee_inv = quat_conj(ee.orientation)
        new_t = offset.position + quat_rotate(q_ee_inv, dt_world)
        new_q = quat_mul(q_ee_inv, quat_mul(
            axis_angle_to_quat(drot_world),
            quat_mul(ee.orientation, offset.orientation)))
        offset = Pose(new_t, quat_normalize(new_q))
        obj_pose = compose(ee, offset)
        corrected, _ = resolve_contact(obj_pose, s.socket, s.object, cfg.stiffness)
        ee = Pose(ee.position + (corrected.position - obj_pose.position), ee.orientation)
        obj_pose = corrected

    dropped = float(np.linalg.norm(offset.position)) > cfg.drop_threshold
    vel = np.concatenate([
        (ee.position - s.ee_pose.position) / cfg.control_dt,
        quat_to_axis_angle(quat_mul(ee.orientation, quat_conj(s.ee_pose.orientation)))
        / cfg.control_dt,
    ])
    new_state = replace(
        s, ee_pose=ee, grasp_offset=offset, object_pose=obj_pose,
        ee_velocity=vel, step=s.step + 1, last_action=a, contact_wrench=wrench)
    return new_state, dropped


class InsertionEnv:
    """Single-episode environment; call reset() before the first step()."""

    def __init__(self, cfg: EpisodeConfig):
        self.cfg = cfg
        self._state: EnvState | None = None
        self._done = True

    @property
    def state(self) -> EnvState:
        if self._state is None:
            raise EpisodeDone("environment was never reset")
        return self._state

    @property
    def done(self) -> bool:
        return self._done

    def reset(self, seed: int) -> EnvState:
        self._state = reset(self.cfg, seed)
        self._done = False
        return self._state

    def set_state(self, state: EnvState) -> EnvState:
        """Replace the live state (randomization wrappers perturb resets)."""
        if self._done or self._state is None:
            raise EpisodeDone("set_state() outside a live episode; reset() first")
        self._state = state
        return state

    def step(self, a: DeltaPose):
        if self._done or self._state is None:
            raise EpisodeDone("step() on a finished episode; reset() first")
        cfg = self.cfg
        prev = self._state
        new_state, dropped = _step_state(prev, a, cfg)
        rb = reward(new_state, new_state.last_action, prev.last_action, cfg)
        success = check_success(new_state, cfg.success_depth_fraction,
                                cfg.tilt_tolerance)
        cause = None
        if success:
            done = True
        elif dropped:
            done, cause = True, "drop"
        elif new_state.step >= cfg.max_steps:
            done, cause = True, "timeout"
        else:
            done = False
        info = {
            "success": success,
            "failure_cause": cause,
            "depth": insertion_depth(new_state),
            "engaged": rb.r_e > 0,
            "contact_force": float(np.linalg.norm(new_state.contact_wrench[:3])),
        }
        self._state = new_state
        self._done = done
        return new_state, rb, done, info
