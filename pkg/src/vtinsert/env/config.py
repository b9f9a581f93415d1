"""Episode configuration and the object/socket specs sampled from it.

Frames: world z is up, the table plane is z = 0. The socket is a slab of
height `height` whose cavity goes all the way down, so the cavity floor
coincides with the table plane and the rim plane sits at z = height (socket
frame). The socket frame origin is the cavity floor center. The object frame
origin is the bottom center of the prism. The EE frame is calibrated to the
nominally grasped object, so the grasp offset holds only the grasp error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from ..errors import ConfigError
from ..geom import Pose
from ..shapes import SHAPE_NAMES, cross_section, dilate, polygon_area

SCALE_VALID = (0.9, 1.2)


@lru_cache(maxsize=512)
def _section(shape: str, dimensions: tuple, scale: float) -> np.ndarray:
    poly = cross_section(shape, dimensions, scale)
    poly.setflags(write=False)
    return poly


@lru_cache(maxsize=512)
def _cavity(shape: str, dimensions: tuple, scale: float, clearance: float) -> np.ndarray:
    poly = dilate(cross_section(shape, dimensions, scale), clearance)
    poly.setflags(write=False)
    return poly


@dataclass(frozen=True)
class ObjectSpec:
    """Prismatic object: a cross-section extruded from z=0 to z=height."""

    shape: str
    dimensions: tuple
    height: float
    mass: float
    friction: float
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(float(d) for d in self.dimensions))
        if self.shape not in SHAPE_NAMES:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.height <= 0 or self.mass <= 0 or self.friction <= 0:
            raise ConfigError("object height, mass, friction must be positive")
        if not SCALE_VALID[0] <= self.scale <= SCALE_VALID[1]:
            raise ConfigError(f"scale {self.scale} outside valid range {SCALE_VALID}")
        if polygon_area(self.polygon()) <= 0:
            raise ConfigError(f"degenerate cross-section for {self.shape} {self.dimensions}")

    def polygon(self) -> np.ndarray:
        """Scaled (n, 2) CCW cross-section in the object frame."""
        return _section(self.shape, self.dimensions, self.scale)


@dataclass(frozen=True)
class SocketSpec:
    """Socket slab whose cavity is the object's cross-section dilated by the clearance."""

    shape: str
    dimensions: tuple
    scale: float
    clearance: float
    height: float
    pose: Pose

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(float(d) for d in self.dimensions))
        if self.clearance <= 0:
            raise ConfigError(f"clearance must be positive, got {self.clearance}")
        if self.height <= 0:
            raise ConfigError(f"socket height must be positive, got {self.height}")

    def cavity_polygon(self) -> np.ndarray:
        """(n, 2) CCW cavity outline in the socket frame."""
        return _cavity(self.shape, self.dimensions, self.scale, self.clearance)


def _check_range(name: str, rng, lo_ok=None, hi_ok=None) -> None:
    lo, hi = rng
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name} range {rng} not well-ordered")
    if lo_ok is not None and lo < lo_ok:
        raise ConfigError(f"{name} range {rng} below minimum {lo_ok}")
    if hi_ok is not None and hi > hi_ok:
        raise ConfigError(f"{name} range {rng} above maximum {hi_ok}")


@dataclass(frozen=True)
class EpisodeConfig:
    """Sampling ranges and physical constants for one episode distribution.

    Ranges are (lo, hi) pairs sampled uniformly; symmetric scalars r mean
    [-r, r]. Distances in meters, angles in radians, forces in newtons.
    """

    shapes: tuple = SHAPE_NAMES
    position_range: float = 0.10            # socket xy offset from the hand start
    object_angle_range: float = math.radians(20.0)   # grasp error Euler angles
    socket_yaw_range: float = math.radians(5.0)
    scale_range: tuple = (0.95, 1.1)
    clearance_range: tuple = (0.125e-3, 0.95e-3)
    socket_height_range: tuple = (0.010, 0.020)
    object_height: float = 0.050
    grasp_translation_range: float = 0.005
    start_height_range: tuple = (0.030, 0.060)       # EE start above the rim plane
    start_xy_jitter: float = 0.010
    mass_range: tuple = (0.05, 0.30)
    friction_range: tuple = (0.5, 1.0)
    max_steps: int = 256
    max_translation: float = 5e-3            # per-step action bounds
    max_rotation: float = math.radians(2.0)
    control_dt: float = 0.1
    stiffness: float = 1e4                   # contact wrench per meter of correction
    drift_threshold: float = 2.0             # grasp slips only above this force
    translation_slip_gain: float = 2e-5      # m per N of excess force
    rotation_slip_gain: float = 1e-4         # rad per N*m of contact torque
    drop_threshold: float = 0.03             # grasp offset translation ending the episode
    engagement_threshold: float = 5e-3       # eps_e for the engagement bonus
    success_depth_fraction: float = 0.9
    tilt_tolerance: float = 0.10
    reward_weights: tuple = (-0.9, 0.4, -0.5, -0.1, -0.1)

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))
        for f in ("scale_range", "clearance_range", "socket_height_range",
                  "start_height_range", "mass_range", "friction_range",
                  "reward_weights"):
            object.__setattr__(self, f, tuple(float(v) for v in getattr(self, f)))
        self.validate()

    def validate(self) -> None:
        unknown = [s for s in self.shapes if s not in SHAPE_NAMES]
        if unknown or not self.shapes:
            raise ConfigError(f"bad shape list {self.shapes}")
        _check_range("scale", self.scale_range, *SCALE_VALID)
        _check_range("clearance", self.clearance_range, lo_ok=1e-6)
        _check_range("socket_height", self.socket_height_range, lo_ok=1e-4)
        _check_range("start_height", self.start_height_range, lo_ok=0.0)
        _check_range("mass", self.mass_range, lo_ok=1e-4)
        _check_range("friction", self.friction_range, lo_ok=1e-3)
        for name in ("position_range", "object_angle_range", "socket_yaw_range",
                     "grasp_translation_range", "start_xy_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.max_steps <= 0:
            raise ConfigError(f"max_steps must be positive, got {self.max_steps}")
        for name in ("object_height", "max_translation", "max_rotation", "control_dt",
                     "stiffness", "drift_threshold", "drop_threshold",
                     "engagement_threshold", "tilt_tolerance"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.success_depth_fraction <= 1:
            raise ConfigError("success_depth_fraction must be in (0, 1]")
        if self.translation_slip_gain < 0 or self.rotation_slip_gain < 0:
            raise ConfigError("slip gains must be nonnegative")
        if len(self.reward_weights) != 5:
            raise ConfigError("reward_weights needs exactly 5 entries")
        # The engagement ball must contain the whole success region so that
        # success always implies the engagement bonus.
        eps_needed = math.hypot(self.clearance_range[1],
                                (1 - self.success_depth_fraction) * self.socket_height_range[1])
        if self.engagement_threshold <= eps_needed:
            raise ConfigError(
                f"engagement_threshold {self.engagement_threshold} does not cover the "
                f"success region (needs > {eps_needed:.4g})")

    def replace(self, **kw) -> "EpisodeConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return EpisodeConfig(**vals)
