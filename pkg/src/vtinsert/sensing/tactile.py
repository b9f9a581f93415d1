"""Taxel-grid tactile images for three fingertip sensors.

Fingers sit at 0, 120 and 240 degrees around the grasped object. The normal
force on each finger is a cosine-weighted share of the total (grasp squeeze
plus lateral contact load); the shares sum to the total exactly because the
three placement cosines cancel. A raw image is a baseline grasp blob (whose
offset encodes the in-hand grasp error) plus a contact blob displaced along
the tangential force direction; reference subtraction then removes the
background as on the real sensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..geom import Pose

TAXEL_RESOLUTION = 32
FINGER_ANGLES = np.deg2rad([0.0, 120.0, 240.0])

_BLOB_SIGMA_FRAC = 0.16         # Gaussian blob width as a fraction of the grid
_GRASP_GAIN = 0.12              # intensity per N of grasp share
_CONTACT_GAIN = 0.035           # intensity per N of contact share
_OFFSET_PIX_PER_M = 800.0       # grasp-offset blob displacement
_FORCE_PIX_PER_N = 0.35         # contact blob displacement per N tangential


@dataclass
class TactileImage:
    """(H, W) taxel intensities; in [-1, 1] once a reference is subtracted."""

    values: np.ndarray

    @property
    def resolution(self):
        return self.values.shape


def force_shares(lateral: np.ndarray, grasp_force: float) -> np.ndarray:
    """Per-finger normal-force shares (N); sums exactly to grasp + |lateral|."""
    mag = float(np.hypot(lateral[0], lateral[1]))
    total = max(grasp_force, 0.0) + mag
    if total <= 0.0:
        return np.zeros(3)
    kappa = mag / total
    theta = np.arctan2(lateral[1], lateral[0]) if mag > 0 else 0.0
    return total * (1.0 + kappa * np.cos(theta - FINGER_ANGLES)) / 3.0


def _blob(grid: np.ndarray, center: np.ndarray, peak: float, sigma: float) -> None:
    if peak <= 0.0:
        return
    h, w = grid.shape
    v, u = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d2 = (u - center[0]) ** 2 + (v - center[1]) ** 2
    grid += peak * np.exp(-0.5 * d2 / sigma**2)


def render_tactile(wrench: np.ndarray, grasp_force: float, finger_index: int,
                   grasp_offset: Pose | None = None,
                   resolution: int = TAXEL_RESOLUTION) -> TactileImage:
    """Raw (pre-subtraction) image for one finger.

    The grasp blob sits near the center, displaced by the grasp offset
    mapped into the finger's tangential/axial plane; the contact blob is
    displaced along the tangential contact force and scales linearly with
    the finger's share of the lateral load.
    """
    if finger_index not in (0, 1, 2):
        raise ConfigError(f"finger index must be 0, 1 or 2, got {finger_index}")
    phi = FINGER_ANGLES[finger_index]
    tangent = np.array([-np.sin(phi), np.cos(phi)])
    grid = np.zeros((resolution, resolution))
    center = np.array([(resolution - 1) / 2.0, (resolution - 1) / 2.0])
    sigma = _BLOB_SIGMA_FRAC * resolution

    lim = 0.45 * resolution

    if grasp_force > 0.0:
        disp = np.zeros(2)
        if grasp_offset is not None:
            disp = _OFFSET_PIX_PER_M * np.array([
                float(tangent @ grasp_offset.position[:2]),
                float(grasp_offset.position[2]),
            ])
        _blob(grid, center + np.clip(disp, -lim, lim),
              _GRASP_GAIN * grasp_force / 3.0, sigma)

    lateral = np.asarray(wrench, dtype=float)[:2]
    mag = float(np.hypot(*lateral))
    if mag > 0.0:
        theta = np.arctan2(lateral[1], lateral[0])
        # share in excess of the resting grasp share: linear in the wrench
        excess = mag * (1.0 + np.cos(theta - phi)) / 3.0
        axial = float(wrench[2])
        disp = _FORCE_PIX_PER_N * np.array([float(tangent @ lateral), axial])
        _blob(grid, center + np.clip(disp, -lim, lim),
              _CONTACT_GAIN * excess, sigma * 0.7)
    if abs(float(wrench[2])) > 0.0:
        _blob(grid, center, _CONTACT_GAIN * abs(float(wrench[2])) / 3.0, sigma)

    return TactileImage(np.clip(grid, 0.0, 1.0))


def subtract_reference(raw: TactileImage, ref: TactileImage) -> TactileImage:
    """Elementwise raw - ref, clamped to [-1, 1]."""
    if raw.values.shape != ref.values.shape:
        raise ConfigError(
            f"taxel resolutions differ: {raw.values.shape} vs {ref.values.shape}")
    return TactileImage(np.clip(raw.values - ref.values, -1.0, 1.0))


def make_reference_pool(count: int = 8, resolution: int = TAXEL_RESOLUTION,
                        seed: int = 0) -> list:
    """Smooth baseline images with differing illumination offsets."""
    rng = np.random.default_rng(seed)
    pool = []
    v, u = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
    for _ in range(count):
        level = rng.uniform(0.02, 0.08)
        gx, gy = rng.uniform(-0.03, 0.03, size=2) / resolution
        img = level + gx * (u - resolution / 2) + gy * (v - resolution / 2)
        cx, cy = rng.uniform(0.2, 0.8, size=2) * resolution
        amp = rng.uniform(0.0, 0.04)
        img = img + amp * np.exp(-0.5 * ((u - cx) ** 2 + (v - cy) ** 2)
                                 / (0.8 * resolution) ** 2)
        pool.append(TactileImage(np.clip(img, 0.0, 0.2)))
    return pool
