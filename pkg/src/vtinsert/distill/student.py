"""Student policy variants: modality encoders -> feature history -> transformer.

Per step the student builds f_t = [f_tactile | f_joint | f_obs] from whatever
modalities its variant carries (the joint slot holds either the fused
point-cloud feature or the depth-image embedding), projects a k-step feature
history to d_model, and reads a bounded action off the transformer's last
token. History slots before episode start are zero feature vectors; their
tokens reduce to the projection bias plus the position embedding, so actions
never depend on pad contents.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..env import EpisodeConfig
from ..errors import ConfigError
from ..geom import DeltaPose
from ..nets import (MLP, ConvEncoder, ParamStore, PointEncoder,
                    TransformerEncoder, load_checkpoint, save_checkpoint)

VARIANTS = ("ee", "tactile", "visual_depth", "visual_pcl", "visuotactile")

MODALITY_SETS = {
    "ee": frozenset({"obs"}),
    "tactile": frozenset({"tactile", "obs"}),
    "visual_depth": frozenset({"depth_image", "obs"}),
    "visual_pcl": frozenset({"cloud", "obs"}),
    "visuotactile": frozenset({"tactile", "cloud", "obs"}),
}

_KNOWN_MODALITIES = frozenset({"tactile", "cloud", "depth_image", "obs"})
BASE_OBS_DIM = 13


@dataclass(frozen=True)
class StudentSpec:
    variant: str = "visuotactile"
    tactile_resolution: int = 32
    cloud_points: int = 128
    image_size: int = 32
    k: int = 8
    d_model: int = 128
    heads: int = 4
    depth: int = 2
    ffn_mult: int = 4
    tactile_dim: int = 32
    cloud_feature: int = 64
    joint_dim: int = 64
    obs_feature: int = 32
    point_widths: tuple = (64, 64)
    conv_channels: tuple = (8, 16)
    socket_estimate_sigma: float = 6e-3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown student variant {self.variant!r}; "
                              f"expected one of {VARIANTS}")

    @property
    def modalities(self) -> frozenset:
        return MODALITY_SETS[self.variant]

    @property
    def needs_socket_estimate(self) -> bool:
        # blind variants get a noisy socket-position estimate in o_t
        return self.variant in ("ee", "tactile")

    @property
    def obs_dim(self) -> int:
        return BASE_OBS_DIM + (3 if self.needs_socket_estimate else 0)

    @property
    def feature_dim(self) -> int:
        dim = self.obs_feature
        if "tactile" in self.modalities:
            dim += self.tactile_dim
        if "cloud" in self.modalities or "depth_image" in self.modalities:
            dim += self.joint_dim
        return dim

    def to_dict(self) -> dict:
        return {
            "kind": "student", "variant": self.variant,
            "tactile_resolution": self.tactile_resolution,
            "cloud_points": self.cloud_points, "image_size": self.image_size,
            "k": self.k, "d_model": self.d_model, "heads": self.heads,
            "depth": self.depth, "ffn_mult": self.ffn_mult,
            "tactile_dim": self.tactile_dim,
            "cloud_feature": self.cloud_feature, "joint_dim": self.joint_dim,
            "obs_feature": self.obs_feature,
            "point_widths": list(self.point_widths),
            "conv_channels": list(self.conv_channels),
            "socket_estimate_sigma": self.socket_estimate_sigma,
        }


def spec_from_dict(d: dict) -> StudentSpec:
    kw = {k: v for k, v in d.items() if k != "kind"}
    kw["point_widths"] = tuple(kw["point_widths"])
    kw["conv_channels"] = tuple(kw["conv_channels"])
    return StudentSpec(**kw)


def modality_ablation_spec(base: StudentSpec, modality_set) -> StudentSpec:
    """Resolve a modality subset to the matching named variant."""
    mods = frozenset(modality_set)
    if not mods:
        raise ConfigError("empty modality set")
    unknown = mods - _KNOWN_MODALITIES
    if unknown:
        raise ConfigError(f"unknown modalities {sorted(unknown)}")
    for name, known in MODALITY_SETS.items():
        if mods == known:
            return replace(base, variant=name)
    raise ConfigError(f"unsupported modality combination {sorted(mods)}; "
                      f"supported: {sorted(set(map(tuple, MODALITY_SETS.values())))}")


class StudentPolicy:
    def __init__(self, env_cfg: EpisodeConfig, spec: StudentSpec, seed: int = 0):
        self.env_cfg = env_cfg
        self.spec = spec
        self.bounds = np.array([env_cfg.max_translation] * 3
                               + [env_cfg.max_rotation] * 3)
        self.obs_scale = np.concatenate(
            [np.ones(7), np.full(3, 1.0 / env_cfg.max_translation),
             np.full(3, 1.0 / env_cfg.max_rotation),
             np.full(3, 10.0) if spec.needs_socket_estimate else np.zeros(0)])
        self.obs_scale[0:3] = 10.0
        self.store = ParamStore(seed)
        mods = spec.modalities
        self.tactile_enc = None
        self.object_enc = None
        self.socket_enc = None
        self.joint_mlp = None
        self.depth_enc = None
        if "tactile" in mods:
            self.tactile_enc = ConvEncoder(
                self.store, "tactile_enc", in_channels=3,
                channels=spec.conv_channels,
                input_hw=spec.tactile_resolution, out_dim=spec.tactile_dim)
        if "cloud" in mods:
            self.object_enc = PointEncoder(self.store, "object_points",
                                           widths=spec.point_widths,
                                           out_dim=spec.cloud_feature)
            self.socket_enc = PointEncoder(self.store, "socket_points",
                                           widths=spec.point_widths,
                                           out_dim=spec.cloud_feature)
            self.joint_mlp = MLP(self.store, "joint",
                                 (2 * spec.cloud_feature, spec.joint_dim),
                                 out_activation="tanh")
        if "depth_image" in mods:
            self.depth_enc = ConvEncoder(
                self.store, "depth_enc", in_channels=2,
                channels=spec.conv_channels, input_hw=spec.image_size,
                out_dim=spec.joint_dim)
        self.obs_mlp = MLP(self.store, "obs_mlp",
                           (spec.obs_dim, spec.obs_feature),
                           out_activation="tanh")
        self.proj = MLP(self.store, "proj", (spec.feature_dim, spec.d_model))
        self.transformer = TransformerEncoder(
            self.store, "tf", d_model=spec.d_model, heads=spec.heads,
            depth=spec.depth, k=spec.k, ffn_mult=spec.ffn_mult, out_dim=6)
        self._cache = None

    def spec_dict(self) -> dict:
        return self.spec.to_dict()

    def encode_step(self, batch: dict) -> np.ndarray:
        """Per-slot features for flattened history slots.

        batch arrays are (M, ...) where M = batch * k; returns (M, feature).
        """
        parts = []
        if self.tactile_enc is not None:
            parts.append(self.tactile_enc.forward(batch["tactile"]))
        if self.object_enc is not None:
            fo = self.object_enc.forward(batch["object_cloud"])
            fs = self.socket_enc.forward(batch["socket_cloud"])
            parts.append(self.joint_mlp.forward(
                np.concatenate([fo, fs], axis=-1)))
        if self.depth_enc is not None:
            parts.append(self.depth_enc.forward(batch["depth_image"]))
        obs = np.asarray(batch["obs"], dtype=float)
        if obs.shape[-1] != self.spec.obs_dim:
            raise ConfigError(f"obs dim {obs.shape[-1]}, expected "
                              f"{self.spec.obs_dim} for variant {self.spec.variant}")
        parts.append(self.obs_mlp.forward(obs * self.obs_scale))
        return np.concatenate(parts, axis=-1)

    def _encode_backward(self, df: np.ndarray) -> None:
        at = 0
        if self.tactile_enc is not None:
            self.tactile_enc.backward(df[:, at:at + self.spec.tactile_dim])
            at += self.spec.tactile_dim
        if self.object_enc is not None:
            dj = self.joint_mlp.backward(df[:, at:at + self.spec.joint_dim])
            self.object_enc.backward(dj[:, :self.spec.cloud_feature])
            self.socket_enc.backward(dj[:, self.spec.cloud_feature:])
            at += self.spec.joint_dim
        if self.depth_enc is not None:
            self.depth_enc.backward(df[:, at:at + self.spec.joint_dim])
            at += self.spec.joint_dim
        self.obs_mlp.backward(df[:, at:])

    def head_forward(self, features: np.ndarray) -> np.ndarray:
        """(B, k, feature) padded feature sequences -> bounded actions (B, 6)."""
        seq = self.proj.forward(features)
        raw = self.transformer.forward(seq)
        squashed = np.tanh(raw)
        self._head_cache = squashed
        return squashed * self.bounds

    def head_backward(self, dact: np.ndarray) -> np.ndarray:
        draw = dact * self.bounds * (1.0 - self._head_cache ** 2)
        dseq = self.transformer.backward(draw)
        return self.proj.backward(dseq)

    def forward(self, batch: dict, valid: np.ndarray) -> np.ndarray:
        """Full differentiable path over (B, k, ...) history batches.

        valid is (B, k) bool; invalid slots become zero feature vectors.
        """
        B, k = valid.shape
        flat = {key: v.reshape((B * k,) + v.shape[2:])
                for key, v in batch.items()}
        f = self.encode_step(flat)
        f = f * valid.reshape(B * k, 1)
        self._cache = (valid, f.shape)
        return self.head_forward(f.reshape(B, k, -1))

    def backward(self, dact: np.ndarray) -> None:
        valid, fshape = self._cache
        B, k = valid.shape
        df = self.head_backward(dact).reshape(fshape)
        df = df * valid.reshape(B * k, 1)
        self._encode_backward(df)


def student_act(policy: StudentPolicy, feature_history: np.ndarray) -> DeltaPose:
    """Action from an already-encoded (k, feature) padded history."""
    k, fdim = policy.spec.k, policy.spec.feature_dim
    feature_history = np.asarray(feature_history, dtype=float)
    if feature_history.shape != (k, fdim):
        raise ConfigError(f"feature history shape {feature_history.shape}, "
                          f"expected ({k}, {fdim})")
    act = policy.head_forward(feature_history[None])[0]
    return DeltaPose.from_vector(act)


class FeatureHistory:
    """Rolling per-episode feature window with zero left-padding."""

    def __init__(self, spec: StudentSpec):
        self.k = spec.k
        self.dim = spec.feature_dim
        self.reset()

    def reset(self) -> None:
        self.window = np.zeros((self.k, self.dim))
        self.count = 0

    def push(self, f: np.ndarray) -> np.ndarray:
        self.window = np.roll(self.window, -1, axis=0)
        self.window[-1] = f
        self.count += 1
        return self.window


def save_student(path, policy: StudentPolicy, metadata: dict | None = None) -> str:
    return save_checkpoint(path, policy.store.copy_values(),
                           policy.spec_dict(), metadata)


def load_student(path, env_cfg: EpisodeConfig) -> tuple[StudentPolicy, dict]:
    ck = load_checkpoint(path)
    if ck.spec.get("kind") != "student":
        raise ConfigError(f"{path}: not a student checkpoint "
                          f"(kind={ck.spec.get('kind')!r})")
    policy = StudentPolicy(env_cfg, spec_from_dict(ck.spec))
    ck.load_into(policy.store)
    return policy, ck.metadata
