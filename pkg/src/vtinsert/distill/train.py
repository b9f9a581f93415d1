"""BC warm-up and DAgger refinement of the student against a frozen teacher.

Action regression runs in the normalized action space (each component
divided by its bound) so translation and rotation errors carry equal weight;
reported losses are that normalized MSE. The mixing coefficient beta decays
across DAgger iterations per BetaSchedule; the teacher always labels.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from ..env import EpisodeConfig
from ..errors import ConfigError, NumericError
from ..nets import Adam
from ..randomize import RandomizationConfig
from .collect import EpisodeCollector
from .dataset import AggregatedDataset
from .student import StudentPolicy, StudentSpec, save_student


@dataclass(frozen=True)
class BetaSchedule:
    kind: str = "linear"
    beta_final: float = 0.0
    horizon: int = 20

    def __post_init__(self):
        if self.kind not in ("linear", "exponential"):
            raise ConfigError(f"unknown beta schedule kind {self.kind!r}")
        if self.horizon <= 0:
            raise ConfigError(f"schedule horizon must be positive, got {self.horizon}")
        if not 0.0 <= self.beta_final <= 1.0:
            raise ConfigError(f"beta_final {self.beta_final} outside [0, 1]")
        if self.kind == "exponential" and self.beta_final <= 0.0:
            raise ConfigError("exponential schedule needs beta_final > 0")

    def beta(self, iteration: int) -> float:
        if iteration < 0:
            raise ConfigError(f"iteration must be nonnegative, got {iteration}")
        frac = min(iteration, self.horizon) / self.horizon
        if self.kind == "linear":
            return 1.0 + (self.beta_final - 1.0) * frac
        return float(self.beta_final ** frac)


@dataclass(frozen=True)
class DistillConfig:
    spec: StudentSpec = field(default_factory=StudentSpec)
    bc_transitions: int = 12000
    bc_epochs: int = 20
    dagger_iterations: int = 20
    dagger_transitions: int = 1000
    dagger_epochs: int = 4
    batch_size: int = 64
    learning_rate: float = 1e-4
    schedule: BetaSchedule = field(default_factory=BetaSchedule)
    stratify: bool = True
    max_burn_in: int | None = None

    def __post_init__(self):
        for name in ("bc_transitions", "bc_epochs", "dagger_transitions",
                     "dagger_epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.dagger_iterations < 0:
            raise ConfigError("dagger_iterations must be nonnegative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class DistillResult:
    student: StudentPolicy
    bc_losses: list
    dagger_rows: list
    dataset: AggregatedDataset
    checkpoint_path: str | None
    csv_path: str | None


def dataset_geometry(spec: StudentSpec) -> dict:
    return {"tactile_resolution": spec.tactile_resolution,
            "cloud_points": spec.cloud_points,
            "image_size": spec.image_size}


def _student_fields(spec: StudentSpec) -> tuple:
    fields = ["obs", "socket_estimate", "label"]
    if "tactile" in spec.modalities:
        fields.append("tactile")
    if "cloud" in spec.modalities:
        fields += ["object_cloud", "socket_cloud"]
    if "depth_image" in spec.modalities:
        fields.append("depth_image")
    return tuple(fields)


def _assemble(spec: StudentSpec, batch: dict) -> dict:
    """Dataset window fields -> the student's forward() input dict."""
    obs = batch["obs"]
    if spec.needs_socket_estimate:
        obs = np.concatenate([obs, batch["socket_estimate"]], axis=-1)
    out = {"obs": obs}
    for name in ("tactile", "object_cloud", "socket_cloud", "depth_image"):
        if name in batch and name in _student_fields(spec):
            out[name] = batch[name]
    return out


def train_mse(student: StudentPolicy, dataset: AggregatedDataset,
              optimizer: Adam, epochs: int, cfg: DistillConfig, rng) -> list:
    """Minibatch regression of student actions onto stored teacher labels."""
    spec = student.spec
    fields = _student_fields(spec)
    inv_b2 = 1.0 / student.bounds ** 2
    losses = []
    n_batches = max(1, len(dataset) // cfg.batch_size)
    for _ in range(epochs):
        total = 0.0
        for _ in range(n_batches):
            idx = dataset.sample_indices(rng, cfg.batch_size, cfg.stratify)
            batch, valid = dataset.windows(idx, spec.k, fields)
            labels = dataset.field("label")[idx]
            act = student.forward(_assemble(spec, batch), valid)
            err = act - labels
            loss = float(np.mean(err * err / student.bounds ** 2))
            if not np.isfinite(loss):
                raise NumericError(
                    f"divergent distillation loss {loss} at dataset size "
                    f"{len(dataset)}; action range "
                    f"[{act.min():.3g}, {act.max():.3g}]")
            total += loss
            dact = 2.0 * err * inv_b2 / err.size
            student.backward(dact)
            optimizer.step()
        losses.append(total / n_batches)
    return losses


def eval_loss(student: StudentPolicy, dataset: AggregatedDataset,
              indices: np.ndarray, cfg: DistillConfig) -> float:
    """Normalized-action MSE on fixed indices, no parameter updates."""
    spec = student.spec
    fields = _student_fields(spec)
    total, count = 0.0, 0
    for lo in range(0, len(indices), cfg.batch_size):
        idx = indices[lo:lo + cfg.batch_size]
        batch, valid = dataset.windows(idx, spec.k, fields)
        act = student.forward(_assemble(spec, batch), valid)
        err = (act - dataset.field("label")[idx]) / student.bounds
        total += float((err * err).sum())
        count += err.size
    return total / count


def bc_warmup(teacher, student: StudentPolicy, env_cfg: EpisodeConfig,
              rand_cfg: RandomizationConfig, cfg: DistillConfig, seed: int,
              dataset: AggregatedDataset | None = None):
    """Teacher-driven collection + MSE regression; returns (dataset, losses)."""
    if dataset is None:
        dataset = AggregatedDataset(dataset_geometry(cfg.spec))
    if len(dataset) < cfg.bc_transitions:
        collector = EpisodeCollector(env_cfg, teacher, cfg.spec, rand_cfg,
                                     seed=seed, student=None,
                                     max_burn_in=cfg.max_burn_in)
        collector.collect(dataset, cfg.bc_transitions - len(dataset), beta=1.0)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    optimizer = Adam(student.store, lr=cfg.learning_rate)
    losses = train_mse(student, dataset, optimizer, cfg.bc_epochs, cfg, rng)
    return dataset, losses


def dagger_iterate(teacher, student: StudentPolicy, env_cfg: EpisodeConfig,
                   rand_cfg: RandomizationConfig, cfg: DistillConfig,
                   dataset: AggregatedDataset, seed: int,
                   optimizer: Adam | None = None):
    """Decaying-beta DAgger; returns per-iteration metric rows."""
    sched = cfg.schedule
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    if optimizer is None:
        optimizer = Adam(student.store, lr=cfg.learning_rate)
    rows = []
    for it in range(cfg.dagger_iterations):
        beta = sched.beta(it)
        collector = EpisodeCollector(env_cfg, teacher, cfg.spec, rand_cfg,
                                     seed=int(np.random.SeedSequence(
                                         [seed, 3, it]).generate_state(1)[0]),
                                     student=student,
                                     max_burn_in=cfg.max_burn_in)
        stats = collector.collect(dataset, cfg.dagger_transitions, beta=beta)
        losses = train_mse(student, dataset, optimizer, cfg.dagger_epochs,
                           cfg, rng)
        rows.append({
            "iteration": it, "beta": beta, "dataset_size": len(dataset),
            "loss": losses[-1],
            "teacher_fraction": stats["teacher_steps"] / max(stats["steps"], 1),
            "collect_successes": stats["successes"],
            "collect_episodes": stats["episodes"],
        })
    return rows


DISTILL_CSV_FIELDS = ("iteration", "beta", "dataset_size", "loss",
                      "teacher_fraction", "collect_successes",
                      "collect_episodes")


def distill_student(teacher, env_cfg: EpisodeConfig,
                    rand_cfg: RandomizationConfig, cfg: DistillConfig,
                    seed: int, out_dir=None,
                    dataset: AggregatedDataset | None = None) -> DistillResult:
    """Full pipeline: build student, BC warm-up, DAgger, artifacts."""
    student = StudentPolicy(env_cfg, cfg.spec, seed=seed)
    dataset, bc_losses = bc_warmup(teacher, student, env_cfg, rand_cfg, cfg,
                                   seed, dataset=dataset)
    optimizer = Adam(student.store, lr=cfg.learning_rate)
    rows = dagger_iterate(teacher, student, env_cfg, rand_cfg, cfg, dataset,
                          seed, optimizer=optimizer)
    ckpt_path = csv_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, f"student_{cfg.spec.variant}.ckpt")
        save_student(ckpt_path, student,
                     metadata={"bc_final_loss": bc_losses[-1],
                               "dataset_size": len(dataset), "seed": seed})
        csv_path = os.path.join(out_dir, f"distill_{cfg.spec.variant}.csv")
        with open(csv_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=DISTILL_CSV_FIELDS)
            w.writeheader()
            for row in rows:
                w.writerow({k: row[k] for k in DISTILL_CSV_FIELDS})
    return DistillResult(student, bc_losses, rows, dataset, ckpt_path, csv_path)
