"""Paired policy evaluation: trial protocol, modality ablations, cloud-noise
sweeps, and report export.

Pairing contract: every policy evaluated under the same (suite seed, trial
index) sees the same environment seed, the same begin-episode perturbation
stream (socket offset, camera pose, action delay/scale) and the same sensor
noise stream, so success-rate differences are attributable to the policy.
Each trial builds a fresh SensorRig from trial-local seeds, which keeps
trials independent of episode length and of each other.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__ as _code_version
from .distill.collect import SensorRig, student_step_features
from .distill.student import FeatureHistory, StudentPolicy, StudentSpec, load_student
from .env import EpisodeConfig, InsertionEnv, insertion_depth
from .errors import ConfigError, PreconditionError
from .geom import DeltaPose, compose, quat_conj, quat_mul, quat_normalize, quat_to_axis_angle, quat_rotate
from .randomize import RandomizationConfig
from .teacher import TeacherPolicy, load_teacher, teacher_action

REPORT_SCHEMA_VERSION = 1
CSV_HEADER = "variant,seed,object,gamma,trial,success,steps,failure_cause"

# a timeout that ends at least this deep inside the cavity counts as wedged
WEDGE_DEPTH_FRACTION = 0.1


@dataclass(frozen=True)
class TrialRecord:
    variant: str
    seed: int
    object: str
    gamma: float
    trial: int
    success: bool
    steps: int
    failure_cause: str     # "" | "timeout" | "drop" | "wedged"

    def as_row(self) -> str:
        return ",".join([self.variant, str(self.seed), self.object,
                         repr(float(self.gamma)), str(self.trial),
                         str(int(self.success)), str(self.steps),
                         self.failure_cause])


@dataclass(frozen=True)
class EvalResult:
    variant: str
    seed: int
    gamma: float
    trials: tuple

    @property
    def success_rate(self) -> float:
        if not self.trials:
            return 0.0
        return sum(t.success for t in self.trials) / len(self.trials)

    @property
    def mean_steps(self) -> float:
        if not self.trials:
            return 0.0
        return sum(t.steps for t in self.trials) / len(self.trials)


@dataclass(frozen=True)
class AblationSpec:
    variant: str
    checkpoint: str | None
    n_trials: int = 200
    seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")


@dataclass(frozen=True)
class NoiseSweepSpec:
    gamma_grid: tuple = (0.0, 4e-6, 1.6e-5, 3.6e-5, 6.4e-5, 1e-4)
    trials_per_level: int = 100
    variants: tuple = ("visual_pcl", "visuotactile")

    def __post_init__(self):
        if any(g < 0 for g in self.gamma_grid):
            raise ConfigError("gamma values must be nonnegative")
        if list(self.gamma_grid) != sorted(self.gamma_grid):
            raise ConfigError("gamma grid must be sorted ascending")
        if self.trials_per_level < 1:
            raise ConfigError("trials_per_level must be >= 1")


@dataclass
class EvalReport:
    schema_version: int = REPORT_SCHEMA_VERSION
    metadata: dict = field(default_factory=dict)
    trials: list = field(default_factory=list)
    absent: tuple = ()

    def extend(self, result: EvalResult) -> None:
        self.trials.extend(result.trials)

    def variants(self) -> tuple:
        return tuple(sorted({t.variant for t in self.trials}))

    def success_rate(self, variant, seed=None, gamma=None) -> float:
        picked = [t for t in self.trials if t.variant == variant
                  and (seed is None or t.seed == seed)
                  and (gamma is None or t.gamma == gamma)]
        if not picked:
            raise PreconditionError(f"no trials recorded for {variant!r}")
        return sum(t.success for t in picked) / len(picked)

    def summary(self) -> dict:
        out = {}
        for variant in self.variants():
            rows = [t for t in self.trials if t.variant == variant]
            seeds = sorted({t.seed for t in rows})
            by_seed = {s: self.success_rate(variant, seed=s) for s in seeds}
            rates = np.array([by_seed[s] for s in seeds])
            objects = sorted({t.object for t in rows})
            per_object = {
                o: (sum(t.success for t in rows if t.object == o)
                    / sum(1 for t in rows if t.object == o))
                for o in objects
            }
            out[variant] = {
                "success_rate": sum(t.success for t in rows) / len(rows),
                "success_by_seed": {str(s): by_seed[s] for s in seeds},
                "mean_over_seeds": float(rates.mean()),
                "std_over_seeds": float(rates.std()),
                "std_flagged": len(seeds) < 2,
                "mean_steps": sum(t.steps for t in rows) / len(rows),
                "per_object": per_object,
                "n_trials": len(rows),
            }
        return out


def config_digest(*cfgs) -> str:
    """Order-sensitive digest of dataclass reprs; any mutation changes it."""
    h = hashlib.sha256()
    for cfg in cfgs:
        h.update(repr(cfg).encode())
    return h.hexdigest()[:16]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


class ZeroPolicy:
    """Scripted always-fail baseline: never moves, times out."""

    needs_sensors = False
    variant = "zero"

    def begin_episode(self, env, rig, rng):
        pass

    def act(self, state, rig, rng) -> DeltaPose:
        return DeltaPose.zero()


class OraclePolicy:
    """Scripted privileged proportional controller: center over the cavity,
    align orientation, then descend to near the bottom. Closed loop on the
    true object pose, so grasp slip is corrected as it happens."""

    needs_sensors = False
    variant = "oracle"

    def __init__(self, env_cfg: EpisodeConfig, hover: float = 3e-3,
                 center_fraction: float = 0.4, align_tolerance: float = 0.02):
        self.cfg = env_cfg
        self.hover = hover
        self.center_fraction = center_fraction
        self.align_tolerance = align_tolerance

    def begin_episode(self, env, rig, rng):
        pass

    def act(self, state, rig, rng) -> DeltaPose:
        cfg = self.cfg
        sock = state.socket.pose
        rel = compose(sock.inverse(), state.object_pose)
        h = state.socket.height

        q_err = quat_mul(sock.orientation, quat_conj(state.object_pose.orientation))
        rot = quat_to_axis_angle(quat_normalize(q_err))
        ang = float(np.linalg.norm(rot))
        if ang > cfg.max_rotation:
            rot = rot * (cfg.max_rotation / ang)

        xy_err = -rel.position[:2]
        r_xy = float(np.hypot(*xy_err))
        centered = r_xy < self.center_fraction * state.socket.clearance
        if centered and ang < self.align_tolerance:
            target_z = 0.05 * h
        else:
            target_z = h + self.hover
        dz = np.clip(target_z - rel.position[2],
                     -cfg.max_translation, cfg.max_translation)
        d_sock = np.array([xy_err[0], xy_err[1], dz])
        d_world = quat_rotate(sock.orientation, d_sock)
        return DeltaPose(d_world, rot).clamped(cfg.max_translation,
                                               cfg.max_rotation)


class TeacherEvalPolicy:
    """Privileged teacher in eval mode (deterministic action mean)."""

    needs_sensors = False
    variant = "teacher"

    def __init__(self, teacher: TeacherPolicy):
        self.teacher = teacher

    def begin_episode(self, env, rig, rng):
        pass

    def act(self, state, rig, rng) -> DeltaPose:
        return teacher_action(self.teacher, state)


class StudentEvalPolicy:
    """Sensor-limited student: per-step sensing through the rig, feature
    history window, deterministic head forward."""

    needs_sensors = True

    def __init__(self, student: StudentPolicy):
        self.student = student
        self.spec = student.spec
        self.variant = student.spec.variant
        self.history = FeatureHistory(student.spec)
        self._estimate = None
        self._sense_want = frozenset(self.spec.modalities - {"obs"})

    def begin_episode(self, env, rig, rng):
        self.history.reset()
        self._estimate = rig.socket_estimate(env.state, rng)

    def act(self, state, rig, rng) -> DeltaPose:
        record = rig.sense(state, rng, modalities=self._sense_want)
        feats = student_step_features(self.student, record, self._estimate)
        window = self.history.push(feats)
        action = self.student.head_forward(window[None])[0]
        return DeltaPose.from_vector(action)


def _classify(info, state) -> str:
    if info["success"]:
        return ""
    if info["failure_cause"] == "drop":
        return "drop"
    depth = insertion_depth(state)
    if depth >= WEDGE_DEPTH_FRACTION * state.socket.height:
        return "wedged"
    return "timeout"


def run_trial(policy, env_cfg: EpisodeConfig, rand_cfg: RandomizationConfig,
              trial_seed, gamma: float = 0.0) -> tuple:
    """One seeded episode; returns (object shape, success, steps, cause)."""
    if not isinstance(trial_seed, np.random.SeedSequence):
        trial_seed = np.random.SeedSequence(trial_seed)
    env_seed, rig_seed, noise_seed = trial_seed.spawn(3)
    env = InsertionEnv(env_cfg)
    state = env.reset(int(env_seed.generate_state(1)[0]))
    spec = getattr(policy, "spec", None) or StudentSpec(
        tactile_resolution=8, cloud_points=8, image_size=8)
    rig = SensorRig(spec, rand_cfg, int(rig_seed.generate_state(1)[0]),
                    gamma=gamma if gamma > 0.0 else None)
    rig.begin_episode(env, None)
    noise_rng = np.random.default_rng(noise_seed)
    policy.begin_episode(env, rig, noise_rng)
    shape = env.state.object.shape
    steps = 0
    while True:
        command = policy.act(env.state, rig, noise_rng)
        executed = rig.process_action(command, env_cfg)
        state, _, done, info = env.step(executed)
        steps += 1
        if done:
            return shape, bool(info["success"]), steps, _classify(info, state)


def run_eval(policy, env_cfg: EpisodeConfig, n_trials: int, seed: int,
             rand_cfg: RandomizationConfig | None = None,
             gamma: float = 0.0, variant: str | None = None) -> EvalResult:
    """n_trials seeded episodes; the trial log is the source of truth, the
    rate is recomputed from it."""
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    if rand_cfg is None:
        rand_cfg = RandomizationConfig.zeroed()
    variant = variant or getattr(policy, "variant", "policy")
    children = np.random.SeedSequence(seed).spawn(n_trials)
    trials = []
    for i, child in enumerate(children):
        shape, success, steps, cause = run_trial(policy, env_cfg, rand_cfg,
                                                 child, gamma=gamma)
        trials.append(TrialRecord(variant=variant, seed=seed, object=shape,
                                  gamma=gamma, trial=i, success=success,
                                  steps=steps, failure_cause=cause))
    return EvalResult(variant=variant, seed=seed, gamma=gamma,
                      trials=tuple(trials))


def _load_policy(spec: AblationSpec, env_cfg: EpisodeConfig):
    if spec.variant == "teacher":
        teacher, _ = load_teacher(spec.checkpoint, env_cfg)
        return TeacherEvalPolicy(teacher)
    student, _ = load_student(spec.checkpoint, env_cfg)
    if student.spec.variant != spec.variant:
        raise ConfigError(
            f"checkpoint variant {student.spec.variant!r} does not match "
            f"declared variant {spec.variant!r}")
    return StudentEvalPolicy(student)


def ablation_suite(specs, env_cfg: EpisodeConfig,
                   rand_cfg: RandomizationConfig | None = None) -> EvalReport:
    """Paired evaluation of every variant over identical seed sets. Missing
    checkpoints are listed as absent and the suite continues."""
    if rand_cfg is None:
        rand_cfg = RandomizationConfig.zeroed()
    report = EvalReport(metadata={
        "kind": "ablation",
        "config_hash": config_digest(env_cfg, rand_cfg),
        "code_version": _code_version,
        "checkpoints": {},
    })
    absent = []
    for spec in specs:
        try:
            policy = _load_policy(spec, env_cfg)
        except (OSError, ConfigError) as err:
            if isinstance(err, ConfigError):
                raise
            absent.append(spec.variant)
            continue
        report.metadata["checkpoints"][spec.variant] = file_digest(spec.checkpoint)
        for s in spec.seeds:
            report.extend(run_eval(policy, env_cfg, spec.n_trials, s,
                                   rand_cfg=rand_cfg, variant=spec.variant))
    report.absent = tuple(absent)
    return report


def noise_sweep(sweep: NoiseSweepSpec, env_cfg: EpisodeConfig,
                checkpoints: dict, seeds=(0,), n_trials: int | None = None,
                rand_cfg: RandomizationConfig | None = None) -> EvalReport:
    """Per gamma level, inject eval-time cloud noise and evaluate each
    variant on the same seeds. The randomization config must come out
    byte-identical (noise injection never leaks into training settings)."""
    if rand_cfg is None:
        rand_cfg = RandomizationConfig.zeroed()
    guard = config_digest(rand_cfg)
    n_trials = sweep.trials_per_level if n_trials is None else n_trials
    policies = {}
    for variant in sweep.variants:
        if variant not in checkpoints:
            raise PreconditionError(f"no checkpoint for variant {variant!r}")
        policies[variant] = _load_policy(
            AblationSpec(variant, checkpoints[variant], n_trials=n_trials,
                         seeds=tuple(seeds)), env_cfg)
    report = EvalReport(metadata={
        "kind": "noise_sweep",
        "config_hash": config_digest(env_cfg, rand_cfg),
        "code_version": _code_version,
        "gamma_grid": list(sweep.gamma_grid),
        "checkpoints": {v: file_digest(checkpoints[v]) for v in sweep.variants},
    })
    for gamma in sweep.gamma_grid:
        for variant in sweep.variants:
            for s in seeds:
                report.extend(run_eval(policies[variant], env_cfg, n_trials,
                                       s, rand_cfg=rand_cfg, gamma=gamma,
                                       variant=variant))
    if config_digest(rand_cfg) != guard:
        raise AssertionError("randomization config mutated during sweep")
    return report


def isotonic_fit(y, increasing: bool = True) -> np.ndarray:
    """Pool-adjacent-violators projection onto the monotone cone."""
    y = np.asarray(y, dtype=float)
    if not increasing:
        return -isotonic_fit(-y, increasing=True)
    levels = [[v, 1] for v in y]
    merged = []
    for level in levels:
        merged.append(level)
        while len(merged) > 1 and merged[-2][0] > merged[-1][0] + 0.0:
            v2, w2 = merged.pop()
            v1, w1 = merged.pop()
            merged.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2])
    out = []
    for value, weight in merged:
        out.extend([value] * weight)
    return np.array(out)


def isotonic_trend_ok(y) -> bool:
    """True when a non-decreasing fit explains the sequence at least as
    well as a non-increasing one."""
    y = np.asarray(y, dtype=float)
    up = float(((isotonic_fit(y, True) - y) ** 2).sum())
    down = float(((isotonic_fit(y, False) - y) ** 2).sum())
    return up <= down + 1e-12


def _sorted_trials(report: EvalReport) -> list:
    return sorted(report.trials,
                  key=lambda t: (t.variant, t.seed, t.gamma, t.trial))


def _report_payload(report: EvalReport) -> dict:
    return {
        "schema_version": report.schema_version,
        "metadata": report.metadata,
        "absent": list(report.absent),
        "summary": report.summary(),
        "trials": [
            {"variant": t.variant, "seed": t.seed, "object": t.object,
             "gamma": t.gamma, "trial": t.trial, "success": t.success,
             "steps": t.steps, "failure_cause": t.failure_cause}
            for t in _sorted_trials(report)
        ],
    }


def _text_table(report: EvalReport) -> str:
    lines = [f"evaluation report (schema v{report.schema_version})"]
    if report.absent:
        lines.append("absent variants: " + ", ".join(report.absent))
    summary = report.summary()
    header = f"{'variant':<14} {'rate':>6} {'mean':>6} {'std':>6} {'steps':>7} {'trials':>7}"
    lines.append(header)
    lines.append("-" * len(header))
    for variant in sorted(summary):
        row = summary[variant]
        std = "n/a" if row["std_flagged"] else f"{row['std_over_seeds']:.3f}"
        lines.append(f"{variant:<14} {row['success_rate']:>6.3f} "
                     f"{row['mean_over_seeds']:>6.3f} {std:>6} "
                     f"{row['mean_steps']:>7.1f} {row['n_trials']:>7d}")
    return "\n".join(lines) + "\n"


def export_report(report: EvalReport, path) -> dict:
    """Writes <path>.csv / .json / .txt with stable ordering; re-export of
    the same report is byte-identical."""
    import pathlib

    base = pathlib.Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    files = {
        "csv": base.with_suffix(".csv"),
        "json": base.with_suffix(".json"),
        "txt": base.with_suffix(".txt"),
    }
    rows = [CSV_HEADER] + [t.as_row() for t in _sorted_trials(report)]
    files["csv"].write_text("\n".join(rows) + "\n")
    files["json"].write_text(
        json.dumps(_report_payload(report), indent=2, sort_keys=True) + "\n")
    files["txt"].write_text(_text_table(report))
    return files


def load_report(path) -> EvalReport:
    """Inverse of export_report's JSON file."""
    with open(path) as f:
        payload = json.load(f)
    if payload.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ConfigError("unsupported report schema version")
    report = EvalReport(schema_version=payload["schema_version"],
                        metadata=payload["metadata"],
                        absent=tuple(payload["absent"]))
    for row in payload["trials"]:
        report.trials.append(TrialRecord(
            variant=row["variant"], seed=row["seed"], object=row["object"],
            gamma=row["gamma"], trial=row["trial"], success=row["success"],
            steps=row["steps"], failure_cause=row["failure_cause"]))
    return report
