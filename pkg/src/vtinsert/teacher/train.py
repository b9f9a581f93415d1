"""Teacher training loop: vectorized rollouts, PPO updates, periodic eval.

Deterministic given (env_cfg, ppo_cfg, seed): one RNG drives action sampling
and minibatch shuffles, the vector env owns per-slot reset streams, and eval
episodes use a fixed seed block derived from the run seed.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from ..env import EpisodeConfig, InsertionEnv, VectorEnv, privileged_state
from ..errors import NumericError, PreconditionError
from ..geom import DeltaPose
from ..nets import Adam
from .policy import (TeacherPolicy, observation_vector, privileged_vector,
                     save_teacher)
from .ppo import PPOConfig, RolloutBuffer, ppo_update

CSV_FIELDS = ("step", "mean_reward", "success_rate", "pi_loss", "v_loss",
              "entropy", "kl", "clip_fraction", "grad_norm")


@dataclass
class TrainResult:
    policy: TeacherPolicy
    curve: list = field(default_factory=list)
    evals: list = field(default_factory=list)      # (env_steps, success_rate)
    best_success: float = -1.0
    best_path: str | None = None
    last_path: str | None = None
    csv_path: str | None = None
    env_steps: int = 0
    stopped_early: bool = False


def _eval_seed(seed: int, i: int) -> int:
    return (seed + 1) * 1_000_003 + i


def evaluate_success(policy: TeacherPolicy, env_cfg: EpisodeConfig,
                     episodes: int, seed: int):
    """Deterministic (mean-action) rollouts; returns (rate, mean_steps)."""
    env = InsertionEnv(env_cfg)
    wins = 0
    steps = 0
    for i in range(episodes):
        s = env.reset(_eval_seed(seed, i))
        for _ in range(env_cfg.max_steps):
            obs = observation_vector(s)[None]
            priv = privileged_vector(privileged_state(s))[None]
            a, _, _, _ = policy.act_batch(obs, priv, rng=None)
            s, _, done, info = env.step(DeltaPose.from_vector(a[0]))
            if done:
                wins += bool(info["success"])
                break
        steps += s.step
    return wins / episodes, steps / episodes


def _gather(states):
    obs = np.stack([observation_vector(s) for s in states])
    priv = np.stack([privileged_vector(privileged_state(s)) for s in states])
    return obs, priv


def default_env_factory(env_cfg: EpisodeConfig):
    return lambda n_envs, seed: VectorEnv(env_cfg, n_envs, seed)


def train_teacher(env_factory, env_cfg: EpisodeConfig, cfg: PPOConfig,
                  seed: int, out_dir: str | None = None) -> TrainResult:
    rng = np.random.default_rng(seed)
    policy = TeacherPolicy(env_cfg, cfg.encoder_hidden, cfg.trunk_hidden,
                           seed=seed, log_std_init=cfg.log_std_init)
    optimizer = Adam(policy.store, lr=cfg.learning_rate)
    venv = env_factory(cfg.n_envs, seed)
    states = venv.reset_all()
    buf = RolloutBuffer(cfg.horizon, cfg.n_envs)
    res = TrainResult(policy=policy)

    writer = None
    csv_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        res.csv_path = os.path.join(out_dir, "teacher_metrics.csv")
        csv_file = open(res.csv_path, "w", newline="")
        writer = csv.DictWriter(csv_file, fieldnames=CSV_FIELDS)
        writer.writeheader()

    def checkpoint(name, metadata):
        if out_dir is None:
            return None
        path = os.path.join(out_dir, name)
        save_teacher(path, policy, metadata)
        return path

    n_updates = math.ceil(cfg.total_steps / (cfg.horizon * cfg.n_envs))
    last_eval = None
    try:
        for update in range(n_updates):
            if cfg.lr_final is not None and n_updates > 1:
                frac = update / (n_updates - 1)
                optimizer.lr = cfg.learning_rate + frac * (cfg.lr_final
                                                           - cfg.learning_rate)
            buf.reset()
            for _ in range(cfg.horizon):
                obs, priv = _gather(states)
                actions, u, logp, value = policy.act_batch(obs, priv, rng)
                states, rewards, dones, _, infos = venv.step(actions)
                term_v = np.zeros(cfg.n_envs)
                done_idx = np.nonzero(dones)[0]
                if len(done_idx):
                    tobs, tpriv = _gather([infos[i]["terminal_state"]
                                           for i in done_idx])
                    term_v[done_idx] = policy.value_batch(tobs, tpriv)
                buf.add(obs, priv, u, logp, value, rewards, dones, term_v)
            obs, priv = _gather(states)
            buf.set_last_values(policy.value_batch(obs, priv))

            metrics = ppo_update(policy, optimizer, buf, cfg, rng)
            res.env_steps += cfg.horizon * cfg.n_envs

            is_eval = ((update + 1) % cfg.eval_every_updates == 0
                       or update == n_updates - 1)
            if is_eval:
                rate, _ = evaluate_success(policy, env_cfg,
                                           cfg.eval_episodes, seed)
                last_eval = rate
                res.evals.append((res.env_steps, rate))
                if rate > res.best_success:
                    res.best_success = rate
                    res.best_path = checkpoint(
                        "teacher_best.ckpt",
                        {"step": res.env_steps, "success": rate, "seed": seed})

            row = {"step": res.env_steps,
                   "mean_reward": float(buf.reward.mean()),
                   "success_rate": last_eval if last_eval is not None else "",
                   **{k: metrics[k] for k in CSV_FIELDS[3:]}}
            res.curve.append(row)
            if writer is not None:
                writer.writerow(row)
                csv_file.flush()

            if (cfg.early_stop_success is not None and is_eval
                    and last_eval >= cfg.early_stop_success):
                res.stopped_early = True
                break
    except (PreconditionError, NumericError):
        checkpoint("teacher_abort.ckpt",
                   {"step": res.env_steps, "success": res.best_success,
                    "seed": seed, "aborted": True})
        if csv_file is not None:
            csv_file.close()
        raise
    res.last_path = checkpoint(
        "teacher_last.ckpt",
        {"step": res.env_steps, "success": last_eval, "seed": seed})
    if res.best_path is None:
        res.best_success = last_eval if last_eval is not None else -1.0
        res.best_path = res.last_path
    if csv_file is not None:
        csv_file.close()
    return res
