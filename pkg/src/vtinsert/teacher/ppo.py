"""PPO core: rollout buffer, GAE, clipped-surrogate update.

Episode ends are treated as truncations of a continuing task: every finished
episode bootstraps from the value of its terminal state (handed back by the
vector env), so success is never penalized for cutting off future engagement
reward and drops are penalized through the low value of the post-drop state.
The advantage recursion itself never crosses an episode boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericError, PreconditionError
from ..nets import Adam
from .policy import ACTION_DIM, OBS_DIM, PRIV_DIM, gaussian_tanh_logprob


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_ratio: float = 0.2
    epochs: int = 4
    minibatch_size: int = 512
    learning_rate: float = 3e-4
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    max_grad_norm: float = 2.0
    log_std_init: float = -1.0
    lr_final: float | None = None   # linear anneal target; None keeps lr flat
    horizon: int = 64
    n_envs: int = 64
    total_steps: int = 2_000_000
    eval_every_updates: int = 10
    eval_episodes: int = 20
    early_stop_success: float | None = None
    encoder_hidden: tuple = (64,)
    trunk_hidden: tuple = (64, 64)

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0) or not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"gamma/lam out of (0,1]: {self.gamma}, {self.lam}")
        if self.clip_ratio <= 0:
            raise ConfigError(f"clip_ratio must be positive, got {self.clip_ratio}")
        for name in ("epochs", "minibatch_size", "horizon", "n_envs", "total_steps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


class RolloutBuffer:
    """Fixed-capacity (horizon, n_envs) storage filled one step at a time."""

    def __init__(self, horizon: int, n_envs: int):
        self.horizon = horizon
        self.n_envs = n_envs
        self.obs = np.zeros((horizon, n_envs, OBS_DIM))
        self.priv = np.zeros((horizon, n_envs, PRIV_DIM))
        self.u = np.zeros((horizon, n_envs, ACTION_DIM))
        self.logp = np.zeros((horizon, n_envs))
        self.value = np.zeros((horizon, n_envs))
        self.reward = np.zeros((horizon, n_envs))
        self.done = np.zeros((horizon, n_envs), dtype=bool)
        self.term_value = np.zeros((horizon, n_envs))
        self.last_value = None
        self.t = 0

    @property
    def full(self) -> bool:
        return self.t >= self.horizon

    def add(self, obs, priv, u, logp, value, reward, done, term_value):
        if self.full:
            raise PreconditionError("rollout buffer already full")
        t = self.t
        self.obs[t] = obs
        self.priv[t] = priv
        self.u[t] = u
        self.logp[t] = logp
        self.value[t] = value
        self.reward[t] = reward
        self.done[t] = done
        self.term_value[t] = term_value
        self.t += 1

    def set_last_values(self, v) -> None:
        """Values of the live states after the final stored step."""
        self.last_value = np.asarray(v, dtype=float)

    def reset(self) -> None:
        self.t = 0
        self.last_value = None


def compute_gae(buf: RolloutBuffer, gamma: float, lam: float):
    """Standard GAE; bootstraps terminal values, resets the chain at dones."""
    if not buf.full or buf.last_value is None:
        raise PreconditionError("buffer not finalized (fill it and set last values)")
    T, N = buf.horizon, buf.n_envs
    adv = np.zeros((T, N))
    running = np.zeros(N)
    for t in reversed(range(T)):
        v_next = np.where(buf.done[t], buf.term_value[t],
                          buf.value[t + 1] if t + 1 < T else buf.last_value)
        delta = buf.reward[t] + gamma * v_next - buf.value[t]
        running = delta + gamma * lam * (~buf.done[t]) * running
        adv[t] = running
    return adv, adv + buf.value


def ppo_update(policy, optimizer: Adam, buf: RolloutBuffer, cfg: PPOConfig,
               rng) -> dict:
    """One PPO update over the full buffer; returns averaged metrics."""
    adv, ret = compute_gae(buf, cfg.gamma, cfg.lam)
    M = buf.horizon * buf.n_envs
    obs = buf.obs.reshape(M, OBS_DIM)
    priv = buf.priv.reshape(M, PRIV_DIM)
    u = buf.u.reshape(M, ACTION_DIM)
    logp_old = buf.logp.reshape(M)
    adv = adv.reshape(M)
    ret = ret.reshape(M)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    sums = {"pi_loss": 0.0, "v_loss": 0.0, "entropy": 0.0, "kl": 0.0,
            "clip_fraction": 0.0, "grad_norm": 0.0}
    n_batches = 0
    eps = cfg.clip_ratio
    for _ in range(cfg.epochs):
        order = rng.permutation(M)
        for lo in range(0, M, cfg.minibatch_size):
            idx = order[lo:lo + cfg.minibatch_size]
            B = len(idx)
            mean, log_std, value = policy.forward(obs[idx], priv[idx])
            std2 = np.exp(2.0 * log_std)
            logp = gaussian_tanh_logprob(u[idx], mean, log_std, policy.bounds)
            ratio = np.exp(logp - logp_old[idx])
            a = adv[idx]
            t_plain = ratio * a
            t_clip = np.clip(ratio, 1.0 - eps, 1.0 + eps) * a
            pick_plain = t_plain <= t_clip
            pi_loss = -np.minimum(t_plain, t_clip).mean()
            v_err = value - ret[idx]
            v_loss = 0.5 * float(v_err @ v_err) / B
            entropy = float(np.sum(log_std + 0.5 * (1.0 + np.log(2.0 * np.pi))))
            loss = pi_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite PPO loss: pi={pi_loss} v={v_loss} "
                    f"entropy={entropy} ratio range "
                    f"[{ratio.min()}, {ratio.max()}]")

            dlogp = np.where(pick_plain, -a * ratio, 0.0) / B
            diff = u[idx] - mean
            dmean = dlogp[:, None] * diff / std2
            dlog_std = (dlogp[:, None] * (diff * diff / std2 - 1.0)).sum(axis=0)
            dlog_std -= cfg.entropy_coef
            dvalue = cfg.value_coef * v_err / B
            policy.backward(dmean, dvalue, dlog_std)
            gnorm = optimizer.step(cfg.max_grad_norm)

            sums["pi_loss"] += pi_loss
            sums["v_loss"] += v_loss
            sums["entropy"] += entropy
            sums["kl"] += float((logp_old[idx] - logp).mean())
            sums["clip_fraction"] += float((np.abs(ratio - 1.0) > eps).mean())
            sums["grad_norm"] += gnorm
            n_batches += 1
    return {k: v / n_batches for k, v in sums.items()}
