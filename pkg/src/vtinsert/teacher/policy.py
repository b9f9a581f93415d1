"""Privileged teacher policy: latent encoder + Gaussian-tanh actor-critic.

The privileged encoder maps the 63-dim simulator-only state to an 8-dim
latent z; the base network consumes [observation 13 | z 8] through a shared
trunk with an action-mean head, a value head, and a global log-std vector.
Actions are tanh-squashed and scaled to the per-step env bounds, and
log-probs carry the full change-of-variables correction so they are proper
densities over the env action space.
"""

from __future__ import annotations

import numpy as np

from ..env import E_PHYS_DIM, E_TASK_DIM, EpisodeConfig, PrivilegedState
from ..errors import ConfigError
from ..geom import DeltaPose
from ..nets import MLP, ParamStore, load_checkpoint, save_checkpoint

OBS_DIM = 13
PRIV_DIM = E_TASK_DIM + E_PHYS_DIM
ACTION_DIM = 6
LATENT_DIM = 8
LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
_LOG_2PI = np.log(2.0 * np.pi)


def observation_vector(state) -> np.ndarray:
    """o_t = [ee pose (7) | last action (6)]."""
    return np.concatenate([state.ee_pose.as_vector(),
                           state.last_action.as_vector()])


def privileged_vector(p: PrivilegedState) -> np.ndarray:
    if p.e_task.shape != (E_TASK_DIM,) or p.e_phys.shape != (E_PHYS_DIM,):
        raise ConfigError(
            f"privileged dims {p.e_task.shape}/{p.e_phys.shape}, "
            f"expected ({E_TASK_DIM},)/({E_PHYS_DIM},)")
    return np.concatenate([p.e_task, p.e_phys])


def observation_scales(cfg: EpisodeConfig) -> np.ndarray:
    """Static per-field preconditioner bringing inputs to O(1)."""
    s = np.ones(OBS_DIM)
    s[0:3] = 10.0
    s[7:10] = 1.0 / cfg.max_translation
    s[10:13] = 1.0 / cfg.max_rotation
    return s


def privileged_scales(cfg: EpisodeConfig) -> np.ndarray:
    s = np.ones(PRIV_DIM)
    # e_task: ee(7) vel(6) obj(7) sock(7) dpos(3) qerr(4) kp norms(4) kp(12)
    for sl in (slice(0, 3), slice(13, 16), slice(20, 23), slice(27, 30),
               slice(34, 38), slice(38, 50)):
        s[sl] = 10.0
    s[7:10] = 2.0
    # e_phys: mass friction dims(3) height scale clearance sockh grasp_t(3) gain
    s[50] = 3.0
    s[52:56] = 10.0
    s[57] = 200.0
    s[58] = 10.0
    s[59:62] = 100.0
    s[62] = 1000.0
    return s


def gaussian_tanh_logprob(u, mean, log_std, bounds) -> np.ndarray:
    """log p(a) where a = tanh(u) * bounds and u ~ N(mean, exp(log_std))."""
    std = np.exp(log_std)
    base = -0.5 * ((u - mean) / std) ** 2 - log_std - 0.5 * _LOG_2PI
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), numerically stable
    jac = 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    return (base - jac).sum(axis=-1) - np.log(bounds).sum()


class TeacherPolicy:
    def __init__(self, env_cfg: EpisodeConfig, encoder_hidden=(64,),
                 trunk_hidden=(64, 64), seed: int = 0,
                 log_std_init: float = 0.0):
        self.env_cfg = env_cfg
        self.encoder_hidden = tuple(int(w) for w in encoder_hidden)
        self.trunk_hidden = tuple(int(w) for w in trunk_hidden)
        self.bounds = np.array([env_cfg.max_translation] * 3
                               + [env_cfg.max_rotation] * 3)
        self.obs_scale = observation_scales(env_cfg)
        self.priv_scale = privileged_scales(env_cfg)
        self.store = ParamStore(seed)
        self.encoder = MLP(self.store, "encoder",
                           (PRIV_DIM,) + self.encoder_hidden + (LATENT_DIM,))
        self.trunk = MLP(self.store, "trunk",
                         (OBS_DIM + LATENT_DIM,) + self.trunk_hidden,
                         out_activation="tanh")
        self.mean_head = MLP(self.store, "mean", (self.trunk_hidden[-1], ACTION_DIM))
        self.value_head = MLP(self.store, "value", (self.trunk_hidden[-1], 1))
        self.store.add("log_std", (ACTION_DIM,), init="zeros")
        self.store.params["log_std"][:] = float(log_std_init)

    def spec_dict(self) -> dict:
        return {
            "kind": "teacher",
            "obs_dim": OBS_DIM,
            "priv_dim": PRIV_DIM,
            "latent_dim": LATENT_DIM,
            "encoder_hidden": list(self.encoder_hidden),
            "trunk_hidden": list(self.trunk_hidden),
            "bounds": [float(b) for b in self.bounds],
        }

    @property
    def log_std(self) -> np.ndarray:
        return np.clip(self.store.get("log_std"), LOG_STD_MIN, LOG_STD_MAX)

    def encode(self, priv: np.ndarray) -> np.ndarray:
        priv = np.asarray(priv, dtype=float)
        if priv.shape[-1] != PRIV_DIM:
            raise ConfigError(f"privileged vector dim {priv.shape[-1]}, "
                              f"expected {PRIV_DIM}")
        return self.encoder.forward(priv * self.priv_scale)

    def forward(self, obs: np.ndarray, priv: np.ndarray):
        """Batched heads: (mean, log_std, value) with caches for backward."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        z = self.encode(np.atleast_2d(priv))
        x = np.concatenate([obs * self.obs_scale, z], axis=-1)
        h = self.trunk.forward(x)
        mean = self.mean_head.forward(h)
        value = self.value_head.forward(h)[:, 0]
        return mean, self.log_std, value

    def backward(self, dmean, dvalue, dlog_std) -> None:
        """Accumulate grads for one forward() batch; clamp masks log-std."""
        dh = self.mean_head.backward(dmean)
        dh = dh + self.value_head.backward(np.asarray(dvalue)[:, None])
        dx = self.trunk.backward(dh)
        self.encoder.backward(dx[:, OBS_DIM:])
        raw = self.store.get("log_std")
        mask = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
        self.store.accumulate("log_std", dlog_std * mask)

    def act_batch(self, obs, priv, rng=None):
        """Sample (or take the mean when rng is None) for a batch of states."""
        mean, log_std, value = self.forward(obs, priv)
        if rng is None:
            u = mean.copy()
        else:
            u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        logp = gaussian_tanh_logprob(u, mean, log_std, self.bounds)
        action = np.tanh(u) * self.bounds
        return action, u, logp, value

    def value_batch(self, obs, priv) -> np.ndarray:
        return self.forward(obs, priv)[2]


def encode_privileged(policy: TeacherPolicy, e: PrivilegedState) -> np.ndarray:
    """z = mu(e): 63 concatenated privileged scalars -> 8-dim latent."""
    return policy.encode(privileged_vector(e)[None])[0]


def act(policy: TeacherPolicy, o: np.ndarray, z: np.ndarray, rng=None):
    """Single-state action from an already-encoded latent.

    Returns (DeltaPose, log_prob, value); deterministic (mean action) when
    rng is None.
    """
    o = np.asarray(o, dtype=float)
    if o.shape != (OBS_DIM,):
        raise ConfigError(f"observation dim {o.shape}, expected ({OBS_DIM},)")
    x = np.concatenate([o * policy.obs_scale, np.asarray(z)])[None]
    h = policy.trunk.forward(x)
    mean = policy.mean_head.forward(h)
    value = policy.value_head.forward(h)[0, 0]
    log_std = policy.log_std
    u = mean if rng is None else mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    logp = float(gaussian_tanh_logprob(u, mean, log_std, policy.bounds)[0])
    action = np.tanh(u[0]) * policy.bounds
    return DeltaPose.from_vector(action), logp, float(value)


def teacher_action(policy: TeacherPolicy, state) -> DeltaPose:
    """Eval-mode action straight from an EnvState (distillation label path)."""
    from ..env import privileged_state
    obs = observation_vector(state)
    priv = privileged_vector(privileged_state(state))
    action, _, _, _ = policy.act_batch(obs[None], priv[None], rng=None)
    return DeltaPose.from_vector(action[0])


def save_teacher(path, policy: TeacherPolicy, metadata: dict | None = None) -> str:
    return save_checkpoint(path, policy.store.copy_values(),
                           policy.spec_dict(), metadata)


def load_teacher(path, env_cfg: EpisodeConfig) -> tuple[TeacherPolicy, dict]:
    ck = load_checkpoint(path)
    if ck.spec.get("kind") != "teacher":
        raise ConfigError(f"{path}: not a teacher checkpoint "
                          f"(kind={ck.spec.get('kind')!r})")
    policy = TeacherPolicy(env_cfg,
                           encoder_hidden=ck.spec["encoder_hidden"],
                           trunk_hidden=ck.spec["trunk_hidden"])
    expected = policy.spec_dict()
    if expected != ck.spec:
        raise ConfigError(f"{path}: architecture mismatch: checkpoint "
                          f"{ck.spec} vs environment-derived {expected}")
    ck.load_into(policy.store)
    return policy, ck.metadata
