"""Vectorized episode runner: N independent environments with auto-reset.

Each slot owns its own seed stream (spawned from one root seed), so slot
trajectories are independent of the slot count and of each other. When an
episode ends the slot resets immediately and the pre-reset state is handed
back through `info["terminal_state"]` so learners can bootstrap values at
truncations.
"""

from __future__ import annotations

import numpy as np

from ..geom import DeltaPose
from .config import EpisodeConfig
from .insertion import EnvState, InsertionEnv, RewardBreakdown


class VectorEnv:
    def __init__(self, cfg: EpisodeConfig, num_envs: int, seed: int):
        if num_envs <= 0:
            raise ValueError(f"num_envs must be positive, got {num_envs}")
        self.cfg = cfg
        self.num_envs = num_envs
        self._envs = [InsertionEnv(cfg) for _ in range(num_envs)]
        ss = np.random.SeedSequence(seed)
        self._streams = [np.random.default_rng(child) for child in ss.spawn(num_envs)]

    def _next_seed(self, i: int) -> int:
        return int(self._streams[i].integers(0, 2**63 - 1))

    def reset_all(self) -> list[EnvState]:
        return [env.reset(self._next_seed(i)) for i, env in enumerate(self._envs)]

    @property
    def states(self) -> list[EnvState]:
        return [env.state for env in self._envs]

    def step(self, actions: np.ndarray):
        """actions: (num_envs, 6) -> (states, rewards, dones, breakdowns, infos).

        `states` are post-auto-reset, so they are always live; a finished
        episode's last state rides in info["terminal_state"].
        """
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.num_envs, 6):
            raise ValueError(f"actions shape {actions.shape} != ({self.num_envs}, 6)")
        states: list[EnvState] = []
        rewards = np.zeros(self.num_envs)
        dones = np.zeros(self.num_envs, dtype=bool)
        breakdowns: list[RewardBreakdown] = []
        infos: list[dict] = []
        for i, env in enumerate(self._envs):
            state, rb, done, info = env.step(DeltaPose.from_vector(actions[i]))
            rewards[i] = rb.total
            dones[i] = done
            breakdowns.append(rb)
            if done:
                info["terminal_state"] = state
                state = env.reset(self._next_seed(i))
            states.append(state)
            infos.append(info)
        return states, rewards, dones, breakdowns, infos
