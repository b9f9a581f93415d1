from .config import EpisodeConfig, ObjectSpec, SocketSpec
from .contact import penetration_depth, resolve_contact
from .insertion import (
    E_PHYS_DIM,
    E_TASK_DIM,
    EnvState,
    EpisodeDone,
    InsertionEnv,
    PrivilegedState,
    RewardBreakdown,
    check_success,
    insertion_depth,
    privileged_state,
    reward,
)
from .vector import VectorEnv

__all__ = [
    "E_PHYS_DIM",
    "E_TASK_DIM",
    "insertion_depth",
    "EpisodeConfig",
    "ObjectSpec",
    "SocketSpec",
    "resolve_contact",
    "penetration_depth",
    "InsertionEnv",
    "EnvState",
    "EpisodeDone",
    "RewardBreakdown",
    "PrivilegedState",
    "reward",
    "check_success",
    "privileged_state",
    "VectorEnv",
]
