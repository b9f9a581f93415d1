from .policy import (ACTION_DIM, LATENT_DIM, OBS_DIM, PRIV_DIM, TeacherPolicy,
                     act, encode_privileged, gaussian_tanh_logprob,
                     load_teacher, observation_vector, privileged_vector,
                     save_teacher, teacher_action)
from .ppo import PPOConfig, RolloutBuffer, compute_gae, ppo_update
from .train import (TrainResult, default_env_factory, evaluate_success,
                    train_teacher)

__all__ = [
    "ACTION_DIM", "LATENT_DIM", "OBS_DIM", "PRIV_DIM", "PPOConfig",
    "RolloutBuffer", "TeacherPolicy", "TrainResult", "act", "compute_gae",
    "default_env_factory", "encode_privileged", "evaluate_success",
    "gaussian_tanh_logprob", "load_teacher", "observation_vector",
    "privileged_vector", "ppo_update", "save_teacher", "teacher_action",
    "train_teacher",
]
