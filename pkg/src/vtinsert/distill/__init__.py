from .student import (MODALITY_SETS, VARIANTS, FeatureHistory, StudentPolicy,
                      StudentSpec, load_student, modality_ablation_spec,
                      save_student, spec_from_dict, student_act)
from .dataset import AggregatedDataset
from .collect import (EpisodeCollector, SensorRig, default_camera,
                      depth_channels, student_step_features)
from .train import (BetaSchedule, DistillConfig, DistillResult, bc_warmup,
                    dagger_iterate, dataset_geometry, distill_student,
                    eval_loss, train_mse)

__all__ = [
    "MODALITY_SETS", "VARIANTS", "FeatureHistory", "StudentPolicy",
    "StudentSpec", "load_student", "modality_ablation_spec", "save_student",
    "spec_from_dict", "student_act",
    "AggregatedDataset",
    "EpisodeCollector", "SensorRig", "default_camera", "depth_channels",
    "student_step_features",
    "BetaSchedule", "DistillConfig", "DistillResult", "bc_warmup",
    "dagger_iterate", "dataset_geometry", "distill_student", "eval_loss",
    "train_mse",
]
