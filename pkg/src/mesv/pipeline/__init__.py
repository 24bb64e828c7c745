"""Trial sampling, mixup, optimizers, training drivers and gradient checking."""

from .gradcheck import GradCheckReport, grad_check
from .mixup import mixing_matrices, mixup_embeddings
from .optim import OptimizerState, lr_schedule, optimizer_step
from .sampling import TrialBatchPlan, build_cells, build_eval_trials, sample_trial_batch
from .train import (FinetuneConfig, NpldaTrainConfig, PretrainConfig, TrainResult, copy_params,
                    embed_corpus, finetune_joint, pretrain_encoder, train_attention_backend,
                    train_nplda, trial_batch_loss)

__all__ = [
    "GradCheckReport", "grad_check", "mixing_matrices", "mixup_embeddings", "OptimizerState",
    "lr_schedule", "optimizer_step", "TrialBatchPlan", "build_cells", "build_eval_trials",
    "sample_trial_batch", "FinetuneConfig", "NpldaTrainConfig", "PretrainConfig", "TrainResult",
    "copy_params", "embed_corpus", "finetune_joint", "pretrain_encoder",
    "train_attention_backend", "train_nplda", "trial_batch_loss",
]

from .experiment import (DeskExperiment, desk_finetune_config, desk_pretrain_config,  # noqa: E402
                         run_desk_experiment)

__all__ += ["DeskExperiment", "desk_finetune_config", "desk_pretrain_config", "run_desk_experiment"]
