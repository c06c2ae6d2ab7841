"""Self-correcting autoencoder for linear hyperspectral unmixing."""
from .data import GroundTruth, HsiDataset, NoiseConfig, OutlierConfig, ScaleParams, synth_generate
from .linalg import ContractError, SingularMatrixError, tail_energy
from .metrics import EvalReport, align_endmembers, detect_null_members, evaluate, rmse, sad
from .model import LossBreakdown, ScaWeights, backward, forward, loss, normalized_relu, volume
from .optim import TrainConfig, TrainHistory, TrainingDivergedError, gt_init, init_weights, train

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "EvalReport",
    "GroundTruth",
    "HsiDataset",
    "LossBreakdown",
    "NoiseConfig",
    "OutlierConfig",
    "ScaWeights",
    "ScaleParams",
    "SingularMatrixError",
    "TrainConfig",
    "TrainHistory",
    "TrainingDivergedError",
    "align_endmembers",
    "backward",
    "detect_null_members",
    "evaluate",
    "forward",
    "gt_init",
    "init_weights",
    "loss",
    "normalized_relu",
    "rmse",
    "sad",
    "synth_generate",
    "tail_energy",
    "train",
    "volume",
]
