"""Velocity-predicting network, its trainer and checkpoint format."""

from .checkpoint import load_checkpoint, save_checkpoint
from .train import TrainConfig, TrainingDivergedError, evaluate_loss, predict, train
from .unet import BackwardBeforeForwardError, ModelParams, NetConfig, VelocityNet

__all__ = [
    "BackwardBeforeForwardError",
    "ModelParams",
    "NetConfig",
    "TrainConfig",
    "TrainingDivergedError",
    "VelocityNet",
    "evaluate_loss",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "train",
]
