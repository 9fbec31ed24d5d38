"""SE-ResNet-18 classifier, focal loss and Adam on plain numpy."""

from .checkpoint import (CheckpointError, init_from_checkpoint, load_checkpoint,
                         read_checkpoint, save_checkpoint)
from .layers import se_forward, softmax
from .loss import FocalLossParams, focal_loss
from .model import ArchConfig, SEResNet
from .optim import AdamState, adam_step
from .train import TrainConfig, TrainingDiverged, TrainResult, train


def forward(model: SEResNet, batch):
    """Inference-mode logits."""
    return model.forward(batch, training=False)


def backward(model: SEResNet, batch, labels, loss_params: FocalLossParams = FocalLossParams(),
             frozen=()):
    """Loss and parameter gradients for one batch (training-mode normalisation)."""
    logits = model.forward(batch, training=True)
    loss, dlogits = focal_loss(logits, labels, loss_params)
    return loss, model.backward(dlogits, frozen=frozen)


__all__ = [
    "AdamState", "ArchConfig", "CheckpointError", "FocalLossParams", "SEResNet",
    "TrainConfig", "TrainResult", "TrainingDiverged", "adam_step", "backward",
    "focal_loss", "forward", "init_from_checkpoint", "load_checkpoint",
    "read_checkpoint", "save_checkpoint", "se_forward", "softmax", "train",
]
