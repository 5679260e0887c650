from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .train import AdamConfig, noisy_batch, train
from .unet import (
    DenoiserConfig,
    DenoiserOutput,
    DenoiserParams,
    forward,
    forward_injected,
    init_params,
    loss_and_grads,
)

__all__ = [
    "AdamConfig",
    "DenoiserConfig",
    "DenoiserOutput",
    "DenoiserParams",
    "forward",
    "forward_injected",
    "grad_check",
    "init_params",
    "load_checkpoint",
    "loss_and_grads",
    "noisy_batch",
    "save_checkpoint",
    "train",
]
