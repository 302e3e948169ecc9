from .checkpoint import CheckpointError
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .model import (
    Architecture,
    InvalidInput,
    SpeakerModel,
    batch_loss,
    build_sinc_filters,
    cost_and_grad_full,
    cost_and_grad_head,
    filter_cutoffs_hz,
    forward_dvector,
    forward_full,
    forward_head,
    grad_input_full,
    grad_input_head,
    grad_params,
    init_model,
    logits_head,
    loss_and_grad_params,
    predict,
    sinc_kernels_hz,
)
from .tensor import Tensor

__all__ = [
    "Architecture",
    "CheckpointError",
    "InvalidInput",
    "SpeakerModel",
    "Tensor",
    "batch_loss",
    "build_sinc_filters",
    "cost_and_grad_full",
    "cost_and_grad_head",
    "filter_cutoffs_hz",
    "forward_dvector",
    "forward_full",
    "forward_head",
    "grad_input_full",
    "grad_input_head",
    "grad_params",
    "init_model",
    "load_checkpoint",
    "logits_head",
    "loss_and_grad_params",
    "predict",
    "save_checkpoint",
    "sinc_kernels_hz",
]
