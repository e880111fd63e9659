"""Small dense-array engine: the layer set of the two autoencoders, their
gradients, Adam, a finite-difference checker and a checkpoint container."""

from .checkpoint import CheckpointError, load_model, read_container, save_model, write_container
from .functional import (
    DimensionError,
    LstmCellParams,
    conv2d,
    conv_transpose2d,
    linear,
    lstm_cell,
    lstm_sequence,
    mse_loss,
    mse_loss_grad,
    per_sample_mse,
    relu,
    sigmoid,
    tanh,
)
from .gradcheck import GradCheckReport, grad_check
from .layers import (
    LSTM,
    Conv2d,
    ConvTranspose2d,
    Flatten,
    Layer,
    Linear,
    Parameter,
    ReLU,
    RepeatVector,
    Sequential,
    Sigmoid,
    StateError,
    Tanh,
    Unflatten,
    backward,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "LSTM", "Adam", "AdamState", "CheckpointError", "Conv2d", "ConvTranspose2d", "DimensionError",
    "Flatten", "GradCheckReport", "Layer", "Linear", "LstmCellParams", "Parameter", "ReLU",
    "RepeatVector", "Sequential", "Sigmoid", "StateError", "Tanh", "Unflatten", "adam_step",
    "backward", "conv2d", "conv_transpose2d", "grad_check", "linear", "load_model", "lstm_cell",
    "lstm_sequence", "mse_loss", "mse_loss_grad", "per_sample_mse", "read_container", "relu",
    "save_model", "sigmoid", "tanh", "write_container",
]
