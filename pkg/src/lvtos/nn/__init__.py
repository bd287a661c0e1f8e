"""Minimal layered network engine with reverse-mode gradients."""
from .graph import Sequential, load_state_dict, state_dict
from .layers import (BatchNorm, Conv2d, ConvTranspose2d, Dense, Flatten, Layer, LeakyReLU,
                     MaxPool2d, ReLU, ShapeError, ShiftedLeakyReLU, Softmax, shifted_leaky_relu)
from .losses import (inverse_frequency_weights, mse_grad, mse_loss, weighted_ce_dice_grad,
                     weighted_ce_dice_loss)
from .optim import Adam, adam_step
from .tensor import Tensor

__all__ = [
    "Adam", "BatchNorm", "Conv2d", "ConvTranspose2d", "Dense", "Flatten", "Layer", "LeakyReLU",
    "MaxPool2d", "ReLU", "Sequential", "ShapeError", "ShiftedLeakyReLU", "Softmax", "Tensor",
    "adam_step", "inverse_frequency_weights", "load_state_dict", "mse_grad", "mse_loss",
    "shifted_leaky_relu", "state_dict", "weighted_ce_dice_grad", "weighted_ce_dice_loss",
]
