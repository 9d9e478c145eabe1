"""Small reverse-mode differentiable toolkit for the gating nets, MLP experts and MoE head."""

from . import autograd
from .autograd import NonFiniteError, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (MLP, Dense, LayerNorm, Module, MultiHeadAttention, Parameter, dense,
                     glorot_uniform, layer_norm)
from .losses import bce_loss, entropy, smooth_targets
from .optim import AdamW, clip_grad_norm, cosine_anneal, plateau_reduce
from .train import TrainConfig, TrainResult, train_loop

__all__ = [
    "autograd", "NonFiniteError", "Tensor", "load_checkpoint", "save_checkpoint", "MLP", "Dense",
    "LayerNorm", "Module", "MultiHeadAttention", "Parameter", "dense", "glorot_uniform",
    "layer_norm", "bce_loss", "entropy", "smooth_targets", "AdamW", "clip_grad_norm",
    "cosine_anneal", "plateau_reduce", "TrainConfig", "TrainResult", "train_loop",
]
