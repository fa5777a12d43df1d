"""Minimal differentiable tensor engine: 4D tensors, reverse-mode autodiff,
static graphs, Adam, finite-difference checking, binary checkpoints."""

from . import ops
from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, check_function, grad_check
from .graph import Graph, Node
from .tensor import Tensor, no_grad

__all__ = [
    "AdamState",
    "GradCheckReport",
    "Graph",
    "Node",
    "Tensor",
    "adam_step",
    "check_function",
    "grad_check",
    "load_checkpoint",
    "no_grad",
    "ops",
    "save_checkpoint",
]
