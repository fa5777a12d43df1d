"""Adam optimizer over a graph's named parameters.

Decoupled from the graph: the state holds first/second moment estimates per
parameter name plus the shared step counter.  Weight decay is the classic L2
form, added to the raw gradient before the moment updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from .tensor import Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """Apply one Adam update in place to every parameter.

    Each parameter must carry a gradient (run backward first).  ``lr`` is
    passed per call so schedules stay outside the optimizer.
    """
    if lr < 0.0:
        raise TrainingError(f"learning rate must be non-negative, got {lr}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        if p.grad is None:
            raise TrainingError(f"parameter {name!r} has no gradient; run backward before adam_step")
        g = p.grad
        if state.weight_decay != 0.0:
            g = g + state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data, dtype=np.float64)
            v = np.zeros_like(p.data, dtype=np.float64)
        else:
            v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * np.square(g)
        state.m[name] = m
        state.v[name] = v
        step = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = p.data - step.astype(p.dtype)
