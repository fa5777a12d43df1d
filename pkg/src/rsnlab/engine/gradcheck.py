"""Finite-difference verification of analytic gradients.

Central differences with a fixed probe loss: a seeded random-weighted sum of
the checked function's output, so every output element influences the scalar.
All checks should run in float64; float32 rounding drowns the signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from . import ops
from .graph import Graph
from .tensor import Tensor, no_grad

# Relative error floor: below this magnitude the comparison is absolute,
# otherwise near-zero gradients would divide by near-zero denominators.
REL_FLOOR = 1e-3


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _loss_weights(shape: tuple[int, ...], seed: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=shape)


def check_function(fn, inputs: list[Tensor], eps: float = 1e-5, seed: int = 0) -> list[float]:
    """Max relative error of d(loss)/d(input) for each grad-requiring input.

    ``fn`` maps the given tensors to one output tensor.  Inputs must be
    float64.  Entries for inputs with ``requires_grad=False`` are 0.0.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ShapeError(f"gradient checks require float64 inputs, got {t.dtype}")
    out = fn(*inputs)
    w = Tensor(_loss_weights(out.shape, seed))
    loss = ops.sum_all(ops.mul(out, w))
    for t in inputs:
        t.zero_grad()
    loss.backward()
    analytic = [t.grad.copy() if t.requires_grad else None for t in inputs]

    def loss_value() -> float:
        with no_grad():
            return float((fn(*inputs).data * w.data).sum())

    errs: list[float] = []
    for t, a in zip(inputs, analytic):
        if a is None:
            errs.append(0.0)
            continue
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_value()
            flat[i] = orig - eps
            down = loss_value()
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * eps)
        errs.append(_rel_err(a, numeric))
    return errs


@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.per_param.values())

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.per_param, key=self.per_param.__getitem__)
        return name, self.per_param[name]

    def __str__(self) -> str:
        lines = []
        for name in sorted(self.per_param):
            err = self.per_param[name]
            verdict = "ok" if err <= self.tolerance else "FAIL"
            lines.append(f"{name}: {err:.3e} {verdict}")
        return "\n".join(lines)


def grad_check(graph: Graph, x: np.ndarray, tolerance: float = 1e-4,
               eps: float = 1e-5, mode: str = "eval", seed: int = 0) -> GradCheckReport:
    """Compare every graph parameter's gradient against central differences.

    The graph is copied to float64 first; the original is untouched.  Keep
    shapes small (dims of a few) or the elementwise perturbation loop crawls.
    """
    g = graph.astype(np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    out_shapes = [tuple(o.shape) for o in g.forward(x64, mode)]
    weights = [Tensor(_loss_weights(s, seed + i)) for i, s in enumerate(out_shapes)]

    def loss_tensor() -> Tensor:
        outs = g.forward(x64, mode)
        total = ops.sum_all(ops.mul(outs[0], weights[0]))
        for o, w in zip(outs[1:], weights[1:]):
            total = ops.add(total, ops.sum_all(ops.mul(o, w)))
        return total

    g.zero_grad()
    g.backward(loss_tensor())
    analytic = {name: p.grad.copy() for name, p in g.params.items()}

    def loss_value() -> float:
        with no_grad():
            return loss_tensor().item()

    per_param: dict[str, float] = {}
    for name, p in g.params.items():
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_value()
            flat[i] = orig - eps
            down = loss_value()
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * eps)
        per_param[name] = _rel_err(analytic[name], numeric)
    return GradCheckReport(per_param, tolerance)
