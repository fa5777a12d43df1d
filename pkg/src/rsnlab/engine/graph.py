"""Static network graphs: an ordered list of primitive nodes plus named parameters.

A :class:`Graph` is built once (append-only, so construction order is a
topological order), then treated as immutable.  Executing it replays the nodes
through the differentiable ops in :mod:`rsnlab.engine.ops`, which records the
autodiff tape; ``Graph.backward`` then fills every parameter's gradient.

Node kinds: ``input``, ``conv``, ``dwconv``, ``bn``, ``relu``, ``sigmoid``,
``maxpool`` (3x3 stride 2 pad 1), ``gap``, ``upsample``, ``concat``, ``slice``,
``add``, ``mul``, ``prm_combine``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import GraphError, ShapeError
from . import ops
from .tensor import Tensor


@dataclass(frozen=True)
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    attrs: dict
    params: tuple[str, ...] = ()
    buffers: tuple[str, ...] = ()
    channels: int = 0


class Graph:
    """Append-only operation graph with named parameters and buffers."""

    def __init__(self, seed: int = 0, dtype=np.float32, meta: bool = False):
        """With meta=True, parameters are zero-stride placeholders carrying
        only shape and dtype; the graph can be analyzed but not executed."""
        self.nodes: list[Node] = []
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.outputs: list[int] = []
        self.labels: dict[str, int] = {}
        self.dtype = np.dtype(dtype)
        self.meta = meta
        self._rng = np.random.default_rng(seed)
        self._input_id: int | None = None

    # -- construction -----------------------------------------------------

    def _append(self, op: str, inputs: tuple[int, ...], attrs: dict, channels: int,
                params: tuple[str, ...] = (), buffers: tuple[str, ...] = ()) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise GraphError(f"node input id {i} does not exist yet (topological order violated)")
        node = Node(len(self.nodes), op, inputs, attrs, params, buffers, channels)
        self.nodes.append(node)
        return node.id

    def _new_param(self, name: str, shape: tuple[int, ...], init: str = "zeros",
                   std: float = 1.0) -> str:
        if name in self.params:
            raise GraphError(f"duplicate parameter name {name!r}")
        if self.meta:
            arr = np.broadcast_to(np.zeros((), dtype=self.dtype), shape)
        elif init == "he":
            arr = self._rng.normal(0.0, std, shape).astype(self.dtype)
        elif init == "ones":
            arr = np.ones(shape, dtype=self.dtype)
        else:
            arr = np.zeros(shape, dtype=self.dtype)
        self.params[name] = Tensor(arr, requires_grad=True, name=name)
        return name

    def _new_buffer(self, name: str, shape: tuple[int, ...], init: str = "zeros") -> str:
        if name in self.buffers:
            raise GraphError(f"duplicate buffer name {name!r}")
        if self.meta:
            arr = np.broadcast_to(np.zeros((), dtype=self.dtype), shape)
        elif init == "ones":
            arr = np.ones(shape, dtype=self.dtype)
        else:
            arr = np.zeros(shape, dtype=self.dtype)
        self.buffers[name] = arr
        return name

    def add_input(self, channels: int) -> int:
        if self._input_id is not None:
            raise GraphError("graph already has an input node")
        nid = self._append("input", (), {}, channels)
        self._input_id = nid
        return nid

    def conv(self, x: int, out_channels: int, k: int, prefix: str,
             stride: int = 1, pad: int | None = None, bias: bool = False) -> int:
        c_in = self.nodes[x].channels
        if pad is None:
            pad = k // 2
        std = math.sqrt(2.0 / (c_in * k * k))
        names = [self._new_param(f"{prefix}.weight", (out_channels, c_in, k, k), "he", std)]
        if bias:
            names.append(self._new_param(f"{prefix}.bias", (1, out_channels, 1, 1)))
        attrs = {"k": k, "stride": stride, "pad": pad, "bias": bias}
        return self._append("conv", (x,), attrs, out_channels, tuple(names))

    def dwconv(self, x: int, k: int, prefix: str, stride: int = 1,
               pad: int | None = None, bias: bool = False) -> int:
        c = self.nodes[x].channels
        if pad is None:
            pad = k // 2
        std = math.sqrt(2.0 / (k * k))
        names = [self._new_param(f"{prefix}.weight", (c, 1, k, k), "he", std)]
        if bias:
            names.append(self._new_param(f"{prefix}.bias", (1, c, 1, 1)))
        attrs = {"k": k, "stride": stride, "pad": pad, "bias": bias}
        return self._append("dwconv", (x,), attrs, c, tuple(names))

    def bn(self, x: int, prefix: str, momentum: float = 0.1, eps: float = 1e-5) -> int:
        c = self.nodes[x].channels
        params = (
            self._new_param(f"{prefix}.gamma", (1, c, 1, 1), "ones"),
            self._new_param(f"{prefix}.beta", (1, c, 1, 1)),
        )
        buffers = (
            self._new_buffer(f"{prefix}.running_mean", (1, c, 1, 1)),
            self._new_buffer(f"{prefix}.running_var", (1, c, 1, 1), "ones"),
        )
        return self._append("bn", (x,), {"momentum": momentum, "eps": eps}, c, params, buffers)

    def relu(self, x: int) -> int:
        return self._append("relu", (x,), {}, self.nodes[x].channels)

    def sigmoid(self, x: int) -> int:
        return self._append("sigmoid", (x,), {}, self.nodes[x].channels)

    def maxpool(self, x: int) -> int:
        return self._append("maxpool", (x,), {"k": 3, "stride": 2, "pad": 1}, self.nodes[x].channels)

    def gap(self, x: int) -> int:
        return self._append("gap", (x,), {}, self.nodes[x].channels)

    def upsample(self, x: int, factor: int) -> int:
        return self._append("upsample", (x,), {"factor": factor}, self.nodes[x].channels)

    def concat(self, xs: list[int]) -> int:
        channels = sum(self.nodes[i].channels for i in xs)
        return self._append("concat", tuple(xs), {}, channels)

    def slice(self, x: int, lo: int, hi: int) -> int:
        c = self.nodes[x].channels
        if not (0 <= lo < hi <= c):
            raise GraphError(f"slice [{lo}, {hi}) out of range for C={c}")
        return self._append("slice", (x,), {"lo": lo, "hi": hi}, hi - lo)

    def add(self, a: int, b: int) -> int:
        return self._append("add", (a, b), {}, self.nodes[a].channels)

    def mul(self, a: int, b: int) -> int:
        return self._append("mul", (a, b), {}, self.nodes[a].channels)

    def prm_combine(self, kx: int, alpha: int, beta: int) -> int:
        return self._append("prm_combine", (kx, alpha, beta), {}, self.nodes[kx].channels)

    def mark_output(self, x: int) -> None:
        self.outputs.append(x)

    def set_label(self, x: int, label: str) -> None:
        if label in self.labels:
            raise GraphError(f"duplicate node label {label!r}")
        self.labels[label] = x

    # -- execution ---------------------------------------------------------

    def run(self, x: Tensor | np.ndarray, mode: str = "eval") -> dict[int, Tensor]:
        """Execute every node; returns the value produced at each node id."""
        if mode not in ("train", "eval"):
            raise GraphError(f"unknown mode {mode!r}")
        if self.meta:
            raise GraphError("meta graphs carry shapes only and cannot be executed")
        if self._input_id is None:
            raise GraphError("graph has no input node")
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.dtype != self.dtype:
            raise ShapeError(f"graph expects dtype {self.dtype}, got input {x.dtype}")
        expected_c = self.nodes[self._input_id].channels
        if x.shape[1] != expected_c:
            raise ShapeError(f"graph input expects C={expected_c}, got C={x.shape[1]}")

        values: dict[int, Tensor] = {}
        for node in self.nodes:
            values[node.id] = self._eval_node(node, values, x, mode)
        return values

    def forward(self, x: Tensor | np.ndarray, mode: str = "eval") -> list[Tensor]:
        if not self.outputs:
            raise GraphError("graph has no marked outputs")
        values = self.run(x, mode)
        return [values[i] for i in self.outputs]

    def _eval_node(self, node: Node, values: dict[int, Tensor], x: Tensor, mode: str) -> Tensor:
        ins = [values[i] for i in node.inputs]
        a = node.attrs
        if node.op == "input":
            return x
        if node.op == "conv":
            bias = self.params[node.params[1]] if a["bias"] else None
            return ops.conv2d(ins[0], self.params[node.params[0]], bias, a["stride"], a["pad"])
        if node.op == "dwconv":
            out = ops.depthwise_conv2d(ins[0], self.params[node.params[0]], a["stride"], a["pad"])
            if a["bias"]:
                out = ops.add(out, self.params[node.params[1]])
            return out
        if node.op == "bn":
            return ops.batchnorm(
                ins[0], self.params[node.params[0]], self.params[node.params[1]],
                self.buffers[node.buffers[0]], self.buffers[node.buffers[1]],
                training=(mode == "train"), momentum=a["momentum"], eps=a["eps"],
            )
        if node.op == "relu":
            return ops.relu(ins[0])
        if node.op == "sigmoid":
            return ops.sigmoid(ins[0])
        if node.op == "maxpool":
            return ops.max_pool_3x3_s2(ins[0])
        if node.op == "gap":
            return ops.global_avg_pool(ins[0])
        if node.op == "upsample":
            return ops.resize_nearest(ins[0], a["factor"])
        if node.op == "concat":
            return ops.channel_concat(ins)
        if node.op == "slice":
            return ops.channel_slice(ins[0], a["lo"], a["hi"])
        if node.op == "add":
            return ops.add(ins[0], ins[1])
        if node.op == "mul":
            return ops.mul(ins[0], ins[1])
        if node.op == "prm_combine":
            return ops.prm_combine(ins[0], ins[1], ins[2])
        raise GraphError(f"unknown node op {node.op!r}")

    # -- gradients ----------------------------------------------------------

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def backward(self, loss: Tensor) -> None:
        """Backpropagate from a scalar loss; unused parameters get zero grads."""
        loss.backward()
        for p in self.params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)

    # -- state --------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"param/{k}": v.data for k, v in self.params.items()}
        state.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for key in sorted(self.params):
            src = state.get(f"param/{key}")
            if src is None:
                raise GraphError(f"state is missing parameter {key!r}")
            if src.shape != self.params[key].shape:
                raise GraphError(f"parameter {key!r}: shape {src.shape} != {self.params[key].shape}")
            self.params[key].data = src.astype(self.dtype, copy=True)
        for key in sorted(self.buffers):
            src = state.get(f"buffer/{key}")
            if src is None:
                raise GraphError(f"state is missing buffer {key!r}")
            self.buffers[key][...] = src.astype(self.dtype, copy=False)

    def astype(self, dtype) -> "Graph":
        """Copy of this graph with parameters and buffers cast to ``dtype``."""
        if self.meta:
            raise GraphError("meta graphs carry shapes only; rebuild without meta instead")
        g = Graph(dtype=dtype)
        g.nodes = list(self.nodes)
        g.outputs = list(self.outputs)
        g.labels = dict(self.labels)
        g._input_id = self._input_id
        g.params = {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()}
        g.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        return g

    # -- invariants -----------------------------------------------------------

    def validate(self) -> None:
        referenced: set[str] = set()
        for node in self.nodes:
            for i in node.inputs:
                if i >= node.id:
                    raise GraphError(f"node {node.id} consumes node {i}, violating topological order")
            referenced.update(node.params)
        unused = set(self.params) - referenced
        if unused:
            raise GraphError(f"parameters never referenced by any node: {sorted(unused)}")

    @property
    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())
