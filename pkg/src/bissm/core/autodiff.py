"""Reverse-mode automatic differentiation over dense float64 tensors.

A :class:`Tape` records every operation as a :class:`TapeNode` in creation
order, so node ids always form a DAG. Values are numpy arrays; a batch of
vectors is a 2-D array with one row per sample, and the only broadcasting
supported is adding a bias vector to every row of a matrix.

Example:
    tape = Tape()
    w = tape.parameter("w", np.array([[3.0]]))
    loss = tape.sum_squares(w)
    grads = backward(tape, loss.id)   # {"w": array([[6.0]])}
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from bissm.core.exceptions import GradientError, ShapeMismatchError

Array = NDArray[np.float64]

# Parameter id -> gradient array with the parameter's shape
GradientMap = dict[str, Array]


class OpKind(str, Enum):
    """Operation kinds recorded on the tape."""

    PARAMETER = "parameter"
    CONSTANT = "constant"
    MATMUL = "matmul"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    SCALE = "scale"
    CONCAT = "concat"
    SLICE = "slice"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    SUM_SQUARES = "sum_squares"
    MEAN = "mean"


LEAF_KINDS = frozenset({OpKind.PARAMETER, OpKind.CONSTANT})


@dataclass(frozen=True, eq=False)
class Tensor:
    """Dense row-major float64 array."""

    data: Array

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.float64))

    @classmethod
    def of(cls, values: ArrayLike, shape: Sequence[int] | None = None) -> Tensor:
        array = np.asarray(values, dtype=np.float64)
        if shape is not None:
            array = array.reshape(tuple(shape))
        return cls(array)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)


@dataclass(frozen=True, eq=False)
class TapeNode:
    """One recorded operation.

    ``kind`` doubles as the id of the local gradient rule applied in
    :func:`backward`.
    """

    id: int
    kind: OpKind
    inputs: tuple[int, ...]
    value: Tensor
    attrs: dict[str, Any] = field(default_factory=dict)


class Var:
    """Handle to a node on a specific tape, with arithmetic operators."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: Tape, node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> Array:
        return self.tape.nodes[self.id].value.data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tape.nodes[self.id].value.shape

    def __add__(self, other: Var) -> Var:
        return self.tape.add(self, other)

    def __sub__(self, other: Var) -> Var:
        return self.tape.sub(self, other)

    def __mul__(self, other: Var | float) -> Var:
        if isinstance(other, Var):
            return self.tape.mul(self, other)
        return self.tape.scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> Var:
        return self.tape.scale(self, 1.0 / float(other))

    def __matmul__(self, other: Var) -> Var:
        return self.tape.matmul(self, other)

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"


class Tape:
    """Define-by-run record of a computation.

    A tape is rebuilt for every training step; parameters are registered once
    per tape under their stable ids and reused on later lookups.
    """

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []
        self._params: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def parameter_ids(self) -> dict[str, int]:
        return dict(self._params)

    def _record(
        self,
        kind: OpKind,
        inputs: tuple[int, ...],
        value: Array,
        attrs: dict[str, Any] | None = None,
    ) -> Var:
        node = TapeNode(
            id=len(self.nodes),
            kind=kind,
            inputs=inputs,
            value=Tensor(value),
            attrs=attrs or {},
        )
        self.nodes.append(node)
        return Var(self, node.id)

    def parameter(self, param_id: str, array: ArrayLike) -> Var:
        """Register a learnable leaf, or return the one already registered."""
        if param_id in self._params:
            return Var(self, self._params[param_id])
        var = self._record(
            OpKind.PARAMETER,
            (),
            np.array(array, dtype=np.float64),
            {"param_id": param_id},
        )
        self._params[param_id] = var.id
        return var

    def constant(self, array: ArrayLike) -> Var:
        return self._record(OpKind.CONSTANT, (), np.array(array, dtype=np.float64))

    def forward_op(self, kind: OpKind, inputs: Sequence[Var], **attrs: Any) -> Var:
        """Compute ``kind`` over ``inputs`` and record the result."""
        for var in inputs:
            if var.tape is not self:
                raise GradientError(
                    code="FOREIGN_NODE",
                    message=f"{kind.value}: input node {var.id} belongs to another tape",
                    details={"op": kind.value, "node_id": var.id},
                )
        values = [var.value for var in inputs]
        value = _FORWARD[kind](values, attrs)
        return self._record(kind, tuple(var.id for var in inputs), value, attrs)

    # Convenience wrappers, one per op kind

    def matmul(self, a: Var, b: Var) -> Var:
        return self.forward_op(OpKind.MATMUL, [a, b])

    def add(self, a: Var, b: Var) -> Var:
        return self.forward_op(OpKind.ADD, [a, b])

    def sub(self, a: Var, b: Var) -> Var:
        return self.forward_op(OpKind.SUB, [a, b])

    def mul(self, a: Var, b: Var) -> Var:
        return self.forward_op(OpKind.MUL, [a, b])

    def scale(self, a: Var, factor: float) -> Var:
        return self.forward_op(OpKind.SCALE, [a], factor=factor)

    def concat(self, parts: Sequence[Var]) -> Var:
        return self.forward_op(OpKind.CONCAT, list(parts))

    def slice(self, a: Var, start: int, stop: int) -> Var:
        return self.forward_op(OpKind.SLICE, [a], start=start, stop=stop)

    def sigmoid(self, a: Var) -> Var:
        return self.forward_op(OpKind.SIGMOID, [a])

    def tanh(self, a: Var) -> Var:
        return self.forward_op(OpKind.TANH, [a])

    def sum_squares(self, a: Var) -> Var:
        return self.forward_op(OpKind.SUM_SQUARES, [a])

    def mean(self, a: Var) -> Var:
        return self.forward_op(OpKind.MEAN, [a])


# =============================================================================
# Forward rules
# =============================================================================


def _matmul(values: list[Array], attrs: dict[str, Any]) -> Array:
    a, b = values
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    return a @ b


def _add(values: list[Array], attrs: dict[str, Any]) -> Array:
    a, b = values
    bias_add = a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]
    if a.shape != b.shape and not bias_add:
        raise ShapeMismatchError("add", a.shape, b.shape)
    return a + b


def _elementwise(op: str) -> Any:
    def rule(values: list[Array], attrs: dict[str, Any]) -> Array:
        a, b = values
        if a.shape != b.shape:
            raise ShapeMismatchError(op, a.shape, b.shape)
        return a - b if op == "sub" else a * b

    return rule


def _concat(values: list[Array], attrs: dict[str, Any]) -> Array:
    if not values:
        raise ShapeMismatchError("concat", (), ())
    head = values[0].shape[:-1]
    for value in values[1:]:
        if value.shape[:-1] != head:
            raise ShapeMismatchError("concat", values[0].shape, value.shape)
    return np.concatenate(values, axis=-1)


def _slice(values: list[Array], attrs: dict[str, Any]) -> Array:
    (a,) = values
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start < stop <= a.shape[-1]:
        raise ShapeMismatchError("slice", a.shape, (start, stop))
    return a[..., start:stop].copy()


_FORWARD: dict[OpKind, Any] = {
    OpKind.MATMUL: _matmul,
    OpKind.ADD: _add,
    OpKind.SUB: _elementwise("sub"),
    OpKind.MUL: _elementwise("mul"),
    OpKind.SCALE: lambda values, attrs: values[0] * attrs["factor"],
    OpKind.CONCAT: _concat,
    OpKind.SLICE: _slice,
    OpKind.SIGMOID: lambda values, attrs: expit(values[0]),
    OpKind.TANH: lambda values, attrs: np.tanh(values[0]),
    OpKind.SUM_SQUARES: lambda values, attrs: np.array(np.sum(values[0] * values[0])),
    OpKind.MEAN: lambda values, attrs: np.array(np.mean(values[0])),
}


# =============================================================================
# Backward rules
# =============================================================================


def _input_grads(node: TapeNode, nodes: list[TapeNode], g: Array) -> list[Array]:
    """Gradient contribution for each input of ``node`` given upstream ``g``."""
    inputs = [nodes[i].value.data for i in node.inputs]
    y = node.value.data
    kind = node.kind

    if kind is OpKind.MATMUL:
        a, b = inputs
        return [g @ b.T, a.T @ g]
    if kind is OpKind.ADD:
        a, b = inputs
        return [g, g if b.shape == a.shape else g.sum(axis=0)]
    if kind is OpKind.SUB:
        return [g, -g]
    if kind is OpKind.MUL:
        a, b = inputs
        return [g * b, g * a]
    if kind is OpKind.SCALE:
        return [g * node.attrs["factor"]]
    if kind is OpKind.CONCAT:
        bounds = np.cumsum([value.shape[-1] for value in inputs])[:-1]
        return list(np.split(g, bounds, axis=-1))
    if kind is OpKind.SLICE:
        full = np.zeros_like(inputs[0])
        full[..., node.attrs["start"] : node.attrs["stop"]] = g
        return [full]
    if kind is OpKind.SIGMOID:
        return [g * y * (1.0 - y)]
    if kind is OpKind.TANH:
        return [g * (1.0 - y * y)]
    if kind is OpKind.SUM_SQUARES:
        return [2.0 * g * inputs[0]]
    if kind is OpKind.MEAN:
        return [np.full_like(inputs[0], g / inputs[0].size)]
    raise GradientError(
        code="NO_GRADIENT_RULE",
        message=f"No gradient rule for op '{kind.value}'",
        details={"op": kind.value},
    )


def backward(tape: Tape, loss_node_id: int) -> GradientMap:
    """Gradient of a scalar node w.r.t. every parameter registered on ``tape``.

    Parameters that do not influence the loss get an all-zero gradient. The
    tape is not modified, so repeated calls return identical results.

    Raises:
        GradientError: If the node is not on the tape or is not scalar
    """
    if not 0 <= loss_node_id < len(tape.nodes):
        raise GradientError(
            code="UNKNOWN_NODE",
            message=f"Node {loss_node_id} is not on the tape ({len(tape.nodes)} nodes)",
            details={"node_id": loss_node_id, "tape_size": len(tape.nodes)},
        )
    loss = tape.nodes[loss_node_id]
    if loss.value.size != 1:
        raise GradientError(
            code="NON_SCALAR_LOSS",
            message=f"Loss node {loss_node_id} has shape {loss.value.shape}, expected a scalar",
            details={"node_id": loss_node_id, "shape": list(loss.value.shape)},
        )

    grads: dict[int, Array] = {loss_node_id: np.ones_like(loss.value.data)}
    for node_id in range(loss_node_id, -1, -1):
        g = grads.get(node_id)
        node = tape.nodes[node_id]
        if g is None or node.kind in LEAF_KINDS:
            continue
        for input_id, contribution in zip(node.inputs, _input_grads(node, tape.nodes, g)):
            previous = grads.get(input_id)
            grads[input_id] = contribution if previous is None else previous + contribution

    return {
        param_id: grads.get(node_id, np.zeros_like(tape.nodes[node_id].value.data))
        for param_id, node_id in tape.parameter_ids.items()
    }


# =============================================================================
# Optimizer
# =============================================================================


@dataclass(frozen=True)
class AdamHyperParams:
    """Adam hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True, eq=False)
class AdamState:
    """First and second moment estimates per parameter id."""

    step: int
    m: dict[str, Array]
    v: dict[str, Array]

    @classmethod
    def zeros(cls, params: Mapping[str, Array]) -> AdamState:
        return cls(
            step=0,
            m={pid: np.zeros_like(value) for pid, value in params.items()},
            v={pid: np.zeros_like(value) for pid, value in params.items()},
        )


def adam_step(
    params: Mapping[str, Array],
    grads: Mapping[str, Array],
    state: AdamState,
    hyper: AdamHyperParams,
) -> tuple[dict[str, Array], AdamState]:
    """One bias-corrected Adam update. Inputs are not modified.

    Raises:
        GradientError: If a parameter has no gradient or a mismatched one
    """
    step = state.step + 1
    new_params: dict[str, Array] = {}
    new_m: dict[str, Array] = {}
    new_v: dict[str, Array] = {}
    correction1 = 1.0 - hyper.beta1**step
    correction2 = 1.0 - hyper.beta2**step

    for pid, value in params.items():
        grad = grads.get(pid)
        if grad is None:
            raise GradientError(
                code="MISSING_GRADIENT",
                message=f"No gradient supplied for parameter '{pid}'",
                details={"param_id": pid},
            )
        if grad.shape != value.shape:
            raise ShapeMismatchError(f"adam[{pid}]", value.shape, grad.shape)
        m = hyper.beta1 * state.m[pid] + (1.0 - hyper.beta1) * grad
        v = hyper.beta2 * state.v[pid] + (1.0 - hyper.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[pid] = value - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
        new_m[pid] = m
        new_v[pid] = v

    return new_params, AdamState(step=step, m=new_m, v=new_v)
