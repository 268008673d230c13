"""Recurrent and fully connected layers built on the autodiff tape.

Parameter containers hold plain numpy arrays under a stable ``name``; the
layer functions register them on the tape they are given, so the same
parameters can drive any number of independent tapes.
"""

from __future__ import annotations

from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from bissm.core.autodiff import Array, Tape, Var
from bissm.core.exceptions import SeriesTooShortError, ShapeMismatchError

GATE_NAMES = ("input_gate", "forget_gate", "output_gate", "candidate")

FORGET_BIAS_INIT = 1.0


class Activation(str, Enum):
    """Activation applied after a dense layer."""

    TANH = "tanh"
    SIGMOID = "sigmoid"
    LINEAR = "linear"


# =============================================================================
# Parameter containers
# =============================================================================


@dataclass(frozen=True, eq=False)
class GateParams:
    """Weights of one LSTM gate: ``x @ w_x + h @ w_h + b``."""

    w_x: Array
    w_h: Array
    b: Array


@dataclass(frozen=True, eq=False)
class LstmParams:
    """One LSTM layer. Matrices are stored (fan_in, hidden_dim)."""

    name: str
    input_gate: GateParams
    forget_gate: GateParams
    output_gate: GateParams
    candidate: GateParams

    def __post_init__(self) -> None:
        for gate in self.gates():
            if (
                gate.w_x.shape != (self.input_dim, self.hidden_dim)
                or gate.w_h.shape != (self.hidden_dim, self.hidden_dim)
                or gate.b.shape != (self.hidden_dim,)
            ):
                raise ShapeMismatchError(
                    f"lstm[{self.name}]",
                    self.input_gate.w_x.shape,
                    gate.w_x.shape,
                )

    @property
    def input_dim(self) -> int:
        return int(self.input_gate.w_x.shape[0])

    @property
    def hidden_dim(self) -> int:
        return int(self.input_gate.w_x.shape[1])

    def gates(self) -> tuple[GateParams, ...]:
        return (self.input_gate, self.forget_gate, self.output_gate, self.candidate)

    def arrays(self) -> dict[str, Array]:
        result: dict[str, Array] = {}
        for gate_name, gate in zip(GATE_NAMES, self.gates()):
            result[f"{self.name}.{gate_name}.w_x"] = gate.w_x
            result[f"{self.name}.{gate_name}.w_h"] = gate.w_h
            result[f"{self.name}.{gate_name}.b"] = gate.b
        return result

    @classmethod
    def from_arrays(cls, name: str, arrays: Mapping[str, Array]) -> LstmParams:
        gates = {
            gate_name: GateParams(
                w_x=np.asarray(arrays[f"{name}.{gate_name}.w_x"], dtype=np.float64),
                w_h=np.asarray(arrays[f"{name}.{gate_name}.w_h"], dtype=np.float64),
                b=np.asarray(arrays[f"{name}.{gate_name}.b"], dtype=np.float64),
            )
            for gate_name in GATE_NAMES
        }
        return cls(name=name, **gates)

    @classmethod
    def zeros(cls, name: str, input_dim: int, hidden_dim: int) -> LstmParams:
        return cls.from_arrays(name, _zero_lstm_arrays(name, input_dim, hidden_dim))

    @classmethod
    def initialize(
        cls, name: str, input_dim: int, hidden_dim: int, rng: np.random.Generator
    ) -> LstmParams:
        """Uniform(-k, k) weights with k = 1/sqrt(hidden_dim), forget bias +1."""
        k = 1.0 / np.sqrt(hidden_dim)
        arrays: dict[str, Array] = {}
        for gate_name in GATE_NAMES:
            arrays[f"{name}.{gate_name}.w_x"] = rng.uniform(-k, k, (input_dim, hidden_dim))
            arrays[f"{name}.{gate_name}.w_h"] = rng.uniform(-k, k, (hidden_dim, hidden_dim))
            bias = FORGET_BIAS_INIT if gate_name == "forget_gate" else 0.0
            arrays[f"{name}.{gate_name}.b"] = np.full(hidden_dim, bias)
        return cls.from_arrays(name, arrays)


def _zero_lstm_arrays(name: str, input_dim: int, hidden_dim: int) -> dict[str, Array]:
    arrays: dict[str, Array] = {}
    for gate_name in GATE_NAMES:
        arrays[f"{name}.{gate_name}.w_x"] = np.zeros((input_dim, hidden_dim))
        arrays[f"{name}.{gate_name}.w_h"] = np.zeros((hidden_dim, hidden_dim))
        arrays[f"{name}.{gate_name}.b"] = np.zeros(hidden_dim)
    return arrays


@dataclass(frozen=True, eq=False)
class BiLstmParams:
    """Independent forward and backward LSTM stacks of equal depth and width."""

    name: str
    forward: tuple[LstmParams, ...]
    backward: tuple[LstmParams, ...]

    def __post_init__(self) -> None:
        if not self.forward or len(self.forward) != len(self.backward):
            raise ShapeMismatchError(
                f"bilstm[{self.name}]", (len(self.forward),), (len(self.backward),)
            )
        for fwd, bwd in zip(self.forward, self.backward):
            if fwd.hidden_dim != bwd.hidden_dim:
                raise ShapeMismatchError(
                    f"bilstm[{self.name}]", (fwd.hidden_dim,), (bwd.hidden_dim,)
                )

    @property
    def input_dim(self) -> int:
        return self.forward[0].input_dim

    @property
    def hidden_dim(self) -> int:
        return self.forward[-1].hidden_dim

    def layers(self) -> Iterator[LstmParams]:
        yield from self.forward
        yield from self.backward

    def arrays(self) -> dict[str, Array]:
        result: dict[str, Array] = {}
        for layer in self.layers():
            result.update(layer.arrays())
        return result

    @staticmethod
    def layer_names(name: str, num_layers: int) -> tuple[list[str], list[str]]:
        forward = [f"{name}.forward.{i}" for i in range(num_layers)]
        backward = [f"{name}.backward.{i}" for i in range(num_layers)]
        return forward, backward

    @classmethod
    def from_arrays(cls, name: str, num_layers: int, arrays: Mapping[str, Array]) -> BiLstmParams:
        forward, backward = cls.layer_names(name, num_layers)
        return cls(
            name=name,
            forward=tuple(LstmParams.from_arrays(n, arrays) for n in forward),
            backward=tuple(LstmParams.from_arrays(n, arrays) for n in backward),
        )

    @classmethod
    def initialize(
        cls,
        name: str,
        input_dim: int,
        hidden_dim: int,
        num_layers: int,
        rng: np.random.Generator,
    ) -> BiLstmParams:
        forward, backward = cls.layer_names(name, num_layers)

        def stack(names: list[str]) -> tuple[LstmParams, ...]:
            return tuple(
                LstmParams.initialize(n, input_dim if i == 0 else hidden_dim, hidden_dim, rng)
                for i, n in enumerate(names)
            )

        return cls(name=name, forward=stack(forward), backward=stack(backward))


@dataclass(frozen=True, eq=False)
class DenseLayer:
    """Affine map followed by an activation; weight stored (fan_in, fan_out)."""

    weight: Array
    bias: Array
    activation: Activation = Activation.TANH

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[1])


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Stack of dense layers whose dimensions chain."""

    name: str
    layers: tuple[DenseLayer, ...]

    def __post_init__(self) -> None:
        for prev, layer in zip(self.layers, self.layers[1:]):
            if prev.out_dim != layer.in_dim:
                raise ShapeMismatchError(
                    f"mlp[{self.name}]", prev.weight.shape, layer.weight.shape
                )
        for layer in self.layers:
            if layer.bias.shape != (layer.out_dim,):
                raise ShapeMismatchError(f"mlp[{self.name}]", layer.weight.shape, layer.bias.shape)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def activations(self) -> tuple[Activation, ...]:
        return tuple(layer.activation for layer in self.layers)

    def arrays(self) -> dict[str, Array]:
        result: dict[str, Array] = {}
        for i, layer in enumerate(self.layers):
            result[f"{self.name}.{i}.weight"] = layer.weight
            result[f"{self.name}.{i}.bias"] = layer.bias
        return result

    @classmethod
    def from_arrays(
        cls, name: str, activations: Sequence[Activation], arrays: Mapping[str, Array]
    ) -> MlpParams:
        return cls(
            name=name,
            layers=tuple(
                DenseLayer(
                    weight=np.asarray(arrays[f"{name}.{i}.weight"], dtype=np.float64),
                    bias=np.asarray(arrays[f"{name}.{i}.bias"], dtype=np.float64),
                    activation=Activation(activation),
                )
                for i, activation in enumerate(activations)
            ),
        )

    @classmethod
    def initialize(
        cls,
        name: str,
        dims: Sequence[int],
        activations: Sequence[Activation],
        rng: np.random.Generator,
    ) -> MlpParams:
        """Uniform(-k, k) weights with k = 1/sqrt(fan_in), zero biases."""
        layers = []
        for fan_in, fan_out, activation in zip(dims, dims[1:], activations):
            k = 1.0 / np.sqrt(fan_in)
            layers.append(
                DenseLayer(
                    weight=rng.uniform(-k, k, (fan_in, fan_out)),
                    bias=np.zeros(fan_out),
                    activation=Activation(activation),
                )
            )
        return cls(name=name, layers=tuple(layers))


# =============================================================================
# Layer operations
# =============================================================================


def window_steps(tape: Tape, windows: Array) -> list[Var]:
    """Split a (batch, length, dim) array into per-step constant nodes."""
    if windows.ndim != 3:
        raise ShapeMismatchError("window_steps", windows.shape, (-1, -1, -1))
    return [tape.constant(windows[:, k, :]) for k in range(windows.shape[1])]


def _gate(tape: Tape, x: Var, h: Var, gate: GateParams, pid: str) -> Var:
    w_x = tape.parameter(f"{pid}.w_x", gate.w_x)
    w_h = tape.parameter(f"{pid}.w_h", gate.w_h)
    b = tape.parameter(f"{pid}.b", gate.b)
    return tape.add(tape.add(tape.matmul(x, w_x), tape.matmul(h, w_h)), b)


def lstm_cell_step(tape: Tape, x: Var, h: Var, c: Var, p: LstmParams) -> tuple[Var, Var]:
    """One LSTM step on a batch of rows.

    i, f, o are sigmoid gates and g the tanh candidate;
    c' = f*c + i*g and h' = o*tanh(c').
    """
    if x.shape[-1] != p.input_dim:
        raise ShapeMismatchError(f"lstm_cell[{p.name}].x", x.shape, (p.input_dim,))
    if h.shape != c.shape or h.shape[-1] != p.hidden_dim or h.shape[0] != x.shape[0]:
        raise ShapeMismatchError(f"lstm_cell[{p.name}].state", h.shape, c.shape)

    i = tape.sigmoid(_gate(tape, x, h, p.input_gate, f"{p.name}.input_gate"))
    f = tape.sigmoid(_gate(tape, x, h, p.forget_gate, f"{p.name}.forget_gate"))
    o = tape.sigmoid(_gate(tape, x, h, p.output_gate, f"{p.name}.output_gate"))
    g = tape.tanh(_gate(tape, x, h, p.candidate, f"{p.name}.candidate"))
    c_next = tape.add(tape.mul(f, c), tape.mul(i, g))
    h_next = tape.mul(o, tape.tanh(c_next))
    return h_next, c_next


def lstm_sequence(
    tape: Tape,
    steps: Sequence[Var],
    p: LstmParams,
    h0: Var | None = None,
) -> list[Var]:
    """Run one layer over ``steps`` and return the hidden output of every step.

    Starts from ``h0`` (zeros when omitted) and a zero cell state.
    """
    if not steps:
        raise SeriesTooShortError(1, 0, "window steps")
    batch = steps[0].shape[0]
    zeros = tape.constant(np.zeros((batch, p.hidden_dim)))
    h = zeros if h0 is None else h0
    c = zeros
    outputs = []
    for x in steps:
        h, c = lstm_cell_step(tape, x, h, c, p)
        outputs.append(h)
    return outputs


def lstm_encode(tape: Tape, window: Sequence[Var], p: LstmParams) -> Var:
    """Final hidden state after consuming ``window`` left to right from zeros."""
    return lstm_sequence(tape, window, p)[-1]


def stacked_lstm_encode(tape: Tape, window: Sequence[Var], stack: Sequence[LstmParams]) -> Var:
    """Feed each layer's per-step outputs into the next; return the top final state."""
    steps: Sequence[Var] = window
    for layer in stack:
        steps = lstm_sequence(tape, steps, layer)
    return steps[-1]


def lstm_decode(
    tape: Tape,
    state: Var,
    out_len: int,
    p: LstmParams,
    head: MlpParams,
) -> list[Var]:
    """Decode a state into ``out_len`` outputs of ``head.out_dim`` each.

    The LSTM starts from (h=state, c=0) and receives the state itself as the
    input of every step; each hidden output passes through ``head``.
    """
    if out_len < 1:
        raise SeriesTooShortError(1, out_len, "decoder steps")
    if state.shape[-1] != p.hidden_dim or p.input_dim != p.hidden_dim:
        raise ShapeMismatchError(f"lstm_decode[{p.name}]", state.shape, (p.hidden_dim,))
    hidden = lstm_sequence(tape, [state] * out_len, p, h0=state)
    return [mlp_forward(tape, h, head) for h in hidden]


def bilstm_forward(tape: Tape, u_window: Sequence[Var], p: BiLstmParams) -> tuple[Var, Var]:
    """Summaries of ``u_window`` read left-to-right (u_plus) and right-to-left (u_minus)."""
    if not u_window:
        raise SeriesTooShortError(1, 0, "window steps")
    u_plus = stacked_lstm_encode(tape, u_window, p.forward)
    u_minus = stacked_lstm_encode(tape, list(reversed(u_window)), p.backward)
    return u_plus, u_minus


def _activate(tape: Tape, z: Var, activation: Activation) -> Var:
    if activation is Activation.TANH:
        return tape.tanh(z)
    if activation is Activation.SIGMOID:
        return tape.sigmoid(z)
    return z


def mlp_forward(tape: Tape, s: Var, p: MlpParams) -> Var:
    """Affine map plus activation for every layer in order."""
    if s.shape[-1] != p.in_dim:
        raise ShapeMismatchError(f"mlp[{p.name}]", s.shape, (p.in_dim,))
    out = s
    for i, layer in enumerate(p.layers):
        weight = tape.parameter(f"{p.name}.{i}.weight", layer.weight)
        bias = tape.parameter(f"{p.name}.{i}.bias", layer.bias)
        out = _activate(tape, tape.add(tape.matmul(out, weight), bias), layer.activation)
    return out
