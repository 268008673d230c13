"""Bidirectional dynamic state-space model.

    s_t     = E(x_t)                       LSTM encoder
    x_t     = D(s_t)                       LSTM decoder + linear head
    s_{t+1} = F(s_t, u_t) = (f(s_t) + u_t+) / 2
    s_{t-1} = B(s_t, u_t) = (f(s_t) + u_t-) / 2
    u_t+, u_t- = BiLSTM(u_t)

Training minimizes, over consecutive window triplets (t-1, t, t+1), the
weighted reconstruction errors of x_{t-1}, x_t, x_{t+1}, the state
prediction errors of s_{t-1}, s_{t+1}, and a shrinkage term on s_t.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from bissm.core.autodiff import (
    AdamState,
    Array,
    GradientMap,
    Tape,
    Var,
    adam_step,
    backward,
)
from bissm.core.exceptions import SeriesTooShortError, ShapeMismatchError
from bissm.core.layers import (
    Activation,
    BiLstmParams,
    LstmParams,
    MlpParams,
    bilstm_forward,
    lstm_decode,
    lstm_encode,
    mlp_forward,
    window_steps,
)
from bissm.data.windows import WindowedDataset
from bissm.models.config import ModelConfig
from bissm.models.reports import EpochRecord, TrainingLog

logger = logging.getLogger(__name__)

ENCODER = "encoder"
DECODER = "decoder"
DECODER_HEAD = "decoder_head"
TRANSITION = "transition"
BILSTM = "bilstm"

EVAL_BATCH_SIZE = 1024

LOSS_TERMS = ("recon_prev", "recon_curr", "recon_next", "state_prev", "state_norm", "state_next")


@dataclass(frozen=True, eq=False)
class ModelParams:
    """All learnable parameters, addressable by stable id via :meth:`arrays`."""

    encoder: LstmParams
    decoder: LstmParams
    head: MlpParams
    transition: MlpParams
    bilstm: BiLstmParams

    def __post_init__(self) -> None:
        state_dim = self.encoder.hidden_dim
        for what, dim in (
            ("decoder", self.decoder.hidden_dim),
            ("transition", self.transition.out_dim),
            ("bilstm", self.bilstm.hidden_dim),
        ):
            if dim != state_dim:
                raise ShapeMismatchError(f"model.{what}", (state_dim,), (dim,))

    @property
    def state_dim(self) -> int:
        return self.encoder.hidden_dim

    def arrays(self) -> dict[str, Array]:
        result: dict[str, Array] = {}
        for part in (self.encoder, self.decoder, self.head, self.transition, self.bilstm):
            result.update(part.arrays())
        return result

    def with_arrays(self, arrays: Mapping[str, Array]) -> ModelParams:
        return ModelParams(
            encoder=LstmParams.from_arrays(ENCODER, arrays),
            decoder=LstmParams.from_arrays(DECODER, arrays),
            head=MlpParams.from_arrays(DECODER_HEAD, self.head.activations, arrays),
            transition=MlpParams.from_arrays(TRANSITION, self.transition.activations, arrays),
            bilstm=BiLstmParams.from_arrays(BILSTM, len(self.bilstm.forward), arrays),
        )

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Mapping[str, Array]) -> ModelParams:
        return cls.initialize(config).with_arrays(arrays)

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator | None = None) -> ModelParams:
        """Random initial parameters; the seed stream comes from ``config.seed`` by default."""
        rng = rng if rng is not None else np.random.default_rng([config.seed, 0])
        n = config.state_dim
        return cls(
            encoder=LstmParams.initialize(ENCODER, config.signal_dim, n, rng),
            decoder=LstmParams.initialize(DECODER, n, n, rng),
            head=MlpParams.initialize(
                DECODER_HEAD, [n, config.signal_dim], [Activation.LINEAR], rng
            ),
            transition=MlpParams.initialize(
                TRANSITION,
                [n, config.transition_hidden, n],
                [Activation.TANH, Activation.TANH],
                rng,
            ),
            bilstm=BiLstmParams.initialize(
                BILSTM, config.control_dim, n, config.bilstm_layers, rng
            ),
        )

    @classmethod
    def zeros(cls, config: ModelConfig) -> ModelParams:
        template = cls.initialize(config)
        return template.with_arrays({k: np.zeros_like(v) for k, v in template.arrays().items()})


# =============================================================================
# Tape-level building blocks
# =============================================================================


def encode(tape: Tape, params: ModelParams, x_windows: Array) -> Var:
    """E: (B, xl, d_x) windows -> (B, state_dim) states."""
    if x_windows.ndim != 3 or x_windows.shape[2] != params.encoder.input_dim:
        raise ShapeMismatchError("encode", x_windows.shape, (-1, -1, params.encoder.input_dim))
    return lstm_encode(tape, window_steps(tape, x_windows), params.encoder)


def decode(tape: Tape, params: ModelParams, states: Var, xl: int) -> Var:
    """D: (B, state_dim) states -> (B, xl * d_x) windows flattened time-major."""
    return tape.concat(lstm_decode(tape, states, xl, params.decoder, params.head))


def control_summaries(tape: Tape, params: ModelParams, u_windows: Array) -> tuple[Var, Var]:
    """BiLSTM summaries (u_plus, u_minus) of (B, ul, d_u) control windows."""
    if u_windows.ndim != 3 or u_windows.shape[2] != params.bilstm.input_dim:
        raise ShapeMismatchError(
            "control_summaries", u_windows.shape, (-1, -1, params.bilstm.input_dim)
        )
    return bilstm_forward(tape, window_steps(tape, u_windows), params.bilstm)


def fuse(tape: Tape, params: ModelParams, states: Var, direction: Var) -> Var:
    """(f(s) + direction) / 2, the shared form of F and B."""
    f_s = mlp_forward(tape, states, params.transition)
    if f_s.shape != direction.shape:
        raise ShapeMismatchError("fuse", f_s.shape, direction.shape)
    return tape.scale(tape.add(f_s, direction), 0.5)


def transition_forward(tape: Tape, params: ModelParams, states: Var, u_windows: Array) -> Var:
    """F(s, u): predicted next state."""
    u_plus, _ = control_summaries(tape, params, u_windows)
    return fuse(tape, params, states, u_plus)


def transition_backward(tape: Tape, params: ModelParams, states: Var, u_windows: Array) -> Var:
    """B(s, u): predicted previous state."""
    _, u_minus = control_summaries(tape, params, u_windows)
    return fuse(tape, params, states, u_minus)


# =============================================================================
# Array-level inference helpers (throwaway tapes)
# =============================================================================


def encode_windows(params: ModelParams, x_windows: Array) -> Array:
    return encode(Tape(), params, x_windows).value


def encode_controls(params: ModelParams, u_windows: Array) -> tuple[Array, Array]:
    """Batched BiLSTM summaries, so each control window is summarized once."""
    u_plus, u_minus = control_summaries(Tape(), params, u_windows)
    return u_plus.value, u_minus.value


def apply_transition(params: ModelParams, states: Array, direction: Array) -> Array:
    tape = Tape()
    return fuse(tape, params, tape.constant(states), tape.constant(direction)).value


def decode_states(params: ModelParams, states: Array, xl: int) -> Array:
    tape = Tape()
    return decode(tape, params, tape.constant(states), xl).value


def predict_next(params: ModelParams, x_prev: Array, u_prev: Array) -> Array:
    """mu_t = D(F(E(x_{t-1}), u_{t-1})), shape (B, xl * d_x)."""
    tape = Tape()
    states = encode(tape, params, x_prev)
    return decode(tape, params, transition_forward(tape, params, states, u_prev), x_prev.shape[1]).value


# =============================================================================
# Objective
# =============================================================================


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted loss terms averaged over the batch."""

    recon_prev: float
    recon_curr: float
    recon_next: float
    state_prev: float
    state_norm: float
    state_next: float

    @property
    def total(self) -> float:
        return sum(getattr(self, name) for name in LOSS_TERMS)


def loss_triplet(
    tape: Tape,
    params: ModelParams,
    config: ModelConfig,
    x_prev: Array,
    x_curr: Array,
    x_next: Array,
    u_curr: Array,
    targets: tuple[Array, Array] | None = None,
) -> tuple[Var, LossBreakdown]:
    """Training objective for a batch of triplets, averaged over the batch.

    The state targets E(x_{t-1}) and E(x_{t+1}) enter as constants, so the
    state prediction terms pull the predictions towards the targets only.
    They are computed from ``params`` unless ``targets`` supplies them.
    """
    batch = x_curr.shape[0]
    for name, windows in (("x_prev", x_prev), ("x_next", x_next)):
        if windows.shape != x_curr.shape:
            raise ShapeMismatchError(f"loss_triplet.{name}", x_curr.shape, windows.shape)
    if u_curr.shape[0] != batch:
        raise ShapeMismatchError("loss_triplet.u_curr", x_curr.shape, u_curr.shape)
    xl = x_curr.shape[1]
    w = config.weights

    if targets is None:
        # One encoder pass over both neighbours
        both = encode_windows(params, np.concatenate([x_prev, x_next]))
        targets = (both[:batch], both[batch:])
    target_prev = tape.constant(targets[0])
    target_next = tape.constant(targets[1])

    s_curr = encode(tape, params, x_curr)
    u_plus, u_minus = control_summaries(tape, params, u_curr)
    s_next_hat = fuse(tape, params, s_curr, u_plus)
    s_prev_hat = fuse(tape, params, s_curr, u_minus)

    def recon(windows: Array, states: Var) -> Var:
        return tape.sum_squares(tape.sub(tape.constant(windows.reshape(batch, -1)), decode(tape, params, states, xl)))

    terms = {
        "recon_prev": (w.alpha1, recon(x_prev, s_prev_hat)),
        "recon_curr": (w.alpha2, recon(x_curr, s_curr)),
        "recon_next": (w.alpha3, recon(x_next, s_next_hat)),
        "state_prev": (w.beta1, tape.sum_squares(tape.sub(target_prev, s_prev_hat))),
        "state_norm": (w.beta2, tape.sum_squares(s_curr)),
        "state_next": (w.beta3, tape.sum_squares(tape.sub(target_next, s_next_hat))),
    }
    weighted = {name: tape.scale(var, weight / batch) for name, (weight, var) in terms.items()}
    total = weighted["recon_prev"]
    for name in LOSS_TERMS[1:]:
        total = tape.add(total, weighted[name])
    breakdown = LossBreakdown(**{name: float(var.value) for name, var in weighted.items()})
    return total, breakdown


def _triplet_arrays(windows: WindowedDataset, centers: np.ndarray) -> tuple[Array, Array, Array, Array]:
    return (
        windows.signals[centers - 1],
        windows.signals[centers],
        windows.signals[centers + 1],
        windows.controls[centers],
    )


def triplet_centers(windows: WindowedDataset) -> np.ndarray:
    """Indices t with both neighbours t-1 and t+1 present."""
    if len(windows) < 3:
        raise SeriesTooShortError(3, len(windows), "windows")
    return np.arange(1, len(windows) - 1)


def _shard_gradients(
    params: ModelParams,
    config: ModelConfig,
    windows: WindowedDataset,
    centers: np.ndarray,
    batch: int,
) -> tuple[float, GradientMap]:
    tape = Tape()
    loss, _ = loss_triplet(tape, params, config, *_triplet_arrays(windows, centers))
    # Rescale the shard mean to its share of the full-batch mean
    scaled = tape.scale(loss, len(centers) / batch)
    return float(scaled.value), backward(tape, scaled.id)


def batch_gradients(
    params: ModelParams,
    config: ModelConfig,
    windows: WindowedDataset,
    centers: np.ndarray,
    executor: ThreadPoolExecutor | None = None,
) -> tuple[float, GradientMap]:
    """Mean loss and gradients over one minibatch.

    The batch is cut into contiguous shards of ``config.shard_size``
    triplets, one tape each, and shard results are summed in shard order.
    An executor only schedules the shards, so the sum is bit-identical for
    any number of workers.
    """
    shards = [centers[i : i + config.shard_size] for i in range(0, len(centers), config.shard_size)]
    if executor is None or len(shards) == 1:
        results = [_shard_gradients(params, config, windows, s, len(centers)) for s in shards]
    else:
        results = list(
            executor.map(
                lambda s: _shard_gradients(params, config, windows, s, len(centers)), shards
            )
        )
    loss, grads = results[0]
    grads = dict(grads)
    for shard_loss, shard_grads in results[1:]:
        loss += shard_loss
        for pid, grad in shard_grads.items():
            grads[pid] = grads[pid] + grad
    return loss, grads


def evaluate_loss(
    windows: WindowedDataset,
    params: ModelParams,
    config: ModelConfig,
    batch_size: int = EVAL_BATCH_SIZE,
) -> float:
    """Mean objective over every triplet in ``windows``, without updating anything."""
    centers = triplet_centers(windows)
    total = 0.0
    for start in range(0, len(centers), batch_size):
        chunk = centers[start : start + batch_size]
        loss, _ = loss_triplet(Tape(), params, config, *_triplet_arrays(windows, chunk))
        total += float(loss.value) * len(chunk)
    return total / len(centers)


def train(
    windows: WindowedDataset,
    config: ModelConfig,
    val: WindowedDataset | None = None,
    threads: int = 1,
    params: ModelParams | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelParams, TrainingLog]:
    """Fit the model with Adam on minibatches of consecutive window triplets.

    Minibatch order is reshuffled every epoch from the run seed. When
    validation windows are given, training stops after ``config.patience``
    epochs without improvement and the best parameters are returned.
    """
    centers = triplet_centers(windows)
    if (windows.signal_dim, windows.control_dim, windows.xl) != (
        config.signal_dim,
        config.control_dim,
        config.xl,
    ):
        raise ShapeMismatchError(
            "train",
            (config.signal_dim, config.control_dim, config.xl),
            (windows.signal_dim, windows.control_dim, windows.xl),
        )
    use_val = val is not None and len(val) >= 3

    params = params if params is not None else ModelParams.initialize(config)
    state = AdamState.zeros(params.arrays())
    hyper = config.adam()
    shuffle_rng = np.random.default_rng([config.seed, 1])

    records: list[EpochRecord] = []
    best_params, best_val, best_epoch, stale = params, np.inf, 0, 0
    stopped_early = False

    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = shuffle_rng.permutation(centers)
            weighted_loss = 0.0
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                loss, grads = batch_gradients(params, config, windows, batch, executor)
                arrays, state = adam_step(params.arrays(), grads, state, hyper)
                params = params.with_arrays(arrays)
                weighted_loss += loss * len(batch)
                logger.debug(f"epoch {epoch} batch {start // config.batch_size}: loss={loss:.6g}")

            record = EpochRecord(epoch=epoch, train_loss=weighted_loss / len(order))
            if use_val:
                assert val is not None
                record.val_loss = evaluate_loss(val, params, config)
            records.append(record)
            logger.info(
                f"Epoch {epoch}/{config.epochs}: train_loss={record.train_loss:.6g}"
                + (f" val_loss={record.val_loss:.6g}" if record.val_loss is not None else "")
            )
            if on_epoch is not None:
                on_epoch(record)

            if record.val_loss is None:
                best_params, best_epoch = params, epoch
                continue
            if record.val_loss < best_val:
                best_params, best_val, best_epoch, stale = params, record.val_loss, epoch, 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info(f"Early stop at epoch {epoch}; best epoch {best_epoch}")
                    stopped_early = True
                    break
    finally:
        if executor is not None:
            executor.shutdown()

    return best_params, TrainingLog(epochs=records, best_epoch=best_epoch, stopped_early=stopped_early)


def mean_state_norm(windows: WindowedDataset, params: ModelParams) -> float:
    """Mean ||E(x_t)||^2 over all windows."""
    states = encode_windows(params, windows.signals)
    return float(np.mean(np.sum(states * states, axis=1)))


def forward_residuals(windows: WindowedDataset, params: ModelParams) -> Array:
    """e_t = x_t - D(F(E(x_{t-1}), u_{t-1})) for t = 1..N-1, shape (N-1, xl * d_x)."""
    if len(windows) < 2:
        raise SeriesTooShortError(2, len(windows), "windows")
    predicted = np.concatenate(
        [
            predict_next(
                params,
                windows.signals[start : start + EVAL_BATCH_SIZE],
                windows.controls[start : start + EVAL_BATCH_SIZE],
            )
            for start in range(0, len(windows) - 1, EVAL_BATCH_SIZE)
        ]
    )[: len(windows) - 1]
    return windows.signal_flat()[1:] - predicted
