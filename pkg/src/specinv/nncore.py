"""Minimal dense-network engine.

Plain-numpy multilayer perceptrons with SiLU activations, inverted dropout,
reverse-mode gradients replayed from an activation tape, an Adam optimizer,
early stopping, and a bit-exact JSON checkpoint format.  All arithmetic is
64-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

CHECKPOINT_FORMAT_VERSION = 1

ACT_SILU = "silu"
ACT_IDENTITY = "identity"


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss turns NaN/infinite instead of silently continuing."""


def silu(v: np.ndarray) -> np.ndarray:
    """Elementwise x * sigmoid(x)."""
    v = np.asarray(v, dtype=np.float64)
    return v * expit(v)


def _silu_grad(z: np.ndarray, sig: np.ndarray) -> np.ndarray:
    # d/dz [z * sigmoid(z)] = sigmoid(z) * (1 + z * (1 - sigmoid(z)))
    return sig * (1.0 + z * (1.0 - sig))


@dataclass
class MlpModel:
    """A stack of affine layers with per-layer activation markers.

    weights[l] has shape (layer_widths[l+1], layer_widths[l]); biases[l] has
    length layer_widths[l+1].  ``dropout_after`` lists the (0-based) layer
    indices whose post-activation output is dropped out in train mode.
    """

    layer_widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    dropout_after: frozenset[int] = field(default_factory=frozenset)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    def parameters(self) -> list[np.ndarray]:
        """Weight/bias arrays interleaved per layer; views, not copies."""
        params: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_widths=list(self.layer_widths),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activations=list(self.activations),
            dropout_after=frozenset(self.dropout_after),
        )


def init_mlp(
    layer_widths: list[int],
    rng: np.random.Generator,
    activations: list[str] | None = None,
    dropout_after: frozenset[int] | set[int] = frozenset(),
) -> MlpModel:
    """Glorot-uniform weights, zero biases; SiLU everywhere unless overridden."""
    if len(layer_widths) < 2:
        raise ValueError(f"need at least input and output widths, got {layer_widths}")
    if any(w <= 0 for w in layer_widths):
        raise ValueError(f"layer widths must be positive, got {layer_widths}")
    n_layers = len(layer_widths) - 1
    if activations is None:
        activations = [ACT_SILU] * n_layers
    if len(activations) != n_layers:
        raise ValueError(f"expected {n_layers} activation markers, got {len(activations)}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_widths[:-1], layer_widths[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(
        layer_widths=list(layer_widths),
        weights=weights,
        biases=biases,
        activations=list(activations),
        dropout_after=frozenset(dropout_after),
    )


def max_width_dropout_layers(layer_widths: list[int]) -> frozenset[int]:
    """Indices of the widest hidden layers; dropout goes after these."""
    hidden = layer_widths[1:]
    widest = max(hidden)
    return frozenset(i for i, w in enumerate(hidden) if w == widest)


@dataclass
class _LayerRecord:
    inputs: np.ndarray
    pre_act: np.ndarray
    sig: np.ndarray | None
    mask: np.ndarray | None


@dataclass
class Tape:
    """Activation record from one forward pass; replays dropout masks exactly."""

    records: list[_LayerRecord]
    single: bool

    @property
    def batch_size(self) -> int:
        return self.records[0].inputs.shape[0]


def forward(
    model: MlpModel,
    x: np.ndarray,
    train: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, Tape]:
    """Run the network on a vector or a (batch, width) matrix.

    In train mode, inverted dropout (scale by 1/(1-rate)) is applied after the
    activation of every layer in ``dropout_after``; in eval mode dropout is the
    identity and the output does not depend on ``rng``.
    """
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != model.input_width:
        raise ValueError(
            f"input shape {np.shape(x)} incompatible with input width {model.input_width}"
        )
    use_dropout = train and dropout_rate > 0.0
    if use_dropout and model.dropout_after and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    records = []
    for l in range(model.n_layers):
        z = a @ model.weights[l].T + model.biases[l]
        if model.activations[l] == ACT_SILU:
            sig = expit(z)
            h = z * sig
        else:
            sig = None
            h = z
        mask = None
        if use_dropout and l in model.dropout_after:
            keep = 1.0 - dropout_rate
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        records.append(_LayerRecord(inputs=a, pre_act=z, sig=sig, mask=mask))
        a = h
    out = a[0] if single else a
    return out, Tape(records=records, single=single)


def backward(
    model: MlpModel, tape: Tape, output_gradient: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of a scalar loss w.r.t. every weight and bias, plus the input.

    ``output_gradient`` is dLoss/dOutput with the same shape as the forward
    output (per-sample rows for a batch; any 1/batch factors belong to the
    caller).  Returns (param_grads, input_grad) with param_grads ordered like
    ``model.parameters()``.
    """
    if len(tape.records) != model.n_layers:
        raise ValueError(
            f"tape has {len(tape.records)} layers, model has {model.n_layers}"
        )
    g = np.asarray(output_gradient, dtype=np.float64)
    if tape.single:
        g = g[None, :]
    if g.shape != (tape.batch_size, model.output_width):
        raise ValueError(
            f"output gradient shape {np.shape(output_gradient)} does not match "
            f"forward output ({tape.batch_size}, {model.output_width})"
        )
    grad_w: list[np.ndarray] = [np.empty(0)] * model.n_layers
    grad_b: list[np.ndarray] = [np.empty(0)] * model.n_layers
    for l in reversed(range(model.n_layers)):
        rec = tape.records[l]
        if rec.inputs.shape[1] != model.weights[l].shape[1]:
            raise ValueError(f"tape layer {l} does not match model weights")
        if rec.mask is not None:
            g = g * rec.mask
        if model.activations[l] == ACT_SILU:
            g = g * _silu_grad(rec.pre_act, rec.sig)
        grad_w[l] = g.T @ rec.inputs
        grad_b[l] = g.sum(axis=0)
        g = g @ model.weights[l]
    param_grads: list[np.ndarray] = []
    for w, b in zip(grad_w, grad_b):
        param_grads.append(w)
        param_grads.append(b)
    input_grad = g[0] if tape.single else g
    return param_grads, input_grad


@dataclass
class AdamState:
    """Adam moments matching a parameter list element-for-element."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # reused work buffers, never part of the optimizer's logical state
    _scratch: list[np.ndarray] | None = field(default=None, repr=False, compare=False)


def adam_init(params: list[np.ndarray], learning_rate: float = 1e-3) -> AdamState:
    return AdamState(
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
        learning_rate=learning_rate,
    )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ValueError(
            f"parameter/gradient/moment counts differ: "
            f"{len(params)}/{len(grads)}/{len(state.first_moment)}"
        )
    if state._scratch is None:
        state._scratch = [np.empty_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v, work in zip(
        params, grads, state.first_moment, state.second_moment, state._scratch
    ):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {g.shape}")
        m *= state.beta1
        np.multiply(g, 1.0 - state.beta1, out=work)
        m += work
        v *= state.beta2
        np.multiply(g, g, out=work)
        work *= 1.0 - state.beta2
        v += work
        # p -= lr * (m / bc1) / (sqrt(v / bc2) + eps), built in the work buffer
        np.divide(v, bc2, out=work)
        np.sqrt(work, out=work)
        work += state.epsilon
        np.divide(m, work, out=work)
        work *= state.learning_rate / bc1
        p -= work
    return params, state


@dataclass
class EarlyStopping:
    """Patience-based stopper that retains the best-validation checkpoint.

    ``update`` must be called once per epoch; it returns True when training
    should stop (patience exhausted or the epoch cap reached).
    """

    patience: int = 50
    min_delta: float = 1e-4
    max_epochs: int = 1000
    best_val_loss: float = math.inf
    best_checkpoint: object = None
    epochs_since_improvement: int = 0
    epoch: int = 0

    def update(self, epoch_val_loss: float, checkpoint: object) -> bool:
        if not math.isfinite(epoch_val_loss):
            raise TrainingDivergedError(
                f"validation loss {epoch_val_loss!r} at epoch {self.epoch + 1}"
            )
        self.epoch += 1
        if epoch_val_loss < self.best_val_loss - self.min_delta:
            self.best_val_loss = epoch_val_loss
            self.best_checkpoint = checkpoint
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience or self.epoch >= self.max_epochs


# --- checkpoint serialization ------------------------------------------------
#
# Checkpoints are plain JSON.  Floats are written with 17 significant digits,
# which round-trips IEEE-754 doubles bit-exactly; the reader is the stock json
# parser.  See docs/checkpoint.schema.json for the layout.


def _json_fragments(obj, out: list[str], indent: int) -> None:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (key, value) in enumerate(obj.items()):
            out.append(f'{pad}  {json.dumps(str(key))}: ')
            _json_fragments(value, out, indent + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        items = list(obj)
        if not items:
            out.append("[]")
            return
        out.append("[")
        for i, value in enumerate(items):
            _json_fragments(value, out, indent + 1)
            if i < len(items) - 1:
                out.append(", ")
        out.append("]")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x!r} cannot be checkpointed")
        out.append(format(x, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif obj is None:
        out.append("null")
    elif isinstance(obj, np.ndarray):
        _json_fragments(obj.tolist(), out, indent)
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def dump_checkpoint_text(payload: dict) -> str:
    out: list[str] = []
    _json_fragments(payload, out, 0)
    out.append("\n")
    return "".join(out)


def save_checkpoint(path: str | Path, payload: dict) -> None:
    Path(path).write_text(dump_checkpoint_text(payload), encoding="utf-8")


def load_checkpoint(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def mlp_to_dict(model: MlpModel) -> dict:
    return {
        "layer_widths": [int(w) for w in model.layer_widths],
        "activations": list(model.activations),
        "dropout_after": sorted(int(i) for i in model.dropout_after),
        "weights": [w for w in model.weights],
        "biases": [b for b in model.biases],
    }


def mlp_from_dict(data: dict) -> MlpModel:
    widths = [int(w) for w in data["layer_widths"]]
    weights = [np.asarray(w, dtype=np.float64) for w in data["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
    model = MlpModel(
        layer_widths=widths,
        weights=weights,
        biases=biases,
        activations=list(data["activations"]),
        dropout_after=frozenset(int(i) for i in data["dropout_after"]),
    )
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        if w.shape != (widths[l + 1], widths[l]) or b.shape != (widths[l + 1],):
            raise ValueError(f"checkpoint layer {l} has inconsistent shapes")
    return model


def save_mlp(path: str | Path, model: MlpModel) -> None:
    save_checkpoint(
        path,
        {"format_version": CHECKPOINT_FORMAT_VERSION, "kind": "mlp", "mlp": mlp_to_dict(model)},
    )


def load_mlp(path: str | Path) -> MlpModel:
    data = load_checkpoint(path)
    if data.get("kind") != "mlp":
        raise ValueError(f"expected an mlp checkpoint, got kind={data.get('kind')!r}")
    return mlp_from_dict(data["mlp"])


def snapshot_params(params: list[np.ndarray]) -> list[np.ndarray]:
    return [p.copy() for p in params]


def restore_params(params: list[np.ndarray], snapshot: list[np.ndarray]) -> None:
    if len(params) != len(snapshot):
        raise ValueError("snapshot does not match parameter list")
    for p, s in zip(params, snapshot):
        p[...] = s
