"""Shared training loop for mixture models: minibatching, Adam, early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dataset as dataset_mod
from . import mdn, nncore
from .mdn import MdnModel
from .nncore import EarlyStopping

# sub-stream roles so one run seed drives every independent random choice
ROLE_INIT = 1
ROLE_DROPOUT = 2
ROLE_SHUFFLE = 3
ROLE_DONOR = 4
ROLE_AE_INIT = 5
ROLE_AE_SHUFFLE = 6
ROLE_WARM_JITTER = 7


def child_rng(*entropy: int) -> np.random.Generator:
    """Deterministic generator derived from integer entropy words."""
    return np.random.default_rng(np.random.SeedSequence([int(e) for e in entropy]))


@dataclass
class TrainConfig:
    """Hyperparameters shared by every training run.

    ``warm_start_jitter`` is the scale of the seeded perturbation applied to a
    freshly cloned component before its first update.  An exact clone receives
    bit-identical gradients to its donor forever and the pair never
    differentiates; the jitter is the explicit escape from that symmetry
    (growth itself stays bit-exact).
    """

    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 1000
    patience: int = 50
    min_delta: float = 1e-4
    dropout_rate: float = 0.2
    seed: int = 0
    warm_start_jitter: float = 0.1


@dataclass
class SupervisedArrays:
    """Train/val/test matrices ready for the loop; x rows pair with y rows."""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def input_width(self) -> int:
        return self.train_x.shape[1]


@dataclass
class TrainResult:
    model: MdnModel
    epochs: int
    log: list[tuple[float, float]] = field(default_factory=list)  # (train_nll, val_nll)
    best_val_loss: float = math.nan


def arrays_from_dataset(ds, x_matrix: np.ndarray | None = None) -> SupervisedArrays:
    """Split a labeled dataset into training matrices.

    ``x_matrix`` substitutes alternative inputs aligned row-for-row with the
    dataset records (e.g. encoder latents); targets are always the normalized
    designs.
    """
    x = ds.spectra if x_matrix is None else np.asarray(x_matrix, dtype=np.float64)
    if x.shape[0] != len(ds):
        raise ValueError(f"{x.shape[0]} input rows for {len(ds)} records")
    y = dataset_mod.normalize_designs(ds.designs)
    parts = {}
    for split in ("train", "val", "test"):
        idx = ds.indices(split)
        parts[split] = (x[idx], y[idx])
    return SupervisedArrays(
        train_x=parts["train"][0],
        train_y=parts["train"][1],
        val_x=parts["val"][0],
        val_y=parts["val"][1],
        test_x=parts["test"][0],
        test_y=parts["test"][1],
    )


def _minibatches(n: int, batch_size: int, perm: np.ndarray):
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def train_mdn(
    model: MdnModel,
    data: SupervisedArrays,
    config: TrainConfig,
    shuffle_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
) -> TrainResult:
    """Train in place until early stopping, then restore the best-validation weights.

    The logged train loss is the running minibatch mean (dropout active); the
    logged validation loss is recomputed in eval mode, so reloading the best
    checkpoint reproduces it exactly.
    """
    params = model.parameters()
    adam = nncore.adam_init(params, learning_rate=config.learning_rate)
    stopper = EarlyStopping(
        patience=config.patience, min_delta=config.min_delta, max_epochs=config.max_epochs
    )
    n = data.train_x.shape[0]
    log: list[tuple[float, float]] = []
    while True:
        perm = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for idx in _minibatches(n, config.batch_size, perm):
            loss, grads = mdn.batch_nll_and_grads(
                model,
                data.train_x[idx],
                data.train_y[idx],
                train=True,
                dropout_rate=config.dropout_rate,
                rng=dropout_rng,
            )
            nncore.adam_step(params, grads, adam)
            total += loss * len(idx)
            seen += len(idx)
        train_nll = total / seen
        val_nll = mdn.batch_nll(model, data.val_x, data.val_y)
        log.append((train_nll, val_nll))
        if stopper.update(val_nll, nncore.snapshot_params(params)):
            break
    nncore.restore_params(params, stopper.best_checkpoint)
    return TrainResult(
        model=model, epochs=stopper.epoch, log=log, best_val_loss=stopper.best_val_loss
    )
