"""Growing a trained mixture model from K-1 to K components, and the K-sweep driver.

Growth keeps the hidden layers bit-exact, zeroes the mixing-coefficient head
(softmax of zeros gives every component weight 1/K, so old and new components
start with equal opportunity), and copies the mean/deviation head rows of the
surviving components.  The new component clones the rows of either a randomly
chosen donor component ("tl1", exploration) or component 1 ("tl2",
deterministic).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mdn
from .mdn import MdnHead, MdnModel
from .nncore import TrainingDivergedError
from .train import (
    ROLE_DONOR,
    ROLE_DROPOUT,
    ROLE_INIT,
    ROLE_SHUFFLE,
    ROLE_WARM_JITTER,
    SupervisedArrays,
    TrainConfig,
    TrainResult,
    child_rng,
    train_mdn,
)

STRATEGY_NONE = "none"
STRATEGY_TL1 = "tl1"
STRATEGY_TL2 = "tl2"
_STRATEGIES = (STRATEGY_NONE, STRATEGY_TL1, STRATEGY_TL2)


@dataclass(frozen=True)
class GrowthStrategy:
    """How to initialize a K-component model; rng_seed only matters for tl1."""

    kind: str
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in _STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {_STRATEGIES}")

    @property
    def is_transfer(self) -> bool:
        return self.kind in (STRATEGY_TL1, STRATEGY_TL2)


def grow(model_prev: MdnModel, strategy: GrowthStrategy) -> MdnModel:
    """Untrained K-component model initialized from a trained (K-1)-component one."""
    if not strategy.is_transfer:
        raise ValueError("grow is only defined for the tl1/tl2 strategies")
    head_prev = model_prev.head
    if head_prev.feature_width != model_prev.trunk.output_width:
        raise ValueError("head feature width does not match trunk output width")
    k_prev = head_prev.n_components
    n = head_prev.n_targets
    f = head_prev.feature_width
    k_new = k_prev + 1

    if strategy.kind == STRATEGY_TL1:
        donor = int(child_rng(strategy.rng_seed).integers(k_prev))
    else:
        donor = 0

    def extend(w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rows = slice(donor * n, (donor + 1) * n)
        return (
            np.vstack([w, w[rows].copy()]),
            np.concatenate([b, b[rows].copy()]),
        )

    mu_w, mu_b = extend(head_prev.mu_w, head_prev.mu_b)
    sigma_w, sigma_b = extend(head_prev.sigma_w, head_prev.sigma_b)
    head = MdnHead(
        pi_w=np.zeros((k_new, f)),
        pi_b=np.zeros(k_new),
        mu_w=mu_w,
        mu_b=mu_b,
        sigma_w=sigma_w,
        sigma_b=sigma_b,
    )
    return MdnModel(trunk=model_prev.trunk.copy(), head=head)


def perturb_new_component(model: MdnModel, rng: np.random.Generator, scale: float) -> None:
    """Seeded noise on the newest component's mean/deviation head rows.

    A grown model's clone is bit-identical to its donor, so every gradient,
    moment, and update it receives is bit-identical too: the pair can never
    split into distinct solutions.  Real trainings escape through rounding
    noise; here the escape is explicit, tiny, and reproducible.  Called by the
    sweep driver after growth, never by ``grow`` itself, so initialization
    exactness is preserved.
    """
    if scale <= 0.0:
        return
    n = model.head.n_targets
    rows = slice((model.head.n_components - 1) * n, model.head.n_components * n)
    for arr in (model.head.mu_w, model.head.sigma_w):
        arr[rows, :] += scale * rng.standard_normal(arr[rows, :].shape)
    for arr in (model.head.mu_b, model.head.sigma_b):
        arr[rows] += scale * rng.standard_normal(arr[rows].shape)


@dataclass
class SweepEntry:
    k: int
    strategy: str
    epochs: int
    seconds: float
    train_nll: float
    val_nll: float
    test_nll: float
    model: MdnModel
    log: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class SweepResult:
    entries: list[SweepEntry] = field(default_factory=list)

    def entry(self, k: int) -> SweepEntry:
        for e in self.entries:
            if e.k == k:
                return e
        raise KeyError(f"no entry for K={k}")

    def total_epochs(self) -> int:
        return sum(e.epochs for e in self.entries)

    def total_seconds(self) -> float:
        return sum(e.seconds for e in self.entries)


def sweep(
    data: SupervisedArrays,
    k_max: int,
    strategy: GrowthStrategy,
    config: TrainConfig,
    trunk_widths: list[int] | None = None,
    n_targets: int = mdn.N_DESIGN_PARAMS,
) -> SweepResult:
    """Train models for K = 1..k_max, warm-starting each K from K-1 under tl1/tl2.

    K=1 always trains from scratch.  The fresh-init baseline re-seeds per K
    (base seed + K) so its runs are independent; transfer runs are sequential
    by construction.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    result = SweepResult()
    prev_model: MdnModel | None = None
    for k in range(1, k_max + 1):
        if k == 1 or not strategy.is_transfer:
            init_rng = child_rng(config.seed + k, ROLE_INIT)
            model = mdn.build_mdn(
                data.input_width, k, init_rng, n_targets=n_targets, trunk_widths=trunk_widths
            )
        else:
            donor_seed = int(
                child_rng(config.seed, k, ROLE_DONOR).integers(np.iinfo(np.int64).max)
            )
            model = grow(prev_model, replace(strategy, rng_seed=donor_seed))
            perturb_new_component(
                model, child_rng(config.seed, k, ROLE_WARM_JITTER), config.warm_start_jitter
            )
        t0 = time.perf_counter()
        try:
            fit: TrainResult = train_mdn(
                model,
                data,
                config,
                shuffle_rng=child_rng(config.seed, k, ROLE_SHUFFLE),
                dropout_rng=child_rng(config.seed, k, ROLE_DROPOUT),
            )
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"K={k}: {exc}") from exc
        seconds = time.perf_counter() - t0
        result.entries.append(
            SweepEntry(
                k=k,
                strategy=strategy.kind,
                epochs=fit.epochs,
                seconds=seconds,
                train_nll=mdn.batch_nll(model, data.train_x, data.train_y),
                val_nll=mdn.batch_nll(model, data.val_x, data.val_y),
                test_nll=mdn.batch_nll(model, data.test_x, data.test_y),
                model=model,
                log=fit.log,
            )
        )
        prev_model = model
    return result


# --- CSV emission ----------------------------------------------------------------
#
# Loss/epoch results are split from wall-clock timing so the result file is
# byte-reproducible for a fixed seed; timing lives in its own sidecar CSV.


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_sweep_results(path: str | Path, result: SweepResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["K", "strategy", "epochs", "train_nll", "val_nll", "test_nll"])
        for e in result.entries:
            writer.writerow(
                [e.k, e.strategy, e.epochs, _fmt(e.train_nll), _fmt(e.val_nll), _fmt(e.test_nll)]
            )


def write_sweep_timing(
    path: str | Path, result: SweepResult, ae_seconds: float | None = None
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "strategy", "seconds"])
        total = 0.0
        if ae_seconds is not None:
            writer.writerow(["ae_train", "-", _fmt(ae_seconds)])
            total += ae_seconds
        for e in result.entries:
            writer.writerow([f"k={e.k}", e.strategy, _fmt(e.seconds)])
            total += e.seconds
        writer.writerow(["total", result.entries[0].strategy if result.entries else "-", _fmt(total)])


def read_sweep_results(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "K": int(row["K"]),
                    "strategy": row["strategy"],
                    "epochs": int(row["epochs"]),
                    "train_nll": float(row["train_nll"]),
                    "val_nll": float(row["val_nll"]),
                    "test_nll": float(row["test_nll"]),
                }
            )
    return rows
