"""Synthetic labeled data: quasi-random design sampling, an analytic forward
model, train/val/test splits, and CSV persistence.

Designs are five geometric parameters (p, w, h1, h2, h3, all nm) drawn from a
scrambled Sobol sequence over fixed intervals, subject to the fabrication
constraint p - w >= 200 nm.  The forward model maps a design to a 101-sample
absorbance spectrum on the 400-700 nm grid via three Gaussian resonances whose
centers involve sin and fractional-part terms, so distinct designs can produce
near-identical spectra (a deliberately multi-valued inverse problem).
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import qmc

PARAM_NAMES = ("p", "w", "h1", "h2", "h3")
PARAM_LOWER = np.array([305.0, 45.0, 150.0, 25.0, 80.0])
PARAM_UPPER = np.array([415.0, 190.0, 295.0, 200.0, 165.0])
MIN_PERIOD_WIDTH_GAP = 200.0  # p - w >= this, spacing between unit cells

N_WAVELENGTHS = 101
WAVELENGTHS = 400.0 + 3.0 * np.arange(N_WAVELENGTHS)  # 400..700 nm inclusive

N_DIMS = 5
DEFAULT_SAMPLE_COUNT = 3848
SURROGATE_VERSION = "three-peak-1"

_SOBOL_BLOCK = 1024  # fixed draw size keeps rejection sampling reproducible


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


@dataclass(frozen=True)
class DesignParams:
    """One absorber geometry in nm; validated against intervals and the p-w gap."""

    p: float
    w: float
    h1: float
    h2: float
    h3: float

    def __post_init__(self):
        arr = self.to_array()
        if np.any(arr < PARAM_LOWER) or np.any(arr > PARAM_UPPER):
            raise ValueError(f"design {arr} outside parameter intervals")
        if self.p - self.w < MIN_PERIOD_WIDTH_GAP:
            raise ValueError(
                f"p - w = {self.p - self.w:.6g} violates the {MIN_PERIOD_WIDTH_GAP} nm gap"
            )

    def to_array(self) -> np.ndarray:
        return np.array([self.p, self.w, self.h1, self.h2, self.h3])

    @classmethod
    def from_array(cls, arr) -> "DesignParams":
        p, w, h1, h2, h3 = (float(v) for v in arr)
        return cls(p, w, h1, h2, h3)

    def normalized(self) -> np.ndarray:
        return normalize_designs(self.to_array()[None, :])[0]


def normalize_designs(designs: np.ndarray) -> np.ndarray:
    """Min-max scale physical designs to [0,1]^5 using the interval bounds."""
    return (np.asarray(designs, dtype=np.float64) - PARAM_LOWER) / (PARAM_UPPER - PARAM_LOWER)


def denormalize_designs(u: np.ndarray) -> np.ndarray:
    return PARAM_LOWER + np.asarray(u, dtype=np.float64) * (PARAM_UPPER - PARAM_LOWER)


# --- sampling -------------------------------------------------------------------


def sobol_scrambled(n: int, dim: int = N_DIMS, seed: int = 0, scramble: bool = True) -> np.ndarray:
    """First n points of an Owen-scrambled Sobol sequence in [0,1)^5.

    Backed by scipy's generator (published Joe-Kuo direction numbers); the
    sequence is deterministic per seed and may be consumed incrementally.
    """
    if dim != N_DIMS:
        raise ValueError(f"only {N_DIMS}-dimensional sampling is supported, got dim={dim}")
    if n < 1:
        raise ValueError("n must be >= 1")
    engine = qmc.Sobol(d=dim, scramble=scramble, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # balance warning for non power-of-two n
        return engine.random(n)


def scale_points(points: np.ndarray) -> np.ndarray:
    """Affine map from the unit cube to the physical parameter intervals."""
    return PARAM_LOWER + np.asarray(points, dtype=np.float64) * (PARAM_UPPER - PARAM_LOWER)


def scale_and_filter(points: np.ndarray) -> list[DesignParams]:
    """Scale unit-cube points and drop any sample violating p - w >= 200 nm."""
    scaled = scale_points(points)
    keep = scaled[:, 0] - scaled[:, 1] >= MIN_PERIOD_WIDTH_GAP
    return [DesignParams.from_array(row) for row in scaled[keep]]


def generate_designs(n: int, seed: int = 0, scramble: bool = True) -> list[DesignParams]:
    """Valid designs from one Sobol stream, consuming points until n survive the filter."""
    if n < 1:
        raise ValueError("n must be >= 1")
    engine = qmc.Sobol(d=N_DIMS, scramble=scramble, seed=seed)
    designs: list[DesignParams] = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        while len(designs) < n:
            designs.extend(scale_and_filter(engine.random(_SOBOL_BLOCK)))
    return designs[:n]


# --- forward model ----------------------------------------------------------------


def peak_parameters(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centers, widths, amplitudes of the three resonances for normalized designs.

    u is (n, 5) in [0,1].  Returns three (n, 3) arrays.  The sin term makes the
    second center symmetric about u4 = 0.25, and the fractional-part term wraps
    the third center, so the design -> spectrum map is non-injective.
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    u1, u2, u3, u4, u5 = (u[:, i] for i in range(5))
    centers = np.stack(
        [
            430.0 + 240.0 * u1,
            550.0 + 90.0 * np.sin(2.0 * np.pi * u4),
            400.0 + 300.0 * np.mod(u2 + u3, 1.0),
        ],
        axis=1,
    )
    widths = np.stack(
        [12.0 + 28.0 * u3, 15.0 + 25.0 * u5, 20.0 + 20.0 * u1], axis=1
    )
    amps = np.stack(
        [0.55 + 0.45 * u2, 0.45 + 0.5 * u5, 0.35 + 0.4 * u4], axis=1
    )
    return centers, widths, amps


def surrogate_spectra(designs: np.ndarray) -> np.ndarray:
    """Absorbance spectra, (n, 101) in [0,1], for physical designs (n, 5)."""
    designs = np.atleast_2d(np.asarray(designs, dtype=np.float64))
    if np.any(designs < PARAM_LOWER) or np.any(designs > PARAM_UPPER):
        raise ValueError("design outside parameter intervals")
    centers, widths, amps = peak_parameters(normalize_designs(designs))
    z = (WAVELENGTHS[None, None, :] - centers[:, :, None]) / widths[:, :, None]
    total = (amps[:, :, None] * np.exp(-z * z)).sum(axis=1)
    return np.clip(total, 0.0, 1.0)


def surrogate_spectrum(d: DesignParams) -> np.ndarray:
    """Absorbance spectrum of a single design on the fixed wavelength grid."""
    return surrogate_spectra(d.to_array()[None, :])[0]


def witness_pair() -> tuple[DesignParams, DesignParams]:
    """Two far-apart designs with near-identical spectra.

    The pair differs only in the normalized fourth parameter, placed
    symmetrically about 0.25 so the second resonance center is identical; the
    remaining coordinates stack all three resonances at that center with enough
    amplitude that clipping hides the residual amplitude difference.
    """
    u4_a, u4_b = 0.148, 0.5 - 0.148
    c2 = 550.0 + 90.0 * math.sin(2.0 * math.pi * u4_a)
    u1 = (c2 - 430.0) / 240.0
    u2 = 0.95
    u3 = ((c2 - 400.0) / 300.0 - u2) % 1.0
    u5 = 1.0
    mk = lambda u4: DesignParams.from_array(denormalize_designs(np.array([u1, u2, u3, u4, u5])))
    return mk(u4_a), mk(u4_b)


# --- splits and the labeled dataset ------------------------------------------------

SPLIT_TRAIN = "train"
SPLIT_VAL = "val"
SPLIT_TEST = "test"
_SPLITS = (SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST)


def split_counts(n: int) -> tuple[int, int, int]:
    """80/10/10 with floor/floor/remainder rounding."""
    n_train = int(math.floor(0.8 * n))
    n_val = int(math.floor(0.1 * n))
    return n_train, n_val, n - n_train - n_val


def assign_splits(n: int, seed: int) -> np.ndarray:
    """Shuffled per-record split tags; deterministic per seed."""
    if n < 10:
        raise ValueError(f"need at least 10 records to split, got {n}")
    n_train, n_val, n_test = split_counts(n)
    tags = np.array(
        [SPLIT_TRAIN] * n_train + [SPLIT_VAL] * n_val + [SPLIT_TEST] * n_test, dtype=object
    )
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=object)
    out[perm] = tags
    return out


@dataclass
class LabeledDataset:
    """Paired (design, spectrum) records with split tags and normalization bounds."""

    designs: np.ndarray  # (n, 5) physical nm
    spectra: np.ndarray  # (n, 101) absorbance
    split_tags: np.ndarray  # (n,) of train|val|test
    param_lower: np.ndarray = None
    param_upper: np.ndarray = None

    def __post_init__(self):
        if self.param_lower is None:
            self.param_lower = PARAM_LOWER.copy()
        if self.param_upper is None:
            self.param_upper = PARAM_UPPER.copy()

    def __len__(self) -> int:
        return self.designs.shape[0]

    def indices(self, split: str) -> np.ndarray:
        if split not in _SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return np.flatnonzero(self.split_tags == split)

    def spectra_for(self, split: str) -> np.ndarray:
        return self.spectra[self.indices(split)]

    def designs_for(self, split: str) -> np.ndarray:
        return self.designs[self.indices(split)]

    def targets_for(self, split: str) -> np.ndarray:
        """Normalized designs, the regression targets."""
        return normalize_designs(self.designs_for(split))

    def counts(self) -> dict[str, int]:
        return {s: int(np.sum(self.split_tags == s)) for s in _SPLITS}


def build_dataset(designs: list[DesignParams], seed: int) -> LabeledDataset:
    arr = np.array([d.to_array() for d in designs])
    return LabeledDataset(
        designs=arr,
        spectra=surrogate_spectra(arr),
        split_tags=assign_splits(len(designs), seed),
    )


def generate_dataset(n: int = DEFAULT_SAMPLE_COUNT, seed: int = 0) -> LabeledDataset:
    """End-to-end generation: Sobol designs -> spectra -> shuffled 80/10/10 split."""
    return build_dataset(generate_designs(n, seed=seed), seed=seed)


# --- persistence --------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _header() -> list[str]:
    return list(PARAM_NAMES) + ["split"] + [f"a_{i:03d}" for i in range(N_WAVELENGTHS)]


def save_dataset(path: str | Path, ds: LabeledDataset, seed: int | None = None) -> None:
    """Write the dataset CSV and a sidecar JSON metadata file alongside it."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_header())
        for i in range(len(ds)):
            row = [_fmt(v) for v in ds.designs[i]]
            row.append(str(ds.split_tags[i]))
            row.extend(_fmt(v) for v in ds.spectra[i])
            writer.writerow(row)
    meta = {
        "seed": seed,
        "samples": len(ds),
        "surrogate_version": SURROGATE_VERSION,
        "split_counts": ds.counts(),
        "wavelength_nm": {"start": 400.0, "stop": 700.0, "samples": N_WAVELENGTHS},
    }
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> LabeledDataset:
    """Read and revalidate a dataset CSV; errors point at the offending line."""
    path = Path(path)
    designs, spectra, tags = [], [], []
    expected_cols = len(_header())
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        if header != _header():
            raise DatasetFormatError(
                f"{path}: line 1: unexpected header (expected {expected_cols} columns "
                f"p,w,h1,h2,h3,split,a_000..a_{N_WAVELENGTHS - 1:03d})"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != expected_cols:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: expected {expected_cols} columns, got {len(row)}"
                )
            try:
                design = [float(v) for v in row[:5]]
                spectrum = [float(v) for v in row[6:]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
            split = row[5]
            if split not in _SPLITS:
                raise DatasetFormatError(f"{path}: line {lineno}: unknown split {split!r}")
            try:
                DesignParams.from_array(design)  # revalidates intervals and the p-w gap
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
            designs.append(design)
            spectra.append(spectrum)
            tags.append(split)
    if not designs:
        raise DatasetFormatError(f"{path}: no records")
    return LabeledDataset(
        designs=np.array(designs),
        spectra=np.array(spectra),
        split_tags=np.array(tags, dtype=object),
    )


def load_metadata(path: str | Path) -> dict:
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    return json.loads(meta_path.read_text(encoding="utf-8"))
