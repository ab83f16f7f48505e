"""Command-line driver tying the pieces together.

Subcommands: gen-data, train, sweep, predict, report.  Every run directory
receives a config.txt capturing the seed and hyperparameters, which is enough
to reproduce all numeric outputs bit-identically on the same platform.

Exit codes: 0 success, 2 argument errors, 3 I/O or file-format errors,
4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autoencoder, dataset, mdn, svgplot, transfer
from .dataset import DatasetFormatError, PARAM_LOWER, PARAM_NAMES, PARAM_UPPER
from .nncore import TrainingDivergedError
from .train import (
    ROLE_AE_INIT,
    ROLE_AE_SHUFFLE,
    ROLE_DROPOUT,
    ROLE_INIT,
    ROLE_SHUFFLE,
    TrainConfig,
    arrays_from_dataset,
    child_rng,
    train_mdn,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

OUT_DIR_ENV = "SPECINV_OUT_DIR"


@dataclass
class RunConfig:
    """Everything a run needs; defaults follow the reference setup."""

    seed: int = 0
    dataset: str = ""
    k: int = 1
    k_max: int = 10
    strategy: str = "none"
    autoencoder: bool = False
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 1000
    patience: int = 50
    min_delta: float = 1e-4
    dropout_rate: float = 0.2
    warm_start_jitter: float = 0.1
    out: str = "run"

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            patience=self.patience,
            min_delta=self.min_delta,
            dropout_rate=self.dropout_rate,
            seed=self.seed,
            warm_start_jitter=self.warm_start_jitter,
        )


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def parse_config_file(path: str | Path) -> dict:
    """key = value lines; '#' starts a comment; keys match RunConfig fields."""
    defaults = RunConfig()
    types = {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(RunConfig)}
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in types:
            raise ValueError(f"{path}: line {lineno}: unknown key {key!r}")
        ty = types[key]
        if ty is bool:
            low = value.lower()
            if low in _BOOL_TRUE:
                values[key] = True
            elif low in _BOOL_FALSE:
                values[key] = False
            else:
                raise ValueError(f"{path}: line {lineno}: bad boolean {value!r}")
        else:
            values[key] = ty(value)
    return values


def write_config(path: str | Path, cfg: RunConfig, command: str) -> None:
    lines = [f"command = {command}"]
    for f in sorted(dataclasses.fields(RunConfig), key=lambda f: f.name):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, overridden by --config file values, overridden by CLI flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for f in dataclasses.fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return RunConfig(**values)


def resolve_out(path: str) -> Path:
    """Relative outputs can be redirected wholesale via one environment variable."""
    override = os.environ.get(OUT_DIR_ENV)
    p = Path(path)
    if override and not p.is_absolute():
        return Path(override) / p
    return p


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_log_csv(path: Path, log: list[tuple[float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_nll", "val_nll"])
        for epoch, (train_nll, val_nll) in enumerate(log, start=1):
            writer.writerow([epoch, _fmt(train_nll), _fmt(val_nll)])


def _read_log_csv(path: Path) -> list[tuple[int, float, float]]:
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["epoch"]), float(row["train_nll"]), float(row["val_nll"])))
    return rows


def read_spectrum_file(path: str | Path) -> np.ndarray:
    """A spectrum is 101 numbers separated by commas and/or whitespace."""
    text = Path(path).read_text(encoding="utf-8")
    tokens = text.replace(",", " ").split()
    try:
        values = [float(t) for t in tokens]
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    if len(values) != dataset.N_WAVELENGTHS:
        raise DatasetFormatError(
            f"{path}: expected {dataset.N_WAVELENGTHS} absorbance values, got {len(values)}"
        )
    return np.array(values)


# --- subcommands ---------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    samples = args.samples
    if samples < 1:
        raise ValueError("--samples must be >= 1")
    out = resolve_out(args.out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = dataset.generate_dataset(samples, seed=cfg.seed)
    dataset.save_dataset(out, ds, seed=cfg.seed)
    counts = ds.counts()
    print(
        f"wrote {len(ds)} records to {out} "
        f"(train/val/test = {counts['train']}/{counts['val']}/{counts['test']})"
    )
    return EXIT_OK


def _load_arrays(cfg: RunConfig):
    ds = dataset.load_dataset(cfg.dataset)
    return ds, arrays_from_dataset(ds)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if cfg.strategy != transfer.STRATEGY_NONE:
        raise ValueError("train fits a single model from scratch; use 'sweep' for tl1/tl2")
    ds, arrays = _load_arrays(cfg)
    out_dir = resolve_out(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    k = cfg.k
    model = mdn.build_mdn(arrays.input_width, k, child_rng(cfg.seed + k, ROLE_INIT))
    fit = train_mdn(
        model,
        arrays,
        cfg.train_config(),
        shuffle_rng=child_rng(cfg.seed, k, ROLE_SHUFFLE),
        dropout_rng=child_rng(cfg.seed, k, ROLE_DROPOUT),
    )
    mdn.save_mdn(out_dir / f"mdn_k{k:02d}.json", model)
    _write_log_csv(out_dir / f"log_k{k:02d}.csv", fit.log)
    write_config(out_dir / "config.txt", cfg, "train")
    val_nll = mdn.batch_nll(model, arrays.val_x, arrays.val_y)
    print(f"K={k}: {fit.epochs} epochs, best val NLL {val_nll:.6f}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    ds, arrays = _load_arrays(cfg)
    out_dir = resolve_out(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = cfg.train_config()
    ae_seconds = None
    if cfg.autoencoder:
        t0 = time.perf_counter()
        ae_fit = autoencoder.train_ae(
            ds.spectra_for("train"),
            ds.spectra_for("val"),
            tc,
            shuffle_rng=child_rng(cfg.seed, ROLE_AE_SHUFFLE),
            rng=child_rng(cfg.seed, ROLE_AE_INIT),
        )
        ae_seconds = time.perf_counter() - t0
        autoencoder.save_ae(out_dir / "ae.json", ae_fit.model)
        _write_log_csv(out_dir / "ae_log.csv", ae_fit.log)
        latents = autoencoder.encode(ae_fit.model, ds.spectra)
        arrays = arrays_from_dataset(ds, x_matrix=latents)
        # diagnostic only: how close encode(decode(z)) comes to fixing the latents
        train_latents = latents[ds.indices("train")]
        roundtrip = autoencoder.encode(
            ae_fit.model, autoencoder.decode(ae_fit.model, train_latents)
        )
        latent_mse = float(np.mean((roundtrip - train_latents) ** 2))
        print(
            f"autoencoder: {ae_fit.epochs} epochs, "
            f"val reconstruction MSE {ae_fit.best_val_mse:.3e}, "
            f"latent round-trip MSE {latent_mse:.3e}"
        )
    strategy = transfer.GrowthStrategy(cfg.strategy)
    result = transfer.sweep(arrays, cfg.k_max, strategy, tc)
    for entry in result.entries:
        mdn.save_mdn(out_dir / f"mdn_k{entry.k:02d}.json", entry.model)
        _write_log_csv(out_dir / f"log_k{entry.k:02d}.csv", entry.log)
    transfer.write_sweep_results(out_dir / "sweep_results.csv", result)
    transfer.write_sweep_timing(out_dir / "sweep_timing.csv", result, ae_seconds=ae_seconds)
    write_config(out_dir / "config.txt", cfg, "sweep")
    for entry in result.entries:
        print(
            f"K={entry.k}: {entry.epochs} epochs, "
            f"val NLL {entry.val_nll:.6f}, test NLL {entry.test_nll:.6f}"
        )
    return EXIT_OK


def _candidate_designs(mix: mdn.MixtureParams, top: int) -> tuple[list[float], np.ndarray]:
    """Top components as physical designs, means clipped into the valid intervals."""
    modes = mdn.predict_modes(mix, top)
    pis = [pi for pi, _ in modes]
    units = np.clip(np.array([mu for _, mu in modes]), 0.0, 1.0)
    return pis, dataset.denormalize_designs(units)


def spectrum_rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def cmd_predict(args: argparse.Namespace) -> int:
    model = mdn.load_mdn(args.checkpoint)
    spectrum = read_spectrum_file(args.spectrum_file)
    x = spectrum
    if args.ae:
        ae = autoencoder.load_ae(args.ae)
        x = autoencoder.encode(ae, spectrum)
    if model.input_width != x.shape[-1]:
        raise ValueError(
            f"checkpoint expects input width {model.input_width}, got {x.shape[-1]} "
            f"({'latent' if args.ae else 'raw spectrum'}); "
            f"pass --ae for models trained on latents"
        )
    mix = mdn.mixture_for(model, x)
    pis, designs = _candidate_designs(mix, args.top)
    resim = dataset.surrogate_spectra(designs)
    out_dir = resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "pi"] + list(PARAM_NAMES) + ["rmse"])
        for rank, (pi, design, resim_spectrum) in enumerate(zip(pis, designs, resim), start=1):
            rmse = spectrum_rmse(resim_spectrum, spectrum)
            writer.writerow([rank, _fmt(pi)] + [_fmt(v) for v in design] + [_fmt(rmse)])
    with open(out_dir / "resimulated.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank"] + [f"a_{i:03d}" for i in range(dataset.N_WAVELENGTHS)])
        for rank, resim_spectrum in enumerate(resim, start=1):
            writer.writerow([rank] + [_fmt(v) for v in resim_spectrum])
    with open(out_dir / "mixture.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        n = mix.n_targets
        writer.writerow(
            ["component", "pi"]
            + [f"mu_{c + 1}" for c in range(n)]
            + [f"sigma_{c + 1}" for c in range(n)]
        )
        for i in range(mix.n_components):
            writer.writerow(
                [i + 1, _fmt(mix.pi[i])]
                + [_fmt(v) for v in mix.mu[i]]
                + [_fmt(v) for v in mix.sigma[i]]
            )
    best = min(spectrum_rmse(s, spectrum) for s in resim)
    print(f"wrote {len(pis)} candidates to {out_dir} (best re-simulation RMSE {best:.4f})")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    results_path = run_dir / "sweep_results.csv"
    if not results_path.exists():
        raise FileNotFoundError(f"{results_path} not found; run 'sweep' first")
    rows = transfer.read_sweep_results(results_path)
    out_dir = resolve_out(args.out) if args.out else run_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    for row in rows:
        log_path = run_dir / f"log_k{row['K']:02d}.csv"
        if not log_path.exists():
            continue
        log = _read_log_csv(log_path)
        epochs = [r[0] for r in log]
        svg = svgplot.line_chart(
            [
                ("train NLL", epochs, [r[1] for r in log]),
                ("validation NLL", epochs, [r[2] for r in log]),
            ],
            title=f"Loss curves, K={row['K']} ({row['strategy']})",
            x_label="epoch",
            y_label="NLL",
        )
        svgplot.write_svg(out_dir / f"loss_curves_k{row['K']:02d}.svg", svg)

    ks = [row["K"] for row in rows]
    strategy = rows[0]["strategy"] if rows else "?"
    svg = svgplot.line_chart(
        [
            ("train", ks, [row["train_nll"] for row in rows]),
            ("validation", ks, [row["val_nll"] for row in rows]),
            ("test", ks, [row["test_nll"] for row in rows]),
        ],
        title=f"NLL vs number of components ({strategy})",
        x_label="K",
        y_label="NLL",
    )
    svgplot.write_svg(out_dir / "nll_vs_k.svg", svg)

    if args.dataset:
        _report_marginals(args, run_dir, out_dir, rows)
    print(f"report written to {out_dir}")
    return EXIT_OK


def _report_marginals(args, run_dir: Path, out_dir: Path, rows: list[dict]) -> None:
    """Mixture-weighted marginal density of each design parameter for one test record."""
    ds = dataset.load_dataset(args.dataset)
    k = args.k if args.k else max(row["K"] for row in rows)
    model = mdn.load_mdn(run_dir / f"mdn_k{k:02d}.json")
    test_idx = ds.indices("test")
    if not 0 <= args.test_index < len(test_idx):
        raise ValueError(f"--test-index {args.test_index} out of range [0, {len(test_idx)})")
    record = test_idx[args.test_index]
    spectrum = ds.spectra[record]
    truth = ds.designs[record]
    x = spectrum
    ae_path = run_dir / "ae.json"
    if ae_path.exists():
        x = autoencoder.encode(autoencoder.load_ae(ae_path), spectrum)
    mix = mdn.mixture_for(model, x)
    spans = PARAM_UPPER - PARAM_LOWER
    for c, name in enumerate(PARAM_NAMES):
        grid = mdn.marginal_grid(mix, c)
        dens = mdn.weighted_marginal_pdf(mix, c, grid)
        # physical axis: value = lower + span*u, density rescaled to per-nm
        value_nm = PARAM_LOWER[c] + spans[c] * grid
        dens_nm = dens / spans[c]
        with open(out_dir / f"marginal_{name}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"{name}_nm", "density_per_nm"])
            for v, d in zip(value_nm, dens_nm):
                writer.writerow([_fmt(v), _fmt(d)])
        svg = svgplot.line_chart(
            [("weighted marginal pdf", value_nm, dens_nm)],
            title=f"Marginal density of {name} (K={k})",
            x_label=f"{name} [nm]",
            y_label="density [1/nm]",
            vlines=[(f"true {name} = {truth[c]:.1f}", float(truth[c]))],
        )
        svgplot.write_svg(out_dir / f"marginal_{name}.svg", svg)


# --- argument parsing -------------------------------------------------------------


def _add_common_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--min-delta", dest="min_delta", type=float, default=None)
    p.add_argument("--dropout", dest="dropout_rate", type=float, default=None)
    p.add_argument(
        "--warm-start-jitter", dest="warm_start_jitter", type=float, default=None,
        help="seeded perturbation scale for a freshly cloned component",
    )


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specinv",
        description="Inverse design of spectral responses with mixture density networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic labeled dataset")
    p.add_argument("--samples", type=int, default=dataset.DEFAULT_SAMPLE_COUNT)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--out", dest="out_file", default="dataset.csv")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a single K-component model from scratch")
    p.add_argument("--dataset", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--strategy", choices=[transfer.STRATEGY_NONE], default=None)
    p.add_argument("--out", default=None)
    _add_common_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train models for K = 1..k_max")
    p.add_argument("--dataset", default=None)
    p.add_argument("--k-max", dest="k_max", type=int, default=None)
    p.add_argument(
        "--strategy",
        choices=[transfer.STRATEGY_NONE, transfer.STRATEGY_TL1, transfer.STRATEGY_TL2],
        default=None,
    )
    p.add_argument(
        "--autoencoder", action="store_const", const=True, default=None,
        help="train an autoencoder first and sweep on 10-dim latents",
    )
    p.add_argument("--out", default=None)
    _add_common_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("predict", help="rank candidate designs for a spectrum")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--spectrum-file", dest="spectrum_file", required=True)
    p.add_argument("--top", type=int, default=4)
    p.add_argument("--ae", help="autoencoder checkpoint for latent-input models")
    p.add_argument("--out", default="prediction")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="emit SVG/CSV figures from a finished run")
    p.add_argument("--run-dir", dest="run_dir", required=True)
    p.add_argument("--dataset", help="dataset CSV; enables the marginal-density figures")
    p.add_argument("--k", type=int, help="component count to use for marginals (default: max)")
    p.add_argument("--test-index", dest="test_index", type=int, default=0)
    p.add_argument("--out", help="report directory (default: <run-dir>/report)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DatasetFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
