"""Spectrum autoencoder: 101 absorbance samples down to a 10-dim latent and back.

Trained on mean squared reconstruction error with Adam and early stopping; the
encoder is then frozen and its latents feed the reduced-input mixture model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .nncore import ACT_IDENTITY, ACT_SILU, MlpModel, TrainingDivergedError
from .train import TrainConfig

ENCODER_WIDTHS = [101, 128, 256, 512, 256, 10]
DECODER_WIDTHS = [10, 256, 512, 256, 128, 101]
LATENT_WIDTH = 10


@dataclass
class AeModel:
    encoder: MlpModel
    decoder: MlpModel

    def parameters(self) -> list[np.ndarray]:
        return self.encoder.parameters() + self.decoder.parameters()

    def copy(self) -> "AeModel":
        return AeModel(encoder=self.encoder.copy(), decoder=self.decoder.copy())


def init_ae(rng: np.random.Generator) -> AeModel:
    """Fresh autoencoder; SiLU throughout except the affine reconstruction layer."""
    encoder = nncore.init_mlp(ENCODER_WIDTHS, rng)
    dec_acts = [ACT_SILU] * (len(DECODER_WIDTHS) - 2) + [ACT_IDENTITY]
    decoder = nncore.init_mlp(DECODER_WIDTHS, rng, activations=dec_acts)
    return AeModel(encoder=encoder, decoder=decoder)


def encode(ae: AeModel, spectrum: np.ndarray) -> np.ndarray:
    """Latent vector(s) for one spectrum (101,) or a batch (n, 101); eval mode."""
    out, _ = nncore.forward(ae.encoder, spectrum)
    return out


def decode(ae: AeModel, latent: np.ndarray) -> np.ndarray:
    """Reconstructed spectrum; unclamped (clip to [0,1] only for display)."""
    out, _ = nncore.forward(ae.decoder, latent)
    return out


def reconstruction_mse(ae: AeModel, spectra: np.ndarray) -> float:
    recon = decode(ae, encode(ae, spectra))
    return float(np.mean((recon - spectra) ** 2))


def mean_baseline_mse(train_spectra: np.ndarray, eval_spectra: np.ndarray) -> float:
    """MSE of always predicting the training-set mean spectrum."""
    mean = train_spectra.mean(axis=0)
    return float(np.mean((eval_spectra - mean) ** 2))


@dataclass
class AeTrainResult:
    model: AeModel
    epochs: int
    log: list[tuple[float, float]] = field(default_factory=list)  # (train_mse, val_mse)
    best_val_mse: float = math.nan


def train_ae(
    train_spectra: np.ndarray,
    val_spectra: np.ndarray,
    config: TrainConfig,
    shuffle_rng: np.random.Generator,
    rng: np.random.Generator | None = None,
    model: AeModel | None = None,
) -> AeTrainResult:
    """Minimize reconstruction MSE; returns the best-validation model."""
    if model is None:
        if rng is None:
            raise ValueError("need an init rng when no model is supplied")
        model = init_ae(rng)
    params = model.parameters()
    adam = nncore.adam_init(params, learning_rate=config.learning_rate)
    stopper = nncore.EarlyStopping(
        patience=config.patience, min_delta=config.min_delta, max_epochs=config.max_epochs
    )
    n = train_spectra.shape[0]
    log: list[tuple[float, float]] = []
    while True:
        perm = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            batch = train_spectra[idx]
            latent, enc_tape = nncore.forward(model.encoder, batch)
            recon, dec_tape = nncore.forward(model.decoder, latent)
            err = recon - batch
            loss = float(np.mean(err * err))
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite reconstruction loss {loss!r}")
            g_out = 2.0 * err / err.size
            dec_grads, g_latent = nncore.backward(model.decoder, dec_tape, g_out)
            enc_grads, _ = nncore.backward(model.encoder, enc_tape, g_latent)
            nncore.adam_step(params, enc_grads + dec_grads, adam)
            total += loss * len(idx)
            seen += len(idx)
        val_mse = reconstruction_mse(model, val_spectra)
        log.append((total / seen, val_mse))
        if stopper.update(val_mse, nncore.snapshot_params(params)):
            break
    nncore.restore_params(params, stopper.best_checkpoint)
    return AeTrainResult(
        model=model, epochs=stopper.epoch, log=log, best_val_mse=stopper.best_val_loss
    )


# --- checkpoint io --------------------------------------------------------------


def ae_to_dict(ae: AeModel) -> dict:
    return {
        "format_version": nncore.CHECKPOINT_FORMAT_VERSION,
        "kind": "autoencoder",
        "encoder": nncore.mlp_to_dict(ae.encoder),
        "decoder": nncore.mlp_to_dict(ae.decoder),
    }


def ae_from_dict(data: dict) -> AeModel:
    if data.get("kind") != "autoencoder":
        raise ValueError(f"expected an autoencoder checkpoint, got kind={data.get('kind')!r}")
    ae = AeModel(
        encoder=nncore.mlp_from_dict(data["encoder"]),
        decoder=nncore.mlp_from_dict(data["decoder"]),
    )
    if ae.encoder.output_width != ae.decoder.input_width:
        raise ValueError("encoder/decoder latent widths disagree")
    return ae


def save_ae(path, ae: AeModel) -> None:
    nncore.save_checkpoint(path, ae_to_dict(ae))


def load_ae(path) -> AeModel:
    return ae_from_dict(nncore.load_checkpoint(path))
