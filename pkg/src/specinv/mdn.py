"""Gaussian mixture density head and its stabilized negative log likelihood.

The network predicts, for each input, K mixing coefficients (softmax), K*N
component means, and K*N standard deviations (exp of the raw logits, so
strictly positive).  The training loss is

    -log[ (sum_k pi_k * phi_k(y; mu_k, sigma_k + 1e-5)) + 1e-5 ]

where phi_k is a diagonal Gaussian pdf.  The two 1e-5 terms keep the loss
finite for every finite input: the sigma shift bounds each component density
and the outer shift floors the mixture density, capping the loss at
-ln(1e-5) ~= 11.5129.  The inner sum is evaluated with log-sum-exp before the
outer shift is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import nncore
from .nncore import MlpModel, TrainingDivergedError

DENSITY_EPS = 1e-5  # added to the mixture density inside the log
SIGMA_EPS = 1e-5  # added to every standard deviation inside the component pdfs
_LOG_DENSITY_EPS = math.log(DENSITY_EPS)
LOSS_CEILING = -_LOG_DENSITY_EPS  # 11.512925464970229

N_DESIGN_PARAMS = 5
FEATURE_WIDTH = 150
SPECTRUM_TRUNK_WIDTHS = [101, 150, 240, 300, 300, 150]
LATENT_TRUNK_WIDTHS = [10, 100, 200, 300, 300, 150]

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class MixtureParams:
    """Mixture weights pi (K,), means mu (K, N), standard deviations sigma (K, N)."""

    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def n_components(self) -> int:
        return self.pi.shape[0]

    @property
    def n_targets(self) -> int:
        return self.mu.shape[1]


@dataclass
class MdnHead:
    """Three affine output layers sharing one feature vector: pi, mu, sigma logits."""

    pi_w: np.ndarray  # (K, F)
    pi_b: np.ndarray  # (K,)
    mu_w: np.ndarray  # (K*N, F)
    mu_b: np.ndarray  # (K*N,)
    sigma_w: np.ndarray  # (K*N, F)
    sigma_b: np.ndarray  # (K*N,)

    @property
    def n_components(self) -> int:
        return self.pi_w.shape[0]

    @property
    def n_targets(self) -> int:
        return self.mu_w.shape[0] // self.pi_w.shape[0]

    @property
    def feature_width(self) -> int:
        return self.pi_w.shape[1]

    def parameters(self) -> list[np.ndarray]:
        return [self.pi_w, self.pi_b, self.mu_w, self.mu_b, self.sigma_w, self.sigma_b]

    def copy(self) -> "MdnHead":
        return MdnHead(*(a.copy() for a in self.parameters()))


@dataclass
class MdnModel:
    """Hidden-layer trunk plus mixture head; the trained inverse model."""

    trunk: MlpModel
    head: MdnHead

    @property
    def n_components(self) -> int:
        return self.head.n_components

    @property
    def input_width(self) -> int:
        return self.trunk.input_width

    def parameters(self) -> list[np.ndarray]:
        return self.trunk.parameters() + self.head.parameters()

    def copy(self) -> "MdnModel":
        return MdnModel(trunk=self.trunk.copy(), head=self.head.copy())


def init_mdn_head(
    feature_width: int, n_components: int, n_targets: int, rng: np.random.Generator
) -> MdnHead:
    def affine(n_out: int) -> tuple[np.ndarray, np.ndarray]:
        limit = math.sqrt(6.0 / (feature_width + n_out))
        return rng.uniform(-limit, limit, size=(n_out, feature_width)), np.zeros(n_out)

    pi_w, pi_b = affine(n_components)
    mu_w, mu_b = affine(n_components * n_targets)
    sigma_w, sigma_b = affine(n_components * n_targets)
    return MdnHead(pi_w, pi_b, mu_w, mu_b, sigma_w, sigma_b)


def build_mdn(
    input_width: int,
    n_components: int,
    rng: np.random.Generator,
    n_targets: int = N_DESIGN_PARAMS,
    trunk_widths: list[int] | None = None,
) -> MdnModel:
    """Fresh model with the standard trunk for 101-sample spectra or 10-dim latents."""
    if trunk_widths is None:
        if input_width == SPECTRUM_TRUNK_WIDTHS[0]:
            trunk_widths = SPECTRUM_TRUNK_WIDTHS
        elif input_width == LATENT_TRUNK_WIDTHS[0]:
            trunk_widths = LATENT_TRUNK_WIDTHS
        else:
            raise ValueError(
                f"no default trunk for input width {input_width}; pass trunk_widths"
            )
    if trunk_widths[0] != input_width:
        raise ValueError(f"trunk {trunk_widths} does not accept input width {input_width}")
    trunk = nncore.init_mlp(
        trunk_widths, rng, dropout_after=nncore.max_width_dropout_layers(trunk_widths)
    )
    head = init_mdn_head(trunk_widths[-1], n_components, n_targets, rng)
    return MdnModel(trunk=trunk, head=head)


# --- forward ------------------------------------------------------------------


def _component_affine(features: np.ndarray, w: np.ndarray, b: np.ndarray, k: int, n: int):
    # One fixed-shape matmul per component: the results for a component do not
    # depend on how many other components exist, so warm-started models
    # reproduce their parent's outputs bit-exactly (BLAS blocking would not).
    out = np.empty((features.shape[0], k, n))
    for i in range(k):
        rows = slice(i * n, (i + 1) * n)
        out[:, i, :] = features @ w[rows].T + b[rows]
    return out


def _head_raw(head: MdnHead, features: np.ndarray):
    """Batched raw head outputs: pi logits (B,K), mu (B,K,N), sigma logits (B,K,N)."""
    k, n = head.n_components, head.n_targets
    pi_logits = features @ head.pi_w.T + head.pi_b
    mu = _component_affine(features, head.mu_w, head.mu_b, k, n)
    sigma_logits = _component_affine(features, head.sigma_w, head.sigma_b, k, n)
    return pi_logits, mu, sigma_logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _logsumexp_rows(w: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp tolerating rows that are entirely -inf.

    Only the all-components-underflowed case is special-cased; NaNs must
    propagate so diverged training is detected, not masked.
    """
    m = w.max(axis=1)
    neg = np.isneginf(m)
    if not neg.any():
        return m + np.log(np.exp(w - m[:, None]).sum(axis=1))
    out = np.full(w.shape[0], -np.inf)
    keep = ~neg
    if keep.any():
        ws, ms = w[keep], m[keep]
        out[keep] = ms + np.log(np.exp(ws - ms[:, None]).sum(axis=1))
    return out


def head_forward(head: MdnHead, features: np.ndarray) -> MixtureParams:
    """Mixture parameters for one feature vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (head.feature_width,):
        raise ValueError(
            f"features shape {features.shape} != ({head.feature_width},)"
        )
    pi_logits, mu, sigma_logits = _head_raw(head, features[None, :])
    # direct softmax keeps the all-zero-logits case exactly uniform
    e = np.exp(pi_logits[0] - np.max(pi_logits[0]))
    pi = e / e.sum()
    return MixtureParams(pi=pi, mu=mu[0], sigma=np.exp(sigma_logits[0]))


def mixture_for(model: MdnModel, x: np.ndarray) -> MixtureParams:
    """Eval-mode mixture prediction for a single input vector."""
    features, _ = nncore.forward(model.trunk, np.asarray(x, dtype=np.float64))
    return head_forward(model.head, features)


# --- loss ---------------------------------------------------------------------


def _log_component_pdfs(y: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """log phi_k(y; mu_k, sigma_k + SIGMA_EPS) for a batch: (B, K)."""
    s = sigma + SIGMA_EPS
    z = (y[:, None, :] - mu) / s
    return (-0.5 * z * z - np.log(s) - _HALF_LOG_2PI).sum(axis=-1)


def component_pdf(y: np.ndarray, mu_k: np.ndarray, sigma_k: np.ndarray) -> float:
    """Diagonal Gaussian density of y under one component (no epsilon shifts)."""
    y = np.asarray(y, dtype=np.float64)
    mu_k = np.asarray(mu_k, dtype=np.float64)
    sigma_k = np.asarray(sigma_k, dtype=np.float64)
    if np.any(sigma_k <= 0.0):
        raise ValueError(f"standard deviations must be positive, got {sigma_k}")
    z = (y - mu_k) / sigma_k
    log_pdf = np.sum(-0.5 * z * z - np.log(sigma_k) - _HALF_LOG_2PI)
    return float(np.exp(log_pdf))


def _per_sample_nll(log_pi: np.ndarray, log_phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and the mixture log density, both (B,)."""
    log_mix = _logsumexp_rows(log_pi + log_phi)
    with np.errstate(invalid="ignore"):  # NaN here is reported as divergence by callers
        losses = -np.logaddexp(log_mix, _LOG_DENSITY_EPS)
    return losses, log_mix


def nll_loss(mix: MixtureParams, y: np.ndarray) -> float:
    """Stabilized mixture negative log likelihood of a single target vector."""
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore"):  # pi underflowing to 0 gives log 0 = -inf
        log_pi = np.log(mix.pi)
    log_phi = _log_component_pdfs(y[None, :], mix.mu[None, :, :], mix.sigma[None, :, :])
    losses, _ = _per_sample_nll(log_pi[None, :], log_phi)
    return float(losses[0])


def _batch_losses(model: MdnModel, x: np.ndarray, y: np.ndarray, tape_out: list | None = None,
                  train: bool = False, dropout_rate: float = 0.0,
                  rng: np.random.Generator | None = None):
    features, tape = nncore.forward(
        model.trunk, x, train=train, dropout_rate=dropout_rate, rng=rng
    )
    pi_logits, mu, sigma_logits = _head_raw(model.head, features)
    log_pi = _log_softmax(pi_logits)
    with np.errstate(over="ignore"):  # saturated sigma logits become inf, then -inf log_phi
        sigma = np.exp(sigma_logits)
    log_phi = _log_component_pdfs(y, mu, sigma)
    losses, log_mix = _per_sample_nll(log_pi, log_phi)
    if np.isnan(losses).any():
        idx = int(np.flatnonzero(np.isnan(losses))[0])
        raise TrainingDivergedError(f"NaN loss at batch sample {idx}")
    if tape_out is not None:
        tape_out.append((features, tape, log_pi, mu, sigma, log_phi, log_mix))
    return losses


def batch_nll(model: MdnModel, x: np.ndarray, y: np.ndarray) -> float:
    """Eval-mode mean loss over a batch."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return float(np.mean(_batch_losses(model, x, y)))


def batch_nll_and_grads(
    model: MdnModel,
    x: np.ndarray,
    y: np.ndarray,
    train: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Mean loss plus gradients ordered like ``model.parameters()``.

    The gradient flows through the log-sum-exp mixture density, the exp/softmax
    output transforms, and the trunk (with dropout masks replayed from the
    forward tape when ``train`` is set).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"expected matching batches, got {x.shape} and {y.shape}")
    b = x.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    saved: list = []
    losses = _batch_losses(
        model, x, y, tape_out=saved, train=train, dropout_rate=dropout_rate, rng=rng
    )
    features, tape, log_pi, mu, sigma, log_phi, log_mix = saved[0]
    k, n = model.head.n_components, model.head.n_targets

    # rho = d/dS of the density S through the outer shift: S / (S + eps),
    # written as a sigmoid of log S - log eps for stability.
    rho = expit(log_mix - _LOG_DENSITY_EPS)
    w = log_pi + log_phi
    finite = np.isfinite(log_mix)
    resp = np.zeros_like(w)
    if finite.any():
        resp[finite] = np.exp(w[finite] - log_mix[finite, None])

    pi = np.exp(log_pi)
    scale = rho / b
    g_pi_logits = scale[:, None] * (pi - resp)  # (B, K)

    s_shift = sigma + SIGMA_EPS
    diff = y[:, None, :] - mu
    coeff = (-scale[:, None] * resp)[:, :, None]  # (B, K, 1)
    with np.errstate(invalid="ignore", over="ignore"):
        g_mu = coeff * diff / (s_shift * s_shift)
        g_sigma_logits = coeff * (diff * diff / s_shift**3 - 1.0 / s_shift) * sigma

    head = model.head
    g_mu_flat = g_mu.reshape(b, k * n)
    g_sig_flat = g_sigma_logits.reshape(b, k * n)
    head_grads = [
        g_pi_logits.T @ features,
        g_pi_logits.sum(axis=0),
        g_mu_flat.T @ features,
        g_mu_flat.sum(axis=0),
        g_sig_flat.T @ features,
        g_sig_flat.sum(axis=0),
    ]
    g_features = g_pi_logits @ head.pi_w + g_mu_flat @ head.mu_w + g_sig_flat @ head.sigma_w
    trunk_grads, _ = nncore.backward(model.trunk, tape, g_features)
    return float(np.mean(losses)), trunk_grads + head_grads


# --- prediction utilities -------------------------------------------------------


def predict_modes(mix: MixtureParams, top_m: int) -> list[tuple[float, np.ndarray]]:
    """Top components as (pi, mu) pairs, sorted by pi descending, index breaking ties."""
    if top_m > mix.n_components:
        raise ValueError(f"top_m={top_m} exceeds K={mix.n_components}")
    if top_m < 1:
        raise ValueError("top_m must be positive")
    order = np.argsort(-mix.pi, kind="stable")[:top_m]
    return [(float(mix.pi[i]), mix.mu[i].copy()) for i in order]


def weighted_marginal_pdf(mix: MixtureParams, param_index: int, grid: np.ndarray) -> np.ndarray:
    """Mixture-weighted 1-D marginal density of one target on a grid of points."""
    if not 0 <= param_index < mix.n_targets:
        raise ValueError(f"param_index {param_index} out of range [0, {mix.n_targets})")
    t = np.asarray(grid, dtype=np.float64)[:, None]
    mu = mix.mu[None, :, param_index]
    sigma = mix.sigma[None, :, param_index]
    z = (t - mu) / sigma
    comps = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * sigma)
    return comps @ mix.pi


def marginal_grid(mix: MixtureParams, param_index: int, n_sigmas: float = 8.0,
                  max_points: int = 8192) -> np.ndarray:
    """Grid spanning mu +/- n_sigmas*sigma over all components, fine enough to integrate."""
    mu = mix.mu[:, param_index]
    sigma = mix.sigma[:, param_index]
    lo = float(np.min(mu - n_sigmas * sigma))
    hi = float(np.max(mu + n_sigmas * sigma))
    step = float(np.min(sigma)) / 8.0
    n = min(max_points, max(1001, int(math.ceil((hi - lo) / step)) + 1))
    return np.linspace(lo, hi, n)


# --- checkpoint io ---------------------------------------------------------------


def mdn_to_dict(model: MdnModel) -> dict:
    head = model.head
    return {
        "format_version": nncore.CHECKPOINT_FORMAT_VERSION,
        "kind": "mdn",
        "n_components": head.n_components,
        "n_targets": head.n_targets,
        "trunk": nncore.mlp_to_dict(model.trunk),
        "head": {
            "pi_w": head.pi_w,
            "pi_b": head.pi_b,
            "mu_w": head.mu_w,
            "mu_b": head.mu_b,
            "sigma_w": head.sigma_w,
            "sigma_b": head.sigma_b,
        },
    }


def mdn_from_dict(data: dict) -> MdnModel:
    if data.get("kind") != "mdn":
        raise ValueError(f"expected an mdn checkpoint, got kind={data.get('kind')!r}")
    trunk = nncore.mlp_from_dict(data["trunk"])
    h = data["head"]
    head = MdnHead(
        pi_w=np.asarray(h["pi_w"], dtype=np.float64),
        pi_b=np.asarray(h["pi_b"], dtype=np.float64),
        mu_w=np.asarray(h["mu_w"], dtype=np.float64),
        mu_b=np.asarray(h["mu_b"], dtype=np.float64),
        sigma_w=np.asarray(h["sigma_w"], dtype=np.float64),
        sigma_b=np.asarray(h["sigma_b"], dtype=np.float64),
    )
    if head.feature_width != trunk.output_width:
        raise ValueError("head feature width does not match trunk output width")
    if head.n_components != int(data["n_components"]):
        raise ValueError("head shapes disagree with declared component count")
    return MdnModel(trunk=trunk, head=head)


def save_mdn(path, model: MdnModel) -> None:
    nncore.save_checkpoint(path, mdn_to_dict(model))


def load_mdn(path) -> MdnModel:
    return mdn_from_dict(nncore.load_checkpoint(path))
