"""Shared helpers for the test suite: oracles and gradient checking."""

import math

import numpy as np


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central differences over every coordinate of every parameter array."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + h
            lp = loss_fn()
            p[i] = orig - h
            lm = loss_fn()
            p[i] = orig
            g[i] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def scalar_mixture_nll(pi, mu, sigma, y):
    """Directly coded stabilized loss: plain Python floats, no vectorization.

    Independent of the library path: computes the per-component products
    explicitly, shifts each standard deviation by 1e-5, sums the weighted
    densities, adds 1e-5, and takes -log.
    """
    dens = 0.0
    for k in range(len(pi)):
        prod = 1.0
        for c in range(len(y)):
            s = sigma[k][c] + 1e-5
            z = (y[c] - mu[k][c]) / (math.sqrt(2.0) * s)
            prod *= math.exp(-z * z) / (math.sqrt(2.0 * math.pi) * s)
        dens += pi[k] * prod
    return -math.log(dens + 1e-5)


def random_mixture(rng, k=None, n=5, mu_scale=2.0):
    """A valid random MixtureParams-shaped triple (pi, mu, sigma)."""
    from specinv.mdn import MixtureParams

    if k is None:
        k = int(rng.integers(1, 9))
    logits = rng.normal(size=k)
    e = np.exp(logits - logits.max())
    pi = e / e.sum()
    mu = rng.normal(scale=mu_scale, size=(k, n))
    sigma = np.exp(rng.normal(scale=0.8, size=(k, n)))
    return MixtureParams(pi=pi, mu=mu, sigma=sigma)
