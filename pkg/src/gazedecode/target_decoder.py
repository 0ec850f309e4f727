"""
Category-conditioned variational autoencoder over 32x32 glyph images.

Recognition network ``q(z | x, y)``: [x, y] -> 256 ReLU -> (mu, logvar) in
R^16. Generator ``p(x | y, z)``: [z, y] -> 256 ReLU -> 1024 logits, read
as Bernoulli pixel means. The latent prior is N(0, I). Training minimises
the negative lower bound: Bernoulli reconstruction NLL plus the KL of the
diagonal Gaussian posterior to the prior, with one reparameterised sample
per datum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_kernel as tk
from .errors import ConditionError, DimensionError, NumericError, TrainingError
from .rng import make_rng
from .stimuli import EXEMPLAR_SIZE, N_CATEGORIES

X_DIM = EXEMPLAR_SIZE * EXEMPLAR_SIZE
Y_DIM = N_CATEGORIES
Z_DIM = 16
HIDDEN = 256

_PIXEL_LO = np.float32(1e-7)
_PIXEL_HI = np.nextafter(np.float32(1.0), np.float32(0.0))


@dataclass
class CVAEModel:
    params: tk.ParamSet

    def to_tensors(self):
        return dict(self.params.params)

    @classmethod
    def from_tensors(cls, tensors):
        return cls(tk.ParamSet({k: np.asarray(v, dtype=np.float32) for k, v in tensors.items()}))


def init_cvae(seed=0, zero=False, dims=None):
    """
    Glorot-normal weights and zero biases. ``zero=True`` gives the all-zero
    model (pixel means 0.5, posterior equal to the prior).

    ``dims`` overrides ``(x_dim, hidden, z_dim)`` for small test networks.
    """
    x_dim, hidden, z_dim = dims or (X_DIM, HIDDEN, Z_DIM)
    shapes = {
        "enc_w": (x_dim + Y_DIM, hidden),
        "enc_b": (hidden,),
        "mu_w": (hidden, z_dim),
        "mu_b": (z_dim,),
        "lv_w": (hidden, z_dim),
        "lv_b": (z_dim,),
        "dec_w": (z_dim + Y_DIM, hidden),
        "dec_b": (hidden,),
        "out_w": (hidden, x_dim),
        "out_b": (x_dim,),
    }
    rng = make_rng(seed, "cvae-init")
    params = {}
    for name, shape in shapes.items():
        if zero or len(shape) == 1:
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            std = np.sqrt(2.0 / (shape[0] + shape[1]))
            if name == "lv_w":
                std *= 0.1
            params[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
    return CVAEModel(tk.ParamSet(params))


# --------------------------------------------------------------------------
# Pieces of the bound
# --------------------------------------------------------------------------


def kl_diag_gauss(mu, logvar):
    """KL(N(mu, diag exp(logvar)) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu)
    logvar = np.asarray(logvar)
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=-1)


def kl_diag_gauss_backward(mu, logvar):
    return mu, 0.5 * (np.exp(logvar) - 1.0)


def reparameterize(mu, logvar, eps):
    """z = mu + exp(logvar / 2) * eps."""
    mu, logvar, eps = np.asarray(mu), np.asarray(logvar), np.asarray(eps)
    if not (mu.shape == logvar.shape == eps.shape):
        raise DimensionError(f"reparameterize shape mismatch {mu.shape} {logvar.shape} {eps.shape}")
    return mu + np.exp(0.5 * logvar) * eps


def reparameterize_backward(dz, logvar, eps):
    """Gradients of z with respect to (mu, logvar)."""
    return dz, dz * eps * 0.5 * np.exp(0.5 * logvar)


def bernoulli_nll(logits, x):
    """Per-row sum of -[x log s + (1-x) log(1-s)], s = sigmoid(logits), from logits."""
    return np.sum(np.logaddexp(0, logits) - x * logits, axis=-1)


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


def _forward(p, x, y, eps):
    xy = np.concatenate([x, y], axis=1)
    h_pre, c1 = tk.linear_forward(xy, p["enc_w"], p["enc_b"])
    h, c2 = tk.activation_forward(h_pre, "relu")
    mu, c3 = tk.linear_forward(h, p["mu_w"], p["mu_b"])
    lv, c4 = tk.linear_forward(h, p["lv_w"], p["lv_b"])
    z = reparameterize(mu, lv, eps)
    zy = np.concatenate([z, y], axis=1)
    g_pre, c5 = tk.linear_forward(zy, p["dec_w"], p["dec_b"])
    g, c6 = tk.activation_forward(g_pre, "relu")
    out, c7 = tk.linear_forward(g, p["out_w"], p["out_b"])
    recon = bernoulli_nll(out, x)
    kl = kl_diag_gauss(mu, lv)
    cache = (x, eps, mu, lv, out, c1, c2, c3, c4, c5, c6, c7)
    return recon, kl, cache


def _backward(cache, n):
    """Gradients of mean(recon + kl) over the batch."""
    x, eps, mu, lv, out, c1, c2, c3, c4, c5, c6, c7 = cache
    z_dim = mu.shape[1]
    grads = {}
    dout = (tk.sigmoid(out) - x) / n
    dg, grads["out_w"], grads["out_b"] = tk.linear_backward(dout, c7)
    dg_pre = tk.activation_backward(dg, c6)
    dzy, grads["dec_w"], grads["dec_b"] = tk.linear_backward(dg_pre, c5)
    dmu, dlv = reparameterize_backward(dzy[:, :z_dim], lv, eps)
    kmu, klv = kl_diag_gauss_backward(mu, lv)
    dmu = dmu + kmu / n
    dlv = dlv + klv / n
    dh_mu, grads["mu_w"], grads["mu_b"] = tk.linear_backward(dmu, c3)
    dh_lv, grads["lv_w"], grads["lv_b"] = tk.linear_backward(dlv, c4)
    dh_pre = tk.activation_backward(dh_mu + dh_lv, c2)
    _, grads["enc_w"], grads["enc_b"] = tk.linear_backward(dh_pre, c1)
    return grads


def loss_and_grads(params, x, y, eps):
    """Mean negative bound over a batch and its parameter gradients."""
    recon, kl, cache = _forward(params, x, y, eps)
    loss = float(np.mean(recon + kl))
    return loss, _backward(cache, len(x))


def elbo(model, x, y, eps):
    """
    Negative lower bound for one image (or a batch, averaged).

    Returns ``(neg_elbo, recon, kl)``.
    """
    p = model.params.params
    x_dim = p["enc_w"].shape[0] - Y_DIM
    xb = np.asarray(x, dtype=np.float32).reshape(-1, x_dim)
    yb = np.asarray(y, dtype=np.float32).reshape(len(xb), -1)
    eb = np.asarray(eps, dtype=np.float32).reshape(len(xb), -1)
    recon, kl, _ = _forward(p, xb, yb, eb)
    recon, kl = float(np.mean(recon)), float(np.mean(kl))
    if not (np.isfinite(recon) and np.isfinite(kl)):
        raise NumericError("non-finite lower bound")
    return recon + kl, recon, kl


def decode(model, z, y):
    """Pixel means in (0, 1) for latent rows ``z`` under conditions ``y``: (N, 1024)."""
    p = model.params.params
    zy = np.concatenate([np.asarray(z, dtype=np.float32), np.asarray(y, dtype=np.float32)], axis=1)
    g = np.maximum(zy @ p["dec_w"] + p["dec_b"], 0)
    return np.clip(tk.sigmoid(g @ p["out_w"] + p["out_b"]), _PIXEL_LO, _PIXEL_HI)


# --------------------------------------------------------------------------
# Training and sampling
# --------------------------------------------------------------------------


def one_hot(labels, k=Y_DIM):
    out = np.zeros((len(labels), k), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1
    return out


def train_cvae(train, epochs=50, batch=64, lr=1e-3, seed=0, log=None):
    """Minimise the mean negative bound with Adam; ``train`` is ``(pixels, labels)``."""
    pixels, labels = train
    x_all = np.asarray(pixels, dtype=np.float32).reshape(len(pixels), -1)
    y_all = one_hot(labels)
    model = init_cvae(seed)
    rng = make_rng(seed, "cvae-train")
    curve = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(x_all))
        total = 0.0
        for s in range(0, len(order), batch):
            idx = order[s : s + batch]
            eps = rng.standard_normal((len(idx), Z_DIM)).astype(np.float32)
            loss, grads = loss_and_grads(model.params.params, x_all[idx], y_all[idx], eps)
            if not np.isfinite(loss):
                raise TrainingError("non-finite CVAE loss", epoch)
            tk.adam_step(model.params, grads, lr=lr)
            total += loss * len(idx)
        curve.append(total / len(order))
        if log:
            log(f"cvae epoch {epoch}: neg_elbo {curve[-1]:.2f}")
    return model, {"epochs": epochs, "batch": batch, "lr": lr, "seed": seed, "loss_curve": curve}


@dataclass
class GeneratedImage:
    pixels: np.ndarray
    condition: np.ndarray
    z: np.ndarray
    mode: str
    seed: int
    category: int | None = None

    def sidecar(self):
        doc = {
            "condition": [float(v) for v in self.condition],
            "mode": self.mode,
            "seed": self.seed,
            "z": [float(v) for v in self.z],
        }
        if self.category is not None:
            doc["category"] = self.category
        return doc


def check_condition(condition):
    c = np.asarray(condition, dtype=np.float64)
    if c.shape != (Y_DIM,) or not np.all(np.isfinite(c)) or np.any(c < 0) or abs(c.sum() - 1.0) > 1e-6:
        raise ConditionError(f"condition must be a length-{Y_DIM} probability vector")
    return c


def sample_latents(n, seed):
    return make_rng(seed, "latent").standard_normal((n, Z_DIM)).astype(np.float32)


def sample_targets(model, condition, n=10, mode="soft", seed=0):
    """
    Decode ``n`` images for a class posterior.

    ``soft`` feeds the posterior itself as the condition vector; ``mixture``
    draws a category per sample from the posterior and conditions on its
    one-hot code. Latents depend only on ``seed``, so both modes (and any two
    conditions) share the same z for the same seed.
    """
    if n < 1:
        raise ConditionError("n must be >= 1")
    c = check_condition(condition)
    z = sample_latents(n, seed)
    if mode == "soft":
        cats = [None] * n
        y = np.tile(c.astype(np.float32), (n, 1))
    elif mode == "mixture":
        p = c / c.sum()
        cats = [int(v) for v in make_rng(seed, "mixture").choice(Y_DIM, size=n, p=p)]
        y = one_hot(np.array(cats))
    else:
        raise ConditionError(f"unknown sampling mode {mode!r}")
    pixels = decode(model, z, y).reshape(n, EXEMPLAR_SIZE, EXEMPLAR_SIZE)
    return [GeneratedImage(pixels[i], c, z[i], mode, int(seed), cats[i]) for i in range(n)]
