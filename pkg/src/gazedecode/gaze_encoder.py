"""
Gaze-pooled category encoder.

A three-stage stride-2 convolutional stack turns a grayscale image into a
32-channel feature map at 1/8 resolution. Gaze pooling weights that map by
a fixation density map and sums over space; a linear head with softmax
yields the class posterior. With a uniform density map the pooling is
ordinary global average pooling, which is how the encoder is trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_kernel as tk
from .errors import DegenerateError, DimensionError, EmptyInputError, ParameterError, TrainingError
from .gaze_sim import FixationDensityMap, build_fdm, uniform_fdm
from .rng import make_rng
from .stimuli import CELL_JITTER, CELL_SIZE, EXEMPLAR_SIZE, N_CATEGORIES

CHANNELS = (1, 8, 16, 32)
FEATURE_DIM = CHANNELS[-1]
DOWNSAMPLE = 8


@dataclass
class EncoderModel:
    params: tk.ParamSet

    def to_tensors(self):
        return dict(self.params.params)

    @classmethod
    def from_tensors(cls, tensors):
        return cls(tk.ParamSet({k: np.asarray(v, dtype=np.float32) for k, v in tensors.items()}))


def init_encoder(seed=0):
    """He-initialised conv stack and a zero-bias linear head."""
    rng = make_rng(seed, "encoder-init")
    params = {}
    for i in range(3):
        c_in, c_out = CHANNELS[i], CHANNELS[i + 1]
        std = np.sqrt(2.0 / (c_in * 9))
        params[f"conv{i + 1}_k"] = (rng.normal(0, std, size=(c_out, c_in, 3, 3))).astype(np.float32)
        params[f"conv{i + 1}_b"] = np.zeros(c_out, dtype=np.float32)
    params["head_w"] = rng.normal(0, np.sqrt(1.0 / FEATURE_DIM), size=(FEATURE_DIM, N_CATEGORIES)).astype(np.float32)
    params["head_b"] = np.zeros(N_CATEGORIES, dtype=np.float32)
    return EncoderModel(tk.ParamSet(params))


def _features_forward(p, x):
    caches = []
    h = x
    for i in range(1, 4):
        h, c_conv = tk.conv2d_forward(h, p[f"conv{i}_k"], p[f"conv{i}_b"], stride=2)
        h, c_act = tk.activation_forward(h, "relu")
        caches.append((c_conv, c_act))
    return h, caches


def _features_backward(dh, caches):
    grads = {}
    for i in range(3, 0, -1):
        c_conv, c_act = caches[i - 1]
        dh = tk.activation_backward(dh, c_act)
        dh, grads[f"conv{i}_k"], grads[f"conv{i}_b"] = tk.conv2d_backward(dh, c_conv)
    return dh, grads


def extract_features(model: EncoderModel, image):
    """
    Conv-stack features of a (H, W) image or an (N, H, W) batch.

    Returns (C, H/8, W/8) or (N, C, H/8, W/8).
    """
    img = np.asarray(image, dtype=np.float32)
    single = img.ndim == 2
    if single:
        img = img[None]
    if img.ndim != 3:
        raise DimensionError(f"expected (H, W) or (N, H, W) image, got {np.shape(image)}")
    if img.shape[1] % DOWNSAMPLE or img.shape[2] % DOWNSAMPLE or img.shape[1] < 8 or img.shape[2] < 8:
        raise DimensionError(f"image dims {img.shape[1:]} must be positive multiples of {DOWNSAMPLE}")
    fm, _ = _features_forward(model.params.params, img[:, None])
    return fm[0] if single else fm


def gaze_pool(fm, fdm):
    """Sum over space of the feature map weighted by the density map: (C, H, W) x (H, W) -> (C,)."""
    grid = fdm.grid if isinstance(fdm, FixationDensityMap) else np.asarray(fdm)
    if fm.ndim != 3 or fm.shape[1:] != grid.shape:
        raise DimensionError(f"feature map {fm.shape} and density map {grid.shape} differ spatially")
    return fm.reshape(fm.shape[0], -1) @ grid.reshape(-1).astype(fm.dtype)


def gaze_pool_many(fm, grids):
    """Pool one feature map under a stack of density maps: (C, H, W) x (M, H, W) -> (M, C)."""
    grids = np.asarray(grids)
    if grids.shape[1:] != fm.shape[1:]:
        raise DimensionError(f"feature map {fm.shape} and density maps {grids.shape} differ spatially")
    return grids.reshape(len(grids), -1).astype(fm.dtype) @ fm.reshape(fm.shape[0], -1).T


def logits(model, pooled):
    p = model.params.params
    return np.asarray(pooled, dtype=np.float32) @ p["head_w"] + p["head_b"]


def classify(model, pooled):
    """softmax(W . pooled + b), computed in float64. Accepts (C,) or (M, C)."""
    pooled = np.asarray(pooled)
    if pooled.shape[-1] != FEATURE_DIM:
        raise DimensionError(f"pooled vector length {pooled.shape[-1]} != {FEATURE_DIM}")
    return tk.softmax(logits(model, pooled).astype(np.float64))


def classify_images(model, images, canvas=CELL_SIZE):
    """Posterior for 32x32 images pasted at the centre of a blank cell canvas (plain GAP)."""
    images = np.asarray(images, dtype=np.float32)
    if images.shape[-2:] == (EXEMPLAR_SIZE, EXEMPLAR_SIZE) and canvas != EXEMPLAR_SIZE:
        top = (canvas - EXEMPLAR_SIZE) // 2
        padded = np.zeros(images.shape[:-2] + (canvas, canvas), dtype=np.float32)
        padded[..., top : top + EXEMPLAR_SIZE, top : top + EXEMPLAR_SIZE] = images
        images = padded
    fm = extract_features(model, images.reshape((-1,) + images.shape[-2:]))
    pooled = fm.mean(axis=(2, 3))
    return classify(model, pooled)


def prune_topk(p, k):
    """
    Keep the k largest entries, zero the rest, renormalise.

    Ties go to the lower category id. ``k="all"`` (or None) returns the
    posterior unchanged. Works on a single vector or a stack of rows.
    """
    p = np.asarray(p, dtype=np.float64)
    if k in ("all", None):
        return p.copy()
    k = int(k)
    if k < 1:
        raise ParameterError(f"k must be >= 1 or 'all', got {k}")
    rows = np.atleast_2d(p)
    order = np.argsort(-rows, axis=1, kind="stable")[:, :k]
    out = np.zeros_like(rows)
    np.put_along_axis(out, order, np.take_along_axis(rows, order, axis=1), axis=1)
    mass = out.sum(axis=1, keepdims=True)
    if np.any(mass <= 0):
        raise DegenerateError("all retained posterior entries are zero")
    out /= mass
    return out[0] if p.ndim == 1 else out


def _session_fdm_grid(fm):
    return fm.shape[1:]


def encode_collage(model, fm, log, mode="local", aggregation="per_fixation", sigma=16.0):
    """Posterior for one collage given its feature map and fixation log."""
    if len(log.fixations) == 0:
        raise EmptyInputError("empty fixation log")
    grid = _session_fdm_grid(fm)
    if mode not in ("local", "global"):
        raise ParameterError(f"unknown mode {mode!r}")
    if aggregation == "joint_fdm":
        fdm = uniform_fdm(grid) if mode == "global" else build_fdm(log, grid, sigma)
        return classify(model, gaze_pool(fm, fdm))
    if aggregation != "per_fixation":
        raise ParameterError(f"unknown aggregation {aggregation!r}")
    if mode == "global":
        grids = np.broadcast_to(uniform_fdm(grid).grid, (len(log.fixations),) + grid)
    else:
        grids = np.stack([build_fdm([f], grid, sigma).grid for f in log.fixations])
    posts = classify(model, gaze_pool_many(fm, grids))
    t = np.array([f.t for f in log.fixations], dtype=np.float64)
    return (t[:, None] * posts).sum(axis=0) / t.sum()


def encode_session(model, session, mode="local", aggregation="per_fixation", sigma=16.0, features=None):
    """
    Session posterior from a list of ``(collage_canvas, FixationLog)`` pairs.

    Per collage, fixation posteriors are averaged with duration weights
    (``per_fixation``) or a single whole-log map is pooled (``joint_fdm``);
    collage posteriors are then averaged uniformly and renormalised.
    ``features`` may carry precomputed feature maps, one per collage.
    """
    if not session:
        raise EmptyInputError("session has no collages")
    posts = []
    for i, (canvas, log) in enumerate(session):
        fm = features[i] if features is not None else extract_features(model, canvas)
        posts.append(encode_collage(model, fm, log, mode, aggregation, sigma))
    out = np.mean(posts, axis=0)
    return out / out.sum()


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def place_on_cells(pixels, rng=None):
    """Paste (N, 32, 32) exemplars on (N, 64, 64) canvases with +-4 px jitter (centred when rng is None)."""
    n = len(pixels)
    out = np.zeros((n, CELL_SIZE, CELL_SIZE), dtype=np.float32)
    top = (CELL_SIZE - EXEMPLAR_SIZE) // 2
    if rng is None:
        offs = np.zeros((n, 2), dtype=np.int64)
    else:
        offs = rng.integers(-CELL_JITTER, CELL_JITTER + 1, size=(n, 2))
    for i in range(n):
        y, x = top + offs[i, 0], top + offs[i, 1]
        out[i, y : y + EXEMPLAR_SIZE, x : x + EXEMPLAR_SIZE] = pixels[i]
    return out


def loss_and_grads(params, images, labels):
    """Mean cross-entropy of GAP classification on (N, H, W) images, with gradients."""
    fm, caches = _features_forward(params, images[:, None])
    pooled, c_mean = tk.spatial_mean_forward(fm)
    z, c_lin = tk.linear_forward(pooled, params["head_w"], params["head_b"])
    loss, probs = tk.softmax_xent(z, labels)
    dz = tk.softmax_xent_backward(probs, labels)
    dpooled, dw, db = tk.linear_backward(dz, c_lin)
    _, grads = _features_backward(tk.spatial_mean_backward(dpooled, c_mean), caches)
    grads["head_w"] = dw
    grads["head_b"] = db
    return loss, grads, probs


def accuracy(model, pixels, labels, batch=256):
    rng = make_rng(0, "eval-placement")
    canvases = place_on_cells(pixels, rng)
    correct = 0
    for s in range(0, len(canvases), batch):
        fm = extract_features(model, canvases[s : s + batch])
        pred = classify(model, fm.mean(axis=(2, 3))).argmax(axis=1)
        correct += int((pred == labels[s : s + batch]).sum())
    return correct / len(labels)


def train_encoder(train, val=None, test=None, epochs=30, batch=64, lr=1e-3, seed=0, log=None):
    """
    Train the encoder with plain global average pooling on jittered cell canvases.

    ``train``/``val``/``test`` are ``(pixels, labels)`` pairs. Returns the
    model and a report with the per-epoch mean loss and top-1 accuracies.
    """
    pixels, labels = train
    if len(np.unique(labels)) < 2:
        raise ParameterError("training data needs at least two categories")
    model = init_encoder(seed)
    rng = make_rng(seed, "encoder-train")
    curve = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(labels))
        canvases = place_on_cells(pixels[order], rng)
        ys = labels[order]
        total = 0.0
        for s in range(0, len(ys), batch):
            xb, yb = canvases[s : s + batch], ys[s : s + batch]
            loss, grads, _ = loss_and_grads(model.params.params, xb, yb)
            if not np.isfinite(loss):
                raise TrainingError("non-finite encoder loss", epoch)
            tk.adam_step(model.params, grads, lr=lr)
            total += float(loss) * len(yb)
        curve.append(total / len(ys))
        if log:
            log(f"encoder epoch {epoch}: loss {curve[-1]:.4f}")
    report = {"epochs": epochs, "batch": batch, "lr": lr, "seed": seed, "loss_curve": curve}
    if val is not None:
        report["val_accuracy"] = accuracy(model, *val)
    if test is not None:
        report["test_accuracy"] = accuracy(model, *test)
    return model, report
