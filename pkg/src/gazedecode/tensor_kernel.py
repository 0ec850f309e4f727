"""
Dense-tensor layer kernels with explicit forward/backward passes.

Tensors are plain ``numpy.ndarray`` objects. Model code keeps them in
float32; every kernel preserves the dtype of its inputs, so the same
functions run in float64 when checked against finite differences.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Convolutions use NCHW layout
and are restricted to 3x3 kernels with pad 1 and stride 1 or 2.

Persistence uses the TNSR container::

    bytes 0-3   b"TNSR"
    byte  4     version (1)
    byte  5     dtype code (0 = float32 LE, 1 = uint8)
    bytes 6-7   ndim, uint16 LE
    ndim x u32  dims, LE
    payload     row-major data

A checkpoint is a sequence of ``[u32 name length][utf-8 name][TNSR blob]``
records.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DimensionError, FormatError, NumericError, ParameterError

# --------------------------------------------------------------------------
# Fully connected
# --------------------------------------------------------------------------


def linear_forward(x, w, b):
    """out = x @ w + b, bias broadcast over rows."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise DimensionError(f"linear expects 2-D x, 2-D w, 1-D b; got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise DimensionError(f"linear shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    return x @ w + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


# --------------------------------------------------------------------------
# 3x3 convolution (cross-correlation)
# --------------------------------------------------------------------------


def conv_output_size(size, stride, pad=1):
    return (size + 2 * pad - 3) // stride + 1


def conv2d_forward(x, k, b, stride=1, pad=1):
    """
    3x3 cross-correlation with zero padding.

    Parameters
    ----------
    x : array (N, C_in, H, W)
    k : array (C_out, C_in, 3, 3)
    b : array (C_out,)
    stride : 1 or 2
    pad : must be 1

    Returns
    -------
    out : array (N, C_out, H', W') with H' = (H + 2*pad - 3) // stride + 1
    cache : tuple for :func:`conv2d_backward`
    """
    if stride not in (1, 2) or pad != 1:
        raise ParameterError(f"conv2d supports stride 1/2 and pad 1, got stride={stride} pad={pad}")
    if x.ndim != 4 or k.ndim != 4 or k.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d expects NCHW input and (C_out, C_in, 3, 3) kernel; got {x.shape}, {k.shape}")
    n, c_in, h, w = x.shape
    c_out = k.shape[0]
    if k.shape[1] != c_in or b.shape != (c_out,):
        raise DimensionError(f"conv2d channel mismatch: x{x.shape} k{k.shape} b{b.shape}")
    if h + 2 * pad < 3 or w + 2 * pad < 3:
        raise DimensionError(f"kernel larger than padded input {h}x{w}")

    ho, wo = conv_output_size(h, stride, pad), conv_output_size(w, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c_in, 3, 3, ho, wo), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
    cols = cols.reshape(n, c_in * 9, ho * wo)
    kmat = k.reshape(c_out, c_in * 9)
    out = np.matmul(kmat, cols) + b[None, :, None]
    return out.reshape(n, c_out, ho, wo), (x.shape, cols, k, stride, pad)


def conv2d_backward(dout, cache):
    """Returns (dx, dk, db)."""
    x_shape, cols, k, stride, pad = cache
    n, c_in, h, w = x_shape
    c_out = k.shape[0]
    ho, wo = dout.shape[2:]
    d2 = dout.reshape(n, c_out, ho * wo)

    dk = np.zeros((c_out, c_in * 9), dtype=dout.dtype)
    for i in range(n):
        dk += d2[i] @ cols[i].T
    db = dout.sum(axis=(0, 2, 3))

    dcols = np.matmul(k.reshape(c_out, c_in * 9).T, d2).reshape(n, c_in, 3, 3, ho, wo)
    dxp = np.zeros((n, c_in, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dcols[:, :, i, j]
    return dxp[:, :, pad:-pad, pad:-pad], dk.reshape(k.shape), db


# --------------------------------------------------------------------------
# Elementwise activations
# --------------------------------------------------------------------------


def sigmoid(x):
    # Branch on sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow."""
    return -np.logaddexp(0, -x).astype(x.dtype, copy=False)


def activation_forward(x, kind):
    if kind == "relu":
        mask = x > 0
        return x * mask, ("relu", mask)
    if kind == "sigmoid":
        s = sigmoid(x)
        return s, ("sigmoid", s)
    raise ParameterError(f"unknown activation {kind!r}")


def activation_backward(dout, cache):
    kind, saved = cache
    if kind == "relu":
        return dout * saved
    return dout * saved * (1 - saved)


# --------------------------------------------------------------------------
# Softmax / cross-entropy
# --------------------------------------------------------------------------


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """
    Mean softmax cross-entropy.

    Returns ``(loss, probs)``. The gradient of the mean loss with respect to
    the logits is ``(probs - onehot(labels)) / N``; see
    :func:`softmax_xent_backward`.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (N, K), got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"label out of range [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    loss = -log_probs[np.arange(n), labels].mean()
    return loss, np.exp(log_probs)


def softmax_xent_backward(probs, labels):
    n = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return grad / n


# --------------------------------------------------------------------------
# Spatial mean (global average pooling)
# --------------------------------------------------------------------------


def spatial_mean_forward(x):
    if x.ndim != 4:
        raise DimensionError(f"spatial_mean expects NCHW, got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    if hw == 0:
        raise DimensionError("spatial_mean over empty spatial extent")
    return x.mean(axis=(2, 3)), x.shape


def spatial_mean_backward(dout, cache):
    n, c, h, w = cache
    return np.broadcast_to((dout / (h * w))[:, :, None, None], cache).copy()


# --------------------------------------------------------------------------
# Parameters and Adam
# --------------------------------------------------------------------------


@dataclass
class ParamSet:
    """Named parameters plus Adam moment accumulators."""

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def copy(self):
        return ParamSet(
            {k: p.copy() for k, p in self.params.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
        )


def adam_step(params: ParamSet, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied in place. Returns ``params``."""
    if params.step < 0:
        raise ParameterError("Adam step counter must be >= 0")
    for name, g in grads.items():
        if name not in params.params:
            raise DimensionError(f"gradient for unknown parameter {name!r}")
        if g.shape != params.params[name].shape:
            raise DimensionError(f"{name}: grad shape {g.shape} != param shape {params.params[name].shape}")
    params.step += 1
    t = params.step
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    for name, g in grads.items():
        p = params.params[name]
        g = g.astype(p.dtype, copy=False)
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / p.dtype.type(c1)
        v_hat = v / p.dtype.type(c2)
        p -= p.dtype.type(lr) * m_hat / (np.sqrt(v_hat) + p.dtype.type(eps))
    return params


# --------------------------------------------------------------------------
# Finite-difference gradient check
# --------------------------------------------------------------------------


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def gradcheck(
    fn: Callable[[dict], tuple[float, dict]],
    params: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-3,
    floor: float = 1e-6,
) -> GradcheckReport:
    """
    Compare analytic gradients of a scalar function against central differences.

    ``fn(params) -> (loss, grads)`` where ``grads`` has an entry for every
    key in ``params``. Everything is promoted to float64. The per-element
    relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    p64 = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if sum(v.size for v in p64.values()) >= 10**4:
        raise ParameterError("gradcheck limited to fewer than 10^4 scalars")
    _, analytic = fn(p64)
    worst = (0.0, "", ())
    for name, arr in p64.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != arr.shape:
            raise DimensionError(f"{name}: analytic grad shape {a.shape} != {arr.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite analytic gradient for {name}")
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            f_plus = float(fn(p64)[0])
            arr[idx] = orig - h
            f_minus = float(fn(p64)[0])
            arr[idx] = orig
            num = (f_plus - f_minus) / (2 * h)
            err = abs(a[idx] - num) / max(abs(a[idx]), abs(num), floor)
            if err > worst[0]:
                worst = (err, name, idx)
    return GradcheckReport(worst[0], worst[1], worst[2], tolerance)


# --------------------------------------------------------------------------
# TNSR container and checkpoints
# --------------------------------------------------------------------------

_MAGIC = b"TNSR"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float32)
    code = _CODES[arr.dtype]
    header = _MAGIC + struct.pack("<BBH", 1, code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode_tensor(buf: bytes, offset: int = 0):
    """Decode one TNSR blob starting at ``offset``; returns ``(array, end_offset)``."""
    if buf[offset : offset + 4] != _MAGIC:
        raise FormatError("bad TNSR magic")
    if len(buf) < offset + 8:
        raise FormatError("truncated TNSR header")
    version, code, ndim = struct.unpack_from("<BBH", buf, offset + 4)
    if version != 1:
        raise FormatError(f"unsupported TNSR version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown TNSR dtype code {code}")
    pos = offset + 8
    if len(buf) < pos + 4 * ndim:
        raise FormatError("truncated TNSR dims")
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    dtype = _DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise FormatError("truncated TNSR payload")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True), pos + nbytes


def save_tensor(path, arr):
    Path(path).write_bytes(encode_tensor(arr))


def load_tensor(path):
    buf = Path(path).read_bytes()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"trailing bytes in {path}")
    return arr


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    out = bytearray()
    for name in sorted(tensors):
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw + encode_tensor(tensors[name])
    return bytes(out)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    tensors = {}
    pos = 0
    while pos < len(buf):
        if len(buf) < pos + 4:
            raise FormatError("truncated checkpoint record")
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + n].decode("utf-8")
        pos += n
        tensors[name], pos = decode_tensor(buf, pos)
    return tensors


def save_checkpoint(path, tensors):
    Path(path).write_bytes(encode_checkpoint(tensors))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
