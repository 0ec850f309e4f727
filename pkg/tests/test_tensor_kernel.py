import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gazedecode import tensor_kernel as tk
from gazedecode.errors import DimensionError, FormatError, NumericError


def direct_conv(x, k, b, stride, pad):
    """Brute-force cross-correlation, one output element at a time."""
    n, c_in, h, w = x.shape
    c_out = k.shape[0]
    xp = np.zeros((n, c_in, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + w] = x
    ho = (h + 2 * pad - 3) // stride + 1
    wo = (w + 2 * pad - 3) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for a in range(n):
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(c_in):
                        for di in range(3):
                            for dj in range(3):
                                acc += xp[a, c, i * stride + di, j * stride + dj] * k[o, c, di, dj]
                    out[a, o, i, j] = acc
    return out


# --------------------------------------------------------------------------
# linear
# --------------------------------------------------------------------------


def test_linear_identity():
    out, _ = tk.linear_forward(np.array([[1.0, 2.0]]), np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(out, [[1, 2]])


def test_linear_hand_example_and_backward():
    x = np.array([[1.0, 1.0]])
    w = np.array([[2.0], [3.0]])
    b = np.array([1.0])
    out, cache = tk.linear_forward(x, w, b)
    assert out.tolist() == [[6.0]]
    dx, dw, db = tk.linear_backward(np.array([[1.0]]), cache)
    assert dw.tolist() == [[1.0], [1.0]]
    assert db.tolist() == [1.0]
    assert dx.tolist() == [[2.0, 3.0]]


def test_linear_shape_mismatch():
    with pytest.raises(DimensionError):
        tk.linear_forward(np.ones((1, 3)), np.ones((2, 2)), np.ones(2))


# --------------------------------------------------------------------------
# conv2d
# --------------------------------------------------------------------------


def test_conv_zero_kernel_gives_bias():
    out, _ = tk.conv2d_forward(np.ones((1, 1, 3, 3)), np.zeros((1, 1, 3, 3)), np.array([5.0]), stride=1)
    np.testing.assert_array_equal(out, np.full((1, 1, 3, 3), 5.0))


def test_conv_delta_with_ones_kernel():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 1.0
    out, _ = tk.conv2d_forward(x, np.ones((1, 1, 3, 3)), np.zeros(1), stride=1, pad=1)
    # Every output window of a 3x3 map overlaps the centre pixel.
    np.testing.assert_array_equal(out, direct_conv(x, np.ones((1, 1, 3, 3)), np.zeros(1), 1, 1))
    np.testing.assert_array_equal(out[0, 0], np.ones((3, 3)))


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("shape", [(2, 2, 5, 5), (1, 3, 6, 4), (2, 1, 7, 8)])
def test_conv_matches_direct(stride, shape):
    rng = np.random.default_rng(3)
    x = rng.normal(size=shape)
    k = rng.normal(size=(4, shape[1], 3, 3))
    b = rng.normal(size=4)
    out, _ = tk.conv2d_forward(x, k, b, stride=stride)
    np.testing.assert_allclose(out, direct_conv(x, k, b, stride, 1), rtol=1e-12, atol=1e-12)


def test_conv_output_size():
    out, _ = tk.conv2d_forward(np.zeros((1, 1, 64, 64), np.float32), np.zeros((2, 1, 3, 3), np.float32), np.zeros(2, np.float32), 2)
    assert out.shape == (1, 2, 32, 32)
    assert out.dtype == np.float32


def test_conv_rejects_bad_kernel():
    with pytest.raises(DimensionError):
        tk.conv2d_forward(np.zeros((1, 1, 4, 4)), np.zeros((1, 2, 3, 3)), np.zeros(1))


# --------------------------------------------------------------------------
# activations, softmax, spatial mean
# --------------------------------------------------------------------------


def test_relu_and_sigmoid_values():
    out, _ = tk.activation_forward(np.array([-1.0, 0.0, 2.0]), "relu")
    assert out.tolist() == [0.0, 0.0, 2.0]
    s, cache = tk.activation_forward(np.array([0.0]), "sigmoid")
    assert s.tolist() == [0.5]
    assert tk.activation_backward(np.array([1.0]), cache).tolist() == [0.25]


def test_sigmoid_extreme_inputs_finite():
    s = tk.sigmoid(np.array([-1000.0, 1000.0]))
    assert np.all(np.isfinite(s))
    assert s[0] == 0.0 and s[1] == 1.0


def test_softmax_uniform_logits():
    loss, probs = tk.softmax_xent(np.zeros((1, 10)), np.array([3]))
    np.testing.assert_allclose(probs, 0.1)
    assert loss == pytest.approx(math.log(10))


def test_softmax_closed_form():
    loss, probs = tk.softmax_xent(np.array([[math.log(2), 0.0]]), np.array([0]))
    np.testing.assert_allclose(probs, [[2 / 3, 1 / 3]], rtol=1e-12)
    assert loss == pytest.approx(-math.log(2 / 3), abs=1e-6)
    assert loss == pytest.approx(0.405465, abs=1e-6)


def test_softmax_label_out_of_range():
    with pytest.raises(IndexError):
        tk.softmax_xent(np.zeros((1, 3)), np.array([3]))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 12)), elements=st.floats(-500, 500)))
def test_softmax_rows_are_distributions(logits):
    _, probs = tk.softmax_xent(logits, np.zeros(len(logits), dtype=int))
    assert np.all(probs >= 0) and np.all(probs <= 1)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_spatial_mean_examples():
    out, _ = tk.spatial_mean_forward(np.full((1, 3, 4, 4), 2.5))
    np.testing.assert_array_equal(out, [[2.5, 2.5, 2.5]])
    out, cache = tk.spatial_mean_forward(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
    assert out.tolist() == [[2.5]]
    np.testing.assert_array_equal(tk.spatial_mean_backward(np.array([[4.0]]), cache), np.ones((1, 1, 2, 2)))


def test_spatial_mean_empty():
    with pytest.raises(DimensionError):
        tk.spatial_mean_forward(np.zeros((1, 1, 0, 3)))


def test_spatial_mean_of_constant_weighting():
    rng = np.random.default_rng(0)
    fm = rng.normal(size=(1, 4, 8, 8)).astype(np.float32)
    weighted, _ = tk.spatial_mean_forward(fm * np.float32(0.25))
    plain, _ = tk.spatial_mean_forward(fm)
    np.testing.assert_allclose(weighted, 0.25 * plain, rtol=1e-6)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


def test_adam_zero_grad_leaves_params():
    ps = tk.ParamSet({"w": np.array([1.0, -2.0], dtype=np.float32)})
    tk.adam_step(ps, {"w": np.zeros(2, dtype=np.float32)})
    np.testing.assert_array_equal(ps["w"], [1.0, -2.0])


def test_adam_first_step_closed_form():
    ps = tk.ParamSet({"p": np.array([1.0])})
    tk.adam_step(ps, {"p": np.array([1.0])}, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    assert ps["p"][0] == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-12)


def test_adam_deterministic():
    rng = np.random.default_rng(1)
    base = tk.ParamSet({"w": rng.normal(size=(3, 4)).astype(np.float32)})
    g = {"w": rng.normal(size=(3, 4)).astype(np.float32)}
    a, b = base.copy(), base.copy()
    for _ in range(3):
        tk.adam_step(a, g)
        tk.adam_step(b, g)
    assert a["w"].tobytes() == b["w"].tobytes()


def test_adam_shape_mismatch():
    ps = tk.ParamSet({"w": np.zeros(3)})
    with pytest.raises(DimensionError):
        tk.adam_step(ps, {"w": np.zeros(4)})


# --------------------------------------------------------------------------
# gradient checks (20 random trials per layer)
# --------------------------------------------------------------------------

TRIALS = 20


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradcheck_linear(trial):
    rng = np.random.default_rng(100 + trial)
    r = rng.normal(size=(3, 5))

    def fn(p):
        out, cache = tk.linear_forward(p["x"], p["w"], p["b"])
        dx, dw, db = tk.linear_backward(r, cache)
        return float((out * r).sum()), {"x": dx, "w": dw, "b": db}

    params = {"x": rng.normal(size=(3, 4)), "w": rng.normal(size=(4, 5)), "b": rng.normal(size=5)}
    report = tk.gradcheck(fn, params, tolerance=1e-4)
    assert report.passed, report


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradcheck_conv(trial):
    rng = np.random.default_rng(200 + trial)
    stride = 1 + trial % 2
    x = rng.normal(size=(2, 2, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    ho = tk.conv_output_size(5, stride)
    r = rng.normal(size=(2, 3, ho, ho))

    def fn(p):
        out, cache = tk.conv2d_forward(p["x"], p["k"], p["b"], stride=stride)
        dx, dk, db = tk.conv2d_backward(r, cache)
        return float((out * r).sum()), {"x": dx, "k": dk, "b": db}

    report = tk.gradcheck(fn, {"x": x, "k": k, "b": b}, tolerance=1e-4)
    assert report.passed, report


@pytest.mark.parametrize("trial", range(TRIALS))
@pytest.mark.parametrize("kind", ["relu", "sigmoid"])
def test_gradcheck_activation(kind, trial):
    rng = np.random.default_rng(300 + trial)
    x = rng.normal(size=(4, 6))
    if kind == "relu":
        # Keep inputs clear of the kink so central differences are exact.
        x = np.where(np.abs(x) < 0.01, 0.5, x)
    r = rng.normal(size=x.shape)

    def fn(p):
        out, cache = tk.activation_forward(p["x"], kind)
        return float((out * r).sum()), {"x": tk.activation_backward(r, cache)}

    assert tk.gradcheck(fn, {"x": x}, tolerance=1e-4).passed


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradcheck_softmax_xent(trial):
    rng = np.random.default_rng(400 + trial)
    labels = rng.integers(0, 7, size=5)

    def fn(p):
        loss, probs = tk.softmax_xent(p["z"], labels)
        return float(loss), {"z": tk.softmax_xent_backward(probs, labels)}

    assert tk.gradcheck(fn, {"z": rng.normal(size=(5, 7)) * 3}, tolerance=1e-4).passed


@pytest.mark.parametrize("trial", range(TRIALS))
def test_gradcheck_spatial_mean(trial):
    rng = np.random.default_rng(500 + trial)
    r = rng.normal(size=(2, 3))

    def fn(p):
        out, cache = tk.spatial_mean_forward(p["x"])
        return float((out * r).sum()), {"x": tk.spatial_mean_backward(r, cache)}

    assert tk.gradcheck(fn, {"x": rng.normal(size=(2, 3, 4, 5))}, tolerance=1e-4).passed


def test_gradcheck_flags_wrong_gradient():
    def fn(p):
        return float((p["x"] ** 2).sum()), {"x": 3 * p["x"]}

    report = tk.gradcheck(fn, {"x": np.array([1.0, 2.0])}, tolerance=1e-4)
    assert not report.passed
    assert report.max_rel_error == pytest.approx(1 / 3, rel=1e-6)


def test_gradcheck_non_finite_gradient():
    def fn(p):
        return float(p["x"].sum()), {"x": np.array([np.nan])}

    with pytest.raises(NumericError):
        tk.gradcheck(fn, {"x": np.array([1.0])})


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def test_tnsr_header_layout():
    blob = tk.encode_tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert blob[:4] == b"TNSR"
    assert blob[4] == 1 and blob[5] == 0
    assert int.from_bytes(blob[6:8], "little") == 2
    assert int.from_bytes(blob[8:12], "little") == 2
    assert int.from_bytes(blob[12:16], "little") == 3
    assert len(blob) == 16 + 6 * 4


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.lists(st.integers(0, 4), min_size=0, max_size=4).map(tuple), elements=st.floats(-1e6, 1e6, width=32)))
def test_tnsr_round_trip(arr):
    back, end = tk.decode_tensor(tk.encode_tensor(arr))
    assert back.dtype == np.float32 and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_tnsr_uint8_and_errors(tmp_path):
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    tk.save_tensor(tmp_path / "a.tnsr", arr)
    back = tk.load_tensor(tmp_path / "a.tnsr")
    assert back.dtype == np.uint8 and np.array_equal(back, arr)
    with pytest.raises(FormatError):
        tk.decode_tensor(b"XXXX" + bytes(8))
    with pytest.raises(FormatError):
        tk.decode_tensor(tk.encode_tensor(np.zeros(4, np.float32))[:-1])


def test_checkpoint_round_trip(tmp_path):
    tensors = {"b": np.ones(3, np.float32), "a/w": np.arange(4, dtype=np.float32).reshape(2, 2)}
    tk.save_checkpoint(tmp_path / "m.ckpt", tensors)
    back = tk.load_checkpoint(tmp_path / "m.ckpt")
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes()
    assert tk.encode_checkpoint(tensors) == tk.encode_checkpoint(dict(reversed(list(tensors.items()))))
