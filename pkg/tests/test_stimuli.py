import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gazedecode import stimuli as S
from gazedecode.errors import FormatError, ParameterError


def test_category_bijection():
    assert len(S.CATEGORIES) == 10
    for i, name in enumerate(S.CATEGORIES):
        assert S.category_id(name) == i
        assert S.category_name(i) == name
    with pytest.raises(ParameterError):
        S.category_id("Hat")


def test_render_is_deterministic():
    a = S.render_exemplar(3, 12345)
    b = S.render_exemplar(3, 12345)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    assert a.pixels.shape == (32, 32) and a.pixels.dtype == np.float32


@pytest.mark.parametrize("cat", range(10))
def test_zero_jitter_gives_base_silhouette(cat):
    ex = S.render_exemplar(cat, 99, S.RenderParams.zero())
    np.testing.assert_array_equal(ex.pixels, S.base_silhouette(cat).astype(np.float32))


@pytest.mark.parametrize("cat", range(10))
def test_pixels_in_unit_range(cat):
    for seed in range(5):
        px = S.render_exemplar(cat, seed).pixels
        assert px.min() >= 0 and px.max() <= 1


def test_prototypes_pairwise_distinct():
    masks = [S.base_silhouette(c).astype(float) for c in range(10)]
    for i in range(10):
        for j in range(i + 1, 10):
            assert np.abs(masks[i] - masks[j]).mean() >= 0.05, (S.CATEGORIES[i], S.CATEGORIES[j])


def test_within_category_closer_than_across():
    """Monte-Carlo over 1000 same-category and 1000 cross-category pairs."""
    rng = np.random.default_rng(7)
    within, across = [], []
    for _ in range(1000):
        c = int(rng.integers(10))
        a, b = rng.integers(0, 2**40, size=2)
        within.append(np.abs(S.render_exemplar(c, int(a)).pixels - S.render_exemplar(c, int(b)).pixels).mean())
        c1, c2 = rng.choice(10, size=2, replace=False)
        a, b = rng.integers(0, 2**40, size=2)
        across.append(np.abs(S.render_exemplar(int(c1), int(a)).pixels - S.render_exemplar(int(c2), int(b)).pixels).mean())
    assert np.mean(within) < np.mean(across)


def test_collage_all_targets():
    c = S.build_collage(4, n_target=16, seed=1)
    assert all(it.category == 4 for it in c.items)


def test_collage_structure():
    c = S.build_collage(2, n_target=2, seed=5)
    assert c.canvas.shape == (256, 256)
    assert len(c.items) == 16
    assert sum(it.category == 2 for it in c.items) == 2
    boxes = [it.bbox for it in c.items]
    for i, (y0, x0, y1, x1) in enumerate(boxes):
        assert y1 - y0 == 32 and x1 - x0 == 32
        cy0, cx0 = c.items[i].row * 64, c.items[i].col * 64
        assert cy0 <= y0 and y1 <= cy0 + 64 and cx0 <= x0 and x1 <= cx0 + 64
        assert abs(y0 - cy0 - 16) <= 4 and abs(x0 - cx0 - 16) <= 4
    assert len({(it.row, it.col) for it in c.items}) == 16


def test_collage_deterministic():
    a = S.build_collage(7, 2, seed=11)
    b = S.build_collage(7, 2, seed=11)
    assert a.canvas.tobytes() == b.canvas.tobytes()
    assert a.to_json() == b.to_json()
    assert S.collage_from_json(a.to_json()).canvas.tobytes() == a.canvas.tobytes()


@pytest.mark.parametrize("n", [0, 17])
def test_collage_n_target_range(n):
    with pytest.raises(ParameterError):
        S.build_collage(0, n, seed=0)


def test_target_cells_uniform():
    """10k layouts with two targets: each of 16 cells holds a target equally often."""
    counts = np.zeros(16)
    for seed in range(10_000):
        cats, _, _ = S.collage_layout(5, 2, seed)
        counts[cats == 5] += 1
    assert counts.sum() == 20_000
    _, p = stats.chisquare(counts)
    assert p > 0.01


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 9), st.integers(1, 16), st.integers(0, 2**32))
def test_distractors_never_target(target, n_target, seed):
    cats, offsets, _ = S.collage_layout(target, n_target, seed)
    assert (cats == target).sum() == n_target
    assert np.all(np.abs(offsets) <= 4)


def test_gen_dataset(tmp_path):
    manifests = S.gen_dataset(tmp_path / "a", {"train": 3, "val": 1, "test": 2}, seed=4)
    m = manifests["train"]
    assert len(m.files) == 30
    assert np.bincount(m.labels()).tolist() == [3] * 10
    assert m.counts == {name: 3 for name in S.CATEGORIES}
    doc = json.loads((tmp_path / "a" / "manifest_train.json").read_text())
    assert set(doc) == {"split", "seed", "counts", "files", "params"}
    for f in doc["files"]:
        assert (tmp_path / "a" / f["path"]).exists()
    seeds = {split: {f["seed"] for f in manifests[split].files} for split in manifests}
    assert not (seeds["train"] & seeds["val"]) and not (seeds["train"] & seeds["test"]) and not (seeds["val"] & seeds["test"])

    S.gen_dataset(tmp_path / "b", {"train": 3, "val": 1, "test": 2}, seed=4)
    for path in sorted((tmp_path / "a").rglob("*")):
        if path.is_file():
            assert path.read_bytes() == (tmp_path / "b" / path.relative_to(tmp_path / "a")).read_bytes()
    pixels, labels = S.load_split(tmp_path / "a", "test")
    assert pixels.shape == (20, 32, 32) and labels.tolist() == sorted(labels.tolist())


def test_gen_dataset_rejects_zero_counts(tmp_path):
    with pytest.raises(ParameterError):
        S.gen_dataset(tmp_path, {"train": 0, "val": 1, "test": 1})


def test_pgm_values():
    assert S.export_pgm(np.zeros((2, 3))).endswith(bytes(6))
    blob = S.export_pgm(np.array([[1.0, 0.5]]))
    assert blob == b"P5\n2 1\n255\n" + bytes([255, 128])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_pgm_round_trip(h, w, seed):
    img = np.random.default_rng(seed).random((h, w))
    back = S.import_pgm(S.export_pgm(img))
    assert back.shape == (h, w)
    assert np.max(np.abs(back - img)) <= 1 / 510 + 1e-7


def test_pgm_with_comment_header():
    blob = b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255])
    np.testing.assert_array_equal(S.import_pgm(blob), [[0.0, 1.0]])


@pytest.mark.parametrize("blob", [b"P2\n1 1\n255\n\x00", b"P5\n1 1\n", b"P5\n2 2\n255\n\x00", b"P5\nx 1\n255\n\x00"])
def test_pgm_malformed(blob):
    with pytest.raises(FormatError):
        S.import_pgm(blob)
