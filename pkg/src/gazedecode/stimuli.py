"""
Synthetic garment glyphs and search collages.

Each of the ten categories has a hand-drawn base silhouette on a 32x32
canvas, built from filled polygons (and a few cut-outs). Exemplars are the
base silhouette under a small random affine jitter, filled at a random
intensity and overlaid with Gaussian pixel noise. Collages place sixteen
exemplars in a 4x4 grid of 64 px cells on a 256x256 canvas.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from skimage.draw import polygon2mask

from .errors import FormatError, ParameterError
from .rng import make_rng
from .tensor_kernel import save_tensor

CATEGORIES = (
    "Blouse",
    "T-Shirt",
    "Jean",
    "Shorts",
    "Skirt",
    "Cardigan",
    "Dress",
    "Jacket",
    "Sweater",
    "Tank",
)
N_CATEGORIES = len(CATEGORIES)
EXEMPLAR_SIZE = 32
CELL_SIZE = 64
GRID = 4
CANVAS_SIZE = CELL_SIZE * GRID
CELL_JITTER = 4


def category_id(name):
    try:
        return CATEGORIES.index(name)
    except ValueError:
        raise ParameterError(f"unknown category {name!r}; expected one of {', '.join(CATEGORIES)}") from None


def category_name(cid):
    if not 0 <= int(cid) < N_CATEGORIES:
        raise ParameterError(f"category id {cid} out of range")
    return CATEGORIES[int(cid)]


def _rect(x0, y0, x1, y1):
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _mirror(poly):
    return [(EXEMPLAR_SIZE - x, y) for x, y in reversed(poly)]


# (polygon in (x, y) pixel units, +1 fill / -1 cut), applied in order.
# Shapes differ in coarse mass layout so that blurred decodes stay separable.
SILHOUETTES = {
    "Blouse": [
        ([(6, 6), (26, 6), (20, 15), (12, 15)], 1),
        (_rect(12, 13, 20, 19), 1),
        ([(12, 18), (20, 18), (26, 27), (6, 27)], 1),
        ([(13, 6), (19, 6), (16, 11)], -1),
    ],
    "T-Shirt": [
        (_rect(10, 6, 22, 27), 1),
        (_rect(3, 6, 10, 13), 1),
        (_rect(22, 6, 29, 13), 1),
    ],
    "Jean": [
        (_rect(9, 2, 23, 7), 1),
        (_rect(9, 7, 15, 30), 1),
        (_rect(17, 7, 23, 30), 1),
    ],
    "Shorts": [
        (_rect(4, 6, 28, 11), 1),
        (_rect(4, 11, 13, 19), 1),
        (_rect(19, 11, 28, 19), 1),
    ],
    "Skirt": [
        ([(11, 13), (21, 13), (28, 28), (4, 28)], 1),
    ],
    "Cardigan": [
        (_rect(4, 4, 28, 9), 1),
        ([(4, 9), (14, 9), (11, 26), (4, 26)], 1),
        (_mirror([(4, 9), (14, 9), (11, 26), (4, 26)]), 1),
    ],
    "Dress": [
        (_rect(13, 3, 19, 12), 1),
        ([(12, 12), (20, 12), (26, 29), (6, 29)], 1),
    ],
    "Jacket": [
        (_rect(5, 4, 27, 28), 1),
        ([(11, 4), (21, 4), (16, 14)], -1),
    ],
    "Sweater": [
        (_rect(3, 5, 29, 10), 1),
        (_rect(3, 10, 8, 28), 1),
        (_rect(24, 10, 29, 28), 1),
        (_rect(11, 10, 21, 26), 1),
    ],
    "Tank": [
        (_rect(10, 12, 22, 28), 1),
        (_rect(11, 4, 13, 12), 1),
        (_rect(19, 4, 21, 12), 1),
    ],
}


@dataclass(frozen=True)
class RenderParams:
    """Exemplar jitter. ``RenderParams.zero()`` renders the bare silhouette."""

    scale_jitter: float = 0.10
    shift_jitter: float = 2.0
    rotation_jitter_deg: float = 5.0
    intensity_low: float = 0.6
    intensity_high: float = 1.0
    noise_sigma: float = 0.03

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 1.0, 1.0, 0.0)


@dataclass
class ExemplarImage:
    pixels: np.ndarray
    category: int
    seed: int


@dataclass
class CollageItem:
    row: int
    col: int
    bbox: tuple  # (y0, x0, y1, x1), half-open pixel box
    category: int
    seed: int

    @property
    def center(self):
        y0, x0, y1, x1 = self.bbox
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


@dataclass
class Collage:
    canvas: np.ndarray
    items: list
    target: int
    seed: int
    n_target: int

    def target_items(self):
        return [it for it in self.items if it.category == self.target]

    def distractor_items(self):
        return [it for it in self.items if it.category != self.target]

    def to_json(self):
        return {
            "target": category_name(self.target),
            "target_id": self.target,
            "seed": self.seed,
            "n_target": self.n_target,
            "items": [
                {"row": it.row, "col": it.col, "bbox": list(it.bbox), "category": it.category, "seed": it.seed}
                for it in self.items
            ],
        }


def _rasterize(shapes, transform):
    mask = np.zeros((EXEMPLAR_SIZE, EXEMPLAR_SIZE), dtype=bool)
    for poly, sign in shapes:
        pts = transform(np.asarray(poly, dtype=np.float64))
        # polygon2mask wants (row, col) with pixel centres on integers.
        filled = polygon2mask((EXEMPLAR_SIZE, EXEMPLAR_SIZE), pts[:, ::-1] - 0.5)
        if sign > 0:
            mask |= filled
        else:
            mask &= ~filled
    return mask


def base_silhouette(category):
    """Binary mask of a category's untransformed silhouette."""
    return _rasterize(SILHOUETTES[category_name(category)], lambda p: p)


def render_exemplar(category, seed, params: RenderParams = RenderParams()):
    """Render one jittered exemplar; identical output for identical (category, seed)."""
    category = int(category)
    name = category_name(category)
    rng = make_rng(seed, "exemplar", category)
    scale = 1.0 + rng.uniform(-params.scale_jitter, params.scale_jitter)
    theta = math.radians(rng.uniform(-params.rotation_jitter_deg, params.rotation_jitter_deg))
    shift = rng.uniform(-params.shift_jitter, params.shift_jitter, size=2)
    intensity = rng.uniform(params.intensity_low, params.intensity_high)
    noise = rng.normal(0.0, 1.0, size=(EXEMPLAR_SIZE, EXEMPLAR_SIZE))

    c, s = math.cos(theta), math.sin(theta)
    rot = scale * np.array([[c, -s], [s, c]])
    centre = EXEMPLAR_SIZE / 2.0

    def transform(pts):
        return (pts - centre) @ rot.T + centre + shift

    mask = _rasterize(SILHOUETTES[name], transform)
    img = mask * intensity + params.noise_sigma * noise
    pixels = np.clip(img, 0.0, 1.0).astype(np.float32)
    return ExemplarImage(pixels, category, int(seed))


def paste_on_canvas(pixels, size=CELL_SIZE, offset=None):
    """Place a 32x32 image on a blank ``size`` canvas, centred unless ``offset=(dy, dx)`` is given."""
    canvas = np.zeros((size, size), dtype=np.float32)
    top = (size - EXEMPLAR_SIZE) // 2
    dy, dx = (0, 0) if offset is None else offset
    canvas[top + dy : top + dy + EXEMPLAR_SIZE, top + dx : top + dx + EXEMPLAR_SIZE] = pixels
    return canvas


def collage_layout(target, n_target, seed):
    """
    Item placement for a collage: ``(categories, offsets, exemplar_seeds)``,
    each indexed by grid cell in row-major order.
    """
    target = int(target)
    category_name(target)
    if not 1 <= n_target <= GRID * GRID:
        raise ParameterError(f"n_target must be in [1, 16], got {n_target}")
    rng = make_rng(seed, "collage")
    cells = rng.permutation(GRID * GRID)
    others = np.array([c for c in range(N_CATEGORIES) if c != target])
    categories = np.empty(GRID * GRID, dtype=np.int64)
    categories[cells[:n_target]] = target
    categories[cells[n_target:]] = rng.choice(others, size=GRID * GRID - n_target)
    offsets = rng.integers(-CELL_JITTER, CELL_JITTER + 1, size=(GRID * GRID, 2))
    exemplar_seeds = rng.integers(0, 2**63, size=GRID * GRID, dtype=np.int64)
    return categories, offsets, exemplar_seeds


def build_collage(target, n_target=2, seed=0, params: RenderParams = RenderParams()):
    categories, offsets, seeds = collage_layout(target, n_target, seed)
    canvas = np.zeros((CANVAS_SIZE, CANVAS_SIZE), dtype=np.float32)
    items = []
    top = (CELL_SIZE - EXEMPLAR_SIZE) // 2
    for cell in range(GRID * GRID):
        row, col = divmod(cell, GRID)
        y0 = row * CELL_SIZE + top + int(offsets[cell, 0])
        x0 = col * CELL_SIZE + top + int(offsets[cell, 1])
        ex = render_exemplar(categories[cell], int(seeds[cell]), params)
        canvas[y0 : y0 + EXEMPLAR_SIZE, x0 : x0 + EXEMPLAR_SIZE] = ex.pixels
        items.append(
            CollageItem(row, col, (y0, x0, y0 + EXEMPLAR_SIZE, x0 + EXEMPLAR_SIZE), int(categories[cell]), int(seeds[cell]))
        )
    return Collage(canvas, items, int(target), int(seed), int(n_target))


def collage_from_json(doc, params: RenderParams = RenderParams()):
    """Rebuild a collage from its metadata (the canvas is re-rendered from seeds)."""
    return build_collage(doc["target_id"], doc["n_target"], doc["seed"], params)


# --------------------------------------------------------------------------
# Dataset generation
# --------------------------------------------------------------------------

SPLITS = ("train", "val", "test")
_SPLIT_CODE = {"train": 1, "val": 2, "test": 3, "collage": 4}


def exemplar_seed(global_seed, split, index):
    """Seeds for different splits never collide: the split code occupies the top bits."""
    if not 0 <= index < 2**24:
        raise ParameterError("exemplar index must fit in 24 bits")
    return (_SPLIT_CODE[split] << 58) | ((int(global_seed) & 0xFFFFFFFF) << 24) | index


@dataclass
class DatasetManifest:
    split: str
    seed: int
    counts: dict
    files: list
    params: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, doc):
        return cls(doc["split"], doc["seed"], doc["counts"], doc["files"], doc.get("params", {}))

    def labels(self):
        return np.array([f["category"] for f in self.files], dtype=np.int64)


def gen_dataset(out_dir, counts=None, seed=0, params: RenderParams = RenderParams()):
    """
    Render per-category exemplar splits into ``out_dir``.

    ``counts`` maps split name to exemplars per category (default
    500/100/100). Writes one TNSR file per exemplar plus
    ``manifest_<split>.json``; returns ``{split: DatasetManifest}``.
    """
    counts = dict(counts or {"train": 500, "val": 100, "test": 100})
    for split, n in counts.items():
        if split not in SPLITS:
            raise ParameterError(f"unknown split {split!r}")
        if n < 1:
            raise ParameterError(f"count for {split} must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = {}
    for split, n in counts.items():
        split_dir = out_dir / split
        split_dir.mkdir(exist_ok=True)
        files = []
        for cat in range(N_CATEGORIES):
            for i in range(n):
                idx = cat * n + i
                ex_seed = exemplar_seed(seed, split, idx)
                ex = render_exemplar(cat, ex_seed, params)
                rel = f"{split}/{cat}_{i:05d}.tnsr"
                save_tensor(out_dir / rel, ex.pixels)
                files.append({"path": rel, "category": cat, "seed": ex_seed})
        manifest = DatasetManifest(split, int(seed), {name: n for name in CATEGORIES}, files, asdict(params))
        (out_dir / f"manifest_{split}.json").write_text(json.dumps(manifest.to_json(), indent=1))
        manifests[split] = manifest
    return manifests


def load_manifest(data_dir, split):
    path = Path(data_dir) / f"manifest_{split}.json"
    return DatasetManifest.from_json(json.loads(path.read_text()))


def load_split(data_dir, split):
    """Stack a split's exemplars: ``(pixels (N, 32, 32) float32, labels (N,))``."""
    from .tensor_kernel import load_tensor

    manifest = load_manifest(data_dir, split)
    data_dir = Path(data_dir)
    pixels = np.stack([load_tensor(data_dir / f["path"]) for f in manifest.files])
    return pixels, manifest.labels()


# --------------------------------------------------------------------------
# PGM
# --------------------------------------------------------------------------


def export_pgm(image) -> bytes:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ParameterError(f"PGM export needs a 2-D image, got {img.shape}")
    data = np.floor(np.clip(img, 0.0, 1.0) * 255 + 0.5).astype(np.uint8)
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def import_pgm(buf: bytes):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(buf[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-integer PGM header field") from None
    if maxval != 255 or w <= 0 or h <= 0:
        raise FormatError(f"unsupported PGM geometry {w}x{h} maxval {maxval}")
    raster = buf[pos : pos + w * h]
    if len(raster) != w * h:
        raise FormatError("truncated PGM raster")
    return (np.frombuffer(raster, dtype=np.uint8).reshape(h, w) / 255.0).astype(np.float32)
