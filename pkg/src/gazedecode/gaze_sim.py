"""
Simulated search fixations and fixation density maps.

Fixations live in canvas pixel coordinates where pixel ``(r, c)`` covers
``[c, c + 1) x [r, r + 1)`` and its centre sits at ``(c + 0.5, r + 0.5)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, EmptyInputError, ParameterError, StimulusError
from .rng import make_rng
from .stimuli import CANVAS_SIZE, category_name, export_pgm
from .tensor_kernel import encode_tensor

TRUNCATION = 3.0


@dataclass(frozen=True)
class Fixation:
    x: float
    y: float
    t: float

    def __post_init__(self):
        if not (0 <= self.x < CANVAS_SIZE and 0 <= self.y < CANVAS_SIZE):
            raise ParameterError(f"fixation ({self.x}, {self.y}) outside the canvas")
        if not self.t > 0:
            raise ParameterError(f"fixation duration must be positive, got {self.t}")


@dataclass
class FixationLog:
    participant: str
    collage: str
    target: int
    fixations: list = field(default_factory=list)

    def __len__(self):
        return len(self.fixations)

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "participant": self.participant,
                    "collage": self.collage,
                    "target": category_name(self.target),
                    "x": f.x,
                    "y": f.y,
                    "t": f.t,
                    "idx": i,
                }
            )
            for i, f in enumerate(self.fixations)
        ]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str):
        from .stimuli import category_id

        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows:
            raise EmptyInputError("fixation log is empty")
        rows.sort(key=lambda r: r["idx"])
        first = rows[0]
        fixations = [Fixation(float(r["x"]), float(r["y"]), float(r["t"])) for r in rows]
        return cls(first["participant"], first["collage"], category_id(first["target"]), fixations)


@dataclass(frozen=True)
class SearchParams:
    n_fix: int = 20
    p_target: float = 0.6
    pos_jitter: float = 6.0
    duration_shape: float = 2.0
    duration_scale: float = 100.0


def simulate_search(collage, params: SearchParams = SearchParams(), seed=0, participant="p00", collage_ref=""):
    """
    Draw a fixation log for one collage.

    Each fixation picks a target item with probability ``p_target`` (else a
    distractor), lands on its centre plus isotropic Gaussian jitter clamped
    to the canvas, and lasts a Gamma-distributed duration in ms.
    """
    if params.n_fix < 1:
        raise ParameterError("n_fix must be >= 1")
    if not 0.0 <= params.p_target <= 1.0:
        raise ParameterError("p_target must be in [0, 1]")
    targets = collage.target_items()
    distractors = collage.distractor_items()
    if not targets:
        raise StimulusError("collage contains no target item")

    rng = make_rng(seed, "search")
    on_target = rng.random(params.n_fix) < params.p_target
    if not distractors:
        on_target[:] = True
    pick = rng.random(params.n_fix)
    jitter = rng.normal(0.0, 1.0, size=(params.n_fix, 2)) * params.pos_jitter
    durations = rng.gamma(params.duration_shape, params.duration_scale, size=params.n_fix)

    hi = np.nextafter(float(CANVAS_SIZE), 0.0)
    fixations = []
    for i in range(params.n_fix):
        pool = targets if on_target[i] else distractors
        item = pool[int(pick[i] * len(pool))]
        cx, cy = item.center
        x = float(np.clip(cx + jitter[i, 0], 0.0, hi))
        y = float(np.clip(cy + jitter[i, 1], 0.0, hi))
        fixations.append(Fixation(x, y, float(durations[i])))
    return FixationLog(participant, collage_ref, collage.target, fixations)


@dataclass
class FixationDensityMap:
    grid: np.ndarray
    source_shape: tuple
    sigma: float
    normalized: bool = True

    def total(self):
        return float(self.grid.sum())

    def to_tnsr(self):
        """TNSR bytes of the grid (the container stores float32)."""
        return encode_tensor(self.grid)

    def to_pgm(self):
        """8-bit heatmap scaled so the peak is white; an all-zero map stays black."""
        peak = self.grid.max()
        return export_pgm(self.grid / peak if peak > 0 else self.grid)


def splat(fixations, sigma=8.0, duration_weighted=False, canvas=(CANVAS_SIZE, CANVAS_SIZE)):
    """
    Full-resolution sum of Gaussian splats, each truncated at radius 3*sigma.

    Amplitude is 1 per fixation, or its duration when ``duration_weighted``.
    """
    h, w = canvas
    out = np.zeros((h, w), dtype=np.float64)
    radius = TRUNCATION * sigma
    for f in fixations:
        amp = f.t if duration_weighted else 1.0
        r0 = max(0, int(np.floor(f.y - radius)))
        r1 = min(h, int(np.ceil(f.y + radius)) + 1)
        c0 = max(0, int(np.floor(f.x - radius)))
        c1 = min(w, int(np.ceil(f.x + radius)) + 1)
        dy = (np.arange(r0, r1) + 0.5 - f.y)[:, None]
        dx = (np.arange(c0, c1) + 0.5 - f.x)[None, :]
        d2 = dy * dy + dx * dx
        g = np.exp(-d2 / (2.0 * sigma * sigma))
        g[d2 > radius * radius] = 0.0
        out[r0:r1, c0:c1] += amp * g
    return out


def area_downsample(canvas, out_grid):
    """Mean over equal non-overlapping blocks."""
    h, w = canvas.shape
    gh, gw = out_grid
    if h % gh or w % gw:
        raise ParameterError(f"canvas {h}x{w} not divisible into grid {gh}x{gw}")
    return canvas.reshape(gh, h // gh, gw, w // gw).mean(axis=(1, 3))


def build_fdm(log, out_grid=(32, 32), sigma=8.0, duration_weighted=False, normalize=True):
    fixations = log.fixations if isinstance(log, FixationLog) else list(log)
    if not fixations:
        raise EmptyInputError("cannot build a fixation density map from an empty log")
    full = splat(fixations, sigma, duration_weighted)
    grid = area_downsample(full, out_grid)
    if normalize:
        mass = grid.sum()
        if not mass > 0:
            raise DegenerateError("fixation density map has zero mass")
        grid = grid / mass
    return FixationDensityMap(grid, full.shape, sigma, normalize)


def uniform_fdm(out_grid=(32, 32)):
    gh, gw = out_grid
    return FixationDensityMap(np.full((gh, gw), 1.0 / (gh * gw)), (CANVAS_SIZE, CANVAS_SIZE), float("inf"), True)
