"""
From fixations to a class posterior
===================================

Builds one collage, simulates a search for its target, turns the fixations
into density maps at several widths and pools encoder features with them.

    python3 demos/plot_fixation_density.py [runs/default]

With a trained run directory the pooled posteriors come from the trained
encoder; without one, an untrained encoder stands in and only the maps are
meaningful. Figures go to ``demo_figures/``.
"""

# %%
# A collage and a search
# ----------------------
# Sixteen garments on a 4x4 grid, two of them Skirts. The simulated observer
# lands 60% of fixations on a target and the rest on distractors.

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from gazedecode import gaze_encoder as E
from gazedecode.gaze_sim import build_fdm, simulate_search, uniform_fdm
from gazedecode.pipeline import load_models
from gazedecode.stimuli import CATEGORIES, build_collage, category_id

figdir = Path("demo_figures")
figdir.mkdir(exist_ok=True)

target = category_id("Skirt")
collage = build_collage(target, n_target=2, seed=3)
log = simulate_search(collage, seed=3)
xy = np.array([(f.x, f.y) for f in log.fixations])
t = np.array([f.t for f in log.fixations])
print(f"{len(log)} fixations, mean duration {t.mean():.0f} ms")

# %%
# Density maps
# ------------
# Each fixation becomes a Gaussian splat on the 256x256 canvas, cut off at
# three standard deviations, then the canvas is area-averaged down to the
# 32x32 feature grid and normalized to unit mass.

sigmas = (8.0, 16.0, 24.0)
fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
axes[0].imshow(collage.canvas, cmap="gray")
axes[0].scatter(xy[:, 0], xy[:, 1], s=t / 8, c="tab:red", alpha=0.7)
for it in collage.target_items():
    y0, x0, y1, x1 = it.bbox
    axes[0].add_patch(plt.Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, ec="tab:green", lw=2))
axes[0].set_title("collage, fixations, targets")
for ax, sigma in zip(axes[1:], sigmas):
    ax.imshow(build_fdm(log, sigma=sigma).grid, cmap="magma")
    ax.set_title(f"density map, sigma {sigma:g} px")
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig(figdir / "fixation_density.png", dpi=110)

# %%
# Gaze-weighted pooling
# ---------------------
# The feature map is summed against the density map instead of averaged,
# so features under the fixations dominate the pooled vector. A uniform map
# reduces this to plain global average pooling.

run = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs/default")
try:
    encoder = load_models(run)[0]
    print(f"using trained encoder from {run}")
except Exception:
    encoder = E.init_encoder(seed=0)
    print("no trained run found; using an untrained encoder")

fm = E.extract_features(encoder, collage.canvas)
rows = {"uniform map": E.classify(encoder, E.gaze_pool(fm, uniform_fdm((32, 32))))}
for sigma in sigmas:
    rows[f"gaze, sigma {sigma:g}"] = E.encode_session(encoder, [(collage.canvas, log)], sigma=sigma, features=[fm])

print(f"{'':>16} " + " ".join(f"{c[:6]:>6}" for c in CATEGORIES))
for name, p in rows.items():
    print(f"{name:>16} " + " ".join(f"{v:6.2f}" for v in p))

# %%
# Pruning
# -------
# Keeping the k largest entries and renormalizing sharpens the condition
# handed to the decoder.

p = rows["gaze, sigma 16"]
for k in (1, 2, 3, "all"):
    q = E.prune_topk(p, k)
    kept = ", ".join(f"{CATEGORIES[i]} {q[i]:.2f}" for i in np.flatnonzero(q))
    print(f"k={k}: {kept}")
