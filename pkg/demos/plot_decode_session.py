"""
Decoding a search target
========================

Encodes a simulated five-collage session into a class posterior and decodes
it into garment images with the conditional VAE, for several pruning levels
and both sampling modes. An independent oracle encoder labels each decode.

    python3 demos/plot_decode_session.py [runs/default] [Category]

Needs a run directory with trained models (``demos/full_run.py``).
Figures go to ``demo_figures/``.
"""

# %%
# Session posterior
# -----------------

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from gazedecode.gaze_encoder import classify_images, encode_session, prune_topk
from gazedecode.pipeline import Config, load_models, simulate_session
from gazedecode.stimuli import CATEGORIES, category_id
from gazedecode.target_decoder import sample_targets

run = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs/default")
target = category_id(sys.argv[2] if len(sys.argv) > 2 else "Dress")
encoder, oracle, cvae = load_models(run)
cfg = Config()

session = simulate_session(cfg, target, n_collages=5, seed=11)
pairs = [(c.canvas, log) for c, log in session]
posterior = encode_session(encoder, pairs, sigma=cfg.gaze.sigma)
order = np.argsort(-posterior)
print(f"target {CATEGORIES[target]}; posterior top 3:", ", ".join(f"{CATEGORIES[i]} {posterior[i]:.2f}" for i in order[:3]))

# %%
# Decodes per pruning level
# -------------------------
# The same ten latent draws are reused in every row, so rows differ only in
# the condition vector. Soft sampling feeds the pruned posterior to the
# decoder as is; mixture sampling picks one category per image.

rows = [("soft", k) for k in ("1", "2", "3", "all")] + [("mixture", "2")]
fig, axes = plt.subplots(len(rows), 10, figsize=(10, 1.2 * len(rows)))
for r, (mode, k) in enumerate(rows):
    images = sample_targets(cvae, prune_topk(posterior, k), n=10, mode=mode, seed=5)
    pixels = np.stack([im.pixels for im in images])
    probs = classify_images(oracle, pixels)
    labels = probs.argmax(axis=1)
    entropy = -(probs * np.log(np.clip(probs, 1e-12, None))).sum(axis=1).mean()
    hits = int((labels == target).sum())
    print(f"{mode:>7} k={k:<3} oracle says target on {hits}/10, mean oracle entropy {entropy:.2f} nats")
    for c, ax in enumerate(axes[r]):
        ax.imshow(pixels[c], cmap="gray", vmin=0, vmax=1)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_xlabel(CATEGORIES[labels[c]][:6], fontsize=6, color="tab:green" if labels[c] == target else "tab:red")
    axes[r, 0].set_ylabel(f"{mode}\nk={k}", fontsize=7)
fig.tight_layout()
figdir = Path("demo_figures")
figdir.mkdir(exist_ok=True)
fig.savefig(figdir / "decode_session.png", dpi=110)
