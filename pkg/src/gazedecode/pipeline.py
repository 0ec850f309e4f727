"""
End-to-end runs: data generation, training, simulation, decoding and the
two oracle-scored evaluations (category recognition and local-vs-global).

Every stage writes into a subdirectory of an output root, serialises its
effective :class:`Config` as ``config.json`` next to its artifacts, and
refreshes ``MANIFEST.json`` (relative path -> sha256) at the root. No
timestamps or absolute paths are written, so rerunning a stage from its
saved config reproduces the same bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .errors import ConfigError, EmptyInputError
from .gaze_encoder import EncoderModel, classify_images, encode_session, extract_features, prune_topk, train_encoder
from .gaze_sim import FixationLog, SearchParams, simulate_search
from .rng import derive_seed
from .stimuli import CATEGORIES, N_CATEGORIES, build_collage, category_id, export_pgm, gen_dataset, load_split
from .target_decoder import CVAEModel, sample_targets, train_cvae
from .tensor_kernel import load_checkpoint, load_tensor, save_checkpoint, save_tensor

log = logging.getLogger(__name__)

# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass
class DataConfig:
    train: int = 500
    val: int = 100
    test: int = 100


@dataclass
class TrainConfig:
    epochs: int = 30
    batch: int = 64
    lr: float = 1e-3


@dataclass
class GazeConfig:
    n_fix: int = 20
    p_target: float = 0.6
    pos_jitter: float = 6.0
    duration_shape: float = 2.0
    duration_scale: float = 100.0
    sigma: float = 16.0
    duration_weighted: bool = False
    n_target: int = 2


@dataclass
class SimulateConfig:
    category: str = "Blouse"
    collages: int = 5
    participants: int = 1


@dataclass
class DecodeConfig:
    session: str = ""
    k: str = "2"
    mode: str = "local"
    aggregation: str = "per_fixation"
    sampling: str = "soft"
    samples: int = 10


@dataclass
class EvaluateConfig:
    sessions: int = 500
    trials: int = 500
    collages: int = 5
    name: str = ""


@dataclass
class Config:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    encoder: TrainConfig = field(default_factory=TrainConfig)
    cvae: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50))
    gaze: GazeConfig = field(default_factory=GazeConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def search_params(self):
        g = self.gaze
        return SearchParams(g.n_fix, g.p_target, g.pos_jitter, g.duration_shape, g.duration_scale)

    def validate(self):
        if self.decode.k not in ("1", "2", "3", "all"):
            raise ConfigError(f"must be one of 1, 2, 3, all (got {self.decode.k!r})", "decode.k")
        if self.decode.mode not in ("local", "global"):
            raise ConfigError(f"must be local or global (got {self.decode.mode!r})", "decode.mode")
        if self.decode.aggregation not in ("per_fixation", "joint_fdm"):
            raise ConfigError(f"unknown aggregation {self.decode.aggregation!r}", "decode.aggregation")
        if self.decode.sampling not in ("soft", "mixture"):
            raise ConfigError(f"unknown sampling mode {self.decode.sampling!r}", "decode.sampling")
        if self.decode.samples < 1:
            raise ConfigError("must be >= 1", "decode.samples")
        if self.simulate.category not in CATEGORIES:
            raise ConfigError(f"unknown category {self.simulate.category!r}", "simulate.category")
        for key in ("train", "val", "test"):
            if getattr(self.data, key) < 1:
                raise ConfigError("must be >= 1", f"data.{key}")
        if not 0 <= self.gaze.p_target <= 1:
            raise ConfigError("must be in [0, 1]", "gaze.p_target")
        if not 1 <= self.gaze.n_target <= 16:
            raise ConfigError("must be in [1, 16]", "gaze.n_target")
        if self.gaze.n_fix < 1:
            raise ConfigError("must be >= 1", "gaze.n_fix")
        if self.evaluate.trials < 100:
            raise ConfigError("ablation needs at least 100 paired trials", "evaluate.trials")
        if self.evaluate.collages < 1 or self.simulate.collages < 1:
            raise ConfigError("must be >= 1", "evaluate.collages")
        return self


def _coerce(value, target_type, key):
    try:
        if target_type is bool:
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if target_type is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if target_type is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot interpret {value!r} as {target_type.__name__}", key) from None


def _field_types(cls):
    import typing

    return typing.get_type_hints(cls)


def config_from_dict(doc, base=None):
    """Overlay a (possibly partial) nested dict on ``base``; unknown keys are config errors."""
    cfg = base or Config()
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    for key, value in doc.items():
        set_config_value(cfg, key, value, nested=True)
    return cfg


def set_config_value(cfg, dotted, value, nested=False):
    """Set ``section.key`` (or top-level ``seed``) on ``cfg`` with type coercion."""
    obj = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or part not in _field_types(type(obj)):
            raise ConfigError("unknown config key", dotted)
        obj = getattr(obj, part)
    name = parts[-1]
    types = _field_types(type(obj))
    if name not in types:
        raise ConfigError("unknown config key", dotted)
    current = getattr(obj, name)
    if dataclasses.is_dataclass(current):
        if not (nested and isinstance(value, dict)):
            raise ConfigError("expected an object", dotted)
        for k, v in value.items():
            set_config_value(cfg, f"{dotted}.{k}", v, nested=True)
        return
    setattr(obj, name, _coerce(value, types[name], dotted))


def load_config(path):
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", "--config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "--config") from None
    return config_from_dict(doc)


# --------------------------------------------------------------------------
# Output bookkeeping
# --------------------------------------------------------------------------


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _finish_stage(out, stage_dir, cfg):
    (stage_dir / "config.json").write_text(cfg.to_json())
    update_manifest(out)


def update_manifest(out):
    out = Path(out)
    entries = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "MANIFEST.json":
            entries[path.relative_to(out).as_posix()] = hashlib.sha256(path.read_bytes()).hexdigest()
    _write_json(out / "MANIFEST.json", {"artifacts": entries})


def _require(path, key, what):
    if not Path(path).exists():
        raise ConfigError(f"{what} not found at {path}; run the producing command first", key)
    return Path(path)


def load_models(out):
    out = Path(out)
    enc = _require(out / "models" / "encoder" / "encoder.ckpt", "models.encoder", "encoder checkpoint")
    ora = _require(out / "models" / "encoder" / "oracle.ckpt", "models.oracle", "oracle checkpoint")
    cva = _require(out / "models" / "cvae" / "cvae.ckpt", "models.cvae", "CVAE checkpoint")
    return (
        EncoderModel.from_tensors(load_checkpoint(enc)),
        EncoderModel.from_tensors(load_checkpoint(ora)),
        CVAEModel.from_tensors(load_checkpoint(cva)),
    )


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def run_gen_data(cfg: Config, out):
    out = Path(out)
    data_dir = out / "data"
    counts = {"train": cfg.data.train, "val": cfg.data.val, "test": cfg.data.test}
    manifests = gen_dataset(data_dir, counts, cfg.seed)
    _finish_stage(out, data_dir, cfg)
    return manifests


def _load_data(out, split):
    data_dir = Path(out) / "data"
    _require(data_dir / f"manifest_{split}.json", "data", f"{split} manifest")
    return load_split(data_dir, split)


def run_train_encoder(cfg: Config, out):
    """Train the pipeline encoder and an independently seeded oracle encoder."""
    out = Path(out)
    train, val, test = (_load_data(out, s) for s in ("train", "val", "test"))
    stage = out / "models" / "encoder"
    stage.mkdir(parents=True, exist_ok=True)
    e = cfg.encoder
    reports = {}
    for role in ("encoder", "oracle"):
        seed = derive_seed(cfg.seed, role)
        model, report = train_encoder(train, val, test, e.epochs, e.batch, e.lr, seed, log=log.info)
        save_checkpoint(stage / f"{role}.ckpt", model.to_tensors())
        reports[role] = report
        log.info("%s test accuracy %.4f", role, report["test_accuracy"])
    _write_json(stage / "report.json", reports)
    _finish_stage(out, stage, cfg)
    return reports


def run_train_cvae(cfg: Config, out):
    out = Path(out)
    train = _load_data(out, "train")
    stage = out / "models" / "cvae"
    stage.mkdir(parents=True, exist_ok=True)
    c = cfg.cvae
    model, report = train_cvae(train, c.epochs, c.batch, c.lr, derive_seed(cfg.seed, "cvae"), log=log.info)
    save_checkpoint(stage / "cvae.ckpt", model.to_tensors())
    _write_json(stage / "loss.json", report)
    _finish_stage(out, stage, cfg)
    return report


def simulate_session(cfg: Config, target, n_collages, seed, participant="p00"):
    """Build collages and fixation logs for one simulated participant: list of (Collage, FixationLog)."""
    session = []
    for j in range(n_collages):
        collage = build_collage(target, cfg.gaze.n_target, derive_seed(seed, "collage", j))
        flog = simulate_search(collage, cfg.search_params(), derive_seed(seed, "gaze", j), participant, f"collage_{j:03d}.json")
        session.append((collage, flog))
    return session


def run_simulate(cfg: Config, out):
    out = Path(out)
    if not (out / "data" / "manifest_train.json").exists():
        raise ConfigError("dataset not generated; run gen-data first", "data")
    s = cfg.simulate
    target = category_id(s.category)
    stage = out / "sessions" / s.category
    stage.mkdir(parents=True, exist_ok=True)
    written = []
    for p in range(s.participants):
        pid = f"p{p:02d}"
        pdir = stage / pid
        pdir.mkdir(exist_ok=True)
        session = simulate_session(cfg, target, s.collages, derive_seed(cfg.seed, "simulate", target, p), pid)
        for j, (collage, flog) in enumerate(session):
            _write_json(pdir / f"collage_{j:03d}.json", collage.to_json())
            save_tensor(pdir / f"collage_{j:03d}.tnsr", collage.canvas)
            (pdir / f"collage_{j:03d}.pgm").write_bytes(export_pgm(collage.canvas))
            (pdir / f"log_{j:03d}.jsonl").write_text(flog.to_jsonl())
        written.append(pdir)
    _finish_stage(out, stage, cfg)
    return written


def load_session(path):
    """Read ``(canvas, FixationLog)`` pairs from a session directory written by ``simulate``."""
    path = Path(path)
    logs = sorted(path.glob("log_*.jsonl"))
    if not logs:
        raise EmptyInputError(f"no fixation logs in {path}")
    session = []
    for lp in logs:
        flog = FixationLog.from_jsonl(lp.read_text())
        canvas = load_tensor(path / Path(flog.collage).with_suffix(".tnsr"))
        session.append((canvas, flog))
    return session


def _resolve_session(cfg, out):
    if not cfg.decode.session:
        raise ConfigError("no session given", "decode.session")
    for candidate in (Path(out) / cfg.decode.session, Path(cfg.decode.session)):
        if candidate.is_dir():
            return candidate
    raise ConfigError(f"session directory not found: {cfg.decode.session}", "decode.session")


def decode_session(encoder, cvae, pairs, cfg: Config, seed, mode=None, features=None):
    """Posterior, pruned condition and decoded images for one session."""
    d = cfg.decode
    posterior = encode_session(encoder, pairs, mode or d.mode, d.aggregation, cfg.gaze.sigma, features)
    condition = prune_topk(posterior, d.k)
    images = sample_targets(cvae, condition, d.samples, d.sampling, seed)
    return posterior, condition, images


def run_decode(cfg: Config, out):
    out = Path(out)
    encoder, _, cvae = load_models(out)
    session_dir = _resolve_session(cfg, out)
    pairs = load_session(session_dir)
    seed = derive_seed(cfg.seed, "decode")
    posterior, condition, images = decode_session(encoder, cvae, pairs, cfg, seed)
    name = cfg.evaluate.name or f"{session_dir.parent.name}_{session_dir.name}_k{cfg.decode.k}_{cfg.decode.mode}"
    stage = out / "decode" / name
    stage.mkdir(parents=True, exist_ok=True)
    _write_json(
        stage / "posterior.json",
        {
            "categories": list(CATEGORIES),
            "posterior": [float(v) for v in posterior],
            "condition": [float(v) for v in condition],
            "k": cfg.decode.k,
            "mode": cfg.decode.mode,
        },
    )
    for i, img in enumerate(images):
        (stage / f"sample_{i:03d}.pgm").write_bytes(export_pgm(img.pixels))
        _write_json(stage / f"sample_{i:03d}.json", img.sidecar())
    _finish_stage(out, stage, cfg)
    return posterior, condition, images


# --------------------------------------------------------------------------
# Oracle-scored evaluations
# --------------------------------------------------------------------------


def majority_vote(labels):
    """Most frequent label; ties go to the lowest category id."""
    counts = np.bincount(np.asarray(labels), minlength=N_CATEGORIES)
    return int(np.argmax(counts))


def oracle_vote(oracle, images):
    pixels = np.stack([im.pixels for im in images])
    return majority_vote(classify_images(oracle, pixels).argmax(axis=1))


def chi_square_5050(first, second):
    """Goodness-of-fit of two (possibly fractional) counts against an even split, 1 dof."""
    total = first + second
    expected = total / 2.0
    chi2 = (first - expected) ** 2 / expected + (second - expected) ** 2 / expected
    return float(chi2), float(stats.chi2.sf(chi2, df=1))


def _recognition_block(truth, pred):
    confusion = np.zeros((N_CATEGORIES, N_CATEGORIES), dtype=np.int64)
    for t, p in zip(truth, pred):
        confusion[t, p] += 1
    rows = confusion.sum(axis=1)
    # Categories without sessions report 0 rather than NaN so the JSON stays valid.
    per_cat = {CATEGORIES[c]: float(confusion[c, c] / rows[c]) if rows[c] else 0.0 for c in range(N_CATEGORIES)}
    return {
        "sessions": int(len(truth)),
        "overall_accuracy": float(np.trace(confusion) / max(1, confusion.sum())),
        "per_category_accuracy": per_cat,
        "confusion": confusion.tolist(),
        "categories": list(CATEGORIES),
    }


def _runtime():
    return {"package_version": __version__, "numpy_version": np.__version__, "python_version": platform.python_version()}


def _check_coverage(n):
    if n < N_CATEGORIES:
        raise ConfigError(f"{n} sessions leave some category with zero sessions", "evaluate.sessions")


def evaluate_recognition(encoder, oracle, cvae, cfg: Config):
    """Per session: decode with the configured k, oracle-classify each sample, majority vote."""
    n = cfg.evaluate.sessions
    _check_coverage(n)
    truth, pred = [], []
    for i in range(n):
        target = i % N_CATEGORIES
        seed = derive_seed(cfg.seed, "evaluate", i)
        session = simulate_session(cfg, target, cfg.evaluate.collages, seed)
        pairs = [(c.canvas, flog) for c, flog in session]
        _, _, images = decode_session(encoder, cvae, pairs, cfg, derive_seed(seed, "decode"))
        truth.append(target)
        pred.append(oracle_vote(oracle, images))
        if (i + 1) % 50 == 0:
            log.info("evaluate: %d/%d sessions", i + 1, n)
    return {"kind": "evaluate", "recognition": _recognition_block(truth, pred), "ablation": None, "runtime": _runtime()}


def evaluate_ablation(encoder, oracle, cvae, cfg: Config):
    """
    Paired local-vs-global trials. Each trial decodes the same session in both
    modes with shared latents; the mode whose oracle majority class matches
    the target scores a point, ties split half-half.
    """
    n = cfg.evaluate.trials
    _check_coverage(n)
    local_pts = global_pts = 0.0
    ties = 0
    truth, pred_local, pred_global = [], [], []
    for i in range(n):
        target = i % N_CATEGORIES
        seed = derive_seed(cfg.seed, "ablate", i)
        session = simulate_session(cfg, target, cfg.evaluate.collages, seed)
        pairs = [(c.canvas, flog) for c, flog in session]
        features = [extract_features(encoder, c.canvas) for c, _ in session]
        dseed = derive_seed(seed, "decode")
        _, _, img_l = decode_session(encoder, cvae, pairs, cfg, dseed, "local", features)
        _, _, img_g = decode_session(encoder, cvae, pairs, cfg, dseed, "global", features)
        vl, vg = oracle_vote(oracle, img_l), oracle_vote(oracle, img_g)
        ok_l, ok_g = vl == target, vg == target
        if ok_l == ok_g:
            local_pts += 0.5
            global_pts += 0.5
            ties += 1
        elif ok_l:
            local_pts += 1
        else:
            global_pts += 1
        truth.append(target)
        pred_local.append(vl)
        pred_global.append(vg)
        if (i + 1) % 50 == 0:
            log.info("ablate: %d/%d trials", i + 1, n)
    chi2, p_value = chi_square_5050(local_pts, global_pts)
    ablation = {
        "trials": n,
        "local_wins": local_pts,
        "global_wins": global_pts,
        "ties": ties,
        "local_win_rate": local_pts / n,
        "local_accuracy": float(np.mean(np.array(pred_local) == np.array(truth))),
        "global_accuracy": float(np.mean(np.array(pred_global) == np.array(truth))),
        "chi2": chi2,
        "p_value": p_value,
    }
    return {
        "kind": "ablate",
        "recognition": _recognition_block(truth, pred_local),
        "ablation": ablation,
        "runtime": _runtime(),
    }


def run_evaluate(cfg: Config, out):
    out = Path(out)
    encoder, oracle, cvae = load_models(out)
    report = evaluate_recognition(encoder, oracle, cvae, cfg)
    stage = out / (cfg.evaluate.name or "evaluate")
    stage.mkdir(parents=True, exist_ok=True)
    _write_json(stage / "report.json", report)
    _finish_stage(out, stage, cfg)
    return report


def run_ablate(cfg: Config, out):
    out = Path(out)
    encoder, oracle, cvae = load_models(out)
    report = evaluate_ablation(encoder, oracle, cvae, cfg)
    stage = out / (cfg.evaluate.name or "ablate")
    stage.mkdir(parents=True, exist_ok=True)
    _write_json(stage / "report.json", report)
    _finish_stage(out, stage, cfg)
    return report


_PROB = {"type": "number", "minimum": 0, "maximum": 1}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["kind", "recognition", "ablation", "runtime"],
    "properties": {
        "kind": {"enum": ["evaluate", "ablate"]},
        "recognition": {
            "type": "object",
            "required": ["sessions", "overall_accuracy", "per_category_accuracy", "confusion", "categories"],
            "properties": {
                "sessions": {"type": "integer", "minimum": 1},
                "overall_accuracy": _PROB,
                "per_category_accuracy": {
                    "type": "object",
                    "properties": {name: _PROB for name in CATEGORIES},
                    "required": list(CATEGORIES),
                    "additionalProperties": False,
                },
                "confusion": {
                    "type": "array",
                    "minItems": N_CATEGORIES,
                    "maxItems": N_CATEGORIES,
                    "items": {
                        "type": "array",
                        "minItems": N_CATEGORIES,
                        "maxItems": N_CATEGORIES,
                        "items": {"type": "integer", "minimum": 0},
                    },
                },
                "categories": {"type": "array", "items": {"type": "string"}},
            },
        },
        "ablation": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": [
                        "trials",
                        "local_wins",
                        "global_wins",
                        "ties",
                        "local_win_rate",
                        "local_accuracy",
                        "global_accuracy",
                        "chi2",
                        "p_value",
                    ],
                    "properties": {
                        "trials": {"type": "integer", "minimum": 1},
                        "local_wins": {"type": "number", "minimum": 0},
                        "global_wins": {"type": "number", "minimum": 0},
                        "ties": {"type": "integer", "minimum": 0},
                        "local_win_rate": _PROB,
                        "local_accuracy": _PROB,
                        "global_accuracy": _PROB,
                        "chi2": {"type": "number", "minimum": 0},
                        "p_value": _PROB,
                    },
                },
            ]
        },
        "runtime": {
            "type": "object",
            "required": ["package_version", "numpy_version", "python_version"],
        },
    },
}
