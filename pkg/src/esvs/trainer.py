"""Experiment driver: batching, optimization, the method grid, artifacts.

A run has two phases.  The timing phase fits note-level time-lag/duration
models on slot rows (concatenated across parts under the configured padding,
or per part in isolation for the baseline).  The acoustic phase fits per-part
model bundles on teacher-forced frame expansions (summed across parts for the
multi-track methods) with the cross-part difference losses weighted per
method.  Both phases share one Adam implementation with global-norm gradient
clipping, a skip counter for non-finite gradients, and early stopping on a
held-out validation split.

Methods:

    baseline    part-isolated inputs, difference weights (0, 0)
    mt          multi-track inputs,  difference weights (0, 0)
    mt_f0diff   multi-track inputs,  difference weights (1, 0)
    mt_powdiff  multi-track inputs,  difference weights (0, 1)
    mt_full     multi-track inputs,  difference weights (1, 1)

Everything is deterministic given (config, seed): corpora, batch order,
training crops, and therefore checkpoints, loss curves, and metrics.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__, kernels
from .evaluator import (
    MetricsReport,
    lf0_diff_rmse,
    mcd,
    pow_diff_rmse,
    timing_rmse,
    vuv_error_rate,
)
from .features import (
    SyntheticCorpusConfig,
    SyntheticSong,
    corpus_config_from_dict,
    generate_corpus,
    voiced_mask,
)
from .losses import LossWeights, acoustic_mae, pairwise_diff_losses
from .models import (
    AcousticModelBundle,
    ModelSpec,
    Regressor,
    acoustic_backward,
    acoustic_forward,
    predict_timing,
    predict_timing_isolated,
    save_bundle,
    save_checkpoint,
)
from .preprocess import (
    FrameLevelFeatures,
    expand_to_frames,
    merge_parts_framewise,
    post_pad,
    segment_synchronized,
    time_aligned_pad,
)
from .score import FEATURE_DIM, encode_part

__all__ = [
    "OptimizerConfig",
    "Adam",
    "build_batches",
    "ExperimentConfig",
    "experiment_config_from_dict",
    "load_experiment_config",
    "METHODS",
    "PADDINGS",
    "prepare_samples",
    "SegmentSample",
    "split_corpus",
    "train_timing",
    "train_acoustic",
    "evaluate",
    "run_experiment",
]

logger = logging.getLogger(__name__)

METHODS = {
    "baseline": {"joint": False, "w_f0diff": 0.0, "w_powdiff": 0.0},
    "mt": {"joint": True, "w_f0diff": 0.0, "w_powdiff": 0.0},
    "mt_f0diff": {"joint": True, "w_f0diff": 1.0, "w_powdiff": 0.0},
    "mt_powdiff": {"joint": True, "w_f0diff": 0.0, "w_powdiff": 1.0},
    "mt_full": {"joint": True, "w_f0diff": 1.0, "w_powdiff": 1.0},
}

PADDINGS = ("baseline_isolated", "post_pad", "time_aligned")


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerConfig:
    alpha: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0


class Adam:
    """Adam with bias correction over named parameter vectors (in place)."""

    def __init__(self, params: dict[str, np.ndarray], cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.skipped = 0

    def step(self, grads: dict[str, np.ndarray]) -> bool:
        """Apply one update; returns False (and counts) on non-finite grads."""
        sq = 0.0
        for k in self.params:
            g = grads[k]
            if not np.all(np.isfinite(g)):
                self.skipped += 1
                return False
            sq += float(np.sum(g * g))
        norm = np.sqrt(sq)
        scale = self.cfg.clip_norm / norm if norm > self.cfg.clip_norm else 1.0
        self.t += 1
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        for k, theta in self.params.items():
            g = grads[k] * scale
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            m_hat = self.m[k] / (1.0 - b1 ** self.t)
            v_hat = self.v[k] / (1.0 - b2 ** self.t)
            theta -= self.cfg.alpha * m_hat / (np.sqrt(v_hat) + self.cfg.eps)
        return True


def build_batches(num_items: int, batch_size: int,
                  rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle indices and chunk them; a short final batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = rng.permutation(num_items)
    return [perm[i:i + batch_size] for i in range(0, num_items, batch_size)]


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    method: str = "mt_full"
    padding: str = "time_aligned"
    seed: int = 0
    pairing_mode: str = "all_pairs"  # or "lead_random" for N > 2 parts
    timing_steps: int = 1200
    acoustic_steps: int = 2200
    batch_size: int = 4
    crop_frames: int = 384
    eval_every: int = 50
    patience: int = 10
    log_every: int = 1
    timing_hidden: tuple[int, ...] = (32, 16)
    acoustic_hidden: tuple[int, ...] = (48, 24)
    recurrent_dim: int = 0
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    corpus: SyntheticCorpusConfig = field(default_factory=SyntheticCorpusConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    weights_override: dict | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}', expected one of "
                             f"{sorted(METHODS)}")
        if self.padding not in PADDINGS:
            raise ValueError(f"unknown padding '{self.padding}', expected one of "
                             f"{list(PADDINGS)}")

    @property
    def joint_acoustic(self) -> bool:
        return METHODS[self.method]["joint"]

    @property
    def joint_timing(self) -> bool:
        return METHODS[self.method]["joint"] and self.padding != "baseline_isolated"

    @property
    def weights(self) -> LossWeights:
        preset = METHODS[self.method]
        w = LossWeights(f0diff=preset["w_f0diff"], powdiff=preset["w_powdiff"])
        if self.weights_override:
            w = LossWeights(
                f0diff=float(self.weights_override.get("f0diff", w.f0diff)),
                powdiff=float(self.weights_override.get("powdiff", w.powdiff)))
        return w


def experiment_config_from_dict(d: dict) -> ExperimentConfig:
    """Rebuild a config from a manifest mapping (lists become tuples)."""
    doc = dict(d)
    corpus = doc.pop("corpus", None)
    optimizer = doc.pop("optimizer", None)
    weights = doc.pop("weights_override", None)
    cfg = ExperimentConfig()
    for key, value in doc.items():
        if not hasattr(cfg, key):
            raise ValueError(f"unknown experiment config key '{key}'")
        if isinstance(getattr(cfg, key), tuple):
            value = tuple(value)
        setattr(cfg, key, value)
    if corpus is not None:
        cfg.corpus = corpus_config_from_dict(corpus)
    if optimizer is not None:
        opt = OptimizerConfig()
        for key, value in optimizer.items():
            if not hasattr(opt, key):
                raise ValueError(f"unknown optimizer config key '{key}'")
            setattr(opt, key, float(value))
        cfg.optimizer = opt
    if weights is not None:
        cfg.weights_override = {k: float(v) for k, v in weights.items()}
    cfg.__post_init__()
    return cfg


def load_experiment_config(path) -> ExperimentConfig:
    """Read a TOML experiment file.  Unknown keys are errors."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    if "weights" in doc:
        doc["weights_override"] = doc.pop("weights")
    return experiment_config_from_dict(doc)


# ---------------------------------------------------------------------------
# Sample preparation
# ---------------------------------------------------------------------------

@dataclass
class SegmentSample:
    """Everything both training phases need for one synchronized segment."""

    num_frames: int
    parts: tuple[str, ...]
    note_features: dict    # part -> (n, FEATURE_DIM)
    onsets: dict           # part -> (n,) ticks
    lags: dict             # part -> (n,) float frames
    durs: dict             # part -> (n,) float frames
    targets: dict          # part -> {"lf0","mgc","bap","vuv"}
    voiced: dict           # part -> bool mask
    frames_own: dict       # part -> (T, D') expanded own features
    frames_joint: np.ndarray  # (T, D') merged across parts
    pair: object | None    # PaddedScorePair under the configured padding


def _build_pair(sample_parts, note_features, onsets, padding: str):
    a, b = sample_parts
    if padding == "time_aligned":
        return time_aligned_pad(note_features[a], onsets[a],
                                note_features[b], onsets[b])
    if padding == "post_pad":
        return post_pad(note_features[a], note_features[b])
    return None


def prepare_samples(songs: list[SyntheticSong], padding: str) -> list[SegmentSample]:
    """Slice songs into per-segment training samples (teacher-forced frames)."""
    samples = []
    for song in songs:
        parts = tuple(song.score.part_names)
        enc = {p: encode_part(song.score, p).features for p in parts}
        segs = segment_synchronized(song.score)
        frame_cursor = {p: 0 for p in parts}
        for seg in segs:
            note_features, onsets, lags, durs = {}, {}, {}, {}
            targets, voiced, frames_own = {}, {}, {}
            t_seg = None
            for p in parts:
                lo, hi = seg.note_ranges[p]
                rows = enc[p][lo:hi]
                d = song.timing[p].durations[lo:hi]
                t_p = int(np.sum(d))
                if t_seg is None:
                    t_seg = t_p
                elif t_p != t_seg:
                    raise ValueError(f"segment frame counts differ across parts: "
                                     f"{t_seg} vs {t_p}")
                note_features[p] = rows
                onsets[p] = np.array([n.onset_ticks
                                      for n in song.score.parts[p][lo:hi]])
                lags[p] = song.timing[p].lags[lo:hi].astype(np.float64)
                durs[p] = d.astype(np.float64)
                f_lo = frame_cursor[p]
                f_hi = f_lo + t_p
                frame_cursor[p] = f_hi
                acoustic = song.acoustic[p]
                targets[p] = {"lf0": acoustic.lf0[f_lo:f_hi],
                              "mgc": acoustic.mgc[f_lo:f_hi],
                              "bap": acoustic.bap[f_lo:f_hi],
                              "vuv": acoustic.vuv[f_lo:f_hi]}
                voiced[p] = voiced_mask(targets[p]["vuv"])
                frames_own[p] = expand_to_frames(rows, d, None, part=p).frames
            merged = merge_parts_framewise(
                _fl(frames_own[parts[0]], parts[0]),
                _fl(frames_own[parts[1]], parts[1])).frames
            samples.append(SegmentSample(
                num_frames=t_seg, parts=parts, note_features=note_features,
                onsets=onsets, lags=lags, durs=durs, targets=targets,
                voiced=voiced, frames_own=frames_own, frames_joint=merged,
                pair=_build_pair(parts, note_features, onsets, padding)))
        for p in parts:
            if frame_cursor[p] != song.acoustic[p].num_frames:
                raise ValueError(f"part '{p}': timing covers {frame_cursor[p]} "
                                 f"frames but features have "
                                 f"{song.acoustic[p].num_frames}")
    return samples


def _fl(frames: np.ndarray, part: str) -> FrameLevelFeatures:
    return FrameLevelFeatures(part=part, frames=frames)


def split_corpus(songs: list, val_fraction: float, test_fraction: float):
    """Deterministic tail split: train | val | test by song index."""
    n = len(songs)
    n_test = max(1, int(round(n * test_fraction)))
    n_val = max(1, int(round(n * val_fraction)))
    if n_test + n_val >= n:
        raise ValueError(f"{n} songs cannot fit val+test of {n_val}+{n_test}")
    return (songs[:n - n_val - n_test],
            songs[n - n_val - n_test:n - n_test],
            songs[n - n_test:])


# ---------------------------------------------------------------------------
# Timing phase
# ---------------------------------------------------------------------------

def _timing_stats(samples: list[SegmentSample]):
    durs = np.concatenate([s.durs[p] for s in samples for p in s.parts])
    lags = np.concatenate([s.lags[p] for s in samples for p in s.parts])
    return (max(float(np.std(lags)), 1.0),
            float(np.mean(durs)),
            max(float(np.std(durs)), 1.0))


def _timing_sample_loss(model, x, targets, masks, scales):
    """Normalized MSE over valid slots; returns (l_lag, l_dur, dY, cache)."""
    y, cache = model.forward(x)
    dy = np.zeros_like(y)
    l_lag = l_dur = 0.0
    n_lag = n_dur = 0
    for (c_lag, c_dur), mask, tgt in zip(((0, 1), (2, 3)), masks, targets):
        if y.shape[1] == 2:
            c_lag, c_dur = 0, 1
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            continue
        e_lag = (y[idx, c_lag] - tgt[0][idx]) / scales[0]
        e_dur = (y[idx, c_dur] - tgt[1][idx]) / scales[1]
        l_lag += float(np.sum(e_lag ** 2))
        l_dur += float(np.sum(e_dur ** 2))
        n_lag += idx.size
        n_dur += idx.size
        dy[idx, c_lag] += 2.0 * e_lag / scales[0]
        dy[idx, c_dur] += 2.0 * e_dur / scales[1]
    n_lag = max(n_lag, 1)
    dy /= n_lag
    return l_lag / n_lag, l_dur / max(n_dur, 1), dy, cache


def _timing_batch(models: dict, samples, batch_idx, joint: bool, scales):
    """Loss and gradients over one batch; grads averaged per segment."""
    losses = np.zeros(2)
    grads = {k: np.zeros_like(m.theta) for k, m in models.items()}
    for i in batch_idx:
        s = samples[int(i)]
        if joint:
            pair = s.pair
            x = np.concatenate([pair.features_a, pair.features_b], axis=1)
            masks, targets = [], []
            for part, pad, slots in ((s.parts[0], pair.pad_a, pair.slots_a),
                                     (s.parts[1], pair.pad_b, pair.slots_b)):
                mask = ~pad
                lag_t = np.zeros(pair.length)
                dur_t = np.zeros(pair.length)
                lag_t[mask] = s.lags[part][slots[mask]]
                dur_t[mask] = s.durs[part][slots[mask]]
                masks.append(mask)
                targets.append((lag_t, dur_t))
            l_lag, l_dur, dy, cache = _timing_sample_loss(
                models["timing"], x, targets, masks, scales)
            g, _ = models["timing"].backward(cache, dy)
            grads["timing"] += g
            losses += (l_lag, l_dur)
        else:
            for part in s.parts:
                x = s.note_features[part]
                mask = np.ones(x.shape[0], dtype=bool)
                l_lag, l_dur, dy, cache = _timing_sample_loss(
                    models[part], x, [(s.lags[part], s.durs[part])],
                    [mask], scales)
                g, _ = models[part].backward(cache, dy)
                grads[part] += g
                losses += (l_lag / len(s.parts), l_dur / len(s.parts))
    n = max(len(batch_idx), 1)
    for k in grads:
        grads[k] /= n
    return losses / n, grads


def _timing_sample_loss_only(models, samples, joint, scales):
    total = np.zeros(2)
    for i in range(len(samples)):
        batch_losses, _ = _timing_batch(models, samples, [i], joint, scales)
        total += batch_losses
    return total / max(len(samples), 1)


def train_timing(cfg: ExperimentConfig, train_samples, val_samples):
    """Fit the timing model(s); returns (models dict, csv rows, info)."""
    joint = cfg.joint_timing
    lag_scale, dur_mean, dur_std = _timing_stats(train_samples)
    scales = (lag_scale, dur_std)
    if joint:
        spec = ModelSpec(in_dim=2 * FEATURE_DIM, hidden=cfg.timing_hidden,
                         out_dim=4, seed=cfg.seed * 16 + 5,
                         out_offset=(0.0, dur_mean, 0.0, dur_mean),
                         out_scale=(lag_scale, dur_std, lag_scale, dur_std))
        models = {"timing": Regressor(spec)}
    else:
        parts = train_samples[0].parts
        models = {
            part: Regressor(ModelSpec(
                in_dim=FEATURE_DIM, hidden=cfg.timing_hidden, out_dim=2,
                seed=cfg.seed * 16 + 6 + k,
                out_offset=(0.0, dur_mean), out_scale=(lag_scale, dur_std)))
            for k, part in enumerate(parts)}
    opt = Adam({k: m.theta for k, m in models.items()}, cfg.optimizer)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))

    rows = []
    best_val = np.inf
    best_theta = {k: m.theta.copy() for k, m in models.items()}
    bad_evals = 0
    step = 0
    while step < cfg.timing_steps:
        for batch in build_batches(len(train_samples), cfg.batch_size, rng):
            if step >= cfg.timing_steps:
                break
            losses, grads = _timing_batch(models, train_samples, batch,
                                          joint, scales)
            opt.step(grads)
            step += 1
            if step % cfg.log_every == 0:
                rows.append((step, losses[0], losses[1], losses[0] + losses[1]))
            if step % cfg.eval_every == 0:
                val = _timing_sample_loss_only(models, val_samples, joint, scales)
                val_total = float(val[0] + val[1])
                if val_total < best_val - 1e-12:
                    best_val = val_total
                    best_theta = {k: m.theta.copy() for k, m in models.items()}
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= cfg.patience:
                        logger.info("timing: early stop at step %d", step)
                        step = cfg.timing_steps
                        break
    for k, m in models.items():
        m.theta[:] = best_theta[k]
    info = {"steps_run": step, "skipped_nonfinite": opt.skipped,
            "best_val_loss": best_val if np.isfinite(best_val) else None,
            "scales": {"lag": lag_scale, "dur_mean": dur_mean, "dur_std": dur_std}}
    return models, rows, info


# ---------------------------------------------------------------------------
# Acoustic phase
# ---------------------------------------------------------------------------

def _acoustic_stats(samples: list[SegmentSample]):
    lf0 = np.concatenate([s.targets[p]["lf0"] for s in samples for p in s.parts])
    mgc = np.concatenate([s.targets[p]["mgc"] for s in samples for p in s.parts])
    bap = np.concatenate([s.targets[p]["bap"] for s in samples for p in s.parts])
    floor = 0.05
    offsets = {
        "lf0": float(np.mean(lf0)),
        "mgc": tuple(float(v) for v in np.mean(mgc, axis=0)),
        "bap": tuple(float(v) for v in np.mean(bap, axis=0)),
    }
    scales = {
        "lf0": max(float(np.std(lf0)), floor),
        "mgc": tuple(max(float(v), floor) for v in np.std(mgc, axis=0)),
        "bap": tuple(max(float(v), floor) for v in np.std(bap, axis=0)),
    }
    return offsets, scales


def _crop(sample: SegmentSample, joint: bool, crop: int,
          rng: np.random.Generator):
    t = sample.num_frames
    lo = 0 if t <= crop else int(rng.integers(0, t - crop + 1))
    hi = min(t, lo + crop)
    frames = {}
    for p in sample.parts:
        frames[p] = (sample.frames_joint if joint
                     else sample.frames_own[p])[lo:hi]
    targets = {p: {k: v[lo:hi] for k, v in sample.targets[p].items()}
               for p in sample.parts}
    voiced = {p: sample.voiced[p][lo:hi] for p in sample.parts}
    return frames, targets, voiced


def _acoustic_sample_pass(bundles, frames, targets, voiced, weights,
                          pairing_mode, rng, backward: bool):
    """One segment (or crop): losses and, optionally, parameter grads."""
    parts = list(bundles.keys())
    preds, caches = {}, {}
    for p in parts:
        preds[p], caches[p] = acoustic_forward(bundles[p], frames[p])
    n_parts = len(parts)
    terms = {"l_f0": 0.0, "l_mgc": 0.0, "l_bap": 0.0, "l_vuv": 0.0}
    dpreds = {p: {} for p in parts}
    for p in parts:
        for stream, key in (("lf0", "l_f0"), ("mgc", "l_mgc"),
                            ("bap", "l_bap"), ("vuv", "l_vuv")):
            value, grad = acoustic_mae(preds[p][stream], targets[p][stream])
            terms[key] += value / n_parts
            dpreds[p][stream] = grad / n_parts
    diff_preds = {p: {"lf0": preds[p]["lf0"], "mgc": preds[p]["mgc"]}
                  for p in parts}
    diff_truths = {p: {"lf0": targets[p]["lf0"], "mgc": targets[p]["mgc"]}
                   for p in parts}
    l_f0diff, l_powdiff, diff_grads = pairwise_diff_losses(
        diff_preds, diff_truths, voiced, mode=pairing_mode, rng=rng)
    terms["l_f0diff"] = l_f0diff
    terms["l_powdiff"] = l_powdiff
    terms["total"] = (terms["l_f0"] + terms["l_mgc"] + terms["l_bap"]
                      + terms["l_vuv"] + weights.f0diff * l_f0diff
                      + weights.powdiff * l_powdiff)
    if not backward:
        return terms, None
    grads = {}
    for p in parts:
        dpreds[p]["lf0"] = dpreds[p]["lf0"] + weights.f0diff * diff_grads[p]["lf0"]
        dpreds[p]["mgc"] = dpreds[p]["mgc"] + weights.powdiff * diff_grads[p]["mgc"]
        for name, g in acoustic_backward(bundles[p], caches[p], dpreds[p]).items():
            grads[f"{p}.{name}"] = g
    return terms, grads


def _acoustic_val_loss(bundles, samples, joint, weights, pairing_mode):
    total = 0.0
    for s in samples:
        frames = {p: (s.frames_joint if joint else s.frames_own[p])
                  for p in s.parts}
        terms, _ = _acoustic_sample_pass(bundles, frames, s.targets, s.voiced,
                                         weights, pairing_mode, None, False)
        total += terms["total"]
    return total / max(len(samples), 1)


def train_acoustic(cfg: ExperimentConfig, train_samples, val_samples):
    """Fit per-part acoustic bundles; returns (bundles, csv rows, info)."""
    joint = cfg.joint_acoustic
    parts = train_samples[0].parts
    offsets, scales = _acoustic_stats(train_samples)
    in_dim = train_samples[0].frames_joint.shape[1]
    bundles = {p: AcousticModelBundle.build(
        in_dim=in_dim, hidden=cfg.acoustic_hidden,
        recurrent_dim=cfg.recurrent_dim, seed=cfg.seed * 8 + k,
        offsets=offsets, scales=scales) for k, p in enumerate(parts)}
    params = {f"{p}.{name}": m.theta
              for p in parts for name, m in bundles[p].models().items()}
    opt = Adam(params, cfg.optimizer)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 13]))
    weights = cfg.weights

    rows = []
    best_val = np.inf
    best_theta = {k: v.copy() for k, v in params.items()}
    bad_evals = 0
    step = 0
    if cfg.pairing_mode == "lead_random":
        diff_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 17]))
    else:
        diff_rng = None
    # Without a recurrent layer the models are frame-independent, so a batch
    # of crops can run as one concatenated pass (losses become pooled means).
    concat_batch = cfg.recurrent_dim == 0
    while step < cfg.acoustic_steps:
        for batch in build_batches(len(train_samples), cfg.batch_size, rng):
            if step >= cfg.acoustic_steps:
                break
            if concat_batch:
                crops = [_crop(train_samples[int(i)], joint, cfg.crop_frames, rng)
                         for i in batch]
                frames = {p: np.concatenate([c[0][p] for c in crops])
                          for p in parts}
                targets = {p: {k: np.concatenate([c[1][p][k] for c in crops])
                               for k in ("lf0", "mgc", "bap", "vuv")}
                           for p in parts}
                voiced = {p: np.concatenate([c[2][p] for c in crops])
                          for p in parts}
                acc, grads = _acoustic_sample_pass(
                    bundles, frames, targets, voiced, weights,
                    cfg.pairing_mode, diff_rng, True)
            else:
                acc = {"l_f0": 0.0, "l_mgc": 0.0, "l_f0diff": 0.0,
                       "l_powdiff": 0.0, "total": 0.0, "l_bap": 0.0,
                       "l_vuv": 0.0}
                grads = {k: np.zeros_like(v) for k, v in params.items()}
                for i in batch:
                    s = train_samples[int(i)]
                    frames, targets, voiced = _crop(s, joint, cfg.crop_frames, rng)
                    terms, g = _acoustic_sample_pass(
                        bundles, frames, targets, voiced, weights,
                        cfg.pairing_mode, diff_rng, True)
                    for key in acc:
                        acc[key] += terms[key] / len(batch)
                    for k in grads:
                        grads[k] += g[k] / len(batch)
            opt.step(grads)
            step += 1
            if step % cfg.log_every == 0:
                rows.append((step, acc["l_f0"], acc["l_mgc"], acc["l_f0diff"],
                             acc["l_powdiff"], acc["total"]))
            if step % cfg.eval_every == 0:
                val = _acoustic_val_loss(bundles, val_samples, joint, weights,
                                         cfg.pairing_mode)
                if val < best_val - 1e-12:
                    best_val = val
                    best_theta = {k: v.copy() for k, v in params.items()}
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= cfg.patience:
                        logger.info("acoustic: early stop at step %d", step)
                        step = cfg.acoustic_steps
                        break
    for k, v in params.items():
        v[:] = best_theta[k]
    info = {"steps_run": step, "skipped_nonfinite": opt.skipped,
            "best_val_loss": best_val if np.isfinite(best_val) else None,
            "offsets": {"lf0": offsets["lf0"]}, "in_dim": in_dim}
    return bundles, rows, info


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(cfg: ExperimentConfig, timing_models, bundles, test_samples) -> MetricsReport:
    """Pooled metrics on held-out segments (teacher-forced acoustic inputs)."""
    lag_pred, lag_true, dur_pred, dur_true = [], [], [], []
    acoustic = {p: {"lf0": [], "mgc": [], "bap": [], "vuv": []}
                for p in test_samples[0].parts}
    truth = {p: {"lf0": [], "mgc": [], "vuv": []} for p in test_samples[0].parts}
    joint_t = cfg.joint_timing
    joint_a = cfg.joint_acoustic
    for s in test_samples:
        if timing_models is not None:
            if joint_t:
                (la, da), (lb, db) = predict_timing(s.pair, timing_models["timing"])
                for part, lags, durs in ((s.parts[0], la, da), (s.parts[1], lb, db)):
                    lag_pred.append(lags)
                    lag_true.append(s.lags[part])
                    dur_pred.append(durs)
                    dur_true.append(s.durs[part])
            else:
                for part in s.parts:
                    lags, durs = predict_timing_isolated(
                        s.note_features[part], timing_models[part])
                    lag_pred.append(lags)
                    lag_true.append(s.lags[part])
                    dur_pred.append(durs)
                    dur_true.append(s.durs[part])
        if bundles is not None:
            for p in s.parts:
                frames = s.frames_joint if joint_a else s.frames_own[p]
                preds = {k: v for k, v in
                         zip(("lf0", "mgc", "bap", "vuv"),
                             _predict_streams(bundles[p], frames))}
                for k in acoustic[p]:
                    acoustic[p][k].append(preds[k])
                truth[p]["lf0"].append(s.targets[p]["lf0"])
                truth[p]["mgc"].append(s.targets[p]["mgc"])
                truth[p]["vuv"].append(s.targets[p]["vuv"])

    timelag_rmse = timing_rmse(np.concatenate(lag_pred), np.concatenate(lag_true)) \
        if lag_pred else 0.0
    duration_rmse = timing_rmse(np.concatenate(dur_pred), np.concatenate(dur_true)) \
        if dur_pred else 0.0

    if bundles is None:
        return MetricsReport(
            mcd_db=0.0, lf0_rmse=0.0, lf0diff_rmse=0.0, powdiff_rmse=0.0,
            timelag_rmse_frames=timelag_rmse, duration_rmse_frames=duration_rmse,
            vuv_error_rate=0.0, frames_total=0, frames_voiced_pair=0,
            notes_total=sum(len(x) for x in lag_true))

    parts = test_samples[0].parts
    cat = {p: {k: np.concatenate(v) if np.asarray(v[0]).ndim == 1
               else np.vstack(v) for k, v in acoustic[p].items()} for p in parts}
    cat_truth = {p: {k: np.concatenate(v) if np.asarray(v[0]).ndim == 1
                     else np.vstack(v) for k, v in truth[p].items()} for p in parts}
    pooled_err_sq = 0.0
    pooled_n = 0
    mcd_vals = []
    vuv_preds, vuv_truths = [], []
    for p in parts:
        t_voiced = voiced_mask(cat_truth[p]["vuv"])
        p_voiced = voiced_mask(cat[p]["vuv"])
        both = t_voiced & p_voiced
        err = (cat[p]["lf0"] - cat_truth[p]["lf0"])[both]
        pooled_err_sq += float(np.sum(err * err))
        pooled_n += int(err.size)
        mcd_vals.append(mcd(cat[p]["mgc"], cat_truth[p]["mgc"], mask=t_voiced))
        vuv_preds.append(cat[p]["vuv"])
        vuv_truths.append(cat_truth[p]["vuv"])
    a, b = parts
    va = voiced_mask(cat_truth[a]["vuv"])
    vb = voiced_mask(cat_truth[b]["vuv"])
    report = MetricsReport(
        mcd_db=float(np.mean(mcd_vals)),
        lf0_rmse=float(np.sqrt(pooled_err_sq / max(pooled_n, 1))),
        lf0diff_rmse=lf0_diff_rmse(cat[a]["lf0"], cat[b]["lf0"],
                                   cat_truth[a]["lf0"], cat_truth[b]["lf0"], va, vb),
        powdiff_rmse=pow_diff_rmse(cat[a]["mgc"], cat[b]["mgc"],
                                   cat_truth[a]["mgc"], cat_truth[b]["mgc"], va, vb),
        timelag_rmse_frames=timelag_rmse,
        duration_rmse_frames=duration_rmse,
        vuv_error_rate=vuv_error_rate(np.concatenate(vuv_preds),
                                      np.concatenate(vuv_truths)),
        frames_total=int(sum(cat[p]["lf0"].shape[0] for p in parts)),
        frames_voiced_pair=int(np.sum(va & vb)),
        notes_total=sum(len(x) for x in lag_true))
    return report


def _predict_streams(bundle, frames):
    preds, _ = acoustic_forward(bundle, frames)
    return preds["lf0"], preds["mgc"], preds["bap"], preds["vuv"]


# ---------------------------------------------------------------------------
# Run orchestration
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [f"{v:.8f}" for v in row[1:]])


def _atomic_write_json(path, payload: dict) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                   encoding="utf-8")
    os.replace(tmp, path)


def run_experiment(cfg: ExperimentConfig, out_dir,
                   songs: list[SyntheticSong] | None = None,
                   timing_only: bool = False) -> dict:
    """Full run: corpus -> train -> evaluate -> artifacts on disk.

    ``songs`` lets callers reuse one corpus across methods (paired
    comparisons); by default the corpus is generated from cfg.corpus.
    ``timing_only`` skips the acoustic phase (padding comparisons).
    """
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if songs is None:
        songs = generate_corpus(cfg.corpus)
    train_songs, val_songs, test_songs = split_corpus(
        songs, cfg.val_fraction, cfg.test_fraction)
    padding = cfg.padding if cfg.padding != "baseline_isolated" else "post_pad"
    train_s = prepare_samples(train_songs, padding)
    val_s = prepare_samples(val_songs, padding)
    test_s = prepare_samples(test_songs, padding)

    outputs = []
    timing_models, timing_rows, timing_info = train_timing(cfg, train_s, val_s)
    _write_csv(out / "loss_curve_timing.csv",
               ["step", "l_lag", "l_dur", "total"], timing_rows)
    outputs.append("loss_curve_timing.csv")
    for name, model in timing_models.items():
        fn = f"timing_{name}.ckpt" if name != "timing" else "timing.ckpt"
        save_checkpoint(model, out / fn, step=timing_info["steps_run"],
                        meta={"phase": "timing", "method": cfg.method,
                              "padding": cfg.padding})
        outputs.append(fn)

    bundles = None
    acoustic_info = {}
    if not timing_only:
        bundles, acoustic_rows, acoustic_info = train_acoustic(cfg, train_s, val_s)
        _write_csv(out / "loss_curve_acoustic.csv",
                   ["step", "l_f0", "l_mgc", "l_f0diff", "l_powdiff", "total"],
                   acoustic_rows)
        outputs.append("loss_curve_acoustic.csv")
        for p, bundle in bundles.items():
            save_bundle(bundle, out / f"acoustic_{p}",
                        step=acoustic_info["steps_run"],
                        meta={"phase": "acoustic", "part": p, "method": cfg.method})
            outputs.append(f"acoustic_{p}/")

    report = evaluate(cfg, timing_models, bundles, test_s)
    report.save(out / "metrics.json")
    outputs.append("metrics.json")

    manifest = {
        "schema_version": 1,
        "kind": "run_manifest",
        "esvs_version": __version__,
        "backend": kernels.backend_name(),
        "created_unix": time.time(),
        "elapsed_sec": time.time() - t0,
        "config": asdict(cfg),
        "songs": {"train": len(train_songs), "val": len(val_songs),
                  "test": len(test_songs)},
        "timing": timing_info,
        "acoustic": acoustic_info,
        "outputs": outputs,
    }
    _atomic_write_json(out / "run_manifest.json", manifest)
    return {"report": report, "manifest": manifest,
            "timing_models": timing_models, "bundles": bundles}
