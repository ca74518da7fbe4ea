"""Waveform rendering: toy harmonic vocoder, part synthesis, ensemble mix.

The vocoder is deliberately simple — a phase-continuous harmonic stack driven
by the predicted fundamental, with amplitude taken from the predicted power
coefficient and a noise floor scaled by the predicted aperiodicity.  It
exists so the pipeline produces audible, inspectable output; it makes no
attempt at natural voice quality (the spectral tail of ``mgc`` is ignored).

Mixing follows the convention that the lead part stays at unit power and
every other part is scaled to two thirds of the lead's power before summing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from . import kernels
from .features import AcousticFeatureSeq, FRAME_SHIFT_MS, voiced_mask
from .models import (
    AcousticModelBundle,
    predict_acoustic,
    predict_timing,
    predict_timing_isolated,
    quantize_timing,
)
from .preprocess import (
    FrameLevelFeatures,
    expand_to_frames,
    merge_parts_framewise,
    post_pad,
    ticks_to_frames,
    time_aligned_pad,
)
from .score import Score, encode_part

__all__ = [
    "DEFAULT_SAMPLE_RATE",
    "HARMONIC_ROLLOFF",
    "NOISE_GAIN",
    "reconcile_timing",
    "render_waveform",
    "SynthesisResult",
    "synthesize_score",
    "mix_ensemble",
    "matched_power_gains",
    "write_wav",
]

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 16_000
SUPPORTED_SAMPLE_RATES = (16_000, 48_000)
HARMONIC_ROLLOFF = 0.75
NOISE_GAIN = 0.05
ENSEMBLE_POWER_RATIO = 2.0 / 3.0
PEAK_LIMIT = 0.99

# exp() guards: keep the vocoder finite even for wild early-training outputs
_LF0_MIN, _LF0_MAX = np.log(40.0), np.log(2000.0)
_LOG_AMP_MIN, _LOG_AMP_MAX = -12.0, 2.0


def _frames_per_second() -> float:
    return 1000.0 / FRAME_SHIFT_MS


def reconcile_timing(onset_ticks: np.ndarray, pred_lags: np.ndarray,
                     pred_durs: np.ndarray, ticks_per_second: float):
    """Turn predicted per-note lags/durations into a realized frame timeline.

    Each note's nominal onset frame comes from its score position; the
    predicted lag shifts it.  Onsets are then forced strictly monotone
    (each note keeps at least one frame), and realized durations are the
    differences between consecutive onsets — the predicted duration is only
    needed for the final note, which has no successor.  Returns
    (onset_frames, realized_durations) as int64 arrays.
    """
    onset_ticks = np.asarray(onset_ticks, dtype=np.float64)
    n = onset_ticks.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    lags_q, durs_q = quantize_timing(np.asarray(pred_lags, dtype=np.float64),
                                     np.asarray(pred_durs, dtype=np.float64))
    if lags_q.shape[0] != n or durs_q.shape[0] != n:
        raise ValueError(f"expected {n} lags and durations, got "
                         f"{lags_q.shape[0]} and {durs_q.shape[0]}")
    nominal = np.array([ticks_to_frames(t, ticks_per_second)
                        for t in onset_ticks], dtype=np.int64)
    onsets = nominal + lags_q
    onsets[0] = max(int(onsets[0]), 0)
    for k in range(1, n):
        onsets[k] = max(int(onsets[k]), int(onsets[k - 1]) + 1)
    durations = np.empty(n, dtype=np.int64)
    durations[:-1] = np.diff(onsets)
    durations[-1] = max(int(durs_q[-1]), 1)
    return onsets, durations


def render_waveform(features: AcousticFeatureSeq,
                    sample_rate: int = DEFAULT_SAMPLE_RATE,
                    rolloff: float = HARMONIC_ROLLOFF,
                    noise_gain: float = NOISE_GAIN,
                    noise_seed: int = 2026) -> np.ndarray:
    """Render one part's feature streams to a float waveform in [-1, 1]-ish.

    Voiced frames drive the harmonic stack (fundamental ``exp(lf0)``,
    amplitude ``exp(mgc[:, 0])``); every frame also receives Gaussian noise
    scaled by ``exp(mean(bap))``, which is tiny when the aperiodicity is low.
    The sample rate must divide evenly into whole samples per frame.
    """
    fps = _frames_per_second()
    if sample_rate % int(fps) != 0:
        raise ValueError(f"sample_rate must be a multiple of {int(fps)} "
                         f"(whole samples per {FRAME_SHIFT_MS} ms frame), "
                         f"got {sample_rate}")
    spf = int(sample_rate // fps)
    voiced = voiced_mask(features.vuv).astype(np.float64)
    f0 = np.exp(np.clip(features.lf0, _LF0_MIN, _LF0_MAX))
    amp = np.exp(np.clip(features.mgc[:, 0], _LOG_AMP_MIN, _LOG_AMP_MAX)) * voiced
    noise_amp = np.exp(np.clip(np.mean(features.bap, axis=1),
                               _LOG_AMP_MIN, _LOG_AMP_MAX)) * noise_gain

    f0_s = np.repeat(f0, spf)
    amp_s = np.repeat(amp, spf)
    noise_s = np.repeat(noise_amp, spf)
    harm = kernels.render_harmonics(np.ascontiguousarray(f0_s),
                                    np.ascontiguousarray(amp_s),
                                    float(rolloff), sample_rate)
    rng = np.random.default_rng(np.random.SeedSequence([noise_seed]))
    return harm + rng.standard_normal(f0_s.shape[0]) * noise_s


@dataclass
class SynthesisResult:
    """One synthesized part: realized timing, predicted streams, audio."""

    part: str
    waveform: np.ndarray
    sample_rate: int
    features: AcousticFeatureSeq
    onset_frames: np.ndarray
    durations: np.ndarray


def _build_pair(enc: dict, onsets: dict, parts, padding: str):
    a, b = parts
    if padding == "time_aligned":
        return time_aligned_pad(enc[a], onsets[a], enc[b], onsets[b])
    return post_pad(enc[a], enc[b])


def synthesize_score(score: Score, timing_models: dict,
                     bundles: dict[str, AcousticModelBundle], *,
                     joint_timing: bool, joint_acoustic: bool,
                     padding: str = "time_aligned",
                     sample_rate: int = DEFAULT_SAMPLE_RATE,
                     noise_seed: int = 2026) -> dict[str, SynthesisResult]:
    """Run the full tandem pipeline on a score.

    ``timing_models`` is ``{"timing": model}`` for a joint model or
    ``{part: model}`` for isolated ones; ``bundles`` maps part names to
    acoustic bundles.  Timing predictions become a realized frame timeline,
    the note features are expanded onto it (summed across parts when the
    acoustic models are multi-track), and the predicted streams drive the
    vocoder.  Part order follows the score.
    """
    parts = score.part_names
    if len(parts) != 2:
        raise ValueError(f"synthesis expects exactly 2 parts, got {len(parts)}")
    enc = {p: encode_part(score, p).features for p in parts}
    onset_ticks = {p: np.array([n.onset_ticks for n in score.parts[p]],
                               dtype=np.float64) for p in parts}

    if joint_timing:
        pair = _build_pair(enc, onset_ticks, parts, padding)
        (la, da), (lb, db) = predict_timing(pair, timing_models["timing"])
        pred = {parts[0]: (la, da), parts[1]: (lb, db)}
    else:
        pred = {p: predict_timing_isolated(enc[p], timing_models[p])
                for p in parts}

    realized, frames_own = {}, {}
    for p in parts:
        onsets, durations = reconcile_timing(
            onset_ticks[p], pred[p][0], pred[p][1], score.ticks_per_second)
        realized[p] = (onsets, durations)
        frames_own[p] = expand_to_frames(enc[p], durations, None, part=p).frames

    if joint_acoustic:
        merged = merge_parts_framewise(
            FrameLevelFeatures(part=parts[0], frames=frames_own[parts[0]]),
            FrameLevelFeatures(part=parts[1], frames=frames_own[parts[1]]))
        inputs = {p: merged.frames[:frames_own[p].shape[0]] for p in parts}
    else:
        inputs = frames_own

    results = {}
    for idx, p in enumerate(parts):
        preds = predict_acoustic(bundles[p], inputs[p])
        feats = AcousticFeatureSeq(
            part=p,
            lf0=preds["lf0"].astype(np.float64),
            mgc=preds["mgc"].astype(np.float64),
            bap=preds["bap"].astype(np.float64),
            vuv=(preds["vuv"] > 0.5).astype(np.float64))
        wav = render_waveform(feats, sample_rate=sample_rate,
                              noise_seed=noise_seed * 64 + idx)
        results[p] = SynthesisResult(
            part=p, waveform=wav, sample_rate=sample_rate, features=feats,
            onset_frames=realized[p][0], durations=realized[p][1])
    return results


def matched_power_gains(waveforms: dict[str, np.ndarray], lead: str,
                        power_ratio: float = ENSEMBLE_POWER_RATIO) -> dict[str, float]:
    """Per-part gains putting every non-lead part at ``power_ratio`` times
    the lead's mean power (the lead stays at gain 1)."""
    powers = {}
    for part, wav in waveforms.items():
        p = float(np.mean(np.asarray(wav, dtype=np.float64) ** 2))
        if p <= 0.0:
            raise ValueError(f"part '{part}' has zero power; cannot balance mix")
        powers[part] = p
    if lead not in powers:
        raise ValueError(f"lead part '{lead}' not among {sorted(powers)}")
    return {part: 1.0 if part == lead
            else float(np.sqrt(power_ratio * powers[lead] / powers[part]))
            for part in waveforms}


def mix_ensemble(waveforms: dict[str, np.ndarray], lead: str,
                 power_ratio: float = ENSEMBLE_POWER_RATIO) -> np.ndarray:
    """Sum the parts with matched-power gains; limit the peak to 0.99.

    Parts of different lengths are zero-padded at the end.  The peak limiter
    rescales the whole mix only when it would clip.
    """
    gains = matched_power_gains(waveforms, lead, power_ratio)
    length = max(w.shape[0] for w in waveforms.values())
    mix = np.zeros(length, dtype=np.float64)
    for part, wav in waveforms.items():
        mix[:wav.shape[0]] += gains[part] * np.asarray(wav, dtype=np.float64)
    peak = float(np.max(np.abs(mix))) if length else 0.0
    if peak > PEAK_LIMIT:
        mix *= PEAK_LIMIT / peak
        logger.info("mix peak %.3f rescaled to %.2f", peak, PEAK_LIMIT)
    return mix


def write_wav(path, waveform: np.ndarray, sample_rate: int) -> None:
    """Write mono 16-bit PCM."""
    clipped = np.clip(np.asarray(waveform, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, int(sample_rate), (clipped * 32767.0).astype(np.int16))
