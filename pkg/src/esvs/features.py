"""Acoustic feature containers, continuous log-F0, and the synthetic corpus.

Feature streams follow the usual vocoder layout at a fixed 5 ms frame shift:
lf0 (1), mgc (60, index 0 carries power), bap (5), vuv (1).  All streams of a
part share one frame count T.  On disk a part is a raw float32 little-endian
blob plus a JSON sidecar; see FEATURES.md.

The synthetic corpus generator builds two-part scores (lead + soprano) with a
controllable fraction of shared note onsets, then renders ground-truth
features whose per-part deviations from the plain note pitch/power follow

    deviation_part = rho * shared_field + (1 - rho) * part_field

with ``rho = interaction_strength``.  The shared field also contains a
deterministic component driven by the interval between the two parts'
current pitches, which is what a cross-part model can actually learn; the
part fields carry note-attack transients and per-part vibrato.  Ground-truth
realized note timing is generated the same way (correlated lags at shared
onsets plus a component that depends on the partner note) and always tiles
each segment exactly, so teacher-forced frame expansion reproduces the
acoustic timeline frame for frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .score import Note, Score, validate_score
from . import score as score_mod

__all__ = [
    "FRAME_SHIFT_MS",
    "MGC_DIM",
    "BAP_DIM",
    "AcousticFeatureSeq",
    "VoicedMask",
    "voiced_mask",
    "continuous_lf0",
    "SyntheticCorpusConfig",
    "TimingTruth",
    "SyntheticSong",
    "generate_corpus",
    "generate_synthetic_pair",
    "save_features",
    "load_features",
    "save_song",
    "load_song",
    "save_corpus",
    "load_corpus",
]

FRAME_SHIFT_MS = 5.0
MGC_DIM = 60
BAP_DIM = 5

STREAM_LAYOUT = (("lf0", 1), ("mgc", MGC_DIM), ("bap", BAP_DIM), ("vuv", 1))

VoicedMask = np.ndarray  # boolean, one entry per frame


@dataclass
class AcousticFeatureSeq:
    """One part's feature streams; every stream shares the frame count T."""

    part: str
    lf0: np.ndarray   # (T,)
    mgc: np.ndarray   # (T, 60)
    bap: np.ndarray   # (T, 5)
    vuv: np.ndarray   # (T,)
    frame_shift_ms: float = FRAME_SHIFT_MS

    def __post_init__(self):
        t = self.lf0.shape[0]
        if self.mgc.shape != (t, MGC_DIM):
            raise ValueError(f"part '{self.part}': mgc shape {self.mgc.shape}, "
                             f"expected {(t, MGC_DIM)}")
        if self.bap.shape != (t, BAP_DIM):
            raise ValueError(f"part '{self.part}': bap shape {self.bap.shape}, "
                             f"expected {(t, BAP_DIM)}")
        if self.vuv.shape != (t,):
            raise ValueError(f"part '{self.part}': vuv length {self.vuv.shape[0]}, "
                             f"expected {t}")

    @property
    def num_frames(self) -> int:
        return self.lf0.shape[0]


def voiced_mask(vuv: np.ndarray) -> VoicedMask:
    """Threshold a vuv stream at 0.5 into a boolean mask."""
    return np.asarray(vuv) > 0.5


def continuous_lf0(f0_hz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Turn raw F0 (0 = unvoiced) into continuous log-F0 plus a vuv stream.

    Unvoiced gaps are filled by linear interpolation in the log domain;
    leading/trailing unvoiced frames hold the nearest voiced value.  A fully
    unvoiced input has no anchor to interpolate from and raises ValueError.
    """
    f0 = np.asarray(f0_hz, dtype=np.float64)
    voiced = f0 > 0
    if not np.any(voiced):
        raise ValueError("continuous_lf0: all frames unvoiced, nothing to anchor on")
    idx = np.flatnonzero(voiced)
    lf0 = np.interp(np.arange(f0.shape[0], dtype=np.float64),
                    idx.astype(np.float64), np.log(f0[idx]))
    return lf0, voiced.astype(np.float64)


# ---------------------------------------------------------------------------
# Feature file I/O (float32 little-endian blob + JSON sidecar)
# ---------------------------------------------------------------------------

def save_features(seq: AcousticFeatureSeq, path_base) -> None:
    """Write <base>.bin / <base>.json for one part."""
    base = Path(path_base)
    blob = np.concatenate([
        seq.lf0.astype("<f4").ravel(),
        seq.mgc.astype("<f4").ravel(),
        seq.bap.astype("<f4").ravel(),
        seq.vuv.astype("<f4").ravel(),
    ])
    base.with_suffix(".bin").write_bytes(blob.astype("<f4").tobytes())
    sidecar = {
        "part": seq.part,
        "num_frames": int(seq.num_frames),
        "frame_shift_ms": seq.frame_shift_ms,
        "dtype": "float32-le",
        "streams": [{"name": name, "dims": dims} for name, dims in STREAM_LAYOUT],
    }
    base.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n",
                                         encoding="utf-8")


def load_features(path_base) -> AcousticFeatureSeq:
    base = Path(path_base)
    sidecar = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    t = int(sidecar["num_frames"])
    layout = [(s["name"], int(s["dims"])) for s in sidecar["streams"]]
    if layout != list(STREAM_LAYOUT):
        raise ValueError(f"{base}: unexpected stream layout {layout}")
    raw = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype="<f4")
    expected = t * sum(d for _, d in STREAM_LAYOUT)
    if raw.shape[0] != expected:
        raise ValueError(f"{base}: blob has {raw.shape[0]} values, expected {expected}")
    out = {}
    off = 0
    for name, dims in STREAM_LAYOUT:
        n = t * dims
        arr = raw[off:off + n].astype(np.float64)
        out[name] = arr.reshape(t, dims) if dims > 1 else arr
        off += n
    return AcousticFeatureSeq(part=sidecar["part"], lf0=out["lf0"], mgc=out["mgc"],
                              bap=out["bap"], vuv=out["vuv"],
                              frame_shift_ms=float(sidecar["frame_shift_ms"]))


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

@dataclass
class SyntheticCorpusConfig:
    num_songs: int = 10
    notes_per_part: tuple[int, int] = (40, 64)
    shared_onset_fraction: float = 0.6
    interaction_strength: float = 0.8  # rho: cross-part deviation correlation
    vibrato_depth: float = 0.012       # log-F0 units
    vibrato_rate_hz: float = 5.5
    noise_level: float = 1.0
    seed: int = 0
    ticks_per_second: float = 8.0
    part_names: tuple[str, str] = ("lead", "soprano")
    pitch_range_low: tuple[int, int] = (50, 60)
    pitch_range_high: tuple[int, int] = (64, 74)
    rest_rate: float = 0.12


@dataclass
class TimingTruth:
    """Per-note realized timing for one part, in 5 ms frames.

    ``lags`` are realized onset minus score onset; ``durations`` tile each
    segment exactly (the last note of a segment absorbs the remainder).
    """

    lags: np.ndarray       # (N,) int
    durations: np.ndarray  # (N,) int


@dataclass
class SyntheticSong:
    score: Score
    timing: dict[str, TimingTruth]
    acoustic: dict[str, AcousticFeatureSeq]


# deviation amplitudes, in log-F0 / mgc[...,0] units
F0_NOISE_AMP = 0.030
F0_INTERACT_AMP = 0.060
F0_ATTACK_AMP = 0.030
F0_DEV_CLIP = 2.0 * math.log(2.0) / 12.0 - 1e-3  # stay inside 2 semitones
POW_BASE = -1.0
POW_SIL = -6.0
POW_NOISE_AMP = 0.10
POW_INTERACT_AMP = 0.08
POW_ACCENT_AMP = 0.06
MGC_TAIL_NOISE_AMP = 0.04
MGC_TAIL_DET_AMP = 0.05
BAP_VOICED = -10.0
BAP_UNVOICED = -0.7
ATTACK_TAU_FRAMES = 8.0

# realized-timing model, in frames
LAG_OWN_DUR_GAIN = 2.0
LAG_OWN_PITCH_GAIN = 2.0
LAG_CROSS_DUR_GAIN = 2.5
LAG_CROSS_PITCH_GAIN = 3.0
# reaction to the partner note at the same ordinal position in the segment
# (recoverable under index-aligned padding even without onset anchors)
LAG_ORDINAL_DUR_GAIN = 1.5
LAG_SHARED_STD = 1.0
LAG_NOISE_STD = 1.0
LAG_CLIP = 12
LOG_DUR_CENTER = 1.3

_DUR_CHOICES = (2, 3, 4, 6, 8)
_DUR_WEIGHTS = (0.2, 0.2, 0.3, 0.2, 0.1)
# unsnapped upper-part steps subdivide more finely, so the two parts carry
# systematically different note counts per phrase
_SOP_STEP_CHOICES = (1, 2, 3)
_SOP_STEP_WEIGHTS = (0.4, 0.4, 0.2)
_INTERVALS = (3, 4, 5, 7, 8, 9, 12)
_CONSONANTS = ("k", "t", "m", "n", "s", "r", "h", "d")
_VOWELS = ("a", "i", "u", "e", "o")


def _smooth_field(rng: np.random.Generator, n: int, win: int = 25,
                  cols: int = 0) -> np.ndarray:
    """Low-passed Gaussian noise, max-normalized to 1 per column."""
    shape = (n,) if cols == 0 else (n, cols)
    x = rng.standard_normal(shape)
    kernel = np.hanning(win)
    kernel /= kernel.sum()
    if cols == 0:
        y = np.convolve(x, kernel, mode="same")
        return y / max(float(np.max(np.abs(y))), 1e-9)
    y = np.empty_like(x)
    for c in range(cols):
        y[:, c] = np.convolve(x[:, c], kernel, mode="same")
        y[:, c] /= max(float(np.max(np.abs(y[:, c]))), 1e-9)
    return y


def _midi_to_lf0(midi: float) -> float:
    return math.log(440.0) + (midi - 69.0) * math.log(2.0) / 12.0


def _make_phrase(cfg: SyntheticCorpusConfig, rng: np.random.Generator,
                 start_tick: int, lead_pitch: int):
    """Build one phrase: both parts onset together at start, tile the same span."""
    n_lead = int(rng.integers(4, 9))
    lead_durs = rng.choice(_DUR_CHOICES, size=n_lead, p=_DUR_WEIGHTS)
    bounds_lead = start_tick + np.concatenate(([0], np.cumsum(lead_durs)))
    end_tick = int(bounds_lead[-1])

    # soprano boundaries: snap to the lead's next boundary with the shared
    # probability, otherwise walk independently; the phrase end is forced.
    bounds_sop = [start_tick]
    while bounds_sop[-1] < end_tick:
        pos = bounds_sop[-1]
        nxt_lead = [int(b) for b in bounds_lead if b > pos]
        if nxt_lead and rng.random() < cfg.shared_onset_fraction:
            step = nxt_lead[0] - pos
        else:
            step = int(rng.choice(_SOP_STEP_CHOICES, p=_SOP_STEP_WEIGHTS))
        bounds_sop.append(min(pos + step, end_tick))
    bounds_sop[-1] = end_tick

    lo_l, hi_l = cfg.pitch_range_low
    lo_h, hi_h = cfg.pitch_range_high
    lead_notes: list[Note] = []
    pitch = lead_pitch
    for k in range(n_lead):
        pitch = int(np.clip(pitch + rng.integers(-3, 4), lo_l, hi_l))
        lead_notes.append(Note(int(bounds_lead[k]), int(lead_durs[k]), pitch,
                               _phonemes(rng)))
    sop_notes: list[Note] = []
    for a, b in zip(bounds_sop[:-1], bounds_sop[1:]):
        under = _pitch_at(lead_notes, a)
        interval = int(rng.choice(_INTERVALS))
        p = int(np.clip((under if under is not None else pitch) + interval, lo_h, hi_h))
        sop_notes.append(Note(int(a), int(b - a), p, _phonemes(rng)))

    lead_notes = _inject_rests(cfg, rng, lead_notes, avoid=[])
    avoid = [(n.onset_ticks, n.end_ticks) for n in lead_notes if n.is_rest]
    sop_notes = _inject_rests(cfg, rng, sop_notes, avoid=avoid)
    return lead_notes, sop_notes, end_tick, (lead_notes[-1].midi_pitch or lead_pitch)


def _phonemes(rng: np.random.Generator) -> tuple[str, ...]:
    if rng.random() < 0.3:
        return (str(rng.choice(_VOWELS)),)
    return (str(rng.choice(_CONSONANTS)), str(rng.choice(_VOWELS)))


def _pitch_at(notes: list[Note], tick: int) -> int | None:
    for n in notes:
        if n.onset_ticks <= tick < n.end_ticks and not n.is_rest:
            return n.midi_pitch
    return None


def _inject_rests(cfg: SyntheticCorpusConfig, rng: np.random.Generator,
                  notes: list[Note], avoid: list[tuple[int, int]]):
    """Turn some non-initial notes into rests, avoiding the given tick spans
    so the two parts never rest simultaneously inside a phrase."""
    out = list(notes)
    for i in range(1, len(out)):
        n = out[i]
        overlaps = any(n.onset_ticks < e and s < n.end_ticks for s, e in avoid)
        if not overlaps and rng.random() < cfg.rest_rate:
            out[i] = Note(n.onset_ticks, n.duration_ticks, None, ())
    return out


def _generate_score(cfg: SyntheticCorpusConfig, rng: np.random.Generator) -> Score:
    target = int(rng.integers(cfg.notes_per_part[0], cfg.notes_per_part[1] + 1))
    lead_all: list[Note] = []
    sop_all: list[Note] = []
    tick = 0
    pitch = int((cfg.pitch_range_low[0] + cfg.pitch_range_low[1]) // 2)
    while len(lead_all) < target:
        lead, sop, end_tick, pitch = _make_phrase(cfg, rng, tick, pitch)
        lead_all += lead
        sop_all += sop
        if len(lead_all) >= target:
            tick = end_tick
            break
        gap = int(rng.integers(2, 6))
        lead_all.append(Note(end_tick, gap, None, ()))
        sop_all.append(Note(end_tick, gap, None, ()))
        tick = end_tick + gap
    a, b = cfg.part_names
    score = Score(ticks_per_second=cfg.ticks_per_second,
                  parts={a: lead_all, b: sop_all})
    validate_score(score)
    return score


def _frames_per_tick(cfg: SyntheticCorpusConfig) -> float:
    return 1000.0 / cfg.ticks_per_second / FRAME_SHIFT_MS


def _segment_note_ranges(score: Score):
    # local import: preprocess imports this module for FRAME_SHIFT_MS
    from .preprocess import segment_synchronized

    return segment_synchronized(score)


def _realize_timing(cfg: SyntheticCorpusConfig, rng: np.random.Generator,
                    score: Score):
    """Per-part realized lags/durations; both parts tile identical spans."""
    segs = _segment_note_ranges(score)
    fpt = _frames_per_tick(cfg)
    parts = score.part_names
    lags = {p: np.zeros(len(score.parts[p]), dtype=np.int64) for p in parts}
    durs = {p: np.zeros(len(score.parts[p]), dtype=np.int64) for p in parts}
    onset_maps = {p: {n.onset_ticks: n for n in score.parts[p]} for p in parts}

    for seg in segs:
        firsts = [score.parts[p][seg.note_ranges[p][0]].onset_ticks for p in parts]
        lasts = [score.parts[p][seg.note_ranges[p][1] - 1].end_ticks for p in parts]
        if len(set(firsts)) != 1 or len(set(lasts)) != 1:
            raise AssertionError("generator produced a segment whose parts span "
                                 f"different ticks: {firsts} / {lasts}")
        t_seg = int(round((lasts[0] - firsts[0]) * fpt))
        shared_z = {}
        for p_idx, p in enumerate(parts):
            other = parts[1 - p_idx]
            lo, hi = seg.note_ranges[p]
            o_lo, o_hi = seg.note_ranges[other]
            other_notes = score.parts[other][o_lo:o_hi]
            notes = score.parts[p][lo:hi]
            n = len(notes)
            starts = np.array([int(round((nt.onset_ticks - firsts[0]) * fpt))
                               for nt in notes], dtype=np.int64)
            lam = np.zeros(n, dtype=np.int64)
            for k in range(1, n):
                nt = notes[k]
                own_dur = math.log(nt.duration_ticks)
                own_pitch = 0.0 if nt.is_rest else (nt.midi_pitch - 60) / 24.0
                raw = (LAG_OWN_DUR_GAIN * (own_dur - LOG_DUR_CENTER)
                       + LAG_OWN_PITCH_GAIN * own_pitch
                       + LAG_NOISE_STD * rng.standard_normal())
                if k < len(other_notes):
                    raw += LAG_ORDINAL_DUR_GAIN * (
                        math.log(other_notes[k].duration_ticks) - LOG_DUR_CENTER)
                partner = onset_maps[other].get(nt.onset_ticks)
                if partner is not None:
                    o_dur = math.log(partner.duration_ticks)
                    o_pitch = (0.0 if partner.is_rest
                               else (partner.midi_pitch - 60) / 24.0)
                    raw += (LAG_CROSS_DUR_GAIN * (o_dur - own_dur)
                            + LAG_CROSS_PITCH_GAIN * (o_pitch - own_pitch))
                    if nt.onset_ticks not in shared_z:
                        shared_z[nt.onset_ticks] = rng.standard_normal()
                    raw += LAG_SHARED_STD * shared_z[nt.onset_ticks]
                lam[k] = int(np.clip(round(raw), -LAG_CLIP, LAG_CLIP))
            # feasibility: realized bounds stay ordered and leave room
            r = np.zeros(n, dtype=np.int64)
            for k in range(1, n):
                r[k] = max(starts[k] + lam[k], r[k - 1] + 1)
                r[k] = min(r[k], t_seg - (n - k))
            lam = r - starts
            d = np.empty(n, dtype=np.int64)
            d[:-1] = np.diff(r)
            d[-1] = t_seg - r[-1]
            lags[p][lo:hi] = lam
            durs[p][lo:hi] = d
    return segs, lags, durs


def _render_part_segment(cfg: SyntheticCorpusConfig, rng_part: np.random.Generator,
                         notes: list[Note], durs: np.ndarray, t_seg: int,
                         shared: dict, rho: float):
    """Ground-truth streams for one part over one segment of t_seg frames."""
    note_idx = np.repeat(np.arange(len(notes)), durs)
    assert note_idx.shape[0] == t_seg
    bounds = np.concatenate(([0], np.cumsum(durs)))
    pos = np.arange(t_seg) - bounds[note_idx]
    frac = (pos + 1) / durs[note_idx]
    midi = np.array([n.midi_pitch if not n.is_rest else -1 for n in notes])
    voiced = midi[note_idx] >= 0
    pitch_scalar = np.where(voiced, (midi[note_idx] - 60) / 24.0, 0.0)
    base_lf0 = np.where(voiced,
                        math.log(440.0) + (midi[note_idx] - 69) * math.log(2.0) / 12.0,
                        0.0)

    t_sec = np.arange(t_seg) * FRAME_SHIFT_MS / 1000.0
    vib = 2.0 * np.pi * cfg.vibrato_rate_hz * t_sec
    noise = cfg.noise_level

    e_f0 = (F0_NOISE_AMP * noise * _smooth_field(rng_part, t_seg)
            + cfg.vibrato_depth * np.sin(vib + rng_part.uniform(0, 2 * np.pi))
            - F0_ATTACK_AMP * np.exp(-pos / ATTACK_TAU_FRAMES))
    dev_f0 = rho * shared["f0"] + (1.0 - rho) * e_f0
    dev_f0 = np.clip(dev_f0, -F0_DEV_CLIP, F0_DEV_CLIP)
    raw_f0 = np.where(voiced, np.exp(base_lf0 + dev_f0), 0.0)

    e_pow = (POW_NOISE_AMP * noise * _smooth_field(rng_part, t_seg)
             + POW_ACCENT_AMP * (frac - 0.5))
    dev_pow = rho * shared["pow"] + (1.0 - rho) * e_pow
    pow_voiced = POW_BASE + 0.25 * pitch_scalar + dev_pow
    mgc0 = np.where(voiced, pow_voiced,
                    POW_SIL + 0.05 * _smooth_field(rng_part, t_seg))

    dims = np.arange(1, MGC_DIM)
    tail_det = MGC_TAIL_DET_AMP * np.sin(dims[None, :] * 0.37
                                         + 3.0 * pitch_scalar[:, None])
    tail = tail_det + MGC_TAIL_NOISE_AMP * noise * _smooth_field(
        rng_part, t_seg, cols=MGC_DIM - 1)
    mgc = np.concatenate([mgc0[:, None], tail], axis=1)

    bap_base = np.where(voiced, BAP_VOICED, BAP_UNVOICED)
    bap = (bap_base[:, None]
           + 0.4 * _smooth_field(rng_part, t_seg, cols=BAP_DIM))
    bap = np.minimum(bap, -0.05)
    return raw_f0, mgc, bap, voiced


def _interval_field(score: Score, seg, timing_durs, parts, t_seg: int):
    """Semitone interval between the parts' realized pitches (0 where a part
    rests); drives the learnable cross-part component of the shared field."""
    midis = []
    voiceds = []
    for p in parts:
        lo, hi = seg.note_ranges[p]
        notes = score.parts[p][lo:hi]
        durs = timing_durs[p][lo:hi]
        idx = np.repeat(np.arange(len(notes)), durs)
        assert idx.shape[0] == t_seg
        m = np.array([n.midi_pitch if not n.is_rest else -1 for n in notes])
        midis.append(m[idx])
        voiceds.append(m[idx] >= 0)
    both = voiceds[0] & voiceds[1]
    return np.where(both, midis[1] - midis[0], 0).astype(np.float64)


def _generate_song(cfg: SyntheticCorpusConfig, seed_seq: np.random.SeedSequence):
    rng_score, rng_time, rng_shared, rng_a, rng_b = [
        np.random.default_rng(s) for s in seed_seq.spawn(5)]
    score = _generate_score(cfg, rng_score)
    segs, lags, durs = _realize_timing(cfg, rng_time, score)
    parts = score.part_names
    rho = float(cfg.interaction_strength)

    streams = {p: {"f0": [], "mgc": [], "bap": [], "voiced": []} for p in parts}
    for seg in segs:
        lo, hi = seg.note_ranges[parts[0]]
        t_seg = int(np.sum(durs[parts[0]][lo:hi]))
        interval = _interval_field(score, seg, durs, parts, t_seg)
        t_sec = np.arange(t_seg) * FRAME_SHIFT_MS / 1000.0
        vib = 2.0 * np.pi * cfg.vibrato_rate_hz * t_sec
        shared = {
            "f0": (F0_NOISE_AMP * cfg.noise_level * _smooth_field(rng_shared, t_seg)
                   + cfg.vibrato_depth * np.sin(vib + rng_shared.uniform(0, 2 * np.pi))
                   + F0_INTERACT_AMP * np.sin(2.0 * np.pi * interval / 12.0)),
            "pow": (POW_NOISE_AMP * cfg.noise_level * _smooth_field(rng_shared, t_seg)
                    + POW_INTERACT_AMP * np.sin(2.0 * np.pi * interval / 12.0 + 0.5)),
        }
        for p, rng_p in zip(parts, (rng_a, rng_b)):
            lo_p, hi_p = seg.note_ranges[p]
            raw_f0, mgc, bap, voiced = _render_part_segment(
                cfg, rng_p, score.parts[p][lo_p:hi_p], durs[p][lo_p:hi_p],
                t_seg, shared, rho)
            streams[p]["f0"].append(raw_f0)
            streams[p]["mgc"].append(mgc)
            streams[p]["bap"].append(bap)
            streams[p]["voiced"].append(voiced)

    acoustic = {}
    for p in parts:
        raw_f0 = np.concatenate(streams[p]["f0"])
        lf0, vuv = continuous_lf0(raw_f0)
        seq = AcousticFeatureSeq(
            part=p,
            lf0=_f32(lf0),
            mgc=_f32(np.concatenate(streams[p]["mgc"])),
            bap=_f32(np.concatenate(streams[p]["bap"])),
            vuv=_f32(vuv),
        )
        acoustic[p] = seq
    timing = {p: TimingTruth(lags=lags[p], durations=durs[p]) for p in parts}
    return SyntheticSong(score=score, timing=timing, acoustic=acoustic)


def _f32(x: np.ndarray) -> np.ndarray:
    """Quantize to float32 precision (the on-disk format) but keep float64."""
    return x.astype(np.float32).astype(np.float64)


def generate_corpus(cfg: SyntheticCorpusConfig) -> list[SyntheticSong]:
    """Generate the full corpus deterministically from cfg.seed."""
    root = np.random.SeedSequence(cfg.seed)
    return [_generate_song(cfg, child) for child in root.spawn(cfg.num_songs)]


def generate_synthetic_pair(cfg: SyntheticCorpusConfig):
    """One song: returns (score, (features_part_a, features_part_b))."""
    song = _generate_song(cfg, np.random.SeedSequence(cfg.seed))
    a, b = song.score.part_names
    return song.score, (song.acoustic[a], song.acoustic[b])


# ---------------------------------------------------------------------------
# Corpus persistence
# ---------------------------------------------------------------------------

def save_song(song: SyntheticSong, song_dir) -> None:
    d = Path(song_dir)
    d.mkdir(parents=True, exist_ok=True)
    score_mod.dump_score(song.score, d / "score.json")
    timing = {p: {"lags": t.lags.tolist(), "durations": t.durations.tolist()}
              for p, t in song.timing.items()}
    (d / "timing.json").write_text(json.dumps(timing, indent=2) + "\n",
                                   encoding="utf-8")
    for p, seq in song.acoustic.items():
        save_features(seq, d / p)


def load_song(song_dir) -> SyntheticSong:
    d = Path(song_dir)
    score = score_mod.load_score(d / "score.json")
    raw = json.loads((d / "timing.json").read_text(encoding="utf-8"))
    timing = {p: TimingTruth(lags=np.asarray(v["lags"], dtype=np.int64),
                             durations=np.asarray(v["durations"], dtype=np.int64))
              for p, v in raw.items()}
    acoustic = {p: load_features(d / p) for p in score.part_names}
    return SyntheticSong(score=score, timing=timing, acoustic=acoustic)


def save_corpus(songs: list[SyntheticSong], out_dir, cfg: SyntheticCorpusConfig) -> None:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    for i, song in enumerate(songs):
        save_song(song, root / f"song_{i:03d}")
    manifest = {"schema_version": 1, "num_songs": len(songs),
                "config": asdict(cfg)}
    (root / "corpus.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                      encoding="utf-8")


def load_corpus(corpus_dir) -> tuple[list[SyntheticSong], dict]:
    root = Path(corpus_dir)
    manifest = json.loads((root / "corpus.json").read_text(encoding="utf-8"))
    songs = [load_song(root / f"song_{i:03d}")
             for i in range(int(manifest["num_songs"]))]
    return songs, manifest


def corpus_config_from_dict(d: dict) -> SyntheticCorpusConfig:
    """Rebuild a config from a JSON/TOML mapping (lists become tuples)."""
    cfg = SyntheticCorpusConfig()
    for key, value in d.items():
        if not hasattr(cfg, key):
            raise ValueError(f"unknown corpus config key '{key}'")
        current = getattr(cfg, key)
        if isinstance(current, tuple):
            value = tuple(value)
        setattr(cfg, key, value)
    return cfg
