"""Segmentation, slot alignment (padding), and note-to-frame expansion.

The preprocessing contract for ensemble scores:

* :func:`segment_synchronized` cuts a multi-part score only inside regions
  where every part is silent, so no segment ever splits a sounding note and
  concatenating the segments reproduces each part exactly.
* :func:`post_pad` and :func:`time_aligned_pad` bring two parts' note
  sequences to a common slot length L.  Post-padding appends PAD rows at the
  end of the shorter part; time-aligned padding first locks notes with equal
  onsets ("anchors") into the same slot index and only end-pads the shorter
  run between consecutive anchors.  With no anchors the two are identical.
* :func:`expand_to_frames` repeats each note row by its duration in frames,
  shifting onsets by per-note time-lags (overlaps truncate the earlier note,
  a realized duration that would drop to zero is clamped to one frame).
* :func:`merge_parts_framewise` sums two parts' frame matrices elementwise,
  zero-padding the shorter one.

PAD rows are all-zero except a dedicated pad-flag dimension, so they are an
additive identity for the framewise merge and carry zero frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .features import FRAME_SHIFT_MS
from .score import FEATURE_DIM, IDX_PAD, Score

__all__ = [
    "Segment",
    "SegmentSet",
    "PaddedScorePair",
    "FrameLevelFeatures",
    "segment_synchronized",
    "post_pad",
    "time_aligned_pad",
    "expand_to_frames",
    "merge_parts_framewise",
    "ticks_to_frames",
    "pad_row",
]

logger = logging.getLogger(__name__)


@dataclass
class Segment:
    """Half-open tick span plus, per part, the half-open note index range."""

    start_tick: int
    end_tick: int
    note_ranges: dict[str, tuple[int, int]]


@dataclass
class SegmentSet:
    segments: list[Segment] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)


@dataclass
class PaddedScorePair:
    """Two parts' note features brought to a common slot length L.

    ``slots_*[k]`` holds the original note index sitting in slot k, or -1 for
    a PAD slot; ``pad_*`` is True exactly at PAD slots.
    """

    features_a: np.ndarray  # (L, FEATURE_DIM)
    features_b: np.ndarray
    pad_a: np.ndarray  # (L,) bool
    pad_b: np.ndarray
    slots_a: np.ndarray  # (L,) int, -1 at PAD
    slots_b: np.ndarray

    @property
    def length(self) -> int:
        return self.features_a.shape[0]


@dataclass
class FrameLevelFeatures:
    """Frame-rate feature matrix: note rows repeated, plus a position ramp."""

    part: str
    frames: np.ndarray  # (T, FEATURE_DIM + 1)
    frame_shift_ms: float = FRAME_SHIFT_MS
    valid_mask: np.ndarray | None = None  # after merge: True where both parts had frames


def ticks_to_frames(ticks: float, ticks_per_second: float) -> int:
    """Convert a tick count to 5 ms frames (rounded to nearest)."""
    return int(round(ticks / ticks_per_second * 1000.0 / FRAME_SHIFT_MS))


def pad_row() -> np.ndarray:
    row = np.zeros(FEATURE_DIM, dtype=np.float64)
    row[IDX_PAD] = 1.0
    return row


# ---------------------------------------------------------------------------
# Synchronized segmentation
# ---------------------------------------------------------------------------

def _voiced_intervals(score: Score, part: str) -> list[tuple[int, int]]:
    spans = [(n.onset_ticks, n.end_ticks) for n in score.parts[part] if not n.is_rest]
    merged: list[tuple[int, int]] = []
    for lo, hi in spans:
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def _all_rest_intervals(score: Score) -> list[tuple[int, int]]:
    """Maximal tick intervals over [0, end) where every part is silent."""
    end = score.end_ticks()
    silent = [(0, end)]
    for part in score.parts:
        for lo, hi in _voiced_intervals(score, part):
            nxt = []
            for s, e in silent:
                if hi <= s or lo >= e:
                    nxt.append((s, e))
                    continue
                if s < lo:
                    nxt.append((s, lo))
                if hi < e:
                    nxt.append((hi, e))
            silent = nxt
    return [iv for iv in silent if iv[1] > iv[0]]


def segment_synchronized(score: Score) -> SegmentSet:
    """Split a score at ticks where all parts rest simultaneously.

    One cut is placed at the midpoint of every maximal all-rest interval that
    is strictly interior to the score, so leading or trailing shared silence
    never produces an empty segment.  Notes (including rests) are assigned to
    segments by onset, which keeps per-part note order intact and makes the
    segmentation lossless by construction.
    """
    end = score.end_ticks()
    cuts = [(lo + hi) // 2
            for lo, hi in _all_rest_intervals(score) if lo > 0 and hi < end]
    bounds = [0] + cuts + [end]
    segments = []
    cursor = {part: 0 for part in score.parts}
    for start, stop in zip(bounds[:-1], bounds[1:]):
        ranges = {}
        for part, notes in score.parts.items():
            lo = cursor[part]
            hi = lo
            while hi < len(notes) and notes[hi].onset_ticks < stop:
                hi += 1
            ranges[part] = (lo, hi)
            cursor[part] = hi
        segments.append(Segment(start_tick=start, end_tick=stop, note_ranges=ranges))
    return SegmentSet(segments=segments)


# ---------------------------------------------------------------------------
# Slot alignment
# ---------------------------------------------------------------------------

def _assemble(features: np.ndarray, order: list[int], length: int):
    out = np.tile(pad_row(), (length, 1))
    slots = np.full(length, -1, dtype=np.int64)
    for k, idx in enumerate(order):
        out[k] = features[idx]
        slots[k] = idx
    pad = slots < 0
    return out, pad, slots


def post_pad(features_a: np.ndarray, features_b: np.ndarray) -> PaddedScorePair:
    """Pad the shorter part with PAD rows at the end, L = max(Na, Nb)."""
    n_a, n_b = features_a.shape[0], features_b.shape[0]
    length = max(n_a, n_b)
    fa, pa, sa = _assemble(features_a, list(range(n_a)), length)
    fb, pb, sb = _assemble(features_b, list(range(n_b)), length)
    return PaddedScorePair(fa, fb, pa, pb, sa, sb)


def _match_anchors(onsets_a: np.ndarray, onsets_b: np.ndarray,
                   tolerance: int) -> list[tuple[int, int]]:
    pairs = []
    i = j = 0
    while i < len(onsets_a) and j < len(onsets_b):
        if abs(int(onsets_a[i]) - int(onsets_b[j])) <= tolerance:
            pairs.append((i, j))
            i += 1
            j += 1
        elif onsets_a[i] < onsets_b[j]:
            i += 1
        else:
            j += 1
    return pairs


def time_aligned_pad(features_a: np.ndarray, onsets_a: np.ndarray,
                     features_b: np.ndarray, onsets_b: np.ndarray,
                     tolerance: int = 0) -> PaddedScorePair:
    """Align notes with equal onsets to the same slot index.

    Notes whose onsets match within ``tolerance`` ticks become anchors; both
    parts place each anchor note at an identical slot.  Between consecutive
    anchors the original note order is kept and the shorter run is end-padded.
    With an empty anchor set this reduces to :func:`post_pad`.
    """
    anchors = _match_anchors(onsets_a, onsets_b, tolerance)
    cuts_a = [ia for ia, _ in anchors] + [features_a.shape[0]]
    cuts_b = [ib for _, ib in anchors] + [features_b.shape[0]]
    order_a: list[int] = []
    order_b: list[int] = []
    lo_a = lo_b = 0
    for hi_a, hi_b in zip(cuts_a, cuts_b):
        run_a = list(range(lo_a, hi_a))
        run_b = list(range(lo_b, hi_b))
        width = max(len(run_a), len(run_b))
        order_a += run_a + [-1] * (width - len(run_a))
        order_b += run_b + [-1] * (width - len(run_b))
        lo_a, lo_b = hi_a, hi_b
    # trailing runs after the last anchor
    run_a = list(range(lo_a, features_a.shape[0]))
    run_b = list(range(lo_b, features_b.shape[0]))
    width = max(len(run_a), len(run_b))
    order_a += run_a + [-1] * (width - len(run_a))
    order_b += run_b + [-1] * (width - len(run_b))

    length = len(order_a)
    fa = np.tile(pad_row(), (length, 1))
    fb = np.tile(pad_row(), (length, 1))
    sa = np.full(length, -1, dtype=np.int64)
    sb = np.full(length, -1, dtype=np.int64)
    for k, idx in enumerate(order_a):
        if idx >= 0:
            fa[k] = features_a[idx]
            sa[k] = idx
    for k, idx in enumerate(order_b):
        if idx >= 0:
            fb[k] = features_b[idx]
            sb[k] = idx
    return PaddedScorePair(fa, fb, sa < 0, sb < 0, sa, sb)


# ---------------------------------------------------------------------------
# Frame expansion and merging
# ---------------------------------------------------------------------------

def expand_to_frames(features: np.ndarray, durations_frames: np.ndarray,
                     time_lags_frames: np.ndarray | None = None,
                     part: str = "") -> FrameLevelFeatures:
    """Repeat each note row by its realized duration in frames.

    Notes stack sequentially (base onset = cumulative duration); a note's
    time-lag shifts its start against that base.  When a shifted start bites
    into the previous note, the previous note is truncated (last writer
    wins).  A realized duration that would fall to zero or below is clamped
    to one frame with a warning.  PAD slots contribute zero frames.  Output
    rows gain one dimension: a within-note position ramp in (0, 1].
    """
    n = features.shape[0]
    durs = np.asarray(durations_frames, dtype=np.int64)
    lags = (np.zeros(n, dtype=np.int64) if time_lags_frames is None
            else np.asarray(time_lags_frames, dtype=np.int64))
    if durs.shape[0] != n or lags.shape[0] != n:
        raise ValueError("durations/time-lags must have one entry per note row")

    is_pad = features[:, IDX_PAD] > 0.5 if n else np.zeros(0, dtype=bool)
    idx = np.flatnonzero(~is_pad)
    if np.any(durs[idx] < 1):
        bad = int(idx[np.argmax(durs[idx] < 1)])
        raise ValueError(f"note {bad}: duration_frames must be >= 1, got {int(durs[bad])}")
    durs_k = durs[idx]
    base = np.concatenate(([0], np.cumsum(durs_k)[:-1])) if idx.size else np.zeros(0, np.int64)
    starts = base + lags[idx]

    realized = durs_k.copy()
    for j in range(idx.size - 1):
        overlap = (starts[j] + realized[j]) - starts[j + 1]
        if overlap > 0:
            realized[j] -= overlap
    clamped = realized < 1
    if np.any(clamped):
        logger.warning("expand_to_frames: %d note(s) clamped to 1 frame after "
                       "time-lag shift", int(np.sum(clamped)))
        realized = np.maximum(realized, 1)

    total = int(np.sum(realized))
    out = np.zeros((total, features.shape[1] + 1), dtype=np.float64)
    t = 0
    for j, note_idx in enumerate(idx):
        d = int(realized[j])
        out[t:t + d, :-1] = features[note_idx]
        out[t:t + d, -1] = (np.arange(1, d + 1, dtype=np.float64)) / d
        t += d
    return FrameLevelFeatures(part=part, frames=out)


def merge_parts_framewise(a: FrameLevelFeatures, b: FrameLevelFeatures) -> FrameLevelFeatures:
    """Elementwise sum of two frame matrices, zero-padding the shorter."""
    if a.frames.shape[1] != b.frames.shape[1]:
        raise ValueError(f"feature width mismatch: {a.frames.shape[1]} vs "
                         f"{b.frames.shape[1]}")
    t_max = max(a.frames.shape[0], b.frames.shape[0])
    t_min = min(a.frames.shape[0], b.frames.shape[0])
    merged = np.zeros((t_max, a.frames.shape[1]), dtype=np.float64)
    merged[:a.frames.shape[0]] += a.frames
    merged[:b.frames.shape[0]] += b.frames
    valid = np.zeros(t_max, dtype=bool)
    valid[:t_min] = True
    return FrameLevelFeatures(part=f"{a.part}+{b.part}", frames=merged,
                              frame_shift_ms=a.frame_shift_ms, valid_mask=valid)
