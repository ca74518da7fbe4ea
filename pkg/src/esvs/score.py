"""Musical score container, JSON parsing, validation, and note encoding.

A score holds two or more named voice parts.  Each part is a sorted,
non-overlapping list of notes; rests are explicit notes with a null pitch so
that silence can be reasoned about directly (synchronized segmentation cuts
only where every part rests).  See SCORE_FORMAT.md for the on-disk format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Note",
    "Score",
    "ScoreFeatureSeq",
    "ScoreError",
    "parse_score",
    "serialize_score",
    "load_score",
    "dump_score",
    "validate_score",
    "encode_part",
    "encode_features",
]


class ScoreError(ValueError):
    """Raised for malformed scores; messages name the offending part/note."""


# Phoneme inventory (romaji-flavoured) grouped into coarse articulation
# classes.  Unknown symbols are validation errors, not silent fallbacks.
PHONEME_CLASSES = ("vowel", "nasal", "plosive", "fricative", "approximant", "silence")

PHONEME_TO_CLASS = {
    "a": "vowel", "i": "vowel", "u": "vowel", "e": "vowel", "o": "vowel",
    "m": "nasal", "n": "nasal", "N": "nasal",
    "k": "plosive", "g": "plosive", "t": "plosive", "d": "plosive",
    "p": "plosive", "b": "plosive",
    "s": "fricative", "z": "fricative", "f": "fricative", "h": "fricative",
    "sh": "fricative", "j": "fricative", "ch": "fricative", "ts": "fricative",
    "r": "approximant", "w": "approximant", "y": "approximant",
    "pau": "silence", "sil": "silence", "br": "silence", "cl": "silence",
}

# Note-encoding layout.  The scalar pitch is centred on C4 and scaled by two
# octaves; a rest keeps 0.0 there and raises the rest flag instead.  The
# semitone one-hot block exists so that summing two parts' frame features
# remains decodable (a two-hot piano-roll) rather than collapsing both
# pitches into one ambiguous scalar.
PITCH_BIN_LO = 48
PITCH_BIN_HI = 76
N_PITCH_BINS = PITCH_BIN_HI - PITCH_BIN_LO + 1

IDX_PITCH = 0
IDX_LOG_DUR = 1
IDX_POSITION = 2
IDX_REST = 3
IDX_CLASS0 = 4
IDX_BIN0 = IDX_CLASS0 + len(PHONEME_CLASSES)
IDX_PAD = IDX_BIN0 + N_PITCH_BINS
FEATURE_DIM = IDX_PAD + 1


@dataclass(frozen=True)
class Note:
    """One score event.  ``midi_pitch`` of None marks a rest."""

    onset_ticks: int
    duration_ticks: int
    midi_pitch: int | None
    phonemes: tuple[str, ...] = ()

    @property
    def is_rest(self) -> bool:
        return self.midi_pitch is None

    @property
    def end_ticks(self) -> int:
        return self.onset_ticks + self.duration_ticks


@dataclass
class Score:
    """Tick-resolution score with two or more named, ordered voice parts."""

    ticks_per_second: float
    parts: dict[str, list[Note]] = field(default_factory=dict)

    @property
    def part_names(self) -> list[str]:
        return list(self.parts.keys())

    def end_ticks(self) -> int:
        return max((notes[-1].end_ticks for notes in self.parts.values() if notes),
                   default=0)


@dataclass
class ScoreFeatureSeq:
    """Encoded note matrix for one part: one row per note, FEATURE_DIM wide."""

    part: str
    features: np.ndarray  # (num_notes, FEATURE_DIM) float64


def validate_score(score: Score) -> None:
    """Check structural invariants, raising ScoreError on the first failure."""
    if score.ticks_per_second <= 0:
        raise ScoreError("ticks_per_second must be positive, got "
                         f"{score.ticks_per_second}")
    if len(score.parts) < 2:
        raise ScoreError(f"score needs at least two parts, got {len(score.parts)}")
    for part, notes in score.parts.items():
        if not notes:
            raise ScoreError(f"part '{part}' has no notes")
        for i, note in enumerate(notes):
            where = f"part '{part}' note {i}"
            if note.onset_ticks < 0:
                raise ScoreError(f"{where}: negative onset {note.onset_ticks}")
            if note.duration_ticks <= 0:
                raise ScoreError(f"{where}: non-positive duration "
                                 f"{note.duration_ticks}")
            if note.midi_pitch is not None and not 0 <= note.midi_pitch <= 127:
                raise ScoreError(f"{where}: pitch {note.midi_pitch} outside [0, 127]")
            if note.is_rest and note.phonemes:
                raise ScoreError(f"{where}: rest carries phonemes {list(note.phonemes)}")
            for ph in note.phonemes:
                if ph not in PHONEME_TO_CLASS:
                    raise ScoreError(f"{where}: unknown phoneme '{ph}'")
            if i > 0:
                prev = notes[i - 1]
                if note.onset_ticks < prev.onset_ticks:
                    raise ScoreError(f"{where}: onset {note.onset_ticks} out of order "
                                     f"(previous onset {prev.onset_ticks})")
                if note.onset_ticks < prev.end_ticks:
                    raise ScoreError(f"{where}: onset {note.onset_ticks} overlaps "
                                     f"previous note ending at {prev.end_ticks}")


def _note_from_json(obj, part: str, index: int) -> Note:
    where = f"part '{part}' note {index}"
    if not isinstance(obj, dict):
        raise ScoreError(f"{where}: expected an object, got {type(obj).__name__}")
    for key in ("onset", "dur"):
        if key not in obj:
            raise ScoreError(f"{where}: missing field '{key}'")
        if not isinstance(obj[key], int) or isinstance(obj[key], bool):
            raise ScoreError(f"{where}: field '{key}' must be an integer")
    pitch = obj.get("pitch")
    if pitch is not None and (not isinstance(pitch, int) or isinstance(pitch, bool)):
        raise ScoreError(f"{where}: field 'pitch' must be an integer or null")
    phonemes = obj.get("phonemes", [])
    if not isinstance(phonemes, list) or any(not isinstance(p, str) for p in phonemes):
        raise ScoreError(f"{where}: field 'phonemes' must be a list of strings")
    return Note(onset_ticks=obj["onset"], duration_ticks=obj["dur"],
                midi_pitch=pitch, phonemes=tuple(phonemes))


def parse_score(text: str) -> Score:
    """Parse and validate a JSON score document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScoreError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScoreError("top level must be an object")
    if "ticks_per_second" not in doc or "parts" not in doc:
        raise ScoreError("top level needs 'ticks_per_second' and 'parts'")
    tps = doc["ticks_per_second"]
    if not isinstance(tps, (int, float)) or isinstance(tps, bool):
        raise ScoreError("'ticks_per_second' must be a number")
    if not isinstance(doc["parts"], dict):
        raise ScoreError("'parts' must be an object mapping part name to notes")
    parts: dict[str, list[Note]] = {}
    for part, notes in doc["parts"].items():
        if not isinstance(notes, list):
            raise ScoreError(f"part '{part}' must be a list of notes")
        parts[part] = [_note_from_json(n, part, i) for i, n in enumerate(notes)]
    score = Score(ticks_per_second=float(tps), parts=parts)
    validate_score(score)
    return score


def serialize_score(score: Score) -> str:
    """Serialize to the JSON format accepted by :func:`parse_score`."""
    doc = {
        "ticks_per_second": score.ticks_per_second,
        "parts": {
            part: [
                {"onset": n.onset_ticks, "dur": n.duration_ticks,
                 "pitch": n.midi_pitch, "phonemes": list(n.phonemes)}
                for n in notes
            ]
            for part, notes in score.parts.items()
        },
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def load_score(path) -> Score:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_score(fh.read())


def dump_score(score: Score, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_score(score))


def encode_note(note: Note, part_end_ticks: int) -> np.ndarray:
    """Encode one note into a FEATURE_DIM row (pad flag left at 0)."""
    row = np.zeros(FEATURE_DIM, dtype=np.float64)
    row[IDX_LOG_DUR] = math.log(note.duration_ticks)
    row[IDX_POSITION] = note.onset_ticks / max(part_end_ticks, 1)
    if note.is_rest:
        row[IDX_REST] = 1.0
        return row
    row[IDX_PITCH] = (note.midi_pitch - 60) / 24.0
    if note.phonemes:
        for ph in note.phonemes:
            row[IDX_CLASS0 + PHONEME_CLASSES.index(PHONEME_TO_CLASS[ph])] += 1.0
        row[IDX_CLASS0:IDX_BIN0] /= len(note.phonemes)
    pitch_bin = min(max(note.midi_pitch, PITCH_BIN_LO), PITCH_BIN_HI) - PITCH_BIN_LO
    row[IDX_BIN0 + pitch_bin] = 1.0
    return row


def encode_part(score: Score, part: str) -> ScoreFeatureSeq:
    """Encode one part's notes; rows follow note order."""
    if part not in score.parts:
        raise ScoreError(f"unknown part '{part}'")
    notes = score.parts[part]
    end = notes[-1].end_ticks if notes else 0
    rows = np.stack([encode_note(n, end) for n in notes]) if notes else \
        np.zeros((0, FEATURE_DIM))
    return ScoreFeatureSeq(part=part, features=rows)


def encode_features(score: Score) -> dict[str, ScoreFeatureSeq]:
    """Encode every part of a validated score."""
    return {part: encode_part(score, part) for part in score.parts}
