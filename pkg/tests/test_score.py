"""Score parsing, validation, and note-encoding tests."""

import json
import math

import numpy as np
import pytest

from esvs.score import (
    FEATURE_DIM,
    IDX_BIN0,
    IDX_CLASS0,
    IDX_LOG_DUR,
    IDX_PAD,
    IDX_PITCH,
    IDX_POSITION,
    IDX_REST,
    N_PITCH_BINS,
    PITCH_BIN_LO,
    Note,
    Score,
    ScoreError,
    dump_score,
    encode_features,
    encode_part,
    load_score,
    parse_score,
    serialize_score,
    validate_score,
)


def _two_part_score():
    return Score(
        ticks_per_second=8.0,
        parts={
            "lead": [
                Note(0, 4, 60, ("a",)),
                Note(4, 2, None),
                Note(6, 4, 62, ("k", "a")),
            ],
            "soprano": [
                Note(0, 6, 67, ("o",)),
                Note(6, 4, 69, ("n", "o")),
            ],
        },
    )


def test_validate_accepts_well_formed_score():
    validate_score(_two_part_score())


def test_validate_rejects_single_part():
    score = _two_part_score()
    del score.parts["soprano"]
    with pytest.raises(ScoreError, match="at least two parts"):
        validate_score(score)


def test_validate_rejects_overlap_and_misorder():
    score = _two_part_score()
    score.parts["lead"][1] = Note(3, 2, None)  # overlaps note 0 (ends at 4)
    with pytest.raises(ScoreError, match="part 'lead' note 1.*overlaps"):
        validate_score(score)
    score = _two_part_score()
    score.parts["lead"] = [Note(6, 2, 60), Note(0, 2, 62)]
    with pytest.raises(ScoreError, match="out of order"):
        validate_score(score)


def test_validate_rejects_bad_fields():
    base = _two_part_score()
    cases = [
        (Note(-1, 4, 60), "negative onset"),
        (Note(0, 0, 60), "non-positive duration"),
        (Note(0, 4, 200), "outside"),
        (Note(0, 4, None, ("a",)), "rest carries phonemes"),
        (Note(0, 4, 60, ("xx",)), "unknown phoneme"),
    ]
    for note, pattern in cases:
        score = Score(ticks_per_second=base.ticks_per_second,
                      parts={"lead": [note], "soprano": base.parts["soprano"]})
        with pytest.raises(ScoreError, match=pattern):
            validate_score(score)


def test_validate_rejects_nonpositive_tick_rate():
    score = _two_part_score()
    score.ticks_per_second = 0.0
    with pytest.raises(ScoreError, match="ticks_per_second"):
        validate_score(score)


def test_parse_serialize_round_trip():
    score = _two_part_score()
    again = parse_score(serialize_score(score))
    assert again.ticks_per_second == score.ticks_per_second
    assert again.parts == score.parts


def test_load_dump_round_trip(tmp_path):
    score = _two_part_score()
    path = tmp_path / "song.json"
    dump_score(score, path)
    assert load_score(path).parts == score.parts


def test_parse_rejects_malformed_documents():
    with pytest.raises(ScoreError, match="invalid JSON"):
        parse_score("{nope")
    with pytest.raises(ScoreError, match="top level"):
        parse_score(json.dumps([1, 2]))
    with pytest.raises(ScoreError, match="ticks_per_second"):
        parse_score(json.dumps({"parts": {}}))
    doc = {"ticks_per_second": 8, "parts": {"a": [{"onset": 0}], "b": []}}
    with pytest.raises(ScoreError, match="part 'a' note 0: missing field 'dur'"):
        parse_score(json.dumps(doc))
    doc = {"ticks_per_second": 8,
           "parts": {"a": [{"onset": 0, "dur": 1, "pitch": "c"}], "b": []}}
    with pytest.raises(ScoreError, match="'pitch' must be an integer"):
        parse_score(json.dumps(doc))


def test_encode_note_layout_pitched():
    # hand-computed row for a C4 crotchet "a" at tick 0 of a
    # 10-tick part: pitch scalar (60-60)/24 = 0, log-duration ln 4,
    # position 0/10, vowel class weight 1, semitone bin 60-48 = 12.
    score = _two_part_score()
    score.parts["lead"] = [Note(0, 4, 60, ("a",)), Note(4, 6, None)]
    row = encode_part(score, "lead").features[0]
    assert row.shape == (FEATURE_DIM,)
    assert row[IDX_PITCH] == 0.0
    assert row[IDX_LOG_DUR] == pytest.approx(math.log(4))
    assert row[IDX_POSITION] == 0.0
    assert row[IDX_REST] == 0.0
    assert row[IDX_CLASS0] == 1.0  # vowel slot
    one_hot = row[IDX_BIN0:IDX_BIN0 + N_PITCH_BINS]
    assert one_hot.sum() == 1.0
    assert one_hot[60 - PITCH_BIN_LO] == 1.0
    assert row[IDX_PAD] == 0.0


def test_encode_note_layout_rest():
    score = _two_part_score()
    row = encode_part(score, "lead").features[1]  # rest at tick 4, dur 2
    assert row[IDX_REST] == 1.0
    assert row[IDX_PITCH] == 0.0
    assert row[IDX_LOG_DUR] == pytest.approx(math.log(2))
    assert row[IDX_POSITION] == pytest.approx(4 / 10)
    assert np.all(row[IDX_BIN0:IDX_BIN0 + N_PITCH_BINS] == 0.0)


def test_encode_note_phoneme_class_weights_sum_to_one():
    score = _two_part_score()
    row = encode_part(score, "lead").features[2]  # ("k", "a")
    weights = row[IDX_CLASS0:IDX_BIN0]
    assert weights.sum() == pytest.approx(1.0)
    assert row[IDX_CLASS0] == pytest.approx(0.5)  # vowel "a"
    assert row[IDX_CLASS0 + 2] == pytest.approx(0.5)  # plosive "k"


def test_encode_note_pitch_bin_clips_to_range():
    score = _two_part_score()
    score.parts["lead"] = [Note(0, 4, 30), Note(4, 4, 120)]
    rows = encode_part(score, "lead").features
    assert rows[0][IDX_BIN0] == 1.0  # clipped to lowest bin
    assert rows[1][IDX_BIN0 + N_PITCH_BINS - 1] == 1.0  # clipped to highest


def test_encode_features_covers_all_parts():
    encoded = encode_features(_two_part_score())
    assert set(encoded) == {"lead", "soprano"}
    assert encoded["lead"].features.shape == (3, FEATURE_DIM)
    assert encoded["soprano"].features.shape == (2, FEATURE_DIM)


def test_encode_part_unknown_part():
    with pytest.raises(ScoreError, match="unknown part"):
        encode_part(_two_part_score(), "ghost")


def test_two_hot_merge_is_decodable():
    # Summing two pitched rows keeps both semitone bins at 1.0 (two-hot),
    # which is the reason the one-hot block exists.
    score = _two_part_score()
    a = encode_part(score, "lead").features[0]
    b = encode_part(score, "soprano").features[0]
    merged = a + b
    bins = merged[IDX_BIN0:IDX_BIN0 + N_PITCH_BINS]
    assert sorted(np.flatnonzero(bins == 1.0).tolist()) == [
        60 - PITCH_BIN_LO, 67 - PITCH_BIN_LO]
