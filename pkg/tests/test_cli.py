"""CLI tests: subcommands, exit codes, and artifact round trips."""

import json
import subprocess
import sys

import numpy as np
import pytest
from scipy.io import wavfile

from esvs.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, EXIT_SELFTEST, main
from esvs.features import load_corpus
from esvs.score import Note, Score, dump_score

TINY_EXPERIMENT_TOML = """
method = "mt"
padding = "time_aligned"
seed = 0
timing_steps = 30
acoustic_steps = 20
batch_size = 2
crop_frames = 128
eval_every = 10
timing_hidden = [8]
acoustic_hidden = [8]

[corpus]
num_songs = 4
notes_per_part = [12, 16]
seed = 21
"""


def _demo_score() -> Score:
    return Score(ticks_per_second=8.0, parts={
        "lead": [Note(0, 4, 60, ("a",)), Note(4, 2, None), Note(6, 4, 64)],
        "soprano": [Note(0, 4, 67), Note(4, 2, None), Note(6, 4, 71)],
    })


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_run")
    cfg = root / "exp.toml"
    cfg.write_text(TINY_EXPERIMENT_TOML)
    out = root / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    return out


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip()


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_gen_corpus_round_trip(tmp_path, capsys):
    out = tmp_path / "corpus"
    code = main(["gen-corpus", "--out", str(out),
                 "--num-songs", "2", "--seed", "5"])
    assert code == EXIT_OK
    assert "wrote 2 songs" in capsys.readouterr().out
    songs, manifest = load_corpus(out)
    assert len(songs) == 2
    assert manifest["config"]["seed"] == 5
    assert manifest["config"]["num_songs"] == 2


def test_preprocess_writes_segments(tmp_path, capsys):
    score_path = tmp_path / "score.json"
    dump_score(_demo_score(), score_path)
    out = tmp_path / "prep"
    code = main(["preprocess", "--score", str(score_path), "--out", str(out),
                 "--padding", "time_aligned"])
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["num_segments"] == len(summary["segments"]) >= 1
    seg = np.load(out / "segment_000.npz")
    assert seg["features_a"].shape[0] == seg["features_b"].shape[0]


def test_preprocess_rejects_bad_score(tmp_path):
    score_path = tmp_path / "bad.json"
    score_path.write_text(json.dumps({
        "ticks_per_second": 8.0,
        "parts": {"lead": [{"onset": 0, "dur": 4, "pitch": 60},
                           {"onset": 2, "dur": 4, "pitch": 62}],  # overlap
                  "soprano": [{"onset": 0, "dur": 4, "pitch": 67}]}}))
    code = main(["preprocess", "--score", str(score_path),
                 "--out", str(tmp_path / "prep")])
    assert code == EXIT_INVALID


def test_train_writes_metrics(trained_run, capsys):
    assert (trained_run / "metrics.json").exists()
    assert (trained_run / "run_manifest.json").exists()


def test_train_missing_config_exits_io(tmp_path):
    code = main(["train", "--config", str(tmp_path / "nope.toml"),
                 "--out", str(tmp_path / "run")])
    assert code == EXIT_IO


def test_eval_recomputes_metrics(trained_run, tmp_path, capsys):
    out = tmp_path / "eval.json"
    code = main(["eval", "--run", str(trained_run), "--out", str(out)])
    assert code == EXIT_OK
    fresh = json.loads(out.read_text())
    stored = json.loads((trained_run / "metrics.json").read_text())
    # checkpoints hold float32 parameters, so reloaded metrics agree only to
    # within the quantization noise
    for key, value in stored["metrics"].items():
        assert fresh["metrics"][key] == pytest.approx(value, rel=1e-3, abs=1e-4)


def test_synth_writes_wavs(trained_run, tmp_path, capsys):
    out = tmp_path / "audio"
    code = main(["synth", "--run", str(trained_run), "--out", str(out)])
    assert code == EXIT_OK
    for name in ("lead.wav", "soprano.wav", "mix.wav"):
        sr, data = wavfile.read(out / name)
        assert sr == 16_000
        assert data.dtype == np.int16
        assert data.shape[0] > 0


def test_synth_song_index_out_of_range(trained_run, tmp_path):
    code = main(["synth", "--run", str(trained_run),
                 "--out", str(tmp_path / "audio"), "--song-index", "99"])
    assert code == EXIT_INVALID


def test_compare_padding_writes_tables(tmp_path, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(TINY_EXPERIMENT_TOML)
    out = tmp_path / "study"
    code = main(["compare-padding", "--config", str(cfg),
                 "--out", str(out), "--seeds", "1"])
    assert code == EXIT_OK
    lines = (out / "padding_comparison.csv").read_text().strip().splitlines()
    assert lines[0] == "padding,timelag_rmse_frames,duration_rmse_frames,num_seeds"
    assert len(lines) == 4  # header + one row per padding strategy
    table = json.loads((out / "padding_comparison.json").read_text())
    assert set(table) == {"post_pad", "time_aligned", "baseline_isolated"}


def test_compare_padding_rejects_nonpositive_seed_count(tmp_path):
    code = main(["compare-padding", "--out", str(tmp_path / "study"),
                 "--seeds", "0"])
    assert code == EXIT_INVALID


def test_selftest_subcommand_ok(capsys, monkeypatch):
    monkeypatch.delenv("ESVS_SELFTEST_MUTATE", raising=False)
    assert main(["selftest"]) == EXIT_OK
    assert "all 7 checks passed" in capsys.readouterr().out


def test_selftest_subcommand_failure(capsys, monkeypatch):
    monkeypatch.setenv("ESVS_SELFTEST_MUTATE", "flip_diff_sign")
    assert main(["selftest"]) == EXIT_SELFTEST
    assert "FAIL" in capsys.readouterr().out


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "esvs.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
