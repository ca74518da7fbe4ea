"""Trainer tests: optimizer oracle, batching, configs, and small end-to-end runs."""

import json

import numpy as np
import pytest

from esvs.features import SyntheticCorpusConfig, generate_corpus
from esvs.losses import LossWeights
from esvs.trainer import (
    Adam,
    ExperimentConfig,
    OptimizerConfig,
    build_batches,
    evaluate,
    experiment_config_from_dict,
    load_experiment_config,
    prepare_samples,
    run_experiment,
    split_corpus,
    train_acoustic,
    train_timing,
)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_constant_gradient_oracle():
    # with a constant gradient, bias-corrected m_hat/sqrt(v_hat) is
    # exactly 1 per coordinate, so every step moves by -alpha/(1 + eps).
    cfg = OptimizerConfig(alpha=0.1, clip_norm=1e9)
    theta = np.zeros(3)
    opt = Adam({"w": theta}, cfg)
    g = np.array([1.0, -2.0, 0.5])
    for k in range(1, 6):
        assert opt.step({"w": g.copy()})
        np.testing.assert_allclose(theta, -0.1 * k * np.sign(g), atol=1e-6)
    assert opt.t == 5


def test_adam_global_norm_clip():
    # Gradients above the clip norm are rescaled onto the clip sphere before
    # the moment updates, so m after one step reflects the clipped gradient.
    cfg = OptimizerConfig(alpha=0.01, clip_norm=5.0)
    theta = np.zeros(2)
    opt = Adam({"w": theta}, cfg)
    opt.step({"w": np.array([6.0, 8.0])})  # norm 10 -> scaled to [3, 4]
    np.testing.assert_allclose(opt.m["w"], 0.1 * np.array([3.0, 4.0]))
    # Same direction, different magnitude: clips to the identical gradient.
    theta2 = np.zeros(2)
    opt2 = Adam({"w": theta2}, cfg)
    opt2.step({"w": np.array([60.0, 80.0])})
    np.testing.assert_array_equal(opt2.m["w"], opt.m["w"])
    np.testing.assert_array_equal(theta2, theta)


def test_adam_skips_nonfinite_gradients():
    theta = np.ones(2)
    opt = Adam({"w": theta}, OptimizerConfig())
    before = theta.copy()
    assert not opt.step({"w": np.array([np.nan, 1.0])})
    assert opt.skipped == 1
    assert opt.t == 0
    np.testing.assert_array_equal(theta, before)
    assert opt.step({"w": np.array([1.0, 1.0])})
    assert opt.skipped == 1


def test_adam_updates_multiple_param_groups_in_place():
    a, b = np.zeros(2), np.zeros(3)
    opt = Adam({"a": a, "b": b}, OptimizerConfig(alpha=0.1, clip_norm=1e9))
    opt.step({"a": np.ones(2), "b": -np.ones(3)})
    assert np.all(a < 0) and np.all(b > 0)


# ---------------------------------------------------------------------------
# Batching and splits
# ---------------------------------------------------------------------------

def test_build_batches_partition():
    rng = np.random.default_rng(0)
    batches = build_batches(10, 4, rng)
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(int(i) for b in batches for i in b) == list(range(10))
    with pytest.raises(ValueError, match="batch_size"):
        build_batches(4, 0, rng)


def test_build_batches_deterministic():
    b1 = build_batches(8, 3, np.random.default_rng(7))
    b2 = build_batches(8, 3, np.random.default_rng(7))
    for x, y in zip(b1, b2):
        np.testing.assert_array_equal(x, y)


def test_split_corpus_tail_split():
    songs = list(range(10))
    train, val, test = split_corpus(songs, 0.2, 0.2)
    assert (train, val, test) == (list(range(6)), [6, 7], [8, 9])
    with pytest.raises(ValueError, match="cannot fit"):
        split_corpus([1, 2], 0.2, 0.2)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def test_experiment_config_validation():
    with pytest.raises(ValueError, match="unknown method"):
        ExperimentConfig(method="nope")
    with pytest.raises(ValueError, match="unknown padding"):
        ExperimentConfig(padding="sideways")


def test_method_grid_flags():
    cfg = ExperimentConfig(method="baseline", padding="baseline_isolated")
    assert not cfg.joint_acoustic and not cfg.joint_timing
    cfg = ExperimentConfig(method="mt", padding="time_aligned")
    assert cfg.joint_acoustic and cfg.joint_timing
    # Joint method with isolated padding: acoustic merges, timing cannot.
    cfg = ExperimentConfig(method="mt", padding="baseline_isolated")
    assert cfg.joint_acoustic and not cfg.joint_timing
    assert ExperimentConfig(method="mt_f0diff").weights == LossWeights(1.0, 0.0)
    assert ExperimentConfig(method="mt_powdiff").weights == LossWeights(0.0, 1.0)
    assert ExperimentConfig(method="mt_full").weights == LossWeights(1.0, 1.0)
    cfg = ExperimentConfig(method="mt", weights_override={"f0diff": 0.25})
    assert cfg.weights == LossWeights(0.25, 0.0)


def test_experiment_config_from_dict_round_trip():
    from dataclasses import asdict

    cfg = ExperimentConfig(method="mt_f0diff", seed=3, timing_hidden=(8, 4),
                           corpus=SyntheticCorpusConfig(num_songs=4, seed=9))
    again = experiment_config_from_dict(asdict(cfg))
    assert again == cfg
    with pytest.raises(ValueError, match="unknown experiment config key"):
        experiment_config_from_dict({"bogus": 1})


def test_load_experiment_config_toml(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(
        'method = "mt_full"\n'
        'padding = "post_pad"\n'
        "seed = 2\n"
        "timing_steps = 10\n"
        "[corpus]\n"
        "num_songs = 4\n"
        "seed = 5\n"
        "[optimizer]\n"
        "alpha = 0.001\n"
        "[weights]\n"
        "f0diff = 0.5\n"
        "powdiff = 2.0\n")
    cfg = load_experiment_config(path)
    assert cfg.method == "mt_full"
    assert cfg.padding == "post_pad"
    assert cfg.corpus.num_songs == 4
    assert cfg.optimizer.alpha == 0.001
    assert cfg.weights == LossWeights(0.5, 2.0)


# ---------------------------------------------------------------------------
# Sample preparation and small training runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_corpus():
    return generate_corpus(SyntheticCorpusConfig(
        num_songs=4, notes_per_part=(12, 16), seed=21))


def _tiny_config(**kw):
    base = dict(method="mt", padding="time_aligned", seed=0,
                timing_steps=60, acoustic_steps=40, batch_size=2,
                crop_frames=128, eval_every=20, patience=50,
                timing_hidden=(8,), acoustic_hidden=(8,),
                corpus=SyntheticCorpusConfig(num_songs=4,
                                             notes_per_part=(12, 16), seed=21))
    base.update(kw)
    return ExperimentConfig(**base)


def test_prepare_samples_structure(tiny_corpus):
    samples = prepare_samples(tiny_corpus, "time_aligned")
    assert len(samples) >= 4
    for s in samples:
        assert s.pair is not None
        for p in s.parts:
            assert s.targets[p]["lf0"].shape == (s.num_frames,)
            assert s.frames_own[p].shape[0] == s.num_frames
            assert int(np.sum(s.durs[p])) == s.num_frames
        assert s.frames_joint.shape[0] == s.num_frames
        # merged rows are the elementwise sum of the two parts' rows
        a, b = s.parts
        np.testing.assert_allclose(
            s.frames_joint, s.frames_own[a] + s.frames_own[b], atol=1e-12)
    assert prepare_samples(tiny_corpus, "baseline_isolated")[0].pair is None


def test_train_timing_decreases_loss_and_is_deterministic(tiny_corpus):
    cfg = _tiny_config(timing_steps=300, eval_every=100,
                       optimizer=OptimizerConfig(alpha=1e-3))
    samples = prepare_samples(tiny_corpus, cfg.padding)
    train_s, val_s, _ = split_corpus(samples, 0.25, 0.25)
    models1, rows1, info1 = train_timing(cfg, train_s, val_s)
    assert info1["steps_run"] == 300
    assert info1["skipped_nonfinite"] == 0
    # individual rows are single-batch losses; compare averaged windows
    first = np.mean([r[3] for r in rows1[:30]])
    last = np.mean([r[3] for r in rows1[-30:]])
    assert last < first
    models2, rows2, _ = train_timing(cfg, train_s, val_s)
    np.testing.assert_array_equal(models1["timing"].theta,
                                  models2["timing"].theta)
    assert rows1 == rows2


def test_train_timing_isolated_builds_per_part_models(tiny_corpus):
    cfg = _tiny_config(method="baseline", padding="baseline_isolated",
                       timing_steps=30)
    samples = prepare_samples(tiny_corpus, "post_pad")
    train_s, val_s, _ = split_corpus(samples, 0.25, 0.25)
    models, _, _ = train_timing(cfg, train_s, val_s)
    assert set(models) == set(train_s[0].parts)


def test_train_acoustic_decreases_loss_and_is_deterministic(tiny_corpus):
    cfg = _tiny_config(acoustic_steps=160, eval_every=80,
                       optimizer=OptimizerConfig(alpha=1e-3))
    samples = prepare_samples(tiny_corpus, cfg.padding)
    train_s, val_s, _ = split_corpus(samples, 0.25, 0.25)
    bundles1, rows1, info1 = train_acoustic(cfg, train_s, val_s)
    assert info1["steps_run"] == 160
    assert (np.mean([r[5] for r in rows1[-20:]])
            < np.mean([r[5] for r in rows1[:20]]))
    bundles2, rows2, _ = train_acoustic(cfg, train_s, val_s)
    for p in bundles1:
        for name, model in bundles1[p].models().items():
            np.testing.assert_array_equal(model.theta,
                                          bundles2[p].models()[name].theta)
    assert rows1 == rows2


def test_mt_full_with_zero_weights_equals_mt(tiny_corpus):
    # The method grid is pure configuration: zeroing mt_full's difference
    # weights reproduces mt's training trajectory exactly.
    samples = prepare_samples(tiny_corpus, "time_aligned")
    train_s, val_s, _ = split_corpus(samples, 0.25, 0.25)
    cfg_mt = _tiny_config(method="mt")
    cfg_zero = _tiny_config(method="mt_full",
                            weights_override={"f0diff": 0.0, "powdiff": 0.0})
    b_mt, _, _ = train_acoustic(cfg_mt, train_s, val_s)
    b_zero, _, _ = train_acoustic(cfg_zero, train_s, val_s)
    for p in b_mt:
        np.testing.assert_array_equal(b_mt[p].lf0.theta, b_zero[p].lf0.theta)
        np.testing.assert_array_equal(b_mt[p].mgc.theta, b_zero[p].mgc.theta)


def test_evaluate_produces_finite_report(tiny_corpus):
    cfg = _tiny_config()
    samples = prepare_samples(tiny_corpus, cfg.padding)
    train_s, val_s, test_s = split_corpus(samples, 0.25, 0.25)
    timing_models, _, _ = train_timing(cfg, train_s, val_s)
    bundles, _, _ = train_acoustic(cfg, train_s, val_s)
    report = evaluate(cfg, timing_models, bundles, test_s)
    for key, value in report.to_dict()["metrics"].items():
        assert np.isfinite(value), key
    assert report.frames_total > 0
    assert report.notes_total > 0
    # timing-only variant zeroes the acoustic block
    r2 = evaluate(cfg, timing_models, None, test_s)
    assert r2.mcd_db == 0.0
    assert r2.timelag_rmse_frames == report.timelag_rmse_frames


def test_run_experiment_writes_artifacts(tmp_path, tiny_corpus):
    cfg = _tiny_config(timing_steps=40, acoustic_steps=30)
    res = run_experiment(cfg, tmp_path / "run", songs=tiny_corpus)
    for name in ("loss_curve_timing.csv", "timing.ckpt",
                 "loss_curve_acoustic.csv", "metrics.json",
                 "run_manifest.json"):
        assert (tmp_path / "run" / name).exists(), name
    assert (tmp_path / "run" / "acoustic_lead" / "lf0.ckpt").exists()
    manifest = json.loads((tmp_path / "run" / "run_manifest.json").read_text())
    assert manifest["kind"] == "run_manifest"
    # the stored config reconstructs the exact ExperimentConfig
    again = experiment_config_from_dict(manifest["config"])
    assert again == cfg
    metrics = json.loads((tmp_path / "run" / "metrics.json").read_text())
    assert set(metrics["metrics"]) == {
        "mcd_db", "lf0_rmse", "lf0diff_rmse", "powdiff_rmse",
        "timelag_rmse_frames", "duration_rmse_frames", "vuv_error_rate"}


def test_run_experiment_timing_only(tmp_path, tiny_corpus):
    cfg = _tiny_config(method="baseline", padding="baseline_isolated",
                       timing_steps=30)
    res = run_experiment(cfg, tmp_path / "run", songs=tiny_corpus,
                         timing_only=True)
    assert res["bundles"] is None
    assert (tmp_path / "run" / "timing_lead.ckpt").exists()
    assert (tmp_path / "run" / "timing_soprano.ckpt").exists()
    assert not (tmp_path / "run" / "loss_curve_acoustic.csv").exists()
