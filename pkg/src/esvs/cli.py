"""Command-line interface.

Subcommands:

    gen-corpus       generate a deterministic synthetic duet corpus
    preprocess       segment and pad a score file, writing slot arrays
    train            run one training experiment end to end
    eval             re-evaluate a finished run from its checkpoints
    synth            render audio from a finished run
    compare-padding  timing-only study across padding strategies and seeds
    selftest         fast internal sanity checks

Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure,
3 selftest failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .features import (
    SyntheticCorpusConfig,
    corpus_config_from_dict,
    generate_corpus,
    load_corpus,
    save_corpus,
    save_features,
)
from .models import load_bundle, load_checkpoint
from .preprocess import post_pad, segment_synchronized, time_aligned_pad
from .score import ScoreError, encode_part, load_score
from .selftest import run_selftest
from .synthesizer import (
    DEFAULT_SAMPLE_RATE,
    mix_ensemble,
    synthesize_score,
    write_wav,
)
from .trainer import (
    ExperimentConfig,
    PADDINGS,
    METHODS,
    experiment_config_from_dict,
    load_experiment_config,
    prepare_samples,
    evaluate,
    run_experiment,
    split_corpus,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

logger = logging.getLogger("esvs.cli")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_SELFTEST = 3


def _json_dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _load_corpus_toml(path) -> SyntheticCorpusConfig:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    section = doc.get("corpus", doc)
    return corpus_config_from_dict(section)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    if args.config:
        cfg = _load_corpus_toml(args.config)
    else:
        cfg = SyntheticCorpusConfig()
    if args.seed is not None:
        cfg = SyntheticCorpusConfig(**{**_cfg_dict(cfg), "seed": args.seed})
    if args.num_songs is not None:
        cfg = SyntheticCorpusConfig(**{**_cfg_dict(cfg), "num_songs": args.num_songs})
    songs = generate_corpus(cfg)
    save_corpus(songs, args.out, cfg)
    frames = sum(song.acoustic[p].num_frames
                 for song in songs for p in song.score.part_names)
    print(f"wrote {len(songs)} songs ({frames} frames) to {args.out}")
    return EXIT_OK


def _cfg_dict(cfg) -> dict:
    from dataclasses import asdict

    return asdict(cfg)


def cmd_preprocess(args) -> int:
    score = load_score(args.score)
    parts = score.part_names
    if len(parts) != 2:
        raise ScoreError(f"preprocess expects exactly 2 parts, got {len(parts)}")
    enc = {p: encode_part(score, p).features for p in parts}
    segments = segment_synchronized(score)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"score": str(args.score), "padding": args.padding,
               "num_segments": len(segments), "segments": []}
    a, b = parts
    for i, seg in enumerate(segments):
        lo_a, hi_a = seg.note_ranges[a]
        lo_b, hi_b = seg.note_ranges[b]
        rows_a, rows_b = enc[a][lo_a:hi_a], enc[b][lo_b:hi_b]
        if args.padding == "time_aligned":
            on_a = np.array([n.onset_ticks for n in score.parts[a][lo_a:hi_a]])
            on_b = np.array([n.onset_ticks for n in score.parts[b][lo_b:hi_b]])
            pair = time_aligned_pad(rows_a, on_a, rows_b, on_b)
        else:
            pair = post_pad(rows_a, rows_b)
        np.savez(out / f"segment_{i:03d}.npz",
                 features_a=pair.features_a, features_b=pair.features_b,
                 pad_a=pair.pad_a, pad_b=pair.pad_b,
                 slots_a=pair.slots_a, slots_b=pair.slots_b)
        summary["segments"].append({
            "index": i, "start_tick": seg.start_tick, "end_tick": seg.end_tick,
            "notes_a": int(hi_a - lo_a), "notes_b": int(hi_b - lo_b),
            "slots": int(pair.length),
            "pad_slots_a": int(pair.pad_a.sum()),
            "pad_slots_b": int(pair.pad_b.sum())})
    _json_dump(out / "summary.json", summary)
    print(f"wrote {len(segments)} segments to {out}")
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_experiment_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "method", None):
        cfg.method = args.method
    if getattr(args, "padding", None):
        cfg.padding = args.padding
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.corpus = corpus_config_from_dict(
            {**_cfg_dict(cfg.corpus), "seed": args.seed})
    cfg.__post_init__()
    return cfg


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    songs = None
    if args.corpus:
        songs, _ = load_corpus(args.corpus)
    result = run_experiment(cfg, args.out, songs=songs)
    report = result["report"]
    print(f"method={cfg.method} padding={cfg.padding} seed={cfg.seed} "
          f"backend={kernels.backend_name()}")
    for key, value in report.to_dict()["metrics"].items():
        print(f"  {key}: {value:.6f}")
    print(f"artifacts in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    manifest = json.loads((run_dir / "run_manifest.json").read_text(encoding="utf-8"))
    cfg = experiment_config_from_dict(manifest["config"])
    if args.corpus:
        songs, _ = load_corpus(args.corpus)
    else:
        songs = generate_corpus(cfg.corpus)
    _, _, test_songs = split_corpus(songs, cfg.val_fraction, cfg.test_fraction)
    padding = cfg.padding if cfg.padding != "baseline_isolated" else "post_pad"
    test_samples = prepare_samples(test_songs, padding)
    timing_models = _load_timing(run_dir, test_samples[0].parts)
    bundles = _load_bundles(run_dir, test_samples[0].parts)
    report = evaluate(cfg, timing_models, bundles, test_samples)
    out_path = Path(args.out) if args.out else run_dir / "eval_metrics.json"
    report.save(out_path)
    for key, value in report.to_dict()["metrics"].items():
        print(f"{key}: {value:.6f}")
    print(f"wrote {out_path}")
    return EXIT_OK


def _load_timing(run_dir: Path, parts):
    joint_path = run_dir / "timing.ckpt"
    if joint_path.exists():
        return {"timing": load_checkpoint(joint_path)[0]}
    models = {}
    for part in parts:
        p = run_dir / f"timing_{part}.ckpt"
        if p.exists():
            models[part] = load_checkpoint(p)[0]
    if not models:
        raise FileNotFoundError(f"no timing checkpoints under {run_dir}")
    return models


def _load_bundles(run_dir: Path, parts):
    bundles = {}
    for part in parts:
        d = run_dir / f"acoustic_{part}"
        if d.is_dir():
            bundles[part] = load_bundle(d)
    return bundles or None


def cmd_synth(args) -> int:
    run_dir = Path(args.run)
    manifest = json.loads((run_dir / "run_manifest.json").read_text(encoding="utf-8"))
    cfg = experiment_config_from_dict(manifest["config"])
    if args.score:
        score = load_score(args.score)
    else:
        songs = generate_corpus(cfg.corpus)
        _, _, test_songs = split_corpus(songs, cfg.val_fraction, cfg.test_fraction)
        if not 0 <= args.song_index < len(test_songs):
            raise ValueError(f"song index {args.song_index} out of range "
                             f"(test split has {len(test_songs)} songs)")
        score = test_songs[args.song_index].score
    parts = score.part_names
    timing_models = _load_timing(run_dir, parts)
    bundles = _load_bundles(run_dir, parts)
    if bundles is None:
        raise FileNotFoundError(f"no acoustic checkpoints under {run_dir}")
    results = synthesize_score(
        score, timing_models, bundles,
        joint_timing=cfg.joint_timing, joint_acoustic=cfg.joint_acoustic,
        padding=cfg.padding if cfg.padding != "baseline_isolated" else "post_pad",
        sample_rate=args.sample_rate, noise_seed=args.seed or 2026)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for part, res in results.items():
        write_wav(out / f"{part}.wav", res.waveform, res.sample_rate)
        save_features(res.features, out / f"{part}_pred")
    mix = mix_ensemble({p: r.waveform for p, r in results.items()},
                       lead=parts[0])
    write_wav(out / "mix.wav", mix, args.sample_rate)
    seconds = mix.shape[0] / args.sample_rate
    print(f"wrote {len(results)} part wavs + mix.wav ({seconds:.2f} s) to {out}")
    return EXIT_OK


def cmd_compare_padding(args) -> int:
    if args.seeds < 1:
        raise ValueError(f"--seeds must be >= 1, got {args.seeds}")
    base = load_experiment_config(args.config) if args.config else ExperimentConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = {p: {"lag": [], "dur": []} for p in PADDINGS}
    for k in range(args.seeds):
        seed = base.seed + k
        corpus_cfg = corpus_config_from_dict(
            {**_cfg_dict(base.corpus), "seed": seed})
        songs = generate_corpus(corpus_cfg)
        for padding in PADDINGS:
            cfg = experiment_config_from_dict({
                **{key: value for key, value in _cfg_dict(base).items()
                   if key not in ("corpus", "optimizer", "weights_override")},
                "method": "mt" if padding != "baseline_isolated" else "baseline",
                "padding": padding, "seed": seed})
            cfg.corpus = corpus_cfg
            cfg.optimizer = base.optimizer
            result = run_experiment(cfg, out / f"{padding}_seed{seed}",
                                    songs=songs, timing_only=True)
            report = result["report"]
            rows[padding]["lag"].append(report.timelag_rmse_frames)
            rows[padding]["dur"].append(report.duration_rmse_frames)
            print(f"padding={padding} seed={seed} "
                  f"lag_rmse={report.timelag_rmse_frames:.4f} "
                  f"dur_rmse={report.duration_rmse_frames:.4f}")
    csv_path = out / "padding_comparison.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("padding,timelag_rmse_frames,duration_rmse_frames,num_seeds\n")
        for padding in PADDINGS:
            lag = float(np.mean(rows[padding]["lag"]))
            dur = float(np.mean(rows[padding]["dur"]))
            fh.write(f"{padding},{lag:.6f},{dur:.6f},{args.seeds}\n")
    _json_dump(out / "padding_comparison.json",
               {p: {"timelag_rmse_frames": rows[p]["lag"],
                    "duration_rmse_frames": rows[p]["dur"]} for p in PADDINGS})
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest()
    failed = 0
    for name, ok, detail in results:
        status = "ok" if ok else "FAIL"
        print(f"[{status:>4}] {name}: {detail}")
        failed += 0 if ok else 1
    if failed:
        print(f"{failed}/{len(results)} checks failed")
        return EXIT_SELFTEST
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esvs",
        description="Ensemble singing-voice synthesis experiments")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default="warning",
                        choices=("debug", "info", "warning", "error"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic duet corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="TOML with a [corpus] table")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--num-songs", type=int, default=None)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("preprocess", help="segment and pad a score file")
    p.add_argument("--score", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--padding", default="time_aligned",
                   choices=("post_pad", "time_aligned"))
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="run one experiment")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="TOML experiment file")
    p.add_argument("--method", default=None, choices=tuple(METHODS))
    p.add_argument("--padding", default=None, choices=PADDINGS)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--corpus", default=None,
                   help="reuse a corpus directory instead of generating one")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--corpus", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render audio from a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--score", default=None,
                   help="score JSON (default: a held-out corpus song)")
    p.add_argument("--song-index", type=int, default=0)
    p.add_argument("--sample-rate", type=int, default=DEFAULT_SAMPLE_RATE,
                   choices=(16_000, 48_000))
    p.add_argument("--seed", type=int, default=None,
                   help="noise seed for the vocoder")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compare-padding",
                       help="timing study across padding strategies")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", type=int, default=3,
                   help="number of seeds to run, starting at the config seed")
    p.set_defaults(func=cmd_compare_padding)

    p = sub.add_parser("selftest", help="fast internal sanity checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s")
    kernels.apply_thread_cap()
    try:
        return args.func(args)
    except ScoreError as exc:
        logger.error("invalid score: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:  # includes TOML/JSON parse errors
        logger.error("invalid input: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        logger.error("i/o failure: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
