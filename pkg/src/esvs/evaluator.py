"""Objective metrics and the evaluation report.

Conventions:

* MCD uses spectral dims 1..59 only (dim 0 is the power term) and the
  constant 10 * sqrt(2) / ln(10), about 6.1418 dB for a single unit
  difference in one dimension.
* LF0-RMSE counts frames voiced in BOTH ground truth and prediction for the
  part under test; the difference metrics (LF0diff / Powdiff) count frames
  voiced in both parts' GROUND TRUTH, mirroring the training masks.
* Timing RMSE pools every note of every part.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

__all__ = [
    "MCD_CONST",
    "mcd",
    "lf0_rmse",
    "lf0_diff_rmse",
    "pow_diff_rmse",
    "timing_rmse",
    "vuv_error_rate",
    "MetricsReport",
    "write_delta_trace_csv",
]

MCD_CONST = 10.0 * math.sqrt(2.0) / math.log(10.0)


def _as_mask(m) -> np.ndarray:
    return np.asarray(m, dtype=bool)


def mcd(pred_mgc: np.ndarray, truth_mgc: np.ndarray,
        mask: np.ndarray | None = None) -> float:
    """Mel-cepstral distortion in dB over dims 1.. (power dim excluded)."""
    pred = np.asarray(pred_mgc, dtype=np.float64)
    truth = np.asarray(truth_mgc, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ValueError(f"mgc shapes must match and be 2-D: {pred.shape} vs "
                         f"{truth.shape}")
    diff = pred[:, 1:] - truth[:, 1:]
    per_frame = np.sqrt(np.sum(diff * diff, axis=1))
    if mask is not None:
        per_frame = per_frame[_as_mask(mask)]
    if per_frame.size == 0:
        return 0.0
    return float(MCD_CONST * np.mean(per_frame))


def lf0_rmse(pred_lf0: np.ndarray, truth_lf0: np.ndarray,
             pred_voiced: np.ndarray, truth_voiced: np.ndarray) -> float:
    """RMSE over frames voiced in both prediction and ground truth."""
    mask = _as_mask(pred_voiced) & _as_mask(truth_voiced)
    if not np.any(mask):
        return 0.0
    err = np.asarray(pred_lf0, dtype=np.float64)[mask] \
        - np.asarray(truth_lf0, dtype=np.float64)[mask]
    return float(np.sqrt(np.mean(err * err)))


def lf0_diff_rmse(pred_a, pred_b, truth_a, truth_b, voiced_a, voiced_b) -> float:
    """RMSE of the cross-part log-F0 gap over the truth-voiced intersection."""
    mask = _as_mask(voiced_a) & _as_mask(voiced_b)
    if not np.any(mask):
        return 0.0
    delta_truth = np.asarray(truth_a, dtype=np.float64) - np.asarray(truth_b, dtype=np.float64)
    delta_pred = np.asarray(pred_a, dtype=np.float64) - np.asarray(pred_b, dtype=np.float64)
    err = (delta_truth - delta_pred)[mask]
    return float(np.sqrt(np.mean(err * err)))


def pow_diff_rmse(pred_mgc_a, pred_mgc_b, truth_mgc_a, truth_mgc_b,
                  voiced_a, voiced_b) -> float:
    """RMSE of the cross-part power gap (mgc[:, 0]) over the voiced intersection."""
    return lf0_diff_rmse(np.asarray(pred_mgc_a)[:, 0], np.asarray(pred_mgc_b)[:, 0],
                         np.asarray(truth_mgc_a)[:, 0], np.asarray(truth_mgc_b)[:, 0],
                         voiced_a, voiced_b)


def timing_rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Plain RMSE, used pooled over all notes of all parts."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        return 0.0
    err = pred - truth
    return float(np.sqrt(np.mean(err * err)))


def vuv_error_rate(pred_vuv: np.ndarray, truth_vuv: np.ndarray) -> float:
    """Fraction of frames whose thresholded voicing decision disagrees."""
    p = _as_mask(np.asarray(pred_vuv) > 0.5)
    t = _as_mask(np.asarray(truth_vuv) > 0.5)
    if p.size == 0:
        return 0.0
    return float(np.mean(p != t))


@dataclass
class MetricsReport:
    """Flat metric summary; serializes deterministically."""

    mcd_db: float
    lf0_rmse: float
    lf0diff_rmse: float
    powdiff_rmse: float
    timelag_rmse_frames: float
    duration_rmse_frames: float
    vuv_error_rate: float
    frames_total: int
    frames_voiced_pair: int
    notes_total: int

    def to_dict(self) -> dict:
        d = asdict(self)
        return {
            "schema_version": 1,
            "metrics": {k: d[k] for k in ("mcd_db", "lf0_rmse", "lf0diff_rmse",
                                          "powdiff_rmse", "timelag_rmse_frames",
                                          "duration_rmse_frames", "vuv_error_rate")},
            "counts": {k: d[k] for k in ("frames_total", "frames_voiced_pair",
                                         "notes_total")},
            "definitions": {
                "mcd": "10*sqrt(2)/ln(10) * mean_t ||mgc_pred[t,1:]-mgc_truth[t,1:]||, truth-voiced frames",
                "lf0_rmse": "voiced in both truth and prediction",
                "diff_rmse": "truth-voiced intersection of the two parts",
                "timing_rmse": "pooled over notes and parts, 5 ms frames",
            },
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8")


def write_delta_trace_csv(path, truth_a, truth_b, pred_a, pred_b,
                          truth_mgc_a, truth_mgc_b, pred_mgc_a, pred_mgc_b,
                          voiced_a, voiced_b) -> None:
    """Per-frame cross-part gap traces (truth vs prediction) for plotting."""
    mask = _as_mask(voiced_a) & _as_mask(voiced_b)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "delta_lf0_truth", "delta_lf0_pred",
                    "delta_pow_truth", "delta_pow_pred", "voiced_both"])
        for t in range(len(truth_a)):
            w.writerow([t,
                        f"{truth_a[t] - truth_b[t]:.8f}",
                        f"{pred_a[t] - pred_b[t]:.8f}",
                        f"{truth_mgc_a[t, 0] - truth_mgc_b[t, 0]:.8f}",
                        f"{pred_mgc_a[t, 0] - pred_mgc_b[t, 0]:.8f}",
                        int(mask[t])])
