"""Training losses, including the cross-part difference terms.

The difference losses act on the gap between two parts rather than on either
part alone: with per-frame predictions yhat and targets y for parts A and B,
the F0 difference loss is the absolute error between the true and predicted
log-F0 gaps,

    sum over voiced(A) & voiced(B) of | (yA - yB) - (yhatA - yhatB) |

and the power difference loss is the same expression on mgc[:, 0].  Both are
invariant to any common shift applied to the two predictions, which is the
point: they grade relative tuning/dynamics, not absolute accuracy.  Voiced
masks always come from ground-truth vuv.

Every function returns the loss value together with exact gradients w.r.t.
the predictions.  Absolute-value terms use the subgradient convention
sign(0) = 0.  Reduction is "mean" (per contributing element) by default;
"sum" leaves the raw sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossWeights",
    "timing_mse",
    "acoustic_mae",
    "f0_diff_loss",
    "pow_diff_loss",
    "total_loss",
    "pairwise_diff_losses",
]


@dataclass
class LossWeights:
    f0diff: float = 1.0
    powdiff: float = 1.0


def _check_reduction(reduction: str) -> None:
    if reduction not in ("mean", "sum"):
        raise ValueError(f"reduction must be 'mean' or 'sum', got '{reduction}'")


def timing_mse(pred: np.ndarray, truth: np.ndarray, reduction: str = "mean"):
    """Squared error on time-lags or durations; returns (value, dpred)."""
    _check_reduction(reduction)
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    err = pred - truth
    denom = err.size if reduction == "mean" and err.size else 1
    value = float(np.sum(err * err)) / denom
    grad = 2.0 * err / denom
    return value, grad


def acoustic_mae(pred: np.ndarray, truth: np.ndarray, reduction: str = "mean"):
    """Absolute error on a feature stream; returns (value, dpred)."""
    _check_reduction(reduction)
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    err = pred - truth
    denom = err.size if reduction == "mean" and err.size else 1
    value = float(np.sum(np.abs(err))) / denom
    grad = np.sign(err) / denom
    return value, grad


def _diff_core(pred_a, pred_b, truth_a, truth_b, mask, reduction):
    """Shared implementation for both difference losses on 1-D streams."""
    delta_true = truth_a - truth_b
    delta_pred = pred_a - pred_b
    err = np.where(mask, delta_true - delta_pred, 0.0)
    count = int(np.sum(mask))
    denom = count if reduction == "mean" and count else 1
    value = float(np.sum(np.abs(err))) / denom
    # d|e|/dpred_a = -sign(e), d|e|/dpred_b = +sign(e); zero outside the mask
    grad_a = -np.sign(err) / denom
    grad_b = np.sign(err) / denom
    return value, grad_a, grad_b


def f0_diff_loss(pred_a: np.ndarray, pred_b: np.ndarray,
                 truth_a: np.ndarray, truth_b: np.ndarray,
                 voiced_a: np.ndarray, voiced_b: np.ndarray,
                 reduction: str = "mean"):
    """Cross-part log-F0 difference loss over the voiced intersection.

    All streams are (T,); ``voiced_*`` are boolean ground-truth masks.
    Returns (value, dpred_a, dpred_b).  An empty intersection yields 0 with
    zero gradients.
    """
    _check_reduction(reduction)
    for name, arr in (("pred_a", pred_a), ("pred_b", pred_b),
                      ("truth_a", truth_a), ("truth_b", truth_b)):
        if np.asarray(arr).ndim != 1:
            raise ValueError(f"{name} must be 1-D, got shape {np.shape(arr)}")
    mask = np.asarray(voiced_a, dtype=bool) & np.asarray(voiced_b, dtype=bool)
    return _diff_core(np.asarray(pred_a, dtype=np.float64),
                      np.asarray(pred_b, dtype=np.float64),
                      np.asarray(truth_a, dtype=np.float64),
                      np.asarray(truth_b, dtype=np.float64), mask, reduction)


def pow_diff_loss(pred_mgc_a: np.ndarray, pred_mgc_b: np.ndarray,
                  truth_mgc_a: np.ndarray, truth_mgc_b: np.ndarray,
                  voiced_a: np.ndarray, voiced_b: np.ndarray,
                  reduction: str = "mean"):
    """Cross-part power difference loss on mgc[:, 0] over voiced frames.

    Takes full (T, 60) mgc matrices; gradients come back in full shape with
    only column 0 populated, ready to add into the spectral-model gradient.
    """
    _check_reduction(reduction)
    for name, arr in (("pred_mgc_a", pred_mgc_a), ("pred_mgc_b", pred_mgc_b),
                      ("truth_mgc_a", truth_mgc_a), ("truth_mgc_b", truth_mgc_b)):
        if np.asarray(arr).ndim != 2:
            raise ValueError(f"{name} must be 2-D (T, dims), got {np.shape(arr)}")
    mask = np.asarray(voiced_a, dtype=bool) & np.asarray(voiced_b, dtype=bool)
    value, ga0, gb0 = _diff_core(
        np.asarray(pred_mgc_a, dtype=np.float64)[:, 0],
        np.asarray(pred_mgc_b, dtype=np.float64)[:, 0],
        np.asarray(truth_mgc_a, dtype=np.float64)[:, 0],
        np.asarray(truth_mgc_b, dtype=np.float64)[:, 0], mask, reduction)
    grad_a = np.zeros_like(np.asarray(pred_mgc_a, dtype=np.float64))
    grad_b = np.zeros_like(np.asarray(pred_mgc_b, dtype=np.float64))
    grad_a[:, 0] = ga0
    grad_b[:, 0] = gb0
    return value, grad_a, grad_b


def total_loss(l_f0: float, l_mgc: float, l_f0diff: float, l_powdiff: float,
               weights: LossWeights) -> float:
    """Weighted objective: l_f0 + l_mgc + w1 * l_f0diff + w2 * l_powdiff."""
    return (float(l_f0) + float(l_mgc)
            + weights.f0diff * float(l_f0diff)
            + weights.powdiff * float(l_powdiff))


def pairwise_diff_losses(preds: dict, truths: dict, voiced: dict,
                         mode: str = "all_pairs",
                         rng: np.random.Generator | None = None,
                         lead: str | None = None,
                         reduction: str = "mean"):
    """Difference losses generalized to N >= 2 parts.

    Args:
        preds/truths: part name -> {"lf0": (T,), "mgc": (T, 60)}.
        voiced: part name -> boolean ground-truth mask.
        mode: "all_pairs" sums every ordered pair (N * (N-1) terms; for two
            parts this is exactly twice the unordered value), "lead_random"
            uses the lead part against one uniformly drawn other part.
        rng: required for "lead_random".
        lead: lead part name (defaults to the first key).

    Returns (l_f0diff, l_powdiff, grads) where grads maps part name to
    {"lf0": (T,), "mgc": (T, 60)} gradient arrays.
    """
    parts = list(preds.keys())
    if len(parts) < 2:
        raise ValueError("need at least two parts")
    if mode == "all_pairs":
        pairs = [(a, b) for a in parts for b in parts if a != b]
    elif mode == "lead_random":
        if rng is None:
            raise ValueError("lead_random mode needs an rng")
        lead = lead or parts[0]
        others = [p for p in parts if p != lead]
        pairs = [(lead, others[int(rng.integers(len(others)))])]
    else:
        raise ValueError(f"unknown pairing mode '{mode}'")

    grads = {p: {"lf0": np.zeros_like(preds[p]["lf0"]),
                 "mgc": np.zeros_like(preds[p]["mgc"])} for p in parts}
    l_f0diff = 0.0
    l_powdiff = 0.0
    for a, b in pairs:
        v, ga, gb = f0_diff_loss(preds[a]["lf0"], preds[b]["lf0"],
                                 truths[a]["lf0"], truths[b]["lf0"],
                                 voiced[a], voiced[b], reduction)
        l_f0diff += v
        grads[a]["lf0"] += ga
        grads[b]["lf0"] += gb
        v, ga, gb = pow_diff_loss(preds[a]["mgc"], preds[b]["mgc"],
                                  truths[a]["mgc"], truths[b]["mgc"],
                                  voiced[a], voiced[b], reduction)
        l_powdiff += v
        grads[a]["mgc"] += ga
        grads[b]["mgc"] += gb
    return l_f0diff, l_powdiff, grads
