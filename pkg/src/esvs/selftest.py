"""Fast self-contained sanity checks, runnable as ``esvs selftest``.

Each check exercises one load-bearing piece of the pipeline against a small
hand-computed expectation: the cross-part difference loss, analytic gradients
versus central differences, anchor-aligned padding, voiced-gap interpolation,
checkpoint byte stability, frame expansion, and agreement between the numpy
and compiled kernel backends.  All checks run in well under a second.

The ``ESVS_SELFTEST_MUTATE`` environment variable deliberately corrupts one
computation (``flip_diff_sign`` negates the difference loss) so callers can
confirm that a regression actually trips the suite.
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels
from .features import continuous_lf0
from .losses import f0_diff_loss
from .models import ModelSpec, Regressor, load_checkpoint, save_checkpoint
from .preprocess import expand_to_frames, time_aligned_pad
from .score import FEATURE_DIM

__all__ = ["run_selftest", "CHECK_NAMES"]

CHECK_NAMES = (
    "diff_loss_oracle",
    "gradient_central_difference",
    "time_aligned_padding",
    "voiced_gap_interpolation",
    "checkpoint_byte_stability",
    "frame_expansion",
    "kernel_backend_agreement",
)


def _mutation() -> str:
    return os.environ.get("ESVS_SELFTEST_MUTATE", "").strip()


def _check_diff_loss_oracle():
    pred_a = np.array([1.0, 2.0, 3.0])
    pred_b = np.array([0.5, 1.0, 2.5])
    truth_a = np.array([1.2, 2.2, 2.8])
    truth_b = np.array([0.4, 1.1, 2.6])
    voiced_a = np.array([True, True, False])
    voiced_b = np.array([True, True, True])
    value, _, _ = f0_diff_loss(pred_a, pred_b, truth_a, truth_b,
                               voiced_a, voiced_b, reduction="mean")
    if _mutation() == "flip_diff_sign":
        value = -value
    # gaps: truth (0.8, 1.1), prediction (0.5, 1.0) -> |0.3| + |0.1| over 2
    expected = 0.2
    return abs(value - expected) < 1e-12, f"value={value:.12f} expected={expected}"


def _check_gradient():
    spec = ModelSpec(in_dim=3, hidden=(4,), out_dim=2, recurrent_dim=3, seed=9)
    model = Regressor(spec)
    rng = np.random.default_rng(7)
    x = rng.standard_normal((5, 3))
    dy = np.ones((5, 2))
    _, cache = model.forward(x)
    grad, _ = model.backward(cache, dy)
    eps = 1e-4
    idx = rng.choice(model.theta.shape[0], size=30, replace=False)
    worst = 0.0
    for i in idx:
        orig = model.theta[i]
        model.theta[i] = orig + eps
        up = float(np.sum(model.predict(x)))
        model.theta[i] = orig - eps
        dn = float(np.sum(model.predict(x)))
        model.theta[i] = orig
        fd = (up - dn) / (2 * eps)
        denom = max(abs(fd), abs(grad[i]), 1e-8)
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst < 1e-5, f"worst relative error {worst:.3e}"


def _rows(n):
    rows = np.zeros((n, FEATURE_DIM))
    rows[:, 0] = np.arange(n) * 0.1
    return rows


def _check_padding():
    a = _rows(3)
    b = _rows(2) + 0.5
    pair = time_aligned_pad(a, np.array([0, 1, 2]), b, np.array([0, 2]))
    ok = (pair.length == 3
          and not pair.pad_a.any()
          and pair.pad_b.tolist() == [False, True, False]
          and pair.slots_b[0] == 0 and pair.slots_b[2] == 1)
    return ok, (f"length={pair.length} pad_b={pair.pad_b.tolist()} "
                f"slots_b={pair.slots_b.tolist()}")


def _check_lf0():
    f0 = np.array([220.0, 0.0, 0.0, 440.0])
    lf0, vuv = continuous_lf0(f0)
    lo, hi = np.log(220.0), np.log(440.0)
    expected = np.array([lo, lo + (hi - lo) / 3, lo + 2 * (hi - lo) / 3, hi])
    ok = (np.allclose(lf0, expected, atol=1e-12)
          and vuv.tolist() == [1.0, 0.0, 0.0, 1.0])
    return ok, f"max abs err {np.max(np.abs(lf0 - expected)):.3e}"


def _check_checkpoint():
    import tempfile
    from pathlib import Path

    spec = ModelSpec(in_dim=4, hidden=(5,), out_dim=2, seed=3,
                     out_offset=(1.5, -0.5), out_scale=(2.0, 0.25))
    model = Regressor(spec)
    with tempfile.TemporaryDirectory() as d:
        p1 = Path(d) / "a.ckpt"
        p2 = Path(d) / "b.ckpt"
        save_checkpoint(model, p1, step=7)
        loaded, _ = load_checkpoint(p1)
        save_checkpoint(loaded, p2, step=7)
        ok = p1.read_bytes() == p2.read_bytes()
    return ok, "save/load/save byte-identical" if ok else "round-trip bytes differ"


def _check_expansion():
    rows = _rows(2)
    out = expand_to_frames(rows, np.array([2, 3]), None, part="check")
    ok = (out.frames.shape[0] == 5
          and np.allclose(out.frames[0, 0], rows[0, 0])
          and np.allclose(out.frames[4, 0], rows[1, 0]))
    return ok, f"frames={out.frames.shape[0]} (expected 5)"


def _check_kernels():
    rng = np.random.default_rng(11)
    n = 400
    f0 = np.full(n, 220.0)
    amp = np.abs(rng.standard_normal(n)) * 0.1
    ref = kernels.render_harmonics_numpy(f0, amp, 0.7, 16_000)
    active = kernels.render_harmonics(f0, amp, 0.7, 16_000)
    ok_render = np.allclose(ref, active, atol=1e-9)

    x = rng.standard_normal((20, 3))
    wx = rng.standard_normal((3, 4)) * 0.3
    wh = rng.standard_normal((4, 4)) * 0.3
    b = rng.standard_normal(4) * 0.1
    h_ref = kernels.rnn_forward_numpy(x, wx, wh, b)
    h_act = kernels.rnn_forward(x, wx, wh, b)
    dh = rng.standard_normal((20, 4))
    ref_grads = kernels.rnn_backward_numpy(x, h_ref, wx, wh, dh)
    act_grads = kernels.rnn_backward(x, h_act, wx, wh, dh)
    ok_rnn = all(np.allclose(r, a, atol=1e-9)
                 for r, a in zip(ref_grads, act_grads))
    ok = ok_render and ok_rnn and np.allclose(h_ref, h_act, atol=1e-9)
    return ok, f"backend={kernels.backend_name()}"


def run_selftest() -> list[tuple[str, bool, str]]:
    """Run every check; returns (name, passed, detail) per check."""
    checks = {
        "diff_loss_oracle": _check_diff_loss_oracle,
        "gradient_central_difference": _check_gradient,
        "time_aligned_padding": _check_padding,
        "voiced_gap_interpolation": _check_lf0,
        "checkpoint_byte_stability": _check_checkpoint,
        "frame_expansion": _check_expansion,
        "kernel_backend_agreement": _check_kernels,
    }
    results = []
    for name in CHECK_NAMES:
        try:
            ok, detail = checks[name]()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
