"""Numerical hot loops with optional numba acceleration.

Two kernels dominate runtime: the per-sample harmonic oscillator bank of the
toy vocoder and the per-frame recurrent-layer scans used by the sequence
models.  Each kernel exists twice: a pure-numpy implementation (always
available, used as the reference in tests and benchmarks) and a numba
``@njit`` version compiled from the same arithmetic.

Backend selection happens once at import time:

* numba missing            -> numpy path
* ``ESVS_NUMBA=0|false|off`` -> numpy path (forced fallback)
* otherwise                -> numba path

``benchmarks/bench_kernels.py`` times both paths side by side.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAS_NUMBA = False

_TWO_PI = 2.0 * np.pi


def _env_allows_numba() -> bool:
    return os.environ.get("ESVS_NUMBA", "1").strip().lower() not in ("0", "false", "off")


USE_NUMBA = HAS_NUMBA and _env_allows_numba()


def backend_name() -> str:
    """Name of the active kernel backend, for logs and manifests."""
    return "numba" if USE_NUMBA else "numpy"


def apply_thread_cap() -> int:
    """Cap numba's thread pool from the ESVS_THREADS env var.

    The kernels themselves are serial, so this only bounds whatever numba
    spawns internally.  Returns the cap that was applied (0 = unlimited).
    """
    raw = os.environ.get("ESVS_THREADS", "").strip()
    if not raw:
        return 0
    try:
        cap = max(1, int(raw))
    except ValueError:
        return 0
    if HAS_NUMBA:
        import numba

        try:
            numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))
        except ValueError:  # pragma: no cover - numba rejects caps > detected cores
            pass
    return cap


# ---------------------------------------------------------------------------
# Harmonic oscillator bank (toy vocoder inner loop)
# ---------------------------------------------------------------------------

def render_harmonics_numpy(f0_hz: np.ndarray, amp: np.ndarray, rolloff: float,
                           sample_rate: int) -> np.ndarray:
    """Render a phase-continuous harmonic stack, one value per sample.

    Args:
        f0_hz: per-sample fundamental in Hz, > 0 everywhere (silence is
            expressed through ``amp``, not through f0, so phase never resets).
        amp: per-sample amplitude of the fundamental; 0 mutes a sample.
        rolloff: geometric amplitude decay per harmonic (harmonic k gets
            ``rolloff ** (k - 1)``).
        sample_rate: output rate in Hz.

    Harmonics whose frequency would exceed Nyquist are dropped sample by
    sample, so low notes carry more partials than high ones.
    """
    n = f0_hz.shape[0]
    out = np.zeros(n, dtype=np.float64)
    if n == 0:
        return out
    phase = np.cumsum(_TWO_PI * f0_hz / sample_rate)
    nyquist = 0.5 * sample_rate
    k_max = int(nyquist // max(np.min(f0_hz), 1e-6))
    gain = 1.0
    for k in range(1, k_max + 1):
        audible = (k * f0_hz) <= nyquist
        out += np.where(audible, amp * gain * np.sin(k * phase), 0.0)
        gain *= rolloff
    return out


if HAS_NUMBA:

    @njit(cache=True)
    def _render_harmonics_jit(f0_hz, amp, rolloff, sample_rate):  # pragma: no cover - numba
        n = f0_hz.shape[0]
        out = np.zeros(n, dtype=np.float64)
        nyquist = 0.5 * sample_rate
        phase = 0.0
        for t in range(n):
            phase += _TWO_PI * f0_hz[t] / sample_rate
            gain = 1.0
            k = 1
            freq = f0_hz[t]
            while freq <= nyquist:
                if amp[t] != 0.0:
                    out[t] += amp[t] * gain * np.sin(k * phase)
                gain *= rolloff
                k += 1
                freq = k * f0_hz[t]
        return out


# ---------------------------------------------------------------------------
# Vanilla tanh recurrence (sequence model layer)
# ---------------------------------------------------------------------------

def rnn_forward_numpy(x: np.ndarray, wx: np.ndarray, wh: np.ndarray,
                      b: np.ndarray) -> np.ndarray:
    """h[t] = tanh(x[t] @ wx + h[t-1] @ wh + b), h[-1] = 0.  Returns (T, H)."""
    t_len = x.shape[0]
    h_dim = wh.shape[0]
    h = np.zeros((t_len, h_dim), dtype=np.float64)
    prev = np.zeros(h_dim, dtype=np.float64)
    for t in range(t_len):
        prev = np.tanh(x[t] @ wx + prev @ wh + b)
        h[t] = prev
    return h


def rnn_backward_numpy(x: np.ndarray, h: np.ndarray, wx: np.ndarray,
                       wh: np.ndarray, dh: np.ndarray):
    """Backprop through time for :func:`rnn_forward_numpy`.

    Args:
        x: layer input (T, I).
        h: hidden states produced by the forward pass (T, H).
        wx, wh: forward weights.
        dh: upstream gradient w.r.t. each h[t], shape (T, H).

    Returns:
        (dx, dwx, dwh, db)
    """
    t_len, h_dim = h.shape
    dx = np.zeros_like(x)
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(h_dim, dtype=np.float64)
    carry = np.zeros(h_dim, dtype=np.float64)
    for t in range(t_len - 1, -1, -1):
        dz = (dh[t] + carry) * (1.0 - h[t] * h[t])
        dwx += np.outer(x[t], dz)
        prev = h[t - 1] if t > 0 else np.zeros(h_dim, dtype=np.float64)
        dwh += np.outer(prev, dz)
        db += dz
        dx[t] = dz @ wx.T
        carry = dz @ wh.T
    return dx, dwx, dwh, db


if HAS_NUMBA:

    @njit(cache=True)
    def _rnn_forward_jit(x, wx, wh, b):  # pragma: no cover - numba
        t_len = x.shape[0]
        h_dim = wh.shape[0]
        h = np.zeros((t_len, h_dim), dtype=np.float64)
        prev = np.zeros(h_dim, dtype=np.float64)
        for t in range(t_len):
            z = x[t] @ wx + prev @ wh + b
            for j in range(h_dim):
                prev[j] = np.tanh(z[j])
            h[t] = prev
        return h

    @njit(cache=True)
    def _rnn_backward_jit(x, h, wx, wh, dh):  # pragma: no cover - numba
        t_len, h_dim = h.shape
        in_dim = x.shape[1]
        dx = np.zeros((t_len, in_dim), dtype=np.float64)
        dwx = np.zeros(wx.shape, dtype=np.float64)
        dwh = np.zeros(wh.shape, dtype=np.float64)
        db = np.zeros(h_dim, dtype=np.float64)
        carry = np.zeros(h_dim, dtype=np.float64)
        zeros = np.zeros(h_dim, dtype=np.float64)
        for t in range(t_len - 1, -1, -1):
            dz = (dh[t] + carry) * (1.0 - h[t] * h[t])
            prev = h[t - 1] if t > 0 else zeros
            for i in range(wx.shape[0]):
                for j in range(h_dim):
                    dwx[i, j] += x[t, i] * dz[j]
            for i in range(h_dim):
                for j in range(h_dim):
                    dwh[i, j] += prev[i] * dz[j]
            db += dz
            dx[t] = dz @ wx.T
            carry = dz @ wh.T
        return dx, dwx, dwh, db


if USE_NUMBA:
    render_harmonics = _render_harmonics_jit
    rnn_forward = _rnn_forward_jit
    rnn_backward = _rnn_backward_jit
else:
    render_harmonics = render_harmonics_numpy
    rnn_forward = rnn_forward_numpy
    rnn_backward = rnn_backward_numpy
