"""Hand-rolled sequence regressors with exact reverse-mode gradients.

Models here are deliberately tiny (a few dense tanh layers, optionally one
vanilla tanh recurrence, at most ~50k parameters) and carry their own
backward pass, so gradient correctness can be verified against central
finite differences to tight tolerances.  Parameters live in one flat float64
vector; layer weights are reshaped views into it, which keeps the optimizer
and checkpoint code trivial.

Checkpoints are a single-line JSON header (architecture, step, metadata)
followed by the raw float32 parameter blob; loading restores float64 params
by exact upcast, so save -> load -> save reproduces the file byte for byte.

Two prediction paths mirror the synthesis pipeline:

* :func:`predict_timing` maps a padded score pair (or one part alone, for
  part-isolated baselines) to per-note time-lags and durations;
* :func:`predict_acoustic` runs the per-part cascade: lf0 first, then mgc,
  bap and vuv conditioned on the predicted lf0.  The backward companion
  treats that conditioning column as detached, so each stream trains on its
  own objective.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import kernels
from .features import BAP_DIM, MGC_DIM
from .preprocess import PaddedScorePair

__all__ = [
    "ModelSpec",
    "Regressor",
    "AcousticModelBundle",
    "predict_timing",
    "predict_timing_isolated",
    "quantize_timing",
    "predict_acoustic",
    "acoustic_forward",
    "acoustic_backward",
    "save_checkpoint",
    "load_checkpoint",
    "save_bundle",
    "load_bundle",
]

PARAM_BUDGET = 50_000


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor: dense tanh stack, optional single recurrence.

    ``out_offset`` / ``out_scale`` apply a fixed per-dimension affine to the
    network output (y = raw * scale + offset).  Target standardization lives
    here rather than in the data so checkpoints stay self-contained.
    """

    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    recurrent_dim: int = 0
    out_activation: str = "linear"  # or "sigmoid"
    seed: int = 0
    out_offset: tuple[float, ...] | float = 0.0
    out_scale: tuple[float, ...] | float = 1.0

    def __post_init__(self):
        if self.out_activation not in ("linear", "sigmoid"):
            raise ValueError(f"unknown activation '{self.out_activation}'")
        for name in ("out_offset", "out_scale"):
            v = getattr(self, name)
            if isinstance(v, tuple) and len(v) != self.out_dim:
                raise ValueError(f"{name} has {len(v)} entries for out_dim="
                                 f"{self.out_dim}")


class Regressor:
    """Feed-forward (optionally recurrent) regressor over frame/slot rows."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self._out_offset = np.asarray(spec.out_offset, dtype=np.float64)
        self._out_scale = np.asarray(spec.out_scale, dtype=np.float64)
        self._layout: list[tuple[str, int, tuple[int, ...]]] = []
        offset = 0
        prev = spec.in_dim
        for i, h in enumerate(spec.hidden):
            offset = self._add(f"dense{i}.w", offset, (prev, h))
            offset = self._add(f"dense{i}.b", offset, (h,))
            prev = h
        if spec.recurrent_dim > 0:
            r = spec.recurrent_dim
            offset = self._add("rnn.wx", offset, (prev, r))
            offset = self._add("rnn.wh", offset, (r, r))
            offset = self._add("rnn.b", offset, (r,))
            prev = r
        offset = self._add("out.w", offset, (prev, spec.out_dim))
        offset = self._add("out.b", offset, (spec.out_dim,))
        if offset > PARAM_BUDGET:
            raise ValueError(f"model has {offset} parameters, budget is {PARAM_BUDGET}")
        self.theta = np.zeros(offset, dtype=np.float64)
        # theta is only ever mutated in place, so reshaped views stay valid
        # and parameter lookups avoid rescanning the layout on the hot path.
        self._slots = {name: (off, off + int(np.prod(shape)), shape)
                       for name, off, shape in self._layout}
        self._views = {name: self.theta[lo:hi].reshape(shape)
                       for name, (lo, hi, shape) in self._slots.items()}
        self._init_params()

    def _add(self, name: str, offset: int, shape: tuple[int, ...]) -> int:
        self._layout.append((name, offset, shape))
        return offset + int(np.prod(shape))

    def _init_params(self) -> None:
        rng = np.random.default_rng(self.spec.seed)
        for name, offset, shape in self._layout:
            if name == "rnn.wh":
                fan_in = shape[0]
            elif name.endswith(".b"):
                fan_in = self._fan_in_for_bias(name)
            else:
                fan_in = shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            size = int(np.prod(shape))
            self.theta[offset:offset + size] = rng.uniform(-bound, bound, size)

    def _fan_in_for_bias(self, bias_name: str) -> int:
        stem = bias_name[:-2]
        for name, _, shape in self._layout:
            if name == f"{stem}.w" or name == f"{stem}.wx":
                return shape[0]
        raise KeyError(bias_name)

    @property
    def n_params(self) -> int:
        return self.theta.shape[0]

    def param(self, name: str) -> np.ndarray:
        return self._views[name]

    def _grad_view(self, grad: np.ndarray, name: str) -> np.ndarray:
        lo, hi, shape = self._slots[name]
        return grad[lo:hi].reshape(shape)

    def forward(self, x: np.ndarray):
        """Run the model, returning (y, cache) with cache for backward()."""
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise ValueError(f"input shape {x.shape}, expected (T, {self.spec.in_dim})")
        cache = {"x": x, "dense": []}
        h = x
        for i in range(len(self.spec.hidden)):
            w = self.param(f"dense{i}.w")
            b = self.param(f"dense{i}.b")
            h = np.tanh(h @ w + b)
            cache["dense"].append(h)
        if self.spec.recurrent_dim > 0:
            cache["rnn_in"] = h
            h = kernels.rnn_forward(np.ascontiguousarray(h),
                                    np.ascontiguousarray(self.param("rnn.wx")),
                                    np.ascontiguousarray(self.param("rnn.wh")),
                                    np.ascontiguousarray(self.param("rnn.b")))
            cache["rnn_h"] = h
        z = h @ self.param("out.w") + self.param("out.b")
        a = 1.0 / (1.0 + np.exp(-z)) if self.spec.out_activation == "sigmoid" else z
        y = a * self._out_scale + self._out_offset
        cache["pre_out"] = h
        cache["act"] = a
        return y, cache

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: dict, dy: np.ndarray):
        """Exact gradients: returns (dtheta flat, dx)."""
        grad = np.zeros_like(self.theta)
        da = dy * self._out_scale
        if self.spec.out_activation == "sigmoid":
            a = cache["act"]
            dz = da * a * (1.0 - a)
        else:
            dz = da
        h = cache["pre_out"]
        self._grad_view(grad, "out.w")[...] = h.T @ dz
        self._grad_view(grad, "out.b")[...] = dz.sum(axis=0)
        dh = dz @ self.param("out.w").T
        if self.spec.recurrent_dim > 0:
            dx_rnn, dwx, dwh, db = kernels.rnn_backward(
                np.ascontiguousarray(cache["rnn_in"]),
                np.ascontiguousarray(cache["rnn_h"]),
                np.ascontiguousarray(self.param("rnn.wx")),
                np.ascontiguousarray(self.param("rnn.wh")),
                np.ascontiguousarray(dh))
            self._grad_view(grad, "rnn.wx")[...] = dwx
            self._grad_view(grad, "rnn.wh")[...] = dwh
            self._grad_view(grad, "rnn.b")[...] = db
            dh = dx_rnn
        for i in range(len(self.spec.hidden) - 1, -1, -1):
            h_i = cache["dense"][i]
            dz = dh * (1.0 - h_i * h_i)
            h_prev = cache["dense"][i - 1] if i > 0 else cache["x"]
            self._grad_view(grad, f"dense{i}.w")[...] = h_prev.T @ dz
            self._grad_view(grad, f"dense{i}.b")[...] = dz.sum(axis=0)
            dh = dz @ self.param(f"dense{i}.w").T
        return grad, dh


# ---------------------------------------------------------------------------
# Timing prediction
# ---------------------------------------------------------------------------

def predict_timing(pair: PaddedScorePair, model: Regressor):
    """Joint timing prediction on a padded pair.

    The model consumes the two parts' slot rows concatenated along the
    feature axis and emits (lag_a, dur_a, lag_b, dur_b) per slot.  Returns
    ((lags_a, durs_a), (lags_b, durs_b)) as float arrays indexed by original
    note order.
    """
    width = pair.features_a.shape[1]
    if model.spec.in_dim != 2 * width or model.spec.out_dim != 4:
        raise ValueError(f"joint timing model needs in_dim={2 * width}, out_dim=4; "
                         f"got in_dim={model.spec.in_dim}, out_dim={model.spec.out_dim}")
    x = np.concatenate([pair.features_a, pair.features_b], axis=1)
    y = model.predict(x)
    out = []
    for pad, slots, cols in ((pair.pad_a, pair.slots_a, (0, 1)),
                             (pair.pad_b, pair.slots_b, (2, 3))):
        n = int(slots.max()) + 1 if np.any(~pad) else 0
        lags = np.zeros(n, dtype=np.float64)
        durs = np.zeros(n, dtype=np.float64)
        for k in np.flatnonzero(~pad):
            lags[slots[k]] = y[k, cols[0]]
            durs[slots[k]] = y[k, cols[1]]
        out.append((lags, durs))
    return out[0], out[1]


def predict_timing_isolated(features: np.ndarray, model: Regressor):
    """Part-isolated timing prediction (baseline): own rows only, out 2."""
    if model.spec.in_dim != features.shape[1] or model.spec.out_dim != 2:
        raise ValueError(f"isolated timing model needs in_dim={features.shape[1]}, "
                         f"out_dim=2; got in_dim={model.spec.in_dim}, "
                         f"out_dim={model.spec.out_dim}")
    y = model.predict(features)
    return y[:, 0].copy(), y[:, 1].copy()


def quantize_timing(lags: np.ndarray, durs: np.ndarray):
    """Round predictions for synthesis: integer lags, durations >= 1 frame."""
    q_lags = np.rint(lags).astype(np.int64)
    q_durs = np.maximum(np.rint(durs).astype(np.int64), 1)
    return q_lags, q_durs


# ---------------------------------------------------------------------------
# Acoustic cascade
# ---------------------------------------------------------------------------

@dataclass
class AcousticModelBundle:
    """Per-part acoustic models: lf0 feeds the spectral/aperiodicity/voicing
    models as an extra input column."""

    lf0: Regressor
    mgc: Regressor
    bap: Regressor
    vuv: Regressor

    @classmethod
    def build(cls, in_dim: int, hidden: tuple[int, ...] = (48, 24),
              recurrent_dim: int = 0, seed: int = 0,
              offsets: dict | None = None,
              scales: dict | None = None) -> "AcousticModelBundle":
        """``offsets``/``scales`` standardize each stream's output affine
        (keys lf0/mgc/bap; vuv is a sigmoid and takes none)."""
        offsets = offsets or {}
        scales = scales or {}

        def spec(name, out_dim, activation, salt):
            return ModelSpec(in_dim=in_dim + (0 if salt == 0 else 1),
                             hidden=hidden, out_dim=out_dim,
                             recurrent_dim=recurrent_dim,
                             out_activation=activation, seed=seed * 4 + salt,
                             out_offset=offsets.get(name, 0.0),
                             out_scale=scales.get(name, 1.0))

        return cls(lf0=Regressor(spec("lf0", 1, "linear", 0)),
                   mgc=Regressor(spec("mgc", MGC_DIM, "linear", 1)),
                   bap=Regressor(spec("bap", BAP_DIM, "linear", 2)),
                   vuv=Regressor(spec("vuv", 1, "sigmoid", 3)))

    def models(self) -> dict[str, Regressor]:
        return {"lf0": self.lf0, "mgc": self.mgc, "bap": self.bap, "vuv": self.vuv}


def acoustic_forward(bundle: AcousticModelBundle, frames: np.ndarray):
    """Cascade forward pass; returns (predictions dict, caches dict).

    The downstream models see the lf0 model's standardized (pre-affine)
    output as their extra input column, keeping their input scales balanced.
    """
    lf0_2d, c_lf0 = bundle.lf0.forward(frames)
    x2 = np.concatenate([frames, c_lf0["act"]], axis=1)
    mgc, c_mgc = bundle.mgc.forward(x2)
    bap, c_bap = bundle.bap.forward(x2)
    vuv_2d, c_vuv = bundle.vuv.forward(x2)
    preds = {"lf0": lf0_2d[:, 0], "mgc": mgc, "bap": bap, "vuv": vuv_2d[:, 0]}
    caches = {"lf0": c_lf0, "mgc": c_mgc, "bap": c_bap, "vuv": c_vuv}
    return preds, caches


def acoustic_backward(bundle: AcousticModelBundle, caches: dict, dpreds: dict):
    """Backward through the cascade.

    ``dpreds`` holds upstream gradients per stream (lf0 as (T,), mgc (T, 60),
    bap (T, 5), vuv (T,)).  The conditioning column is detached: downstream
    models treat the lf0 activation as a fixed input feature, so their
    gradients do not flow back into the lf0 model and each stream trains on
    its own objective.  Returns a dict of flat parameter gradients keyed like
    ``bundle.models()``.
    """
    grads = {}
    for name in ("mgc", "bap", "vuv"):
        dy = dpreds[name]
        if dy.ndim == 1:
            dy = dy[:, None]
        g, _ = bundle.models()[name].backward(caches[name], dy)
        grads[name] = g
    g, _ = bundle.lf0.backward(caches["lf0"], dpreds["lf0"][:, None])
    grads["lf0"] = g
    return grads


def predict_acoustic(bundle: AcousticModelBundle, frames: np.ndarray) -> dict:
    """Inference-only cascade: returns the four predicted streams."""
    preds, _ = acoustic_forward(bundle, frames)
    return preds


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: Regressor, path, step: int = 0, meta: dict | None = None) -> None:
    """JSON header line + raw float32 parameter blob."""
    header = {
        "format": "esvs-checkpoint",
        "schema_version": 1,
        "spec": asdict(model.spec),
        "n_params": model.n_params,
        "step": int(step),
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = model.theta.astype("<f4").tobytes()
    Path(path).write_bytes(head + b"\n" + blob)


def load_checkpoint(path) -> tuple[Regressor, dict]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("format") != "esvs-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    spec_d = dict(header["spec"])
    spec_d["hidden"] = tuple(spec_d["hidden"])
    for key in ("out_offset", "out_scale"):
        if isinstance(spec_d.get(key), list):
            spec_d[key] = tuple(spec_d[key])
    model = Regressor(ModelSpec(**spec_d))
    blob = np.frombuffer(raw[nl + 1:], dtype="<f4")
    if blob.shape[0] != model.n_params:
        raise ValueError(f"{path}: blob has {blob.shape[0]} params, "
                         f"spec wants {model.n_params}")
    model.theta[:] = blob.astype(np.float64)
    return model, header


def save_bundle(bundle: AcousticModelBundle, out_dir, step: int = 0,
                meta: dict | None = None) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    for name, model in bundle.models().items():
        save_checkpoint(model, d / f"{name}.ckpt", step=step, meta=meta)


def load_bundle(in_dir) -> AcousticModelBundle:
    d = Path(in_dir)
    parts = {name: load_checkpoint(d / f"{name}.ckpt")[0]
             for name in ("lf0", "mgc", "bap", "vuv")}
    return AcousticModelBundle(**parts)
