"""Model tests: gradient checks, checkpoints, timing/acoustic wiring."""

import numpy as np
import pytest

from esvs.models import (
    PARAM_BUDGET,
    AcousticModelBundle,
    ModelSpec,
    Regressor,
    acoustic_backward,
    acoustic_forward,
    load_bundle,
    load_checkpoint,
    predict_acoustic,
    predict_timing,
    predict_timing_isolated,
    quantize_timing,
    save_bundle,
    save_checkpoint,
)
from esvs.preprocess import post_pad, time_aligned_pad
from esvs.score import FEATURE_DIM

GRAD_EPS = 1e-4
GRAD_RTOL = 1e-5


def central_difference_grad(model, x, dy, indices):
    """Finite-difference dL/dtheta for L = sum(forward(x) * dy)."""
    out = np.zeros(len(indices))
    for j, i in enumerate(indices):
        orig = model.theta[i]
        model.theta[i] = orig + GRAD_EPS
        up = float(np.sum(model.predict(x) * dy))
        model.theta[i] = orig - GRAD_EPS
        dn = float(np.sum(model.predict(x) * dy))
        model.theta[i] = orig
        out[j] = (up - dn) / (2 * GRAD_EPS)
    return out


def rel_err(a, b):
    denom = max(abs(a), abs(b), 1e-8)
    return abs(a - b) / denom


SPECS = [
    ModelSpec(in_dim=5, hidden=(8,), out_dim=3, seed=0),
    ModelSpec(in_dim=5, hidden=(8, 6), out_dim=2, seed=1),
    ModelSpec(in_dim=4, hidden=(6,), out_dim=2, recurrent_dim=5, seed=2),
    ModelSpec(in_dim=4, hidden=(6,), out_dim=1, out_activation="sigmoid", seed=3),
    ModelSpec(in_dim=3, hidden=(5,), out_dim=2, seed=4,
              out_offset=(1.5, -2.0), out_scale=(0.3, 4.0)),
]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"h{s.hidden}r{s.recurrent_dim}{s.out_activation[0]}")
def test_backward_matches_central_differences(spec):
    model = Regressor(spec)
    rng = np.random.default_rng(spec.seed + 100)
    x = rng.normal(size=(6, spec.in_dim))
    dy = rng.normal(size=(6, spec.out_dim))
    _, cache = model.forward(x)
    grad, _ = model.backward(cache, dy)
    indices = rng.choice(model.n_params, size=min(40, model.n_params), replace=False)
    fd = central_difference_grad(model, x, dy, indices)
    for want, got in zip(fd, grad[indices]):
        assert rel_err(want, got) < GRAD_RTOL


def test_backward_input_gradient():
    spec = ModelSpec(in_dim=4, hidden=(7,), out_dim=2, recurrent_dim=3, seed=5)
    model = Regressor(spec)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(5, 4))
    dy = rng.normal(size=(5, 2))
    _, cache = model.forward(x)
    _, dx = model.backward(cache, dy)
    for t in range(5):
        for i in range(4):
            orig = x[t, i]
            x[t, i] = orig + GRAD_EPS
            up = float(np.sum(model.predict(x) * dy))
            x[t, i] = orig - GRAD_EPS
            dn = float(np.sum(model.predict(x) * dy))
            x[t, i] = orig
            assert rel_err((up - dn) / (2 * GRAD_EPS), dx[t, i]) < GRAD_RTOL


def test_output_affine_applies_scale_then_offset():
    spec = ModelSpec(in_dim=2, hidden=(3,), out_dim=2, seed=7,
                     out_offset=(10.0, -5.0), out_scale=(2.0, 3.0))
    base = ModelSpec(in_dim=2, hidden=(3,), out_dim=2, seed=7)
    m_affine = Regressor(spec)
    m_base = Regressor(base)
    np.testing.assert_array_equal(m_affine.theta, m_base.theta)
    x = np.random.default_rng(8).normal(size=(4, 2))
    np.testing.assert_allclose(
        m_affine.predict(x),
        m_base.predict(x) * np.array([2.0, 3.0]) + np.array([10.0, -5.0]))


def test_param_init_is_seeded_and_bounded():
    spec = ModelSpec(in_dim=6, hidden=(9,), out_dim=2, seed=11)
    a, b = Regressor(spec), Regressor(spec)
    np.testing.assert_array_equal(a.theta, b.theta)
    c = Regressor(ModelSpec(in_dim=6, hidden=(9,), out_dim=2, seed=12))
    assert not np.array_equal(a.theta, c.theta)
    w = a.param("dense0.w")
    assert np.all(np.abs(w) <= 1.0 / np.sqrt(6))


def test_param_budget_enforced():
    with pytest.raises(ValueError, match="budget"):
        Regressor(ModelSpec(in_dim=300, hidden=(300,), out_dim=60))


def test_overfit_tiny_dataset():
    # Sanity: a few hundred plain-gradient steps fit 4 points exactly.
    spec = ModelSpec(in_dim=2, hidden=(16,), out_dim=1, seed=13)
    model = Regressor(spec)
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([[0.1], [0.7], [0.7], [0.2]])
    for _ in range(4000):
        pred, cache = model.forward(x)
        err = pred - y
        grad, _ = model.backward(cache, 2 * err / err.size)
        model.theta -= 0.1 * grad
    assert float(np.mean((model.predict(x) - y) ** 2)) < 1e-4


# ---------------------------------------------------------------------------
# Timing wiring
# ---------------------------------------------------------------------------

def _pair_with_pads():
    rng = np.random.default_rng(14)
    fa = rng.normal(size=(3, FEATURE_DIM))
    fb = rng.normal(size=(2, FEATURE_DIM))
    return time_aligned_pad(fa, np.array([0, 1, 2]), fb, np.array([0, 2]))


def test_predict_timing_scatters_by_slot():
    pair = _pair_with_pads()
    model = Regressor(ModelSpec(in_dim=2 * FEATURE_DIM, hidden=(8,), out_dim=4,
                                seed=15))
    (lags_a, durs_a), (lags_b, durs_b) = predict_timing(pair, model)
    assert lags_a.shape == (3,) and lags_b.shape == (2,)
    y = model.predict(np.concatenate([pair.features_a, pair.features_b], axis=1))
    # B's note 1 sits in slot 2 (slot 1 is PAD for B).
    assert lags_b[1] == y[2, 2]
    assert durs_b[1] == y[2, 3]
    assert lags_a[1] == y[1, 0]


def test_predict_timing_validates_shape():
    pair = _pair_with_pads()
    bad = Regressor(ModelSpec(in_dim=FEATURE_DIM, hidden=(4,), out_dim=4))
    with pytest.raises(ValueError, match="joint timing model needs"):
        predict_timing(pair, bad)


def test_predict_timing_isolated():
    rng = np.random.default_rng(16)
    feats = rng.normal(size=(4, FEATURE_DIM))
    model = Regressor(ModelSpec(in_dim=FEATURE_DIM, hidden=(6,), out_dim=2, seed=17))
    lags, durs = predict_timing_isolated(feats, model)
    y = model.predict(feats)
    np.testing.assert_array_equal(lags, y[:, 0])
    np.testing.assert_array_equal(durs, y[:, 1])
    with pytest.raises(ValueError, match="isolated timing model needs"):
        predict_timing_isolated(feats, Regressor(
            ModelSpec(in_dim=FEATURE_DIM, hidden=(6,), out_dim=4)))


def test_quantize_timing():
    lags, durs = quantize_timing(np.array([-1.4, 0.6]), np.array([0.2, 3.7]))
    assert lags.tolist() == [-1, 1]
    assert durs.tolist() == [1, 4]  # durations clamp to >= 1


# ---------------------------------------------------------------------------
# Acoustic cascade
# ---------------------------------------------------------------------------

def test_acoustic_cascade_shapes_and_conditioning():
    bundle = AcousticModelBundle.build(in_dim=10, hidden=(8,), seed=18)
    rng = np.random.default_rng(19)
    frames = rng.normal(size=(6, 10))
    preds, caches = acoustic_forward(bundle, frames)
    assert preds["lf0"].shape == (6,)
    assert preds["mgc"].shape == (6, 60)
    assert preds["bap"].shape == (6, 5)
    assert preds["vuv"].shape == (6,)
    assert np.all((preds["vuv"] > 0) & (preds["vuv"] < 1))
    # Downstream models consume frames + the lf0 activation column.
    assert caches["mgc"]["x"].shape == (6, 11)
    np.testing.assert_array_equal(caches["mgc"]["x"][:, -1],
                                  caches["lf0"]["act"][:, 0])
    assert predict_acoustic(bundle, frames)["lf0"].shape == (6,)


def test_acoustic_backward_is_detached_per_stream():
    # The lf0 gradient must depend only on the lf0 stream's own upstream
    # gradient, not on the spectral/aperiodicity/voicing terms.
    bundle = AcousticModelBundle.build(in_dim=7, hidden=(6,), seed=20)
    rng = np.random.default_rng(21)
    frames = rng.normal(size=(5, 7))
    _, caches = acoustic_forward(bundle, frames)
    dpreds = {"lf0": rng.normal(size=5), "mgc": rng.normal(size=(5, 60)),
              "bap": rng.normal(size=(5, 5)), "vuv": rng.normal(size=5)}
    grads = acoustic_backward(bundle, caches, dpreds)
    assert set(grads) == {"lf0", "mgc", "bap", "vuv"}
    dpreds_zeroed = dict(dpreds)
    dpreds_zeroed["mgc"] = np.zeros((5, 60))
    dpreds_zeroed["vuv"] = np.zeros(5)
    grads2 = acoustic_backward(bundle, caches, dpreds_zeroed)
    np.testing.assert_array_equal(grads["lf0"], grads2["lf0"])
    g, _ = bundle.lf0.backward(caches["lf0"], dpreds["lf0"][:, None])
    np.testing.assert_array_equal(grads["lf0"], g)


def test_acoustic_bundle_gradients_match_central_differences():
    # Gradient check through each bundle model on its own loss term.
    bundle = AcousticModelBundle.build(in_dim=6, hidden=(5,), seed=22)
    rng = np.random.default_rng(23)
    frames = rng.normal(size=(4, 6))
    dpreds = {"lf0": rng.normal(size=4), "mgc": rng.normal(size=(4, 60)),
              "bap": rng.normal(size=(4, 5)), "vuv": rng.normal(size=4)}
    _, caches = acoustic_forward(bundle, frames)
    grads = acoustic_backward(bundle, caches, dpreds)

    def loss_for(name):
        preds, _ = acoustic_forward(bundle, frames)
        p = preds[name]
        return float(np.sum(p * dpreds[name]))

    for name, model in bundle.models().items():
        idx = rng.choice(model.n_params, size=15, replace=False)
        for i in idx:
            orig = model.theta[i]
            model.theta[i] = orig + GRAD_EPS
            up = loss_for(name)
            model.theta[i] = orig - GRAD_EPS
            dn = loss_for(name)
            model.theta[i] = orig
            fd = (up - dn) / (2 * GRAD_EPS)
            if name == "lf0":
                # lf0 parameters also move downstream inputs; compare against
                # the detached convention (own-term gradient only).
                direct, _ = bundle.lf0.backward(caches["lf0"],
                                                dpreds["lf0"][:, None])
                assert grads["lf0"][i] == direct[i]
            else:
                assert rel_err(fd, grads[name][i]) < GRAD_RTOL


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_bytes(tmp_path):
    spec = ModelSpec(in_dim=5, hidden=(6, 4), out_dim=3, recurrent_dim=2,
                     seed=24, out_offset=(1.0, 2.0, 3.0), out_scale=(0.1, 1.0, 10.0))
    model = Regressor(spec)
    model.theta[:] = np.random.default_rng(25).normal(size=model.n_params)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(model, p1, step=42, meta={"note": "x"})
    loaded, header = load_checkpoint(p1)
    assert header["step"] == 42
    assert loaded.spec == spec
    save_checkpoint(loaded, p2, step=42, meta={"note": "x"})
    assert p1.read_bytes() == p2.read_bytes()
    # float32 storage: params agree to float32 precision after reload
    np.testing.assert_allclose(loaded.theta, model.theta, atol=1e-6)
    # and the reload is an exact upcast (idempotent under further cycles)
    np.testing.assert_array_equal(
        loaded.theta, model.theta.astype("<f4").astype(np.float64))


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b'{"format": "other"}\n')
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(path)
    model = Regressor(ModelSpec(in_dim=2, hidden=(2,), out_dim=1))
    save_checkpoint(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])  # truncate the blob
    with pytest.raises(ValueError, match="params"):
        load_checkpoint(path)


def test_bundle_save_load_round_trip(tmp_path):
    bundle = AcousticModelBundle.build(in_dim=8, hidden=(6,), seed=26,
                                       offsets={"lf0": 5.0}, scales={"lf0": 0.2})
    save_bundle(bundle, tmp_path / "b", step=7)
    again = load_bundle(tmp_path / "b")
    frames = np.random.default_rng(27).normal(size=(5, 8))
    before = predict_acoustic(bundle, frames)
    after = predict_acoustic(again, frames)
    for key in before:
        np.testing.assert_allclose(after[key], before[key], atol=1e-6)


def test_predict_timing_with_post_pad_pair():
    rng = np.random.default_rng(28)
    fa = rng.normal(size=(2, FEATURE_DIM))
    fb = rng.normal(size=(4, FEATURE_DIM))
    pair = post_pad(fa, fb)
    model = Regressor(ModelSpec(in_dim=2 * FEATURE_DIM, hidden=(6,), out_dim=4,
                                seed=29))
    (lags_a, _), (lags_b, _) = predict_timing(pair, model)
    assert lags_a.shape == (2,)
    assert lags_b.shape == (4,)
