import csv
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cqitestbed import chansim, cqimap, crnn
from cqitestbed.crnn import (
    ModelConfig,
    ModelParams,
    StreamingPredictor,
    asymmetric_loss,
    baseline_persistence,
    evaluate,
    forward,
    forward_batch,
    gradients,
    init_model,
    load_model,
    loss_and_gradients,
    predict_next,
    quantize,
    save_model,
    train,
)
from cqitestbed.errors import DivergenceError, FramingError, SchemaError
from cqitestbed.gridio import CqiGrid, ScenarioMeta, split

TINY = ModelConfig(window_w=4, n_rb=3, conv_filters=2, hidden=4, seed=1)
SMALL = ModelConfig(window_w=8, n_rb=6, conv_filters=3, hidden=8, seed=2)


def zero_params(cfg):
    return ModelParams(cfg, {n: np.zeros(s) for n, s in cfg.param_shapes().items()})


def numeric_grad(params, X, Y, step=1e-5):
    flat = params.flat()
    out = np.empty_like(flat)
    for i in range(flat.size):
        v = flat.copy()
        v[i] += step
        lp = crnn.batch_loss(params.with_flat(v), X, Y)
        v[i] -= 2 * step
        lm = crnn.batch_loss(params.with_flat(v), X, Y)
        out[i] = (lp - lm) / (2 * step)
    return out


def flat_grads(g):
    return np.concatenate([g[n].ravel() for n in crnn.PARAM_NAMES])


def cqi_grid(data, name="g"):
    data = np.asarray(data)
    return CqiGrid(data=data, meta=ScenarioMeta(name=name, n_rb=data.shape[1]))


@pytest.mark.parametrize(
    "kwargs", [dict(conv_kernel=2), dict(horizon=0), dict(loss_alpha=0.5), dict(hidden=0)]
)
def test_config_rejects(kwargs):
    with pytest.raises(ValueError):
        ModelConfig(**kwargs)


def test_default_param_count():
    expected = (16 * 3 + 16) + 3 * (800 * 64 + 64 * 64 + 64) + (64 * 50 + 50)
    cfg = ModelConfig()
    assert cfg.n_params() == expected
    assert init_model(cfg).n_params() == expected
    assert init_model(cfg).flat().size == expected


def test_init_deterministic_zero_biases_and_bounds():
    a, b = init_model(SMALL), init_model(SMALL)
    assert a.equals(b)
    for name in ("conv_b", "gru_b", "out_b"):
        assert np.all(a[name] == 0.0)
    assert np.max(np.abs(a["gru_W"])) <= 1 / np.sqrt(SMALL.feature_size)
    assert np.max(np.abs(a["conv_w"])) <= 1 / np.sqrt(SMALL.conv_kernel)
    assert not a.equals(init_model(ModelConfig(**{**SMALL.__dict__, "seed": 3})))


def test_forward_shapes_and_zero_case():
    cfg = ModelConfig()
    out = forward(init_model(cfg), np.random.default_rng(0).uniform(0, 15, (32, 50)))
    assert out.shape == (50,)
    assert np.array_equal(forward(zero_params(cfg), np.zeros((32, 50))), np.zeros(50))
    with pytest.raises(ValueError):
        forward(init_model(cfg), np.zeros((31, 50)))
    with pytest.raises(ValueError):
        forward(init_model(cfg), np.full((32, 50), np.nan))


def test_forward_order_sensitive():
    p = init_model(SMALL)
    X = np.random.default_rng(1).uniform(0, 15, (8, 6))
    perm = X[::-1].copy()
    perm[-1] = X[-1]  # same last row so the residual term is identical
    assert not np.allclose(forward(p, X), forward(p, perm))


def test_forward_batch_matches_single():
    p = init_model(SMALL)
    X = np.random.default_rng(2).uniform(0, 15, (5, 8, 6))
    batch = forward_batch(p, X)
    for i in range(5):
        np.testing.assert_allclose(batch[i], forward(p, X[i]), rtol=1e-13, atol=1e-13)


def test_forward_reference_implementation():
    # Independent per-timestep loop written directly from the model equations.
    p = init_model(TINY)
    P = p.arrays
    X = np.random.default_rng(3).uniform(0, 15, (4, 3))
    H = TINY.hidden
    h = np.zeros(H)
    for t in range(4):
        x = X[t] / 15
        xp = np.concatenate([[x[0]], x, [x[-1]]])
        feat = np.zeros((3, 2))
        for r in range(3):
            for f in range(2):
                feat[r, f] = max(0.0, xp[r : r + 3] @ P["conv_w"][f, 0] + P["conv_b"][f])
        c = feat.ravel()
        W, U, b = P["gru_W"], P["gru_U"], P["gru_b"]
        sig = lambda v: 1 / (1 + np.exp(-v))
        z = sig(c @ W[:, :H] + h @ U[:, :H] + b[:H])
        r_ = sig(c @ W[:, H : 2 * H] + h @ U[:, H : 2 * H] + b[H : 2 * H])
        n = np.tanh(c @ W[:, 2 * H :] + (r_ * h) @ U[:, 2 * H :] + b[2 * H :])
        h = (1 - z) * n + z * h
    y = h @ P["out_W"] + P["out_b"] + X[-1]
    np.testing.assert_allclose(forward(p, X), y, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize(
    "pred,truth,alpha,expected",
    [([1, 2], [1, 2], 4.0, 0.0), ([0.0], [1.0], 7.0, 1.0), ([1.0], [0.0], 4.0, 4.0), ([2, 0], [0, 1], 2.0, 4.5)],
)
def test_asymmetric_loss_examples(pred, truth, alpha, expected):
    assert asymmetric_loss(pred, truth, alpha) == pytest.approx(expected)


def test_asymmetric_loss_errors():
    with pytest.raises(ValueError):
        asymmetric_loss([1, 2], [1], 4.0)
    with pytest.raises(ValueError):
        asymmetric_loss([1], [1], 0.5)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-6, 1e3), st.floats(1.0, 20.0))
def test_loss_asymmetry_exact(e, alpha):
    assert asymmetric_loss([e], [0.0], alpha) == alpha * asymmetric_loss([-e], [0.0], alpha)


def test_gradients_zero_at_zero_error():
    p = init_model(TINY)
    X = np.random.default_rng(4).uniform(0, 15, (3, 4, 3))
    g = gradients(p, X, forward_batch(p, X))
    assert all(np.all(v == 0) for v in g.values())


@pytest.mark.parametrize("alpha", [1.0, 4.0])
def test_gradients_match_finite_differences(alpha):
    rng = np.random.default_rng(5)
    cfg = ModelConfig(**{**TINY.__dict__, "loss_alpha": alpha})
    p = init_model(cfg).with_flat(init_model(cfg).flat() + rng.normal(0, 0.3, cfg.n_params()))
    X = rng.uniform(0, 15, (5, 4, 3))
    Y = forward_batch(p, X) + rng.choice([-1, 1], (5, 3)) * rng.uniform(0.2, 1.0, (5, 3))
    num = numeric_grad(p, X, Y)
    ana = flat_grads(gradients(p, X, Y))
    rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-6)
    assert rel.max() < 1e-4


def test_gradients_duplicate_batch_invariance():
    p = init_model(TINY)
    rng = np.random.default_rng(6)
    X = rng.uniform(0, 15, (4, 4, 3))
    Y = rng.uniform(0, 15, (4, 3))
    g1 = gradients(p, X, Y)
    g2 = gradients(p, np.concatenate([X, X]), np.concatenate([Y, Y]))
    for n in crnn.PARAM_NAMES:
        np.testing.assert_allclose(g1[n], g2[n], rtol=0, atol=1e-12)


def test_gradient_non_finite_names_layer():
    p = init_model(TINY)
    p.arrays["gru_W"][0, 0] = np.inf
    with pytest.raises(FloatingPointError, match="gru input projection"):
        with np.errstate(all="ignore"):
            loss_and_gradients(p, np.ones((1, 4, 3)), np.ones((1, 3)))


def test_train_constant_grid_defaults():
    cfg = ModelConfig()
    _, hist = train(init_model(cfg), np.full((200, 50), 9.0), epochs=20, lr=1e-3)
    assert min(hist) <= 1e-3


def test_train_deterministic_and_pure():
    grid = np.random.default_rng(7).integers(0, 16, (120, 6)).astype(float)
    p0 = init_model(SMALL)
    a, ha = train(p0, grid, epochs=2, batch_size=16, lr=1e-2)
    b, hb = train(p0, grid, epochs=2, batch_size=16, lr=1e-2)
    assert ha == hb and a.equals(b)
    assert p0.equals(init_model(SMALL))


def test_train_pedestrian_smoke():
    cfg = ModelConfig(window_w=16, n_rb=50, conv_filters=4, hidden=16, seed=0)
    sinr = chansim.synth_sinr_grid(chansim.preset("pedestrian"), 4000)
    grid = cqimap.map_grid(sinr)
    _, hist = train(init_model(cfg), grid, epochs=3, lr=3e-3, max_windows=1500)
    assert all(np.isfinite(hist)) and hist[-1] <= hist[0]


def test_train_divergence_keeps_checkpoint():
    cfg = ModelConfig(window_w=4, n_rb=3, conv_filters=2, hidden=4)
    grid = np.zeros((20, 3))
    grid[1::2] = 1e200
    with np.errstate(all="ignore"):
        with pytest.raises(DivergenceError) as exc:
            train(init_model(cfg), grid, epochs=1, batch_size=4)
    assert exc.value.checkpoint.is_finite()


def test_train_width_mismatch():
    with pytest.raises(SchemaError):
        train(init_model(SMALL), np.zeros((50, 5)), epochs=1)


def test_quantize_examples():
    assert quantize([7.9, -3.2, 99.0, 15.0, 0.0]).tolist() == [7, 0, 15, 15, 0]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_quantizer_conservative(vals):
    q = quantize(vals)
    v = np.asarray(vals)
    assert np.all(q <= np.clip(np.round(v), 0, 15))
    assert np.all((q <= v) | (q == 0))


def test_predict_next_range():
    p = init_model(SMALL)
    X = np.random.default_rng(8).uniform(0, 15, (8, 6))
    q = predict_next(p, X)
    assert q.dtype.kind == "i" and np.all((0 <= q) & (q <= 15))
    assert np.all((q <= forward(p, X)) | (q == 0))


def test_persistence_examples():
    assert baseline_persistence(np.array([[9, 9, 9], [1, 2, 3]])).tolist() == [1, 2, 3]
    with pytest.raises(ValueError):
        baseline_persistence(np.zeros((0, 3)))


def test_evaluate_oracle_and_constant(tmp_path):
    cfg = ModelConfig(window_w=4, n_rb=3)
    data = np.random.default_rng(9).integers(0, 16, (40, 3))
    grid = cqi_grid(data)
    _, Y = crnn.window_arrays(data.astype(float), 4, 1)
    it = iter([Y])
    oracle = evaluate(lambda X: next(it), grid, cfg)
    assert oracle.rmse == 0 and oracle.overprediction_rate == 0 and oracle.exact_match_rate == 1
    const = evaluate(crnn.persistence_predictor, cqi_grid(np.full((30, 3), 5)), cfg)
    assert const.rmse == const.mae == const.asym_loss == const.overprediction_rate == 0


def test_evaluate_trace_and_kv(tmp_path):
    cfg = SMALL
    grid = cqi_grid(np.random.default_rng(10).integers(0, 16, (30, 6)))
    trace = tmp_path / "trace.csv"
    m = evaluate(init_model(cfg), grid, cfg, trace_path=trace, trace_rbs=[0, 5])
    rows = list(csv.DictReader(open(trace)))
    assert len(rows) == 2 * m.n_windows == 2 * (30 - 8)
    assert rows[0]["t"] == "8" and {r["rb"] for r in rows} == {"0", "5"}
    assert float(rows[0]["truth"]) == grid.data[8, 0]
    kv = dict(line.split("=") for line in m.to_kv().splitlines())
    assert float(kv["rmse"]) == pytest.approx(m.rmse, rel=1e-5)
    assert m.per_rb_rmse.shape == (6,)


def test_persistence_worse_on_train_than_pedestrian():
    cfg = ModelConfig(window_w=4, n_rb=50)
    err = {}
    for name in ("pedestrian", "train"):
        grid = cqimap.map_grid(chansim.synth_sinr_grid(chansim.preset(name), 5000))
        err[name] = evaluate(crnn.persistence_predictor, grid, cfg).rmse
    assert err["train"] > err["pedestrian"]


def test_model_roundtrip(tmp_path):
    p = init_model(SMALL)
    p = p.with_flat(p.flat() + np.random.default_rng(11).normal(size=p.n_params()))
    path = tmp_path / "m.crn"
    save_model(p, path)
    back = load_model(path)
    assert back.equals(p) and back.flat().tobytes() == p.flat().tobytes()
    assert path.read_bytes()[:4] == b"CRN1"


def test_model_truncated(tmp_path):
    path = tmp_path / "m.crn"
    save_model(init_model(SMALL), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(FramingError):
        load_model(path)
    with pytest.raises(FramingError):
        crnn.decode_model_bytes(blob[:20])


def test_model_mismatch_names_field(tmp_path):
    path = tmp_path / "m.crn"
    save_model(init_model(SMALL), path)
    with pytest.raises(SchemaError, match="n_rb"):
        load_model(path, expected=ModelConfig(**{**SMALL.__dict__, "n_rb": 50}))
    with pytest.raises(SchemaError, match="hidden"):
        load_model(path, expected=ModelConfig(**{**SMALL.__dict__, "hidden": 9}))
    # Non-architecture fields such as alpha may differ.
    load_model(path, expected=ModelConfig(**{**SMALL.__dict__, "loss_alpha": 1.0}))


def _rewrite_header(blob, mutate):
    (hlen,) = struct.unpack_from("<I", blob, 4)
    header = json.loads(blob[8 : 8 + hlen])
    mutate(header)
    h = json.dumps(header).encode()
    return b"CRN1" + struct.pack("<I", len(h)) + h + blob[8 + hlen :]


@pytest.mark.parametrize(
    "mutate",
    [
        lambda h: h.update(version=2),
        lambda h: h["config"].update(n_rb=7),
        lambda h: h["config"].update(bogus=1),
        lambda h: h.pop("params"),
    ],
)
def test_model_header_schema_errors(tmp_path, mutate):
    path = tmp_path / "m.crn"
    save_model(init_model(SMALL), path)
    with pytest.raises(SchemaError):
        crnn.decode_model_bytes(_rewrite_header(path.read_bytes(), mutate))
    with pytest.raises(SchemaError):
        crnn.decode_model_bytes(b"XXXX" + path.read_bytes()[4:])


@pytest.mark.parametrize("jit", [True, False])
@pytest.mark.parametrize("residual", [True, False])
def test_streaming_matches_forward(jit, residual):
    cfg = ModelConfig(**{**SMALL.__dict__, "residual": residual})
    p = init_model(cfg)
    data = np.random.default_rng(12).integers(0, 16, (30, 6)).astype(float)
    sp = StreamingPredictor(p, jit=jit)
    for t in range(30):
        sp.push(data[t])
        if t < 7:
            assert not sp.ready
            continue
        np.testing.assert_allclose(sp.forward(), forward(p, data[t - 7 : t + 1]), rtol=1e-12, atol=1e-12)
        assert np.array_equal(sp.predict(), predict_next(p, data[t - 7 : t + 1]))
    with pytest.raises(ValueError):
        sp.push(np.zeros(5))


def test_streaming_not_ready():
    sp = StreamingPredictor(init_model(SMALL), jit=False)
    with pytest.raises(Exception):
        sp.forward()
