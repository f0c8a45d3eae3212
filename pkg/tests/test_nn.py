import numpy as np
import pytest

from mdslab import nn


def tiny_cfg(**kw):
    base = dict(n_tokens=3, d_in=4, n_emb=8, n_heads=2, n_blocks=1,
                r_mlp=2, k_tar=2, lambda_wd=0.01)
    base.update(kw)
    return nn.ModelConfig(**base)


def make_model(seed=0, **kw):
    cfg = tiny_cfg(**kw)
    params = nn.init_params(cfg, np.random.default_rng(seed))
    return cfg, params


def total_loss(params, x, label, cfg):
    logits, _ = nn.forward(params, x, cfg)
    return nn.loss(logits, label, params, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_cfg(n_emb=8, n_heads=3).validate()
    with pytest.raises(ValueError):
        tiny_cfg(k_tar=0).validate()
    with pytest.raises(ValueError):
        tiny_cfg(pool="max").validate()
    with pytest.raises(ValueError):
        tiny_cfg(lambda_wd=-0.1).validate()
    tiny_cfg(n_blocks=0).validate()


def test_param_count_closed_form():
    cfg = tiny_cfg()
    shapes = nn.param_shapes(cfg)
    d, t, k = cfg.n_emb, cfg.n_tokens, cfg.k_tar
    per_block = 4 * d + 4 * (d * d + d) + (d * cfg.d_mlp + cfg.d_mlp) \
        + (cfg.d_mlp * d + d)
    expect = (cfg.d_in * d + d) + t * d + cfg.n_blocks * per_block \
        + (d * k + k)
    assert nn.param_count(cfg) == expect
    assert sum(int(np.prod(s)) for s in shapes.values()) == expect
    # zero-block model is just embedding plus head
    cfg0 = nn.ModelConfig(n_tokens=4, d_in=9, n_emb=16, n_heads=2,
                          n_blocks=0, k_tar=3)
    assert nn.param_count(cfg0) == (9 * 16 + 16) + 4 * 16 + (16 * 3 + 3)


def test_init_params():
    cfg, params = make_model(seed=3)
    assert set(params) == set(nn.param_shapes(cfg))
    assert np.all(params["block0.ln1.g"] == 1.0)
    assert np.all(params["block0.attn.b_q"] == 0.0)
    assert np.all(params["head.b"] == 0.0)
    w = params["patch.W"]
    assert np.abs(w).max() <= 0.04 + 1e-12   # truncated at 2 sigma, std 0.02
    assert w.std() > 0
    again = nn.init_params(cfg, np.random.default_rng(3))
    for name in params:
        assert np.array_equal(params[name], again[name])


def test_gelu_values_and_grad():
    assert nn.gelu(np.array([0.0]))[0] == 0.0
    u = np.array([10.0])
    assert np.isclose(nn.gelu(u)[0], 10.0, atol=1e-8)
    assert np.isclose(nn.gelu(-u)[0], 0.0, atol=1e-8)
    us = np.linspace(-3, 3, 41)
    h = 1e-6
    fd = (nn.gelu(us + h) - nn.gelu(us - h)) / (2 * h)
    assert np.allclose(nn.gelu_grad(us), fd, atol=1e-8)


def test_layer_norm_statistics():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 16)) * 3 + 2
    y, _ = nn._layer_norm(x, np.ones(16), np.zeros(16))
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(y.std(axis=-1), 1.0, atol=1e-4)


def test_softmax_rows_stable():
    big = np.array([[1000.0, 1000.0, 999.0]])
    p = nn._softmax_rows(big)
    assert np.isfinite(p).all()
    assert np.isclose(p.sum(), 1.0)
    assert p[0, 0] == p[0, 1] and p[0, 0] > p[0, 2]


def test_cross_entropy_values():
    logits = np.array([0.0, 0.0, 0.0])
    ce, d = nn.cross_entropy(logits, 1)
    assert np.isclose(ce, np.log(3.0))
    assert np.allclose(d, [1 / 3, -2 / 3, 1 / 3])
    # stable for huge logits
    ce2, d2 = nn.cross_entropy(np.array([1e4, 0.0]), 0)
    assert np.isfinite(ce2) and ce2 < 1e-10
    assert np.isfinite(d2).all()


def test_forward_shapes_and_slice_stack():
    cfg, params = make_model()
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 4))
    logits, tape = nn.forward(params, x, cfg)
    assert logits.shape == (2,)
    assert tape.tokens.shape == (3, 8)
    assert len(tape.block_out) == 1
    assert tape.attn_weights[0].shape == (2, 3, 3)
    assert np.allclose(tape.attn_weights[0].sum(axis=-1), 1.0)
    # a [n_tokens, h, w] stack flattens row-major to the same thing
    logits2, _ = nn.forward(params, x.reshape(3, 2, 2), cfg)
    assert np.array_equal(logits, logits2)
    with pytest.raises(ValueError):
        nn.forward(params, np.zeros((4, 4)), cfg)


def test_forward_rejects_nan():
    cfg, params = make_model()
    x = np.zeros((3, 4))
    x[0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        nn.forward(params, x, cfg)


def test_pooling_modes():
    cfg, params = make_model(n_blocks=0)
    x = np.random.default_rng(2).standard_normal((3, 4))
    logits, tape = nn.forward(params, x, cfg)
    assert np.allclose(tape.pooled, tape.tokens.mean(axis=0))
    cfg_cls = tiny_cfg(n_blocks=0, pool="cls")
    logits_cls, tape_cls = nn.forward(params, x, cfg_cls)
    assert np.array_equal(tape_cls.pooled, tape_cls.tokens[0])
    assert not np.allclose(logits, logits_cls)


def test_gradients_match_finite_differences():
    cfg, params = make_model(seed=5)
    rng = np.random.default_rng(11)
    x = rng.standard_normal((3, 4))
    label = 1
    logits, tape = nn.forward(params, x, cfg)
    _, d_logits = nn.cross_entropy(logits, label)
    grads, _ = nn.backward(params, tape, d_logits, cfg)
    for name in grads:
        if nn._l2_mask(cfg, name):
            grads[name] += 2.0 * cfg.lambda_wd * params[name]
    h = 1e-5
    worst = 0.0
    for name, g in grads.items():
        flat_p = params[name].reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            keep = flat_p[i]
            flat_p[i] = keep + h
            up = total_loss(params, x, label, cfg)
            flat_p[i] = keep - h
            down = total_loss(params, x, label, cfg)
            flat_p[i] = keep
            fd = (up - down) / (2 * h)
            rel = abs(flat_g[i] - fd) / max(abs(flat_g[i]), abs(fd), 1e-6)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_input_gradient_matches_finite_differences():
    cfg, params = make_model(seed=9)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 4))
    logits, tape = nn.forward(params, x, cfg)
    _, d_logits = nn.cross_entropy(logits, 0)
    _, d_tokens = nn.backward(params, tape, d_logits, cfg)
    dx = d_tokens @ params["patch.W"].T
    h = 1e-6
    for idx in np.ndindex(x.shape):
        keep = x[idx]
        x[idx] = keep + h
        up, _ = nn.cross_entropy(nn.forward(params, x, cfg)[0], 0)
        x[idx] = keep - h
        down, _ = nn.cross_entropy(nn.forward(params, x, cfg)[0], 0)
        x[idx] = keep
        fd = (up - down) / (2 * h)
        assert abs(dx[idx] - fd) < 1e-6


def test_backward_stop_block():
    cfg, params = make_model(n_blocks=2)
    x = np.random.default_rng(0).standard_normal((3, 4))
    logits, tape = nn.forward(params, x, cfg)
    d_logits = np.array([1.0, 0.0])
    grads, dt = nn.backward(params, tape, d_logits, cfg, stop_block=1)
    # gradient wrt block 1 output under mean pooling: head.W column spread
    expect = np.tile(params["head.W"] @ d_logits / cfg.n_tokens,
                     (cfg.n_tokens, 1))
    assert np.allclose(dt, expect)
    assert np.all(grads["block1.attn.W_q"] == 0)
    assert np.all(grads["block0.mlp.W1"] == 0)
    assert np.any(grads["head.W"] != 0)
    # stopping one lower walks through block 1 but not block 0
    grads2, dt2 = nn.backward(params, tape, d_logits, cfg, stop_block=0)
    assert np.any(grads2["block1.attn.W_q"] != 0)
    assert np.all(grads2["block0.attn.W_q"] == 0)
    assert dt2.shape == (3, 8)


def test_grads_accumulate_in_place():
    cfg, params = make_model()
    x = np.random.default_rng(1).standard_normal((3, 4))
    logits, tape = nn.forward(params, x, cfg)
    _, d_logits = nn.cross_entropy(logits, 0)
    once, _ = nn.backward(params, tape, d_logits, cfg)
    twice = nn.zero_grads(params)
    nn.backward(params, tape, d_logits, cfg, grads=twice)
    nn.backward(params, tape, d_logits, cfg, grads=twice)
    for name in once:
        assert np.allclose(twice[name], 2.0 * once[name])


def test_l2_penalty_modes():
    cfg, params = make_model()
    full = nn.l2_penalty(params, cfg)
    expect = cfg.lambda_wd * sum(float(np.sum(v * v))
                                 for v in params.values())
    assert np.isclose(full, expect)
    cfg_ex = tiny_cfg(wd_exclude_ln_bias=True)
    partial = nn.l2_penalty(params, cfg_ex)
    kept = [n for n in params if nn._l2_mask(cfg_ex, n)]
    assert "block0.ln1.g" not in kept and "head.b" not in kept
    assert "patch.W" in kept and "block0.attn.W_q" in kept and "pos" in kept
    expect2 = cfg.lambda_wd * sum(float(np.sum(params[n] ** 2)) for n in kept)
    assert np.isclose(partial, expect2)
    assert partial < full


def test_batch_loss_is_mean_plus_penalty():
    cfg, params = make_model(seed=2)
    rng = np.random.default_rng(6)
    xs = [rng.standard_normal((3, 4)) for _ in range(4)]
    labels = [0, 1, 1, 0]
    batch, grads = nn.batch_loss_and_grads(params, xs, labels, cfg)
    ces = [nn.cross_entropy(nn.forward(params, x, cfg)[0], y)[0]
           for x, y in zip(xs, labels)]
    assert np.isclose(batch, np.mean(ces) + nn.l2_penalty(params, cfg))
    assert set(grads) == set(params)
    with pytest.raises(ValueError):
        nn.batch_loss_and_grads(params, [], [], cfg)


def test_adam_first_step_closed_form():
    cfg, params = make_model()
    state = nn.OptState.for_params(params, eta=1e-3)
    before = {k: v.copy() for k, v in params.items()}
    grads = {k: np.full_like(v, 0.5) for k, v in params.items()}
    nn.adam_step(params, grads, state)
    assert state.t == 1
    # bias correction makes the first step eta * g / (|g| + eps)
    step = 1e-3 * 0.5 / (0.5 + 1e-8)
    for name in params:
        assert np.allclose(before[name] - params[name], step)


def test_adam_descends_on_quadratic():
    params = {"w": np.array([5.0, -3.0])}
    state = nn.OptState.for_params(params, eta=0.1)
    for _ in range(400):
        nn.adam_step(params, {"w": 2.0 * params["w"]}, state)
    assert np.abs(params["w"]).max() < 1e-2


def test_predict_argmax():
    cfg, params = make_model()
    x = np.random.default_rng(3).standard_normal((3, 4))
    logits, _ = nn.forward(params, x, cfg)
    assert nn.predict(params, x, cfg) == int(np.argmax(logits))


def test_checkpoint_round_trip(tmp_path):
    cfg, params = make_model(seed=8, pool="cls", wd_exclude_ln_bias=True,
                             lambda_wd=0.25)
    path = str(tmp_path / "model.tensor")
    nn.save_checkpoint(path, params, cfg)
    loaded, cfg2 = nn.load_checkpoint(path)
    assert cfg2 == cfg
    for name in params:
        assert np.array_equal(loaded[name], params[name])
    x = np.random.default_rng(0).standard_normal((3, 4))
    assert np.array_equal(nn.forward(params, x, cfg)[0],
                          nn.forward(loaded, x, cfg2)[0])


def test_checkpoint_shape_mismatch(tmp_path):
    cfg, params = make_model()
    bad = dict(params)
    bad["head.W"] = np.zeros((4, 2))
    path = str(tmp_path / "bad.tensor")
    nn.save_checkpoint(path, bad, cfg)
    with pytest.raises(ValueError):
        nn.load_checkpoint(path)
