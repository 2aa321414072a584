import math

import numpy as np
import pytest

from realmlp import autodiff as ad
from realmlp import rng
from realmlp.config import preset
from realmlp.dataio import from_arrays
from realmlp.model import build_model, init_data_dependent, init_sample, init_simple_tds, initialize
from realmlp.preprocess import fit_preprocessor

from conftest import mixed_data


def make(cfg, data, seed=0, init=True):
    idx = np.arange(data.n_rows)
    pre = fit_preprocessor(data, idx, cfg.max_one_hot)
    model = build_model(cfg, pre, data.task, data.n_classes)
    x, codes = pre.apply(data)
    if init:
        initialize(model, x, codes, seed)
    return model, x, codes


def numeric(n=50, f=10, seed=0, task="classification"):
    g = np.random.default_rng(seed)
    x = g.normal(size=(n, f))
    y = (x[:, 0] > 0).astype(int) if task == "classification" else x[:, 0]
    return from_arrays(x, y, task)


def test_input_widths_and_outputs():
    td, _, _ = make(preset("td-class"), numeric())
    assert td.params["layer0.weight"].shape[1] == 40
    assert td.layer_sizes == [40, 256, 256, 256, 2]
    data = mixed_data()
    tds, x, _ = make(preset("tds-class"), data)
    assert tds.input_width == x.shape[1] == 3 + 1 + 5 + 12
    assert tds.n_out == 2
    reg, _, _ = make(preset("td-reg"), numeric(task="regression"))
    assert reg.n_out == 1


def test_categorical_embedding_tables():
    model, x, codes = make(preset("td-class"), mixed_data())
    assert model.params["cat_emb.0"].shape == (13, 8)
    assert model.input_width == 4 * 3 + 1 + 5 + 8


def test_parameter_group_factors():
    model, _, _ = make(preset("td-class"), numeric())
    assert model.factor("scale", "lr") == 6.0
    assert model.factor("layer0.bias", "lr") == 0.1
    assert model.factor("layer0.bias", "wd") == 0.0
    assert model.factor("act0.alpha", "lr") == 0.1
    assert model.factor("num_emb.w1", "lr") == 0.1
    assert model.factor("layer2.weight", "lr") == 1.0
    assert model.factor("layer2.weight", "wd") == 1.0


def _pbld_single(model, xval):
    tape = ad.Tape()
    p = {k: tape.var(v) for k, v in model.params.items()}
    return model._num_embed(tape.var(np.array([[xval]])), p).value[0]


def test_pbld_zero_params_gives_identity_plus_bias():
    model, _, _ = make(preset("td-class"), numeric(f=1), init=False)
    c = np.array([0.3, -1.2, 2.5])
    model.params["num_emb.b2"][0] = c
    np.testing.assert_array_equal(_pbld_single(model, 0.7), [0.7, *c])


def test_pbld_first_output_is_input_and_formula():
    model, _, _ = make(preset("td-class"), numeric(f=1))
    p = model.params
    for xval in (-2.0, 0.0, 1.3):
        out = _pbld_single(model, xval)
        assert out[0] == xval
        want = p["num_emb.w2"][0] @ np.cos(2 * math.pi * p["num_emb.w1"][0] * xval + p["num_emb.b1"][0]) \
            + p["num_emb.b2"][0]
        np.testing.assert_allclose(out[1:], want, rtol=1e-13, atol=1e-14)


def test_pl_and_plr_variants():
    for kind in ("pl", "plr"):
        model, _, _ = make(preset("td-class").replace(num_embeddings=kind), numeric(f=1))
        p = model.params
        u = 2 * math.pi * p["num_emb.w1"][0] * 0.8
        want = p["num_emb.w2"][0] @ np.concatenate([np.cos(u), np.sin(u)]) + p["num_emb.b2"][0]
        if kind == "plr":
            want = np.maximum(want, 0)
        np.testing.assert_allclose(_pbld_single(model, 0.8), want, rtol=1e-13, atol=1e-14)
        assert model.input_width == 4


def test_embedding_init_distributions():
    model, _, _ = make(preset("td-class"), numeric(f=200))
    w1, b1 = model.params["num_emb.w1"].ravel(), model.params["num_emb.b1"].ravel()
    n = w1.size
    assert abs(w1.mean()) < 5 * 0.1 / math.sqrt(n)
    assert abs(w1.std() - 0.1) < 5 * 0.1 / math.sqrt(2 * n)
    assert b1.min() >= -math.pi and b1.max() <= math.pi
    assert abs(b1.mean()) < 5 * math.pi / math.sqrt(3 * n)
    w2 = model.params["num_emb.w2"]
    assert np.abs(w2).max() <= 0.25
    np.testing.assert_array_equal(model.params["scale"], 1.0)
    np.testing.assert_array_equal(model.params["act0.alpha"], 1.0)


def test_scaling_layer_identity_at_init():
    model, x, codes = make(preset("td-class"), mixed_data())
    a = model.forward(ad.Tape(), x, codes).value
    b = model.forward(ad.Tape(), x, codes, scaling=False).value
    assert np.max(np.abs(a - b)) <= 1e-15


def test_alpha_zero_makes_network_affine():
    cfg = preset("td-class").replace(num_embeddings="none")
    model, x, _ = make(cfg, numeric())
    for k in model.params:
        if k.endswith(".alpha"):
            model.params[k][...] = 0.0
    x1, x2 = x[:1], x[1:2]
    lam = 0.3
    mix = model.output(lam * x1 + (1 - lam) * x2)
    np.testing.assert_allclose(mix, lam * model.output(x1) + (1 - lam) * model.output(x2), atol=1e-12)


def test_ntp_linear_against_dense_oracle():
    g = np.random.default_rng(0)
    x, w, b = g.normal(size=(4, 6)), g.normal(size=(3, 6)), g.normal(size=3)
    tape = ad.Tape()
    z = ad.linear(tape.var(x), tape.var(w), tape.var(b), 1 / math.sqrt(6)).value
    want = np.array([[sum(w[o, i] * x[r, i] for i in range(6)) / math.sqrt(6) + b[o] for o in range(3)]
                     for r in range(4)])
    np.testing.assert_allclose(z, want, rtol=1e-13)
    # duplicating inputs and weight columns: sum doubles, 1/sqrt(d) shrinks by sqrt(2)
    z1 = ad.linear(tape.var(x), tape.var(w), None, 1 / math.sqrt(6)).value
    z2 = ad.linear(tape.var(np.hstack([x, x])), tape.var(np.hstack([w, w])), None, 1 / math.sqrt(12)).value
    np.testing.assert_allclose(z2, math.sqrt(2) * z1, rtol=1e-13)


def _preactivations(model, x):
    """Plain-numpy forward pass (no embeddings) returning each layer's pre-activation."""
    h = x * model.params["scale"]
    pres = []
    for l in range(model.n_layers):
        w, b = model.params[f"layer{l}.weight"], model.params[f"layer{l}.bias"]
        pre = h @ w.T / math.sqrt(h.shape[1])
        pres.append(pre)
        h = ad.ACTIVATIONS[model.config.activation](pre + b)[0]
    return pres


def test_data_dependent_init_unit_variance():
    cfg = preset("td-class").replace(num_embeddings="none", hidden_sizes=(32, 16))
    model, x, _ = make(cfg, numeric(n=300, f=5))
    for pre in _preactivations(model, x):
        var = pre.var(axis=0)
        assert np.all(np.abs(var - 1.0) < 1e-6)


def test_rescale_by_hand():
    # one feature with variance 4: every first-layer weight becomes +-1/2
    cfg = preset("td-class").replace(num_embeddings="none", hidden_sizes=(5,))
    model, _, _ = make(cfg, numeric(n=10, f=1), init=False)
    init_data_dependent(model, np.array([[-2.0], [2.0]]), None, seed=3)
    np.testing.assert_allclose(np.abs(model.params["layer0.weight"]), 0.5, rtol=1e-15)


def test_dead_units_keep_their_draw():
    cfg = preset("td-class").replace(num_embeddings="none", hidden_sizes=(5,))
    model, _, _ = make(cfg, numeric(n=10, f=2), init=False)
    init_data_dependent(model, np.full((4, 2), 0.7), None, seed=9)
    drawn = rng.stream(9, "init").standard_normal((5, 2))
    np.testing.assert_array_equal(model.params["layer0.weight"], drawn)


def test_he5_standin_bias_centers_kink_on_a_sample():
    cfg = preset("td-class").replace(num_embeddings="none", hidden_sizes=(16,))
    model, x, _ = make(cfg, numeric(n=40, f=3))
    pre = _preactivations(model, x)[0] + model.params["layer0.bias"]
    # each unit's pre-activation (with bias) is exactly zero at some sample row
    assert np.all(np.min(np.abs(pre), axis=0) < 1e-12)


def test_init_deterministic():
    a, _, _ = make(preset("td-class"), mixed_data(), seed=5)
    b, _, _ = make(preset("td-class"), mixed_data(), seed=5)
    c, _, _ = make(preset("td-class"), mixed_data(), seed=6)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert not np.array_equal(a.params["layer0.weight"], c.params["layer0.weight"])


def test_init_sample_cap():
    np.testing.assert_array_equal(init_sample(10, 65536, 0), np.arange(10))
    s = init_sample(1000, 100, 0)
    assert len(s) == 100 and len(np.unique(s)) == 100
    np.testing.assert_array_equal(s, init_sample(1000, 100, 0))


def test_simple_init():
    model, x, codes = make(preset("tds-class"), numeric(n=30, f=4))
    np.testing.assert_array_equal(model.params["layer3.weight"], 0.0)
    np.testing.assert_array_equal(model.output(x, codes), 0.0)
    w = model.params["layer1.weight"].ravel()
    n = w.size
    assert n >= 10_000
    assert abs(w.mean()) < 5 / math.sqrt(n)
    assert abs(w.var() - 1.0) < 5 * math.sqrt(2 / n)


def test_full_model_gradient_check():
    data = mixed_data(n=5, seed=1)
    cfg = preset("td-class").replace(hidden_sizes=(8, 8), max_one_hot=3)
    model, x, codes = make(cfg, data)
    g = np.random.default_rng(0)
    # move scale and alpha off their init values so their gradients are generic
    model.params["scale"] = g.uniform(0.5, 1.5, model.params["scale"].shape)
    for k in model.params:
        if k.endswith(".alpha"):
            model.params[k] = g.uniform(0.2, 1.0, model.params[k].shape)

    def loss(tape, vs):
        out = model.forward(tape, x, codes, vs)
        return ad.softmax_cross_entropy(out, data.y, 0.1)

    assert ad.grad_check(loss, model.params) < 1e-4


def test_dropout_masks_respected():
    cfg = preset("td-class").replace(num_embeddings="none", hidden_sizes=(4,))
    model, x, _ = make(cfg, numeric(n=6, f=2))
    mask = [np.zeros((6, 4), bool)]
    out = model.forward(ad.Tape(), x, None, dropout_p=0.5, masks=mask).value
    # everything dropped: output is the last bias
    np.testing.assert_allclose(out, np.broadcast_to(model.params["layer1.bias"], out.shape))


def test_shape_error_on_wrong_width():
    model, x, codes = make(preset("td-class"), numeric())
    with pytest.raises(ad.ShapeError):
        model.output(x[:, :3], codes)
