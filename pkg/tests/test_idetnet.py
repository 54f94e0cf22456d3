import numpy as np
import pytest
from hypothesis import given, strategies as st

from ddmimo import numerics as nx
from ddmimo.channel import Batch
from ddmimo.idetnet import (
    IDetNetConfig, detnet_compat, idetnet_detect, idetnet_forward, idetnet_loss, init_idetnet, layer_loss, lss,
    param_count, param_shapes, smooth,
)
from ddmimo.numerics import AdamState, ContractError, Rng, adam_step, value_and_grad

from conftest import fd_check, make_batch, mixed_batch


def test_lss_examples():
    assert lss(np.array(0.0), 0.7).item() == 0.0
    assert lss(np.array(2.0), 0.7).item() == 1.0
    assert lss(np.array(-2.0), -0.7).item() == -1.0
    assert abs(lss(np.array(0.35), 0.7).item() - 0.5) < 1e-15
    with pytest.raises(ContractError):
        lss(np.array(0.1), 1e-9)


@given(st.floats(-5, 5), st.floats(0.05, 3) | st.floats(-3, -0.05))
def test_lss_odd_bounded_lipschitz(s, beta):
    a = lss(np.array(s), beta).item()
    assert lss(np.array(-s), beta).item() == -a
    assert -1.0 <= a <= 1.0
    b = lss(np.array(s + 1e-3), beta).item()
    assert abs(b - a) <= 1e-3 / abs(beta) + 1e-12


def test_smooth_examples():
    one, zero = np.array([1.0]), np.array([0.0])
    assert smooth(nx.Tensor(one), zero, 0.0).data[0] == 1.0
    assert smooth(nx.Tensor(one), zero, 1.0).data[0] == 0.0
    assert abs(smooth(nx.Tensor(one), zero, 0.8).data[0] - 0.2) < 1e-15


def test_param_count_examples():
    assert param_count(IDetNetConfig(n_t=1, k_id=1, h1=2, h2=2)) == 33
    cfg = IDetNetConfig(n_t=4, k_id=10)
    assert param_count(detnet_compat(cfg)) == param_count(cfg) - 3 * cfg.k_id
    shapes = param_shapes(cfg)
    assert sum(int(np.prod(s)) for s in shapes.values()) == param_count(cfg)


def test_large_config_param_count_formula():
    # n_t=16, K=40, widths 64/32: the count follows the layer widths (249720 is not reproduced)
    count = param_count(IDetNetConfig(n_t=16, k_id=40, h1=64, h2=32))
    assert count == 40 * (64 * (32 + 96) + 64 + 32 * 64 + 32 + 32 * 64 + 32 + 3)
    assert count != 249720


def test_init_values_and_weight_std():
    cfg = IDetNetConfig(n_t=16, k_id=10, h1=64, h2=32)
    p = init_idetnet(cfg, Rng(0))
    assert all(p[f"{k}.beta"] == 0.7 for k in range(cfg.k_id))
    assert all(p[f"{k}.alpha1"] == 0.8 and p[f"{k}.alpha2"] == 0.8 for k in range(cfg.k_id))
    w = np.concatenate([v.ravel() for k, v in p.items() if k.split(".")[1][0] in "Wb"])
    assert w.size >= 10**5
    assert 0.095 <= w.std() <= 0.105


def test_zero_weights_give_zero_output():
    cfg = IDetNetConfig(n_t=2, k_id=3, h1=4, h2=3)
    p = {k: np.zeros_like(v) for k, v in init_idetnet(cfg, Rng(0)).items()}
    for k in range(cfg.k_id):
        p[f"{k}.beta"] = np.array(0.7)
    for out in idetnet_forward(p, make_batch(5, 2, 3), cfg):
        np.testing.assert_array_equal(out.data, 0.0)


def test_alpha2_one_freezes_x():
    cfg = IDetNetConfig(n_t=2, k_id=3, h1=4, h2=3)
    p = init_idetnet(cfg, Rng(1))
    for k in range(cfg.k_id):
        p[f"{k}.alpha2"] = np.array(1.0)
    assert np.all(idetnet_detect(p, make_batch(5, 2, 3), cfg) == 0.0)


def test_single_layer_hand_trace():
    cfg = IDetNetConfig(n_t=1, k_id=1, h1=2, h2=1)
    b = make_batch(1, 1, 2, seed=3)
    r = np.random.default_rng(0)
    p = {"0.W1": r.normal(0, 0.3, (2, 7)), "0.b1": np.array([0.1, -0.05]), "0.W2": r.normal(0, 0.3, (1, 2)),
         "0.b2": np.array([0.02]), "0.W3": r.normal(0, 0.3, (2, 2)), "0.b3": np.array([0.01, -0.02]),
         "0.beta": np.array(0.5), "0.alpha1": np.array(0.3), "0.alpha2": np.array(0.6)}
    v0, x0 = np.zeros(1), np.zeros(2)
    s = np.concatenate([v0, b.hty[0], b.gram[0] @ x0, x0])
    z = np.maximum(p["0.W1"] @ s + p["0.b1"], 0)
    t = p["0.W3"] @ z + p["0.b3"]
    soft = -1 + np.maximum(t + 0.5, 0) / 0.5 - np.maximum(t - 0.5, 0) / 0.5
    x1 = (1 - 0.6) * soft + 0.6 * x0
    np.testing.assert_allclose(idetnet_detect(p, b, cfg)[0], x1, atol=1e-14)


@given(st.integers(0, 10_000))
def test_outputs_bounded_for_unit_alpha(seed):
    cfg = IDetNetConfig(n_t=2, k_id=3, h1=6, h2=4)
    r = Rng(seed)
    p = {k: (v * 20 if v.ndim else v) for k, v in init_idetnet(cfg, r).items()}
    for k in range(cfg.k_id):
        p[f"{k}.alpha1"], p[f"{k}.alpha2"] = np.array(r.uniform()), np.array(r.uniform())
    for out in idetnet_forward(p, make_batch(4, 2, 3, seed=seed), cfg):
        assert np.all(np.abs(out.data) <= 1.0 + 1e-12)


def test_layer_loss_examples():
    x = np.ones((1, 4))
    assert layer_loss([nx.Tensor(x), nx.Tensor(x)], x).item() == 0.0
    e = np.array([[0.1, -0.2, 0.0, 0.3]])
    assert abs(layer_loss([nx.Tensor(x + e)], x).item() - np.sum(e ** 2)) < 1e-15


def test_loss_gradient_matches_finite_differences():
    cfg = IDetNetConfig(n_t=2, k_id=3, h1=8, h2=4)
    b = mixed_batch(6, 2, seed=1)
    p = init_idetnet(cfg, Rng(2))
    assert fd_check(lambda q, bb: idetnet_loss(q, bb, cfg), p, b, n_probe=6) < 1e-4


def test_compat_mode_has_no_beta_alpha_and_trains():
    cfg = detnet_compat(IDetNetConfig(n_t=2, k_id=2, h1=8, h2=4))
    p = init_idetnet(cfg, Rng(3))
    assert not any(k.endswith(("beta", "alpha1", "alpha2")) for k in p)
    _, g = value_and_grad(lambda q, bb: idetnet_loss(q, bb, cfg), p, make_batch(5, 2, 3))
    assert set(g) == set(p)


def test_loss_halves_in_200_steps():
    cfg = IDetNetConfig(n_t=2, k_id=3, h1=16, h2=8)
    b = make_batch(32, 2, 4, snr_db=15.0, seed=9)
    p = init_idetnet(cfg, Rng(4))
    loss0 = idetnet_loss(p, b, cfg).item()
    s = AdamState()
    for _ in range(200):
        _, g = value_and_grad(lambda q: idetnet_loss(q, b, cfg), p)
        p = adam_step(s, p, g)
    assert idetnet_loss(p, b, cfg).item() <= 0.5 * loss0


def test_model_shape_mismatch():
    with pytest.raises(ContractError):
        idetnet_forward(init_idetnet(IDetNetConfig(n_t=3), Rng(0)), make_batch(2, 2, 2), IDetNetConfig(n_t=3))


def test_batch_rows_are_independent():
    cfg = IDetNetConfig(n_t=2, k_id=2, h1=8, h2=4)
    p = init_idetnet(cfg, Rng(5))
    b = mixed_batch(5, 2, seed=2)
    full = idetnet_detect(p, b, cfg)
    for i in range(5):
        np.testing.assert_allclose(idetnet_detect(p, b.subset(np.array([i])), cfg)[0], full[i], atol=1e-13)
    assert isinstance(b, Batch)
