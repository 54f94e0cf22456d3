import numpy as np
import pytest
from hypothesis import given, strategies as st

from ddmimo import numerics as nx
from ddmimo.complexity import dense_flops, flop_count, inverse_flops
from ddmimo.ddnet import (
    DDNet, NormStats, RouteNetConfig, RouteSet, balance_route_dataset, branch_bit_errors, build_route_dataset,
    build_route_input, init_routenet, normalize, param_count, route_accuracy, route_index, route_label,
    route_label_eps, route_objective, routenet_forward, routenet_loss,
)
from ddmimo.detectors import bit_errors, quantize
from ddmimo.idetnet import IDetNetConfig, idetnet_detect, init_idetnet
from ddmimo.numerics import ContractError, Rng
from ddmimo.oampnet import OAMPNetConfig, init_oampnet, oampnet_detect

from conftest import fd_check, mixed_batch


def test_normalize_examples():
    assert normalize(2.0, 2.0, 6.0) == 0.0
    assert normalize(6.0, 2.0, 6.0) == 1.0
    assert normalize(4.0, 2.0, 6.0) == 0.5
    assert normalize(9.0, 2.0, 6.0) == 1.75      # no clipping
    assert normalize(3.0, 3.0, 3.0) == 0.0       # degenerate component


def _stats(n_t):
    n = 2 * n_t
    return NormStats(0.01, 2.0, -np.ones(n * n), 2 * np.ones(n * n), n_t, n_t + 4)


def test_route_input_layout():
    st_ = _stats(2)
    b = mixed_batch(4, 2, seed=0)
    s = build_route_input(b.gram, b.sigma2, b.n_r, st_)
    assert s.shape == (4, 4 * 4 + 4) == (4, RouteNetConfig(n_t=2).in_width)
    two = build_route_input(np.stack([b.gram[0]] * 2), np.array([0.5, 0.5]), np.array([3.0, 5.0]), st_)
    diff = np.flatnonzero(two[0] != two[1])
    np.testing.assert_array_equal(diff, [18, 19])


def test_normstats_validation_and_round_trip():
    with pytest.raises(ContractError):
        NormStats(1.0, 0.5, np.zeros(4), np.ones(4), 1, 2)
    s = _stats(1)
    back = NormStats.from_dict(s.to_dict())
    np.testing.assert_array_equal(back.gram_max, s.gram_max)
    assert back.n_r_max == s.n_r_max


def test_route_index_examples():
    assert route_index(np.array([2.0, -1.0])) == 0
    assert route_index(np.array([0.3, 0.3])) == 0
    assert route_index(np.array([0.0, 0.1])) == 1


def test_routenet_forward_simplex():
    cfg = RouteNetConfig(n_t=2)
    p = init_routenet(cfg, Rng(0))
    b = mixed_batch(5, 2, seed=1)
    r_soft, r_pred = routenet_forward(p, build_route_input(b.gram, b.sigma2, b.n_r, _stats(2)))
    np.testing.assert_allclose(r_soft.data.sum(axis=1), 1.0)
    assert np.all((r_soft.data > 0) & (r_soft.data < 1))
    assert r_pred.shape == (5,)
    assert param_count(cfg) == sum(v.size for v in p.values())


def test_equal_logits_route_to_branch_zero():
    cfg = RouteNetConfig(n_t=1)
    p = {k: np.zeros_like(v) for k, v in init_routenet(cfg, Rng(0)).items()}
    r_soft, r_pred = routenet_forward(p, np.zeros((1, cfg.in_width)))
    np.testing.assert_allclose(r_soft.data, [[0.5, 0.5]])
    assert r_pred[0] == 0


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_route_index_invariant_to_positive_scaling(logits):
    l = np.array(logits)
    assert route_index(l) == route_index(3.0 * l)


def test_route_label_examples():
    np.testing.assert_array_equal(route_label(0, 0), [1, 0])
    np.testing.assert_array_equal(route_label(3, 1), [0, 1])
    np.testing.assert_array_equal(route_label(1, 3), [1, 0])
    np.testing.assert_array_equal(route_label_eps(2, 1, -2), [0, 1])
    np.testing.assert_array_equal(route_label_eps(2, 1, 2), [1, 0])
    for a in range(5):
        for b in range(5):
            np.testing.assert_array_equal(route_label_eps(a, b, 0), route_label(a, b))


def _routes(labels, seed=0):
    n = len(labels)
    r = np.random.default_rng(seed)
    labels = np.asarray(labels)
    return RouteSet(r.standard_normal((n, 2, 2)), r.uniform(0.1, 1, n), r.integers(1, 4, n).astype(float),
                    labels, np.where(labels == 0, 0, 2), np.where(labels == 0, 1, 0))


def test_balancing_examples():
    routes = _routes([0] * 100 + [1] * 40)
    bal = balance_route_dataset(routes, Rng(1))
    assert bal.class_counts() == (40, 40)
    idx = [int(np.flatnonzero(routes.sigma2 == s)[0]) for s in bal.sigma2]
    np.testing.assert_array_equal(routes.label[idx], bal.label)
    even = _routes([0, 1] * 10)
    assert balance_route_dataset(even, Rng(2)).class_counts() == (10, 10)
    with pytest.raises(ContractError):
        balance_route_dataset(_routes([0] * 5), Rng(0))


def test_loss_hand_arithmetic():
    r_soft = nx.Tensor(np.array([[0.5, 0.5]]))
    lab = np.array([[1, 0]])
    loss = route_objective(r_soft, lab, np.array([0]), np.array([4]), xi=0.5).item()
    assert abs(loss - (-np.log(0.5) + 0.5 * 2.0)) < 1e-12
    pure = route_objective(r_soft, lab, np.array([0]), np.array([4]), xi=0.0).item()
    assert abs(pure + np.log(0.5)) < 1e-12


def test_loss_perfect_routing_limit():
    r_soft = nx.Tensor(np.array([[1 - 1e-13, 1e-13]]))
    loss = route_objective(r_soft, np.array([[1, 0]]), np.array([0]), np.array([3]), xi=0.5).item()
    assert loss < 1e-9


@given(st.floats(0.001, 0.999), st.integers(0, 6), st.integers(0, 6))
def test_surrogate_penalty_nonnegative(p0, be_id, be_oa):
    r = nx.Tensor(np.array([[p0, 1 - p0]]))
    lab = np.array([[1, 0]])
    pen = route_objective(r, lab, np.array([be_id]), np.array([be_oa]), 1.0).item() \
        - route_objective(r, lab, np.array([be_id]), np.array([be_oa]), 0.0).item()
    assert pen >= -1e-12


def test_routenet_loss_gradient():
    cfg = RouteNetConfig(n_t=2, hidden=6)
    routes = build_route_dataset(mixed_batch(12, 2, seed=4), init_idetnet(IDetNetConfig(n_t=2, k_id=2, h1=8, h2=4),
                                 Rng(1)), IDetNetConfig(n_t=2, k_id=2, h1=8, h2=4), init_oampnet(OAMPNetConfig(n_t=2)),
                                 OAMPNetConfig(n_t=2))
    stats = NormStats.from_arrays(routes.gram, routes.sigma2, routes.n_r)
    p = init_routenet(cfg, Rng(2))
    assert fd_check(lambda q, r: routenet_loss(q, r, stats, 0.5), p, routes, n_probe=8) < 1e-4
    with pytest.raises(ContractError):
        routenet_loss(p, routes, stats, -1.0)


@pytest.fixture(scope="module")
def small_model():
    id_cfg = IDetNetConfig(n_t=2, k_id=2, h1=8, h2=4)
    oa_cfg = OAMPNetConfig(n_t=2, k_oa=2)
    b = mixed_batch(40, 2, seed=7)
    idp, oap = init_idetnet(id_cfg, Rng(3)), init_oampnet(oa_cfg)
    stats = NormStats.from_arrays(b.gram, b.sigma2, b.n_r)
    model = DDNet(idp, id_cfg, oap, oa_cfg, init_routenet(RouteNetConfig(n_t=2), Rng(4)), stats)
    return model, b


def test_forced_branches(small_model):
    model, b = small_model
    x0, f0 = model.detect(b, force=0)
    x1, f1 = model.detect(b, force=1)
    np.testing.assert_array_equal(x0, quantize(idetnet_detect(model.id_params, b, model.id_cfg)))
    np.testing.assert_array_equal(x1, quantize(oampnet_detect(model.oa_params, b, model.oa_cfg)))
    assert f0.sum() == 0 and f1.sum() == len(b)


def test_bookkeeping_identity_and_conditional_execution(small_model):
    model, b = small_model
    # one sigmoid unit thresholds the noise feature at its median, so both branches get used
    s = build_route_input(b.gram, b.sigma2, b.n_r, model.stats)
    j = int(np.argmax(s.std(axis=0)))
    p = {k: np.zeros_like(v) for k, v in model.ro_params.items()}
    p["W1"][0, j] = 1.0
    p["b1"][0] = -np.median(s[:, j])
    p["W2"][1, 0] = 1.0
    p["b2"][1] = -0.5
    dd = DDNet(model.id_params, model.id_cfg, model.oa_params, model.oa_cfg, p, model.stats)
    x_hat, flags = dd.detect(b)
    assert 0 < flags.sum() < len(b)
    assert dd.calls == {"idetnet": int(np.sum(flags == 0)), "oampnet": int(np.sum(flags == 1))}
    be_id, be_oa = branch_bit_errors(b, dd.id_params, dd.id_cfg, dd.oa_params, dd.oa_cfg)
    be_dd = bit_errors(x_hat, b.x)
    np.testing.assert_array_equal(be_dd, np.where(flags == 1, be_oa, be_id))
    assert be_dd.sum() >= np.minimum(be_id, be_oa).sum()
    assert len(flags) == len(b) and s.shape[0] == len(b)


def test_route_dataset_labels_consistent(small_model):
    model, b = small_model
    routes = build_route_dataset(b, model.id_params, model.id_cfg, model.oa_params, model.oa_cfg)
    np.testing.assert_array_equal(routes.label, np.where(routes.be_id <= routes.be_oa, 0, 1))
    assert 0.0 <= route_accuracy(model.ro_params, routes, model.stats) <= 1.0


def test_flop_examples():
    assert dense_flops(7, 5) == 35
    assert inverse_flops(3) == 18
    id_cfg, oa_cfg, ro_cfg = IDetNetConfig(n_t=16, k_id=40), OAMPNetConfig(n_t=16, k_oa=8), RouteNetConfig(n_t=16)
    kw = dict(id_cfg=id_cfg, oa_cfg=oa_cfg, ro_cfg=ro_cfg)
    b0 = flop_count("ddnet", 16, 16, branch=0, **kw)
    b1 = flop_count("ddnet", 16, 16, branch=1, **kw)
    assert b0 < b1
    assert b0 == flop_count("routenet", 16, 16, **kw) + flop_count("idetnet", 16, 16, **kw)
    with pytest.raises(ContractError):
        flop_count("sphere", 2, 2)


def test_flop_growth_orders():
    # LMMSE grows cubically in n_t, IDetNet roughly quadratically, OAMPNet (literal) cubically in N_r
    l1, l2 = flop_count("lmmse", 8, 8), flop_count("lmmse", 16, 16)
    o1, o2 = flop_count("oampnet", 8, 8), flop_count("oampnet", 8, 16)
    assert 6 < l2 / l1 < 10
    assert o2 / o1 > 3
    assert flop_count("oampnet", 4, 4, oamp_form="reduced") > 0
