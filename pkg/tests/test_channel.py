import numpy as np
import pytest
from hypothesis import given, strategies as st

from ddmimo.channel import (
    INV_SQRT2, Batch, ClientProfile, Dataset, Sample, SystemConfig, correlation_matrix, generate_channel,
    generate_client_dataset, generate_mixed, generate_sample, generate_samples, make_client_profiles,
    matrix_sqrt, pool, qpsk_demodulate, qpsk_modulate, realify, snr_to_sigma2,
)
from ddmimo.numerics import ContractError, Rng


def test_correlation_matrix_examples():
    np.testing.assert_array_equal(correlation_matrix(3, 0.0), np.eye(3))
    np.testing.assert_allclose(correlation_matrix(2, 0.5), [[1, 0.5], [0.5, 1]])
    assert np.linalg.eigvalsh(correlation_matrix(4, 0.9)).min() >= -1e-10
    assert correlation_matrix(3, 0.5)[0, 2] == 0.5 ** 4


def test_correlation_matrix_rejects_bad_rho():
    with pytest.raises(ContractError):
        correlation_matrix(3, 1.0)
    with pytest.raises(ContractError):
        correlation_matrix(3, -0.1)


def test_matrix_sqrt_examples():
    np.testing.assert_allclose(matrix_sqrt(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(matrix_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-12)
    with pytest.raises(ContractError):
        matrix_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))


@given(st.integers(0, 10_000))
def test_matrix_sqrt_residual(seed):
    r = np.random.default_rng(seed)
    B = r.standard_normal((5, 5))
    R = B @ B.T + 0.1 * np.eye(5)
    S = matrix_sqrt(R)
    assert np.linalg.norm(S @ S - R) / np.linalg.norm(R) < 1e-8


def test_uncorrelated_channel_energy():
    H = generate_channel(3, 5, 0.0, Rng(0), count=20_000)
    assert abs(np.mean(np.abs(H) ** 2) - 1 / 5) < 0.005


def test_channel_determinism():
    np.testing.assert_array_equal(generate_channel(2, 3, 0.4, Rng(9)), generate_channel(2, 3, 0.4, Rng(9)))


@pytest.mark.parametrize("rho", [0.0, 0.3, 0.6, 0.9])
def test_received_energy(rho):
    n_t, n_r, n = 4, 6, 10_000
    r = Rng(5)
    H = generate_channel(n_t, n_r, rho, r, count=n)
    x = (2 * r.integers(0, 1, (n, n_t)) - 1 + 1j * (2 * r.integers(0, 1, (n, n_t)) - 1)) / np.sqrt(2)
    energy = np.mean(np.sum(np.abs(np.einsum("bij,bj->bi", H, x)) ** 2, axis=1))
    assert 0.95 <= energy / n_t <= 1.05


def test_kronecker_statistics():
    n_t, n_r, rho, n = 3, 4, 0.6, 10_000
    H = generate_channel(n_t, n_r, rho, Rng(8), count=n)
    Rt_hat = np.mean(np.conj(np.swapaxes(H, 1, 2)) @ H, axis=0)
    Rr_hat = np.mean(H @ np.conj(np.swapaxes(H, 1, 2)), axis=0) * n_r / n_t
    assert np.max(np.abs(Rt_hat - correlation_matrix(n_t, rho))) < 0.05
    assert np.max(np.abs(Rr_hat - correlation_matrix(n_r, rho))) < 0.05


def test_realify_examples():
    np.testing.assert_array_equal(realify(np.array([[1 + 0j]])), [[1, 0], [0, 1]])
    np.testing.assert_array_equal(realify(np.array([[1j]])), [[0, -1], [1, 0]])


@given(st.integers(0, 10_000))
def test_realify_is_ring_homomorphism(seed):
    r = np.random.default_rng(seed)
    A = r.standard_normal((3, 3)) + 1j * r.standard_normal((3, 3))
    B = r.standard_normal((3, 3)) + 1j * r.standard_normal((3, 3))
    v = r.standard_normal(3) + 1j * r.standard_normal(3)
    np.testing.assert_allclose(realify(A @ B), realify(A) @ realify(B), atol=1e-12)
    np.testing.assert_allclose(realify(A + B), realify(A) + realify(B), atol=1e-12)
    np.testing.assert_allclose(realify(A @ v), realify(A) @ realify(v), atol=1e-12)


def test_qpsk_examples():
    np.testing.assert_allclose(qpsk_modulate([1, 0]), [INV_SQRT2, -INV_SQRT2])
    for bits in ([0, 0], [0, 1], [1, 0], [1, 1]):
        np.testing.assert_array_equal(qpsk_demodulate(qpsk_modulate(bits)), bits)
    x = qpsk_modulate([1, 0, 0, 1])
    np.testing.assert_array_equal(qpsk_demodulate(x + 0.09 * np.array([-1, 1, 1, -1])), [1, 0, 0, 1])
    with pytest.raises(ContractError):
        qpsk_modulate([1, 0, 1])


def test_snr_to_sigma2_examples():
    assert snr_to_sigma2(0.0, 16, 16) == 1.0
    assert abs(snr_to_sigma2(10.0, 16, 32) - 0.05) < 1e-15
    vals = snr_to_sigma2(np.arange(-5, 40, 5.0), 4, 8)
    assert np.all(np.diff(vals) < 0)


def test_noiseless_sample_is_exact():
    s = generate_samples(5, 2, 3, 0.2, 300.0, Rng(0))[0]
    np.testing.assert_allclose(s.y, s.H @ s.x, atol=1e-12)


def test_noise_variance_per_real_component():
    samples = generate_samples(10_000, 2, 4, 0.3, 5.0, Rng(3))
    resid = np.concatenate([s.y - s.H @ s.x for s in samples])
    target = samples[0].sigma2 / 2
    assert abs(resid.var() / target - 1) < 0.05


def test_profile_draws_stay_inside_subintervals():
    prof = ClientProfile(0, (0.3, 0.5), (2.0, 7.0), (4, 6))
    r = Rng(4)
    for i in range(200):
        s = generate_sample(r, prof, n_t=2)
        assert 0.3 <= s.rho <= 0.5 and 2.0 <= s.snr_db <= 7.0 and 4 <= s.n_r <= 6
        assert s.H.shape == (2 * s.n_r, 4)


def test_generate_sample_needs_operating_point():
    with pytest.raises(ContractError):
        generate_sample(Rng(0), n_t=2)


def test_client_profiles_inside_global_ranges():
    system = SystemConfig()
    for p in make_client_profiles(system, 20, Rng(1)):
        assert system.rho_range[0] <= p.rho_subinterval[0] <= p.rho_subinterval[1] <= system.rho_range[1]
        assert system.snr_db_range[0] <= p.snr_subinterval[0] <= p.snr_subinterval[1] <= system.snr_db_range[1]
        assert abs(p.snr_subinterval[1] - p.snr_subinterval[0] - 5.0) < 1e-12


def test_pool_sizes_and_multiset():
    prof = ClientProfile(0, (0.0, 0.2), (0.0, 5.0), (2, 3))
    a = generate_client_dataset(prof, 3, 2, Rng(1))
    b = generate_client_dataset(prof, 4, 2, Rng(2))
    p = pool([a, b], Rng(3))
    assert len(p) == 7
    assert {id(s) for s in p} == {id(s) for s in a.samples + b.samples}
    assert [id(s) for s in pool([a, b], Rng(3))] == [id(s) for s in p]


def test_system_config_validation():
    with pytest.raises(ContractError):
        SystemConfig(n_t=4, n_r_range=(2, 8))
    with pytest.raises(ContractError):
        SystemConfig(rho_range=(0.0, 1.0))


def test_batch_mixes_receive_antenna_counts():
    ds = generate_mixed(30, SystemConfig(n_t=2, n_r_range=(2, 5)), Rng(0))
    b = Batch.from_samples(ds.samples)
    assert b.gram.shape == (30, 4, 4) and len(set(b.n_r.tolist())) > 1
    s = ds[7]
    np.testing.assert_allclose(b.gram[7], s.H.T @ s.H)
    np.testing.assert_allclose(b.yty[7], s.y @ s.y)
    sub = b.subset(np.array([1, 7]))
    np.testing.assert_array_equal(sub.hty[1], b.hty[7])
    with pytest.raises(ContractError):
        Batch.from_samples([])


def test_sample_bits_property():
    s = generate_samples(1, 3, 3, 0.0, 10.0, Rng(6))[0]
    np.testing.assert_array_equal(qpsk_modulate(s.bits), s.x)
    assert isinstance(s, Sample) and s.n_t == 3
