import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddmimo.channel import Batch, generate_samples
from ddmimo.numerics import Rng, value_and_grad

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_batch(count, n_t, n_r, rho=0.0, snr_db=10.0, seed=0):
    return Batch.from_samples(generate_samples(count, n_t, n_r, rho, snr_db, Rng(seed, 77)))


def mixed_batch(count, n_t, seed=0):
    """Samples with varying N_r, rho and SNR in one batch."""
    rng = Rng(seed, 78)
    out = []
    for i in range(count):
        n_r = int(rng.integers(n_t, n_t + 3))
        out += generate_samples(1, n_t, n_r, float(rng.uniform(0, 0.8)), float(rng.uniform(0, 15)), rng.split(i))
    return Batch.from_samples(out)


def fd_check(fn, params, *args, h=1e-5, n_probe=None, rng=None):
    """Max relative error between reverse-mode and central-difference gradients.

    `fn(tensors, *args)` must return a scalar tensor. With `n_probe`, only that
    many randomly chosen coordinates are probed.
    """
    _, grads = value_and_grad(fn, params, *args)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for name, p in params.items():
        flat_idx = np.arange(p.size)
        if n_probe is not None and p.size > n_probe:
            flat_idx = rng.choice(p.size, n_probe, replace=False)
        for i in flat_idx:
            idx = np.unravel_index(i, p.shape)
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            num = (float(fn(plus, *args).data) - float(fn(minus, *args).data)) / (2 * h)
            ana = grads[name][idx]
            err = abs(num - ana) / max(abs(num), abs(ana), 1e-6)
            worst = max(worst, err)
    return worst


# (criterion, passed, detail) lines collected by the acceptance suite
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return Rng(1234)
