import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dppl.learn import (DppModel, cross_distances, feature_matrix, feature_statistics,
                        grad_log_likelihood, log_likelihood, psd_sigma_bound)
from dppl.network import PowerConfig, generate_network

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Store one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str = ""):
        line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}"
        if detail:
            line += f" :: {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])


@pytest.fixture
def cfg():
    return PowerConfig.standard()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_psd(rng, n, rank=None, scale=1.0):
    """Random PSD matrix A A^T with ``rank`` columns in A."""
    a = rng.normal(size=(n, rank or n)) * scale
    return a @ a.T


def random_training_set(rng, cfg, k_range=(1, 4), m_range=(3, 9), radius=3.0):
    """Small random training set with uniformly random labels."""
    training = []
    for _ in range(int(rng.integers(*k_range))):
        m = int(rng.integers(*m_range))
        net = generate_network(m, radius, 1.0, 2.0, rng)
        training.append((net, frozenset(int(i) for i in np.flatnonzero(rng.random(m) < 0.5))))
    return training


def random_model(rng, cfg, training, standardize=True):
    """Model with unit-scale weights on (standardized or RMS-scaled) features and
    a bandwidth drawn below the training set's PSD bound."""
    bound = min(psd_sigma_bound(cross_distances(net)) for net, _ in training)
    sigma = bound * rng.uniform(0.3, 0.95) if np.isfinite(bound) else rng.uniform(0.3, 3.0)
    if standardize:
        means, stds = feature_statistics(training, cfg)
        return DppModel(rng.normal(size=3), sigma, True, means, stds)
    F = np.vstack([feature_matrix(net, cfg) for net, _ in training])
    rms = np.sqrt(np.mean(F ** 2, axis=0))
    return DppModel(rng.normal(size=3) / np.where(rms > 0, rms, 1.0), sigma)


def params(model):
    return np.append(model.theta, np.log(model.sigma))


def at(model, x):
    return model.with_params(x[:3], float(np.exp(x[3])))


def fd_gradient(model, training, cfg, h=1e-5, steps=None):
    """Central differences of the log-likelihood in (theta, log sigma)."""
    x = params(model)
    steps = np.full(4, h) if steps is None else np.asarray(steps, dtype=float)
    out = np.empty(4)
    for k in range(4):
        e = np.zeros(4)
        e[k] = steps[k]
        out[k] = (log_likelihood(at(model, x + e), training, cfg)
                  - log_likelihood(at(model, x - e), training, cfg)) / (2 * steps[k])
    return out


def fd_hessian(model, training, cfg, h=1e-5):
    """Symmetrized central differences of the analytic gradient."""
    x = params(model)
    H = np.empty((4, 4))
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        H[:, k] = (grad_log_likelihood(at(model, x + e), training, cfg)
                   - grad_log_likelihood(at(model, x - e), training, cfg)) / (2 * h)
    return 0.5 * (H + H.T)
