import numpy as np
import pytest
from scipy import stats

from rpcemap import rpce
from rpcemap.errors import SingularDenominatorError
from rpcemap.pce_basis import basis_matrix, total_degree_indices
from rpcemap.posterior import (
    GaussianByPrecision,
    TmcmcConfig,
    build_ensemble_samples,
    sample_error_given_q,
    sample_p_given_q,
    sample_q_posterior,
    tmcmc,
)
from rpcemap.sbl import TrainerConfig, TrainingData, train


@pytest.fixture(scope="module")
def noisy_model():
    rng = np.random.default_rng(0)
    ps = total_degree_indices(1, 2)
    p_true = np.array([1.0 + 0.5j, 0.3, -0.2j])
    q_true = np.array([1.0, 0.4 + 0.2j, 0.1])
    u = rng.standard_normal(25)
    b = basis_matrix(u, ps)
    m = (b @ p_true) / (b @ q_true) + 0.02 * (rng.standard_normal(25) + 1j * rng.standard_normal(25))
    return train(TrainingData(u, m), TrainerConfig())


def test_tmcmc_recovers_gaussian_moments():
    target = lambda x: stats.norm(3.0, 0.5).logpdf(x[:, 0])
    ref = stats.multivariate_normal(np.zeros(1), np.eye(1) * 16.0)
    res = tmcmc(target, ref, TmcmcConfig(n_samples=2000), np.random.default_rng(1))
    assert res.exponents[-1] == 1.0
    assert np.mean(res.samples) == pytest.approx(3.0, abs=0.05)
    assert np.std(res.samples) == pytest.approx(0.5, rel=0.1)


def test_tmcmc_bimodal_target_keeps_both_modes():
    mix = lambda x: np.logaddexp(stats.norm(-2, 0.3).logpdf(x[:, 0]), stats.norm(2, 0.3).logpdf(x[:, 0]))
    ref = stats.multivariate_normal(np.zeros(1), np.eye(1) * 9.0)
    res = tmcmc(mix, ref, TmcmcConfig(n_samples=2000), np.random.default_rng(2))
    frac = np.mean(res.samples[:, 0] > 0)
    assert 0.3 < frac < 0.7


def test_gaussian_by_precision_matches_scipy():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3, 3))
    prec = a @ a.T + 3 * np.eye(3)
    mean = rng.standard_normal(3)
    g = GaussianByPrecision(mean, prec)
    x = rng.standard_normal((4, 3))
    ref = stats.multivariate_normal(mean, np.linalg.inv(prec))
    np.testing.assert_allclose(g.logpdf(x), ref.logpdf(x), rtol=1e-10)
    draws = g.rvs(20000, np.random.default_rng(4))
    np.testing.assert_allclose(np.cov(draws.T), np.linalg.inv(prec), atol=0.02)


def test_q_samples_lie_in_the_gauge(noisy_model):
    q = sample_q_posterior(noisy_model, 50, TmcmcConfig(), np.random.default_rng(5))
    assert q.shape == (50, noisy_model.n_q)
    assert np.all(q[:, 0].imag == 0) and np.all(q[:, 0].real > 0)
    # the samples should scatter around the MAP denominator
    assert np.linalg.norm(np.mean(q, axis=0) - noisy_model.q) < 0.2 * np.linalg.norm(noisy_model.q)


def test_prior_reference_also_samples(noisy_model):
    q = sample_q_posterior(noisy_model, 20, TmcmcConfig(reference="prior"), np.random.default_rng(6))
    assert q.shape == (20, noisy_model.n_q) and np.all(np.isfinite(q))


def test_numerator_samples_have_conditional_moments(noisy_model):
    qs = np.repeat(noisy_model.q[None, :], 20000, axis=0)
    p = sample_p_given_q(noisy_model, qs, np.random.default_rng(7))
    np.testing.assert_allclose(np.mean(p, axis=0), noisy_model.p, atol=5 * np.sqrt(np.max(np.diag(
        noisy_model.sigma_pp.real)) / 20000) + 1e-12)
    emp = (p - p.mean(0)).T @ (p - p.mean(0)).conj() / p.shape[0]
    np.testing.assert_allclose(emp, noisy_model.sigma_pp, atol=0.05 * np.max(np.abs(noisy_model.sigma_pp)))


def test_error_scale_follows_denominator(noisy_model):
    u = np.array([[0.0], [1.0]])
    e = sample_error_given_q(noisy_model, noisy_model.q, u, zeta=np.ones(2))
    expected = 1 / (np.sqrt(noisy_model.beta) * np.abs(rpce.denominator(noisy_model, u)))
    np.testing.assert_allclose(e, expected, rtol=1e-12)


def test_error_rejects_pole(noisy_model):
    q = np.array([1.0, -1.0, 0.0], dtype=complex)[: noisy_model.n_q]
    with pytest.raises(SingularDenominatorError):
        sample_error_given_q(noisy_model, q, np.array([[1.0]]), zeta=np.ones(1))


def test_ensemble_is_deterministic_and_consistent(noisy_model):
    cfg = TmcmcConfig()
    a = build_ensemble_samples([noisy_model, noisy_model], 30, cfg, 11)
    b = build_ensemble_samples([noisy_model, noisy_model], 30, cfg, 11)
    for x, y in zip(a.q_samples + a.p_samples, b.q_samples + b.p_samples):
        np.testing.assert_array_equal(x, y)
    u = np.array([[0.2], [-0.7]])
    y, rejected = a.sample_predictions(u, include_error=False)
    assert y.shape == (2, 30, 2) and not rejected.any()
    j = 4
    direct = rpce.evaluate(noisy_model, u, p=a.p_samples[0][j], q=a.q_samples[0][j])
    np.testing.assert_allclose(y[:, j, 0], direct, rtol=1e-12)
    y_err, _ = a.sample_predictions(u, include_error=True)
    assert np.all(y_err != y)
