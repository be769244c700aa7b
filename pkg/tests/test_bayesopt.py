from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rpcemap.bayesopt import (
    ActiveLearningConfig,
    _separate,
    expected_improvement,
    latin_hypercube,
    run_active_learning,
    simple_reward,
    softplus,
)
from rpcemap.dynamics import two_dof_forward, synthesize_observations
from rpcemap.errors import ConfigError
from rpcemap.inverse import IidError, InverseProblem
from rpcemap.optim import PsoSettings
from rpcemap.pce_basis import MarginalPrior
from rpcemap.posterior import TmcmcConfig

FREQS = [10.0, 11.0, 12.0, 28.0, 30.0, 32.0]


@given(st.integers(1, 40), st.integers(1, 4), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_latin_hypercube_has_one_point_per_stratum(n, d, seed):
    u = latin_hypercube(n, d, np.random.default_rng(seed))
    strata = np.floor(stats.norm.cdf(u) * n).astype(int)
    for j in range(d):
        assert sorted(strata[:, j]) == list(range(n))


@given(st.floats(-1e3, 1e3), st.sampled_from([1.0, 10.0, 100.0]))
def test_softplus_bounds(x, gamma):
    s = softplus(x, gamma)
    assert np.isfinite(s)
    assert max(x, 0.0) - 1e-9 <= s <= max(x, 0.0) + np.log(2) / gamma + 1e-9


class StubEnsemble:
    """h for sample j equals the j-th value; ``bad`` marks rejected samples."""

    def __init__(self, values, bad):
        self.values = np.asarray(values, dtype=float)
        self.bad = np.asarray(bad, dtype=bool)
        self.n_alpha = self.values.size

    def sample_predictions(self, u, include_error=True):
        n = np.atleast_2d(u).shape[0]
        y = np.broadcast_to(self.values[None, :, None], (n, self.n_alpha, 1)).astype(complex)
        return y, np.broadcast_to(self.bad[None, :], (n, self.n_alpha))


STUB_PROBLEM = SimpleNamespace(log_posterior_from_predictions=lambda u, y: y[..., 0].real)


def test_ei_is_mean_softplus_improvement():
    ens = StubEnsemble([1.0, 2.0, -5.0, 3.0], [False] * 4)
    ei, n_rej = expected_improvement(np.zeros(1), ens, 1.5, STUB_PROBLEM, gamma=100.0)
    expected = np.mean(softplus(np.array([-0.5, 0.5, -6.5, 1.5]), 100.0))
    assert ei == pytest.approx(expected) and n_rej == 0
    ei_max, _ = expected_improvement(np.zeros(1), ens, 1.5, STUB_PROBLEM, relaxation="max")
    assert ei_max == pytest.approx(0.5)


def test_rejected_samples_contribute_zero_below_threshold():
    vals = np.full(20, 2.0)
    bad = np.zeros(20, dtype=bool)
    bad[0] = True
    ei, n_rej = expected_improvement(np.zeros(1), StubEnsemble(vals, bad), 0.0, STUB_PROBLEM, relaxation="max")
    assert n_rej == 1 and ei == pytest.approx(2.0 * 19 / 20)


def test_too_many_rejections_invalidate_the_point():
    bad = np.zeros(20, dtype=bool)
    bad[:2] = True
    ei, n_rej = expected_improvement(np.zeros(1), StubEnsemble(np.ones(20), bad), 0.0, STUB_PROBLEM)
    assert n_rej == 2 and ei == -np.inf


def test_duplicate_guard():
    rng = np.random.default_rng(0)
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    moved = _separate(np.array([1.0, 1.0 + 1e-10]), pts, rng)
    assert np.linalg.norm(moved - pts[1]) == pytest.approx(1e-3, rel=1e-6)
    kept = np.array([0.5, 0.5])
    assert _separate(kept, pts, rng) is kept


def test_simple_reward_picks_best_evaluated():
    u, h = simple_reward(np.array([[0.0], [1.0], [2.0]]), np.array([-1.0, 3.0, 2.0]))
    assert u[0] == 1.0 and h == 3.0


@pytest.mark.parametrize("kwargs", [dict(n_init=1), dict(n_budget=2, n_init=3), dict(gamma=0.0),
                                    dict(relaxation="ucb")])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        ActiveLearningConfig(**kwargs).validate(1)


def one_d_problem(seed=0):
    fwd = two_dof_forward(["k"], {"m": 300.0, "c": 2e3}, FREQS)
    obs = synthesize_observations(fwd, [2e6], FREQS, [2], IidError(100.0), np.random.default_rng(seed))
    return InverseProblem([MarginalPrior(4e6, 0.2)], obs, IidError(100.0), fwd)


def small_config(**kw):
    base = ActiveLearningConfig(n_init=3, n_budget=5, n_alpha=30, pso=PsoSettings(n_particles=60),
                                tmcmc=TmcmcConfig(n_samples=200), seed=3)
    return replace(base, **kw)


def test_budget_equal_to_init_gives_one_record():
    hist, models = run_active_learning(one_d_problem(), small_config(n_budget=3))
    assert len(hist.records) == 1 and len(models) == 6
    assert hist.records[0].n_tr == 3 and np.isnan(hist.records[0].h_plus)


@pytest.fixture(scope="module")
def short_run():
    prob = one_d_problem()
    return prob, run_active_learning(prob, small_config(), u_ref=np.array([-3.3]))


def test_history_is_consistent(short_run):
    _, (hist, _) = short_run
    assert [r.n_tr for r in hist.records] == [3, 4, 5]
    h_max = [r.h_max for r in hist.records]
    assert all(b >= a for a, b in zip(h_max, h_max[1:]))
    for r in hist.records[1:]:
        assert r.h_max >= r.h_plus
    line = hist.progress_line(hist.records[-1])
    assert line.count(",") == 5


def test_run_is_reproducible(short_run):
    prob, (hist, _) = short_run
    again, _ = run_active_learning(prob, small_config(), u_ref=np.array([-3.3]))
    for a, b in zip(hist.records, again.records):
        np.testing.assert_array_equal(a.u_plus, b.u_plus)
        assert a.h_max == b.h_max and a.eps_map_global == b.eps_map_global

