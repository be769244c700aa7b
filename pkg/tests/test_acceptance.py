"""End-to-end acceptance checks.

Each test prints one PASS/FAIL line with the measured value and the
tolerance it is judged against, then asserts the same condition.
"""

import math
import time
from math import comb
from pathlib import Path

import numpy as np
import pytest

from rpcemap import cli
from rpcemap import config as C
from rpcemap.bayesopt import ActiveLearningConfig, reference_map, run_active_learning
from rpcemap.dynamics import damping_ratio, synthesize_observations, two_dof_forward
from rpcemap.inverse import CorrelatedError, IidError, InverseProblem, ObservationSet
from rpcemap.optim import PsoSettings
from rpcemap.pce_basis import MarginalPrior, basis_matrix, hermite_eval, total_degree_indices
from rpcemap.sbl import (
    BasisSystem,
    SblState,
    TrainerConfig,
    TrainingData,
    dense_c_matrix,
    log_evidence,
    model_state,
    neg_hessian_qq,
    numerator_posterior,
    q_conj_cogradient,
    q_objective,
    train,
    woodbury_c_inverse,
    woodbury_c_logdet,
)

FREQS = [10.0, 11.0, 12.0, 28.0, 30.0, 32.0]


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok

    return emit


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_instance(rng, d, n_tr, m_p=2, m_q=2):
    u = rng.standard_normal((n_tr, d))
    ps, qs = total_degree_indices(d, m_p), total_degree_indices(d, m_q)
    system = BasisSystem(basis_matrix(u, ps), basis_matrix(u, qs), crandn(rng, n_tr))
    q = crandn(rng, len(qs))
    q[0] += 2.0
    return system, q, rng.uniform(0.2, 5, len(ps)), rng.uniform(0.2, 5, len(qs)), rng.uniform(0.5, 20)


def test_cogradient_against_finite_differences(report):
    rng = np.random.default_rng(100)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 4))
        system, q, ap, aq, beta = random_instance(rng, d, int(rng.integers(d + 3, 16)))
        g = q_conj_cogradient(q, system, ap, aq, beta)
        h = 1e-6
        fd = np.empty(2 * len(q))
        for j in range(len(q)):
            for k, step in enumerate((h, 1j * h)):
                e = np.zeros(len(q), complex)
                e[j] = step
                fd[j + k * len(q)] = (q_objective(q + e, system, ap, aq, beta)
                                      - q_objective(q - e, system, ap, aq, beta)) / (2 * h)
        analytic = 2 * np.concatenate([g.real, g.imag])
        worst = max(worst, np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1.0))
    secs = time.perf_counter() - t0
    ok = report("cogradient vs central differences (200 instances)", worst <= 1e-6 and secs < 30,
                f"max relative error {worst:.2e} (<= 1e-6), {secs:.1f} s (< 30 s)")
    assert ok


def test_hessian_against_finite_differences(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 4))
        system, q, ap, aq, beta = random_instance(rng, d, int(rng.integers(d + 3, 16)))
        a = neg_hessian_qq(system, ap, aq, beta)
        h = 1e-6
        jac = np.empty_like(a)
        for j in range(len(q)):
            e = np.zeros(len(q), complex)
            e[j] = h
            dx = (q_conj_cogradient(q + e, system, ap, aq, beta) - q_conj_cogradient(q - e, system, ap, aq, beta))
            dy = (q_conj_cogradient(q + 1j * e, system, ap, aq, beta)
                  - q_conj_cogradient(q - 1j * e, system, ap, aq, beta))
            jac[:, j] = 0.5 * (dx - 1j * dy) / (2 * h)
        worst = max(worst, np.linalg.norm(jac + a) / np.linalg.norm(a))
    secs = time.perf_counter() - t0
    ok = report("Hessian vs differences of the cogradient (50 instances)", worst <= 1e-5 and secs < 30,
                f"max relative error {worst:.2e} (<= 1e-5), {secs:.1f} s (< 30 s)")
    assert ok


def test_evidence_stationarity_at_fixed_points(report):
    rng = np.random.default_rng(102)
    cfg = TrainerConfig(eps_alpha=1e-9, eps_beta=1e-9, i_max=5000, q_gtol=1e-12, alpha_p_max=1e4, alpha_q_max=1e4)
    t0 = time.perf_counter()
    worst, n_conv = 0.0, 0
    for _ in range(20):
        d = int(rng.integers(1, 3))
        n_tr = int(rng.integers(15, 26))
        u = rng.standard_normal((n_tr, d))
        ps = total_degree_indices(d, 2)
        b = basis_matrix(u, ps)
        q_true = np.zeros(len(ps), complex)
        q_true[0], q_true[1] = 1.0, 0.3 * crandn(rng)
        m = (b @ crandn(rng, len(ps))) / (b @ q_true) + 1e-2 * crandn(rng, n_tr)
        mod = train(TrainingData(u, m), cfg)
        n_conv += mod.info.converged
        base = model_state(mod)

        def ev(ap, aq, beta):
            return log_evidence(SblState(base.system, mod.q, ap, aq, beta))

        # a step of 1e-5 lets roundoff in the evidence (~1e-16 * |evidence| / h) reach 1e-5
        h = 1e-4
        derivs = []
        for i in range(mod.n_p):
            e = np.zeros(mod.n_p)
            e[i] = h
            derivs.append((ev(mod.alpha_p * np.exp(e), mod.alpha_q, mod.beta)
                           - ev(mod.alpha_p * np.exp(-e), mod.alpha_q, mod.beta)) / (2 * h))
        for i in range(mod.n_q):
            e = np.zeros(mod.n_q)
            e[i] = h
            derivs.append((ev(mod.alpha_p, mod.alpha_q * np.exp(e), mod.beta)
                           - ev(mod.alpha_p, mod.alpha_q * np.exp(-e), mod.beta)) / (2 * h))
        derivs.append((ev(mod.alpha_p, mod.alpha_q, mod.beta * np.exp(h))
                       - ev(mod.alpha_p, mod.alpha_q, mod.beta * np.exp(-h))) / (2 * h))
        worst = max(worst, float(np.max(np.abs(derivs))))
    secs = time.perf_counter() - t0
    ok = report("evidence stationary in every log-precision (20 trainings)",
                worst <= 1e-5 and n_conv == 20 and secs < 120,
                f"max |d evidence / d log precision| {worst:.2e} (<= 1e-5), {n_conv}/20 converged, "
                f"{secs:.1f} s (< 120 s)")
    assert ok


def test_woodbury_identities(report):
    rng = np.random.default_rng(103)
    worst_inv, worst_ld = 0.0, 0.0
    for _ in range(50):
        d = int(rng.integers(1, 4))
        system, q, ap, _, beta = random_instance(rng, d, int(rng.integers(3, 21)))
        _, sigma = numerator_posterior(q, system, ap, beta)
        c = dense_c_matrix(system.psi_p, ap, beta)
        cinv = np.linalg.inv(c)
        worst_inv = max(worst_inv, np.linalg.norm(woodbury_c_inverse(system.psi_p, sigma, beta) - cinv)
                        / np.linalg.norm(cinv))
        ld = np.linalg.slogdet(c)[1]
        worst_ld = max(worst_ld, abs(woodbury_c_logdet(sigma, ap, beta, system.n_tr) - ld) / max(abs(ld), 1.0))
    ok = report("Woodbury inverse and log-determinant (n_tr <= 20)", worst_inv <= 1e-10 and worst_ld <= 1e-8,
                f"inverse {worst_inv:.2e} (<= 1e-10), log-det {worst_ld:.2e} (<= 1e-8)")
    assert ok


def test_numerator_posterior_is_regularized_least_squares(report):
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 4))
        system, q, ap, _, beta = random_instance(rng, d, int(rng.integers(3, 16)))
        mu, sigma = numerator_posterior(q, system, ap, beta)
        psi = system.psi_p
        target = (system.psi_q @ q) * system.m
        normal = beta * psi.T @ psi + np.diag(ap)
        mu_ref = np.linalg.solve(normal, beta * psi.T @ target)
        sigma_ref = np.linalg.inv(normal)
        worst = max(worst, np.linalg.norm(mu - mu_ref) / np.linalg.norm(mu_ref),
                    np.linalg.norm(sigma - sigma_ref) / np.linalg.norm(sigma_ref))
    ok = report("conditional numerator posterior vs normal equations", worst <= 1e-10,
                f"max relative difference {worst:.2e} (<= 1e-10)")
    assert ok


def one_d_run(seed):
    fwd = two_dof_forward(["k"], {"m": 300.0, "c": 2e3}, FREQS)
    obs = synthesize_observations(fwd, [2e6], FREQS, [2], IidError(100.0), np.random.default_rng(seed))
    prob = InverseProblem([MarginalPrior(4e6, 0.2)], obs, IidError(100.0), fwd)
    t0 = time.perf_counter()
    u_ref, _ = reference_map(prob, PsoSettings(), np.random.default_rng(seed + 1000))
    hist, _ = run_active_learning(prob, ActiveLearningConfig(n_init=3, n_budget=10, seed=seed), u_ref=u_ref)
    return hist.records[-1].eps_map_global, time.perf_counter() - t0


def test_one_parameter_map_matches_reference(report):
    results = [one_d_run(seed) for seed in range(10)]
    eps = np.array([r[0] for r in results])
    secs = np.array([r[1] for r in results])
    n_ok = int(np.sum(eps <= 1e-3))
    ok = report("stiffness-only MAP vs direct optimization (10 seeds)", n_ok >= 9 and secs.max() < 120,
                f"{n_ok}/10 seeds with eps_MAP <= 1e-3 (need 9), median eps {np.median(eps):.2e}, "
                f"slowest seed {secs.max():.1f} s (< 120 s)")
    assert ok


def test_three_parameter_run(report, tmp_path):
    doc = {
        "seed": 2024,
        "problem": {"parameters": ["k", "m", "c"], "true_values": {"k": 2.8e6, "m": 450.0, "c": 3.0e3},
                    "frequencies": FREQS, "sensors": [2]},
        "priors": {"k": {"mean": 4.0e6, "cov": 0.2}, "m": {"mean": 300.0, "cov": 0.2},
                   "c": {"mean": 2.0e3, "cov": 0.2}},
        "error": {"kind": "iid", "beta": 100.0},
        "bo": {"n_init": 15, "n_budget": 50, "n_alpha": 100, "n_rep": 3, "fixed_design_stride": 35},
    }
    cfg = C.run_config_from_dict(doc)
    t0 = time.perf_counter()
    cli.cmd_synthesize(cfg, tmp_path / "obs.json", cfg.seed)
    summary = cli.cmd_run(cfg, tmp_path / "obs.json", tmp_path / "run", cfg.seed)
    secs = time.perf_counter() - t0
    last = [row for row in summary["by_n_tr"] if row["n_tr"] == 50][0]
    g = last["eps_map_global"]["median"]
    s = last["eps_map_simple"]["median"]
    f = last["eps_map_fixed_design"]["median"]
    ok = report("three-parameter active learning (3 repetitions, n_tr = 50)",
                g <= 1e-3 and s <= 1e-1 and f > g and secs < 1200,
                f"median global {g:.2e} (<= 1e-3), simple {s:.2e} (<= 1e-1), fixed design {f:.2e} "
                f"(> global), {secs:.0f} s (< 1200 s)")
    assert ok


def test_damping_ratio_at_prior_means(report):
    zeta = damping_ratio(4e6, 300.0, 2e3)
    ok = report("damping ratio at the prior means", abs(zeta - 0.0289) <= 1e-4, f"{zeta:.6f} vs 0.0289 (+- 1e-4)")
    assert ok


def test_correlated_error_model(report, tmp_path):
    worst_eig = np.inf
    for n in range(2, 51):
        obs = ObservationSet(np.linspace(1.0, 50.0, n), [1], np.ones(n))
        sw, sp = CorrelatedError(0.33, 0.33, 5.0, 0.8).covariances(obs)
        worst_eig = min(worst_eig, np.linalg.eigvalsh(sw).min(), np.linalg.eigvalsh(sp).min())

    freqs = np.arange(1.0, 11.0)
    err = CorrelatedError(0.33, 0.33, 5.0, 0.8)
    fwd = lambda x: np.ones((1, freqs.size), dtype=complex)
    rng = np.random.default_rng(105)
    logs = np.array([np.log(synthesize_observations(fwd, [1.0], freqs, [1], err, rng).values)
                     for _ in range(10_000)])
    rho = err.correlation_matrix(ObservationSet(freqs, [1], np.ones(freqs.size)))
    dev = max(np.abs(np.corrcoef(logs.real.T) - rho).max(), np.abs(np.corrcoef(logs.imag.T) - rho).max())

    cfg = C.load_run_config(Path(__file__).resolve().parents[1] / "scripts" / "configs" / "chain_4param.yaml")
    cfg.bo.n_budget = 25
    cli.cmd_synthesize(cfg, tmp_path / "obs.json", cfg.seed)
    cli.cmd_run(cfg, tmp_path / "obs.json", tmp_path / "run", cfg.seed)
    lines = (tmp_path / "run" / "history.csv").read_text().splitlines()
    header = lines[0].split(",")
    h_max = [float(line.split(",")[header.index("h_max")]) for line in lines[1:]]
    monotone = all(b >= a for a, b in zip(h_max, h_max[1:]))
    ok = report("correlated log-errors and four-parameter chain run",
                worst_eig > -1e-12 and dev <= 0.05 and monotone and len(h_max) == 11,
                f"min covariance eigenvalue {worst_eig:.2e} (>= 0), max correlation deviation {dev:.3f} "
                f"(<= 0.05), {len(h_max)} records with monotone h_max: {monotone}")
    assert ok


def test_hermite_orthonormality_and_index_sets(report):
    nodes, weights = np.polynomial.hermite_e.hermegauss(60)
    weights = weights / math.sqrt(2 * math.pi)
    vals = np.stack([hermite_eval(n, nodes) for n in range(16)])
    gram_err = np.abs((vals * weights) @ vals.T - np.eye(16)).max()
    card_ok = all(len(total_degree_indices(d, m)) == comb(d + m, m) for d in range(1, 7) for m in range(0, 6))
    ok = report("Hermite orthonormality and total-degree cardinalities", gram_err <= 1e-10 and card_ok,
                f"max Gram deviation {gram_err:.2e} (<= 1e-10), cardinalities exact: {card_ok}")
    assert ok
