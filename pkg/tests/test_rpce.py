import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpcemap import rpce
from rpcemap.errors import FormatError, SingularDenominatorError
from rpcemap.pce_basis import basis_matrix, total_degree_indices
from rpcemap.rpce import RpceModel


def make_model(p, q, d=1, m=1, beta=1.0):
    idx = total_degree_indices(d, m).array
    p = np.asarray(p, complex)
    q = np.asarray(q, complex)
    return RpceModel(idx[: len(p)], p, idx[: len(q)], q, np.eye(len(p)), np.eye(len(q)),
                     np.ones(len(p)), np.ones(len(q)), beta, np.zeros((2, d)), np.ones(2, complex))


def random_model(rng, d=2, m=2):
    n = len(total_degree_indices(d, m))
    p = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    q = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    q[0] += 3.0
    return make_model(p, q, d, m, beta=rng.uniform(0.5, 5))


def test_constant_rational():
    mod = make_model([2 - 1j], [1.0])
    np.testing.assert_allclose(rpce.evaluate(mod, np.linspace(-2, 2, 5)), 2 - 1j)


def test_first_order_ratio():
    mod = make_model([1.0, 0.5], [1.0, 0.25])
    assert rpce.evaluate(mod, 1.0) == pytest.approx(1.2)


def test_joint_scaling_invariance():
    rng = np.random.default_rng(0)
    mod = random_model(rng)
    u = rng.standard_normal((20, 2))
    g = 2 - 3j
    a = rpce.evaluate(mod, u)
    b = rpce.evaluate(mod, u, p=g * mod.p, q=g * mod.q)
    np.testing.assert_allclose(b, a, rtol=1e-14)


def test_singular_denominator():
    mod = make_model([1.0], [0.0, 1.0])
    with pytest.raises(SingularDenominatorError):
        rpce.evaluate(mod, 0.0)
    with pytest.raises(SingularDenominatorError):
        rpce.error_variance(mod, 0.0)


def test_error_variance_examples():
    assert rpce.error_variance(make_model([1.0], [1.0], beta=4.0), 0.3) == pytest.approx(0.25)
    assert rpce.error_variance(make_model([1.0], [2.0], beta=1.0), 0.3) == pytest.approx(0.25)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_error_variance_matches_recomputed_denominator(seed):
    rng = np.random.default_rng(seed)
    mod = random_model(rng)
    u = rng.standard_normal((4, 2))
    den = basis_matrix(u, mod.q_indices) @ mod.q
    expect = 1.0 / (mod.beta * np.abs(den) ** 2)
    np.testing.assert_allclose(rpce.error_variance(mod, u), expect, rtol=1e-12)
    assert np.all(rpce.error_variance(mod, u) > 0)


def test_point_shapes():
    rng = np.random.default_rng(1)
    mod = random_model(rng)
    u = rng.standard_normal(2)
    assert np.ndim(rpce.evaluate(mod, u)) == 0
    assert rpce.evaluate(mod, u[None, :]).shape == (1,)
    with pytest.raises(ValueError):
        rpce.evaluate(mod, np.zeros(3))


def test_serialization_round_trip():
    rng = np.random.default_rng(2)
    mod = random_model(rng)
    back = rpce.deserialize(rpce.serialize(mod))
    for name in ("p", "q", "p_indices", "q_indices", "alpha_p", "alpha_q", "neg_hess_qq"):
        assert np.array_equal(getattr(back, name), getattr(mod, name))
    assert back.beta == mod.beta
    u = rng.standard_normal((5, 2))
    assert np.array_equal(rpce.evaluate(back, u), rpce.evaluate(mod, u))


def test_malformed_payloads():
    payload = rpce.serialize(random_model(np.random.default_rng(3)))
    with pytest.raises(FormatError):
        rpce.deserialize(payload[: len(payload) // 2])
    doc = payload.decode().replace('"beta": ', '"beta_x": ')
    with pytest.raises(FormatError, match=r"\$\.model\.beta"):
        rpce.deserialize(doc)
    with pytest.raises(FormatError, match="format_version"):
        rpce.deserialize(payload.decode().replace('"format_version": 1', '"format_version": 9'))


@pytest.mark.parametrize("field, value", [("p_indices", [[0], [1, 2]]), ("p", [[1.0, 0.0], [1.0]])])
def test_ragged_arrays_are_format_errors(field, value):
    doc = rpce.model_to_dict(random_model(np.random.default_rng(0)))
    doc[field] = value
    with pytest.raises(FormatError, match=field):
        rpce.model_from_dict(doc)
