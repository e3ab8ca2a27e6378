from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mvsde.coeffs import (
    CoefficientSet,
    DiniModulus,
    PairClassK,
    apply_matrix,
    dini_integral,
    lqp_norm,
    lqp_norm_of,
    pair_in_K,
    probe,
)
from mvsde.errors import ConditioningError, DivergenceError, InvalidInputError
from mvsde.measure import EmpiricalLaw
from mvsde.segment import SegmentBatch
from mvsde.zoo import MODEL_NAMES, model_params, model_zoo


def test_mixed_norm_of_zero():
    assert lqp_norm(np.zeros((4, 5)), 2, 2, 0.25, 0.2) == 0.0


def test_mixed_norm_of_unit_box():
    assert lqp_norm(np.ones((10, 10)), 2, 2, 0.1, 0.1) == pytest.approx(1.0, rel=1e-14)


def test_mixed_norm_of_indicator():
    # (int_0^1 (int_0^2 1 dx)^(1/2) dt) = sqrt(2)
    def f(t, x):
        return ((x[:, 0] >= 0) & (x[:, 0] <= 2)).astype(float)

    val = lqp_norm_of(f, 2, 1, 1.0, (0.0, 2.0), cells=200, time_cells=10, compact=True)
    assert val.value == pytest.approx(math.sqrt(2.0), rel=1e-12)
    assert not val.is_lower_bound


def test_mixed_norm_flags_lower_bound_without_compact_support():
    assert lqp_norm_of(lambda t, x: np.ones(x.shape[0]), 2, 2, 1.0, (0, 1)).is_lower_bound


@pytest.mark.parametrize(
    "p,q,d,expected",
    [(2, 2, 1, (True, False)), (2, 2, 3, (False, False)), (4, 4, 1, (True, True))],
)
def test_pair_class_membership(p, q, d, expected):
    assert pair_in_K(p, q, d) == expected


def test_pair_class_is_exact_at_the_boundary():
    # 1/4 + 2/(8/7) would round; here d/p + 2/q = 1/2 + 3/2 = 2 exactly
    assert pair_in_K(2, 4 / 3, 1) == (False, False)
    assert PairClassK(3, 3, 1).index == pytest.approx(1.0)


def test_pair_class_rejects_small_exponents():
    with pytest.raises(InvalidInputError):
        pair_in_K(1.0, 2.0, 1)


@pytest.mark.parametrize("alpha,expected", [(0.25, 4.0), (0.5, 2.0)])
def test_power_modulus_integral(alpha, expected):
    assert dini_integral(DiniModulus.power(alpha)) == pytest.approx(expected, rel=1e-15)


def test_power_modulus_outside_range_is_rejected():
    with pytest.raises(InvalidInputError):
        DiniModulus.power(0.75)


def test_log_power_modulus_integral_against_substitution_oracle():
    # with v = log(c + 1/s) the integral becomes log(1+c)^-delta / delta + int c v^-(1+delta) / (e^v - c) dv
    delta, c = 1.0, math.e**2
    lo = math.log(1.0 + c)
    rest, _ = integrate.quad(lambda v: c * v ** (-(1 + delta)) * math.exp(-v) / (1 - c * math.exp(-v)), lo, np.inf, epsabs=1e-13, epsrel=1e-12)
    oracle = lo ** (-delta) / delta + rest
    value = dini_integral(DiniModulus.log_power(delta, c))
    assert math.isfinite(value)
    assert value == pytest.approx(oracle, rel=1e-8)


def test_table_modulus_with_flat_tail_diverges():
    with pytest.raises(DivergenceError):
        dini_integral(DiniModulus.table([1e-3, 1e-2, 1e-1, 1.0], [0.5, 0.5, 0.5, 0.6]))


def test_table_modulus_matches_power_closed_form():
    s = np.geomspace(1e-6, 1.0, 2000)
    val = dini_integral(DiniModulus.table(s, np.sqrt(s)))
    assert val == pytest.approx(2.0, rel=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(0.1, 10.0))
def test_power_modulus_is_increasing(alpha, scale):
    phi = DiniModulus.power(alpha, scale)
    s = np.linspace(0, 2, 50)
    assert np.all(np.diff(phi(s)) >= 0)
    assert dini_integral(phi) == pytest.approx(scale / alpha)


def test_zoo_lists_all_models():
    assert set(MODEL_NAMES) == {"brownian", "meanfield-ou", "delay-linear", "dini-drift", "singular-drift"}
    for name in MODEL_NAMES:
        assert model_zoo(name).name == name


def test_zoo_rejects_unknown_parameter():
    with pytest.raises(InvalidInputError):
        model_zoo("meanfield-ou", params={"b": 1})


def test_brownian_ellipticity_probe():
    rep = probe(model_zoo("brownian"))
    assert model_zoo("brownian").ellipticity == pytest.approx(1 + 1e-9)
    assert rep["ellipticity"].ok


def test_meanfield_law_lipschitz_probe():
    rep = probe(model_zoo("meanfield-ou", params={"a": 1.0}), theta=1.0)
    assert rep["law-lipschitz"].ok
    assert rep["law-lipschitz"].worst <= 1.0 + 1e-9


def test_probe_flags_understated_law_lipschitz():
    coeffs = model_zoo("meanfield-ou", params={"a": 2.0}).with_(law_lipschitz=0.5)
    assert not probe(coeffs, theta=1.0)["law-lipschitz"].ok


@pytest.mark.parametrize("name", ["dini-drift", "delay-linear"])
def test_probe_accepts_declared_constants(name):
    coeffs = model_zoo(name, params={"delay": 0.5} if name == "dini-drift" else None)
    assert probe(coeffs).ok


def test_singular_envelope_norm_matches_quadrature():
    coeffs = model_zoo("singular-drift")
    p, q = coeffs.integrability
    assert pair_in_K(p, q, 1)[0]
    # |x|^(-2 beta p) on [-1, 1] integrates to 2 / (1 - 2 beta p)
    beta = model_params("singular-drift")["beta"]
    space, _ = integrate.quad(lambda x: x ** (-2 * beta * p), 0.0, 1.0)
    oracle = (2 * space) ** (1 / p) * 1.0 ** (1 / q)
    assert coeffs.envelope_norm(1.0) == pytest.approx(oracle, rel=1e-9)


def test_singular_drift_rejects_non_integrable_pair():
    with pytest.raises(InvalidInputError):
        model_zoo("singular-drift", params={"p": 3.0, "q": 3.0})


def test_state_free_inverse_and_conditioning():
    diag = CoefficientSet(dim=2, diffusion=lambda t, x, law: np.diag([2.0, 0.5]))
    law = EmpiricalLaw("endpoint", np.zeros((1, 2)))
    np.testing.assert_allclose(diag.state_free_inverse(0.0, law), np.diag([0.5, 2.0]))
    bad = CoefficientSet(dim=2, diffusion=lambda t, x, law: np.diag([1.0, 1e-14]))
    with pytest.raises(ConditioningError):
        bad.state_free_inverse(0.0, law)


def test_apply_matrix_matches_matmul():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(7, 3, 3))
    v = rng.normal(size=(7, 3))
    np.testing.assert_allclose(apply_matrix(m, v), np.einsum("mij,mj->mi", m, v), rtol=1e-13)
    assert apply_matrix(None, v) is v


def test_total_drift_adds_both_parts():
    coeffs = model_zoo("dini-drift", params={"delay": 1.0, "kappa": 0.0})
    nodes = np.zeros((3, 4, 1))
    nodes[0, :, 0] = 2.0
    law = EmpiricalLaw("endpoint", np.zeros((1, 1)))
    out = coeffs.total_drift(0.0, SegmentBatch(nodes), law)
    np.testing.assert_allclose(out[:, 0], np.tanh(2.0))
