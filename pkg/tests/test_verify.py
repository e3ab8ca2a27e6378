from __future__ import annotations

import math

import pytest

from mvsde.errors import DegenerateInputError, InvalidHorizonError, InvalidInputError, InvalidTestFunctionError
from mvsde.functionals import SegmentFunctional, SpaceTimeFunction
from mvsde.girsanov import Shift
from mvsde.segment import TimeGrid
from mvsde.solver import InitialLaw, SolverConfig
from mvsde.verify import (
    HOLDS,
    VIOLATED,
    WITHIN,
    digest,
    estimate_Ptf,
    khasminskii_check,
    krylov_check,
    verdict,
    verify_gradient_estimate,
    verify_log_harnack,
    verify_power_harnack,
    verify_shift_harnack,
)
from mvsde.zoo import model_zoo

GRID = TimeGrid(0.02, 0.2, 1.0)
ZERO = InitialLaw.point([0.0])
LIFTED = SegmentFunctional("tanh2", offset=1.0)


def cfg(particles=4000, seed=1, grid=GRID):
    return SolverConfig(grid, particles=particles, seed=seed)


def test_verdict_thresholds():
    assert verdict(0.0, 1.0) == HOLDS
    assert verdict(-2.9, 1.0) == WITHIN
    assert verdict(-3.1, 1.0) == VIOLATED


def test_digest_is_stable_and_order_free():
    assert digest({"a": 1, "b": [1, 2]}) == digest({"b": [1, 2], "a": 1})
    assert digest({"a": 1}) != digest({"a": 2})


def test_semigroup_of_constant_is_exact():
    est = estimate_Ptf(model_zoo("brownian"), ZERO, 1.0, SegmentFunctional.constant(1.0), cfg())
    assert est.value == 1.0 and est.ci == 0.0


def test_semigroup_brownian_moments():
    first = estimate_Ptf(model_zoo("brownian"), ZERO, 0.6, SegmentFunctional("clip"), cfg(20_000))
    second = estimate_Ptf(model_zoo("brownian"), ZERO, 0.6, SegmentFunctional("square"), cfg(20_000))
    assert abs(first.value) <= 3 * first.ci
    assert abs(second.value - 0.6) <= 3 * second.ci


@pytest.mark.parametrize("name", ["meanfield-ou", "dini-drift", "delay-linear"])
def test_log_harnack_reduces_to_jensen(name):
    init = InitialLaw.gaussian([0.2], 0.4)
    rep = verify_log_harnack(model_zoo(name), init, init, 1.0, LIFTED, cfg())
    assert rep.margin >= -3 * rep.combined_ci
    assert rep.extra["initial_gap_sq"] == 0.0


def test_log_harnack_constant_functional():
    rep = verify_log_harnack(model_zoo("meanfield-ou"), ZERO, InitialLaw.point([0.3]), 1.0, SegmentFunctional.constant(1.0), cfg())
    assert rep.lhs.value == 0.0
    assert rep.rhs.value >= 0.0
    assert rep.verdict == HOLDS


def test_log_harnack_rejects_functionals_below_one():
    with pytest.raises(InvalidTestFunctionError):
        verify_log_harnack(model_zoo("brownian"), ZERO, ZERO, 1.0, SegmentFunctional("tanh2"), cfg())


def test_log_harnack_rejects_time_inside_delay():
    with pytest.raises(InvalidHorizonError):
        verify_log_harnack(model_zoo("brownian"), ZERO, ZERO, 0.2, LIFTED, cfg())


def test_gradient_constant_functional():
    rep = verify_gradient_estimate(model_zoo("brownian"), ZERO, InitialLaw.point([0.1]), 1.0, SegmentFunctional.constant(2.0), cfg())
    assert rep.lhs.value == 0.0 and rep.verdict == HOLDS


def test_gradient_rejects_equal_laws():
    with pytest.raises(DegenerateInputError):
        verify_gradient_estimate(model_zoo("brownian"), ZERO, ZERO, 1.0, LIFTED, cfg())


def test_gradient_rejects_too_few_mixtures():
    with pytest.raises(InvalidInputError):
        verify_gradient_estimate(model_zoo("brownian"), ZERO, InitialLaw.point([0.1]), 1.0, LIFTED, cfg(), ball_samples=4)


def test_gradient_brownian_endpoint_functional():
    eps = 0.05
    t = 1.0
    rep = verify_gradient_estimate(model_zoo("brownian"), ZERO, InitialLaw.point([eps]), t, SegmentFunctional("clip"), cfg(20_000))
    # synchronous coupling: f(X) - f(Y) = -eps for every particle
    assert rep.lhs.value == pytest.approx(1.0, rel=1e-9)
    assert max(rep.extra["variances"]) == pytest.approx(t, rel=0.05)
    assert rep.verdict == HOLDS


def test_power_harnack_constant_functional_hand_value():
    p, H, g, t = 3.0, 0.2, 0.1, 1.0
    rep = verify_power_harnack(model_zoo("brownian"), ZERO, InitialLaw.point([g]), t, SegmentFunctional.constant(1.0), p, cfg(), H)
    lag = t - GRID.r
    assert rep.lhs.value == 1.0
    assert rep.rhs.value == pytest.approx(math.exp(p * H * (1 + g * g / lag + g * g)), rel=1e-12)
    assert rep.verdict == HOLDS


def test_power_harnack_reduces_to_jensen():
    init = InitialLaw.gaussian([0.0], 0.5)
    rep = verify_power_harnack(model_zoo("dini-drift"), init, init, 1.0, LIFTED, 3.0, cfg(), 0.0)
    assert rep.margin >= -3 * rep.combined_ci


def test_power_harnack_enforces_the_power_floor():
    with pytest.raises(InvalidInputError):
        verify_power_harnack(model_zoo("brownian"), ZERO, ZERO, 1.0, LIFTED, 1.5, cfg())


def test_shift_harnack_zero_shift():
    reps = verify_shift_harnack(model_zoo("dini-drift"), ZERO, 1.0, Shift.zero(), LIFTED, 2.0, cfg(), flow_particles=1000)
    for rep in (reps.log_form, reps.power_form):
        assert rep.margin >= -3 * rep.combined_ci
    assert reps.log_form.extra["entropy_direct"] == 0.0


def test_shift_harnack_brownian_exponential_functional():
    t, shift = 1.0, Shift.affine([0.1], [0.2])
    f = SegmentFunctional("exp", limit=30.0)
    reps = verify_shift_harnack(model_zoo("brownian"), ZERO, t, shift, f, 2.0, cfg(40_000, seed=4))
    log = reps.log_form
    closed = log.extra["entropy_closed_form"]
    # shift(-r) = 0.06 with r = 0.2, and the slope 0.2 acts over a window of length 0.2
    assert closed == pytest.approx(0.5 * (0.06**2 / 0.8 + 0.04 * 0.2), rel=1e-12)
    # E log f(X_t) = E X_t = 0 and log E exp(X_t + 0.1) = t / 2 + 0.1
    assert abs(log.lhs.value) <= 3 * log.lhs.ci
    assert abs(log.rhs.value - (t / 2 + 0.1 + closed)) <= 3 * log.rhs.ci


def test_shift_harnack_dini_drift_reports_finite_constant():
    reps = verify_shift_harnack(model_zoo("dini-drift"), ZERO, 1.0, Shift.affine([0.05], [0.2]), LIFTED, 2.0, cfg(), flow_particles=1000)
    assert reps.log_form.verdict in (HOLDS, WITHIN)
    assert math.isfinite(reps.log_form.extra["beta_implied_constant"])
    assert math.isfinite(reps.log_form.extra["path_envelope_constant"])
    assert abs(reps.log_form.extra["entropy_gap"]) <= 3 * reps.log_form.extra["entropy_gap_ci"]


def test_shift_harnack_rejects_nonpositive_functional():
    with pytest.raises(InvalidTestFunctionError):
        verify_shift_harnack(model_zoo("brownian"), ZERO, 1.0, Shift.zero(), SegmentFunctional("tanh"), 2.0, cfg())


def test_krylov_rejects_pair_outside_class():
    with pytest.raises(InvalidInputError):
        krylov_check(model_zoo("brownian").with_(dim=3), SpaceTimeFunction(), 2.0, 2.0, cfg())


def test_krylov_zero_integrand_is_degenerate():
    rep = krylov_check(model_zoo("brownian"), SpaceTimeFunction(value=0.0), 4.0, 4.0, cfg(200))
    assert rep.verdict == "degenerate"
    assert all(e.value == 0.0 for e in rep.estimates)


def test_krylov_constant_integrand_is_linear():
    rep = krylov_check(model_zoo("meanfield-ou"), SpaceTimeFunction(value=2.0), 4.0, 4.0, cfg(200))
    assert rep.exponent == pytest.approx(1.0, abs=1e-9)
    assert rep.constant == pytest.approx(2.0, rel=1e-9)
    assert rep.r_squared == pytest.approx(1.0)


def test_khasminskii_zero_integrand_gives_one():
    rep = khasminskii_check(model_zoo("brownian"), SpaceTimeFunction(value=0.0), [1.0, 4.0], cfg(200))
    assert all(e.value == 1.0 for e in rep.estimates)
    assert rep.verdict == "holds"


def test_khasminskii_indicator_grows_with_lambda():
    rep = khasminskii_check(model_zoo("brownian"), SpaceTimeFunction("indicator", radius=0.5), [1.0, 2.0, 4.0], cfg(2000))
    vals = [e.value for e in rep.estimates]
    assert all(math.isfinite(v) for v in vals)
    assert vals[0] < vals[1] < vals[2] <= math.exp(4.0)


def test_reports_serialize():
    rep = verify_log_harnack(model_zoo("brownian"), ZERO, InitialLaw.point([0.1]), 1.0, LIFTED, cfg(200))
    d = rep.to_dict()
    assert set(d) >= {"inequality", "lhs", "rhs", "margin", "verdict", "digest", "extra"}
    assert len(d["digest"]) == 64
