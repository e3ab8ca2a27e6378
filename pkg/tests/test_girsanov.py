from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvsde.coeffs import DiniModulus
from mvsde.errors import InvalidHorizonError, InvalidInputError
from mvsde.girsanov import (
    GirsanovAccumulator,
    Shift,
    beta_bound,
    coupled_shift_run,
    implied_constant,
    log_harnack_drift,
    shift_gamma,
    weight_moment,
)
from mvsde.measure import EmpiricalLaw
from mvsde.rng import standard_normals
from mvsde.segment import SegmentBatch, TimeGrid
from mvsde.solver import SolverConfig, run_interacting
from mvsde.stats import estimate_mean
from mvsde.zoo import model_zoo


def test_zero_shift_gives_zero_ramp():
    c = shift_gamma(Shift.zero(), 2.0, 1.0)
    s = np.linspace(-1, 2, 31)
    np.testing.assert_array_equal(c.ramp(s), 0.0)
    np.testing.assert_array_equal(c.ramp_derivative(s), 0.0)


def test_ramp_for_affine_shift_vanishing_at_the_left_end():
    # shift(s) = s + 1 with delay 1 and horizon 2
    c = shift_gamma(Shift.affine([1.0], [1.0]), 2.0, 1.0)
    s = np.array([-1.0, 0.0, 0.5, 1.0, 1.25, 1.5, 2.0])
    np.testing.assert_allclose(c.ramp(s)[:, 0], [0.0, 0.0, 0.0, 0.0, 0.25, 0.5, 1.0], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 1.0), st.floats(0.05, 2.0))
def test_ramp_ends_at_the_shift(offset, slope, r, extra):
    T = r + extra
    shift = Shift.affine([offset], [slope])
    c = shift_gamma(shift, T, r)
    assert c.ramp(np.array([T]))[0, 0] == pytest.approx(offset, abs=1e-12)
    assert np.all(c.ramp(np.array([-r, -r / 2, 0.0])) == 0.0)
    np.testing.assert_allclose(c.ramp(np.array([T - r]))[0], shift(np.array([-r]))[0], atol=1e-12)


def test_ramp_needs_horizon_beyond_delay():
    with pytest.raises(InvalidHorizonError):
        shift_gamma(Shift.affine([1.0]), 1.0, 1.0)


def test_table_shift_matches_affine_shift():
    r = 0.5
    s = np.linspace(-r, 0, 11)
    table = Shift.table(r, 0.3 + 0.4 * s)
    affine = Shift.affine([0.3], [0.4])
    np.testing.assert_allclose(table(s), affine(s), atol=1e-15)
    assert table.energy(r) == pytest.approx(affine.energy(r), rel=1e-12)


def test_zero_cost_for_zero_shift():
    assert beta_bound(Shift.zero(), 2.0, 1.0, DiniModulus.power(0.25)).total == 0.0


def test_cost_terms_for_constant_shift():
    b1 = beta_bound(Shift.affine([0.5]), 2.0, 1.0, DiniModulus.power(0.25))
    b2 = beta_bound(Shift.affine([0.5]), 3.0, 1.0, DiniModulus.power(0.25))
    assert b1.ramp > 0 and b1.modulus > 0 and b1.size > 0
    assert b2.ramp == pytest.approx(b1.ramp / 2, rel=1e-15)


def test_cost_hand_evaluation():
    # ramp 0, energy 1, modulus 2 * (2 * 1)**(1/2), size 2 * 1, all times C = 2
    b = beta_bound(Shift.affine([1.0], [1.0]), 2.0, 1.0, DiniModulus.power(0.25), constant=2.0, inv_sigma_norm=1.0)
    assert b.total == pytest.approx(2 + 4 * math.sqrt(2) + 4, rel=1e-14)


def test_implied_constant_inverts_the_envelope():
    shift = Shift.affine([0.3], [0.2])
    target = beta_bound(shift, 1.0, 0.25, DiniModulus.power(0.25), 1.7).envelope()
    assert implied_constant(target, shift, 1.0, 0.25, DiniModulus.power(0.25)) == pytest.approx(1.7, rel=1e-9)
    assert implied_constant(0.0, shift, 1.0, 0.25) == 0.0


def test_accumulator_matches_direct_sum():
    rng = np.random.default_rng(0)
    acc = GirsanovAccumulator(5)
    us, dws = rng.normal(size=(10, 5, 2)), rng.normal(size=(10, 5, 2)) * 0.1
    for u, dw in zip(us, dws):
        acc.add(u, dw, 0.01)
    expected = -np.sum(us * dws, axis=(0, 2)) - 0.5 * np.sum(us * us, axis=(0, 2)) * 0.01
    np.testing.assert_allclose(acc.log_weights, expected, rtol=1e-13)


def test_unit_weights_have_unit_moments():
    m = weight_moment(np.zeros(100), 2.0)
    assert m.estimate.value == 1.0 and not m.overflow


def test_weight_moment_of_deterministic_drift():
    # for deterministic u the log weight is Gaussian, so E R^s = exp(s (s - 1) |u|^2 T / 2)
    n, h, u, s = 50, 0.02, 0.8, 2.5
    ids = np.arange(200_000, dtype=np.uint64)
    acc = GirsanovAccumulator(ids.size)
    for k in range(n):
        acc.add(np.full((ids.size, 1), u), standard_normals(1, k, ids, 1) * math.sqrt(h), h)
    est = weight_moment(acc.log_weights, s).estimate
    closed = math.exp(0.5 * s * (s - 1) * u * u * n * h)
    assert abs(est.value - closed) <= 3 * est.ci


def test_weight_moment_flags_overflow():
    assert weight_moment(np.array([0.0, 800.0]), 1.0).overflow


def test_weight_moment_rejects_small_order():
    with pytest.raises(InvalidInputError):
        weight_moment(np.zeros(3), 0.5)


def _brownian_flow(grid):
    _, flow = run_interacting(model_zoo("brownian"), SolverConfig(grid, particles=2))
    return flow


def test_zero_shift_leaves_the_system_unweighted():
    grid = TimeGrid(0.01, 0.1, 0.5)
    cfg = SolverConfig(grid, particles=500, mode="frozen-law")
    run = coupled_shift_run(model_zoo("dini-drift"), cfg, _brownian_flow(grid), Shift.zero())
    np.testing.assert_array_equal(run.weights, 1.0)
    np.testing.assert_array_equal(run.shifted, run.final)


def test_brownian_weight_has_unit_mean_and_closed_form_entropy():
    grid = TimeGrid(0.01, 0.25, 1.0)
    cfg = SolverConfig(grid, particles=40_000, seed=3, mode="frozen-law")
    run = coupled_shift_run(model_zoo("brownian"), cfg, _brownian_flow(grid), Shift.affine([0.05], [0.2]))
    mean = estimate_mean(run.weights)
    ent = estimate_mean(run.entropy_samples())
    assert abs(mean.value - 1.0) <= 3 * mean.ci
    assert abs(ent.value - 0.5 * run.coupling.energy()) <= 3 * ent.ci
    # the drift mismatch is the deterministic ramp slope
    np.testing.assert_allclose(run.drift_energy, run.coupling.energy(), rtol=1e-9)
    s1 = weight_moment(run.log_weights, 1.0).estimate
    assert abs(s1.value - 1.0) <= 3 * s1.ci


def test_dini_drift_energy_stays_under_envelope_with_implied_constant():
    grid = TimeGrid(0.01, 0.25, 1.0)
    coeffs = model_zoo("dini-drift")
    _, flow = run_interacting(coeffs, SolverConfig(grid, particles=2000, seed=1))
    shift = Shift.affine([0.05], [0.2])
    run = coupled_shift_run(coeffs, SolverConfig(grid, particles=2000, seed=2, mode="frozen-law"), flow, shift)
    top = float(run.phi_energy.max())
    c = implied_constant(top, shift, 1.0, 0.25, coeffs.modulus)
    assert math.isfinite(c)
    env = beta_bound(shift, 1.0, 0.25, coeffs.modulus, c).envelope()
    assert np.all(run.phi_energy <= env * (1 + 1e-9))


def test_coupled_run_writes_weights(tmp_path):
    grid = TimeGrid(0.05, 0.1, 0.5)
    cfg = SolverConfig(grid, particles=20, mode="frozen-law")
    run = coupled_shift_run(model_zoo("brownian"), cfg, _brownian_flow(grid), Shift.affine([0.1]))
    run.write_csv(tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "particle,R,logR,int_phi_sq" and len(lines) == 21


def test_law_drift_gap_vanishes_for_identical_laws():
    coeffs = model_zoo("meanfield-ou")
    law = EmpiricalLaw("endpoint", np.array([[0.0], [1.0]]))
    seg = SegmentBatch(np.zeros((2, 3, 1)))
    np.testing.assert_array_equal(log_harnack_drift(coeffs, 0.0, seg, law, law), 0.0)


def test_law_drift_gap_for_meanfield_model():
    a = 1.5
    coeffs = model_zoo("meanfield-ou", params={"a": a})
    mu = EmpiricalLaw("endpoint", np.array([[0.0], [1.0]]))
    nu = EmpiricalLaw("endpoint", np.array([[2.0], [3.0]]))
    seg = SegmentBatch(np.random.default_rng(0).normal(size=(2, 4, 1)))
    gap = log_harnack_drift(coeffs, 0.0, seg, mu, nu)
    np.testing.assert_allclose(gap, a * (0.5 - 2.5))
    w2 = 2.0  # the clouds differ by a translation of 2
    assert np.all(np.abs(gap) <= coeffs.law_lipschitz * w2 + 1e-12)


def test_law_drift_gap_uses_the_diffusion():
    coeffs = model_zoo("meanfield-ou").with_(diffusion=lambda t, x, law: np.full((x.shape[0], 1, 1), 2.0))
    mu = EmpiricalLaw("endpoint", np.array([[1.0]]))
    nu = EmpiricalLaw("endpoint", np.array([[0.0]]))
    gap = log_harnack_drift(coeffs, 0.0, SegmentBatch(np.zeros((2, 1, 1))), mu, nu)
    # sigma^T (sigma sigma^T)^-1 = 1/2
    np.testing.assert_allclose(gap, 0.5)
