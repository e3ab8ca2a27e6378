from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvsde.coeffs import CoefficientSet
from mvsde.errors import InvalidInputError, ResolutionError
from mvsde.measure import EmpiricalLaw
from mvsde.mollify import Mollifier, mollify
from mvsde.zoo import model_zoo


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("level", [1, 4, 16])
def test_kernel_has_unit_mass_and_bounded_support(dim, level):
    kern = Mollifier(dim, level, nodes_per_axis=6)
    assert kern.mass(64 if dim == 1 else 128) == pytest.approx(1.0, abs=1e-9)
    assert kern.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.linalg.norm(kern.offsets, axis=1) <= 1.0 / level + 1e-15)


def test_kernel_rejects_oversized_rule():
    with pytest.raises(ResolutionError):
        Mollifier(3, 4, nodes_per_axis=10)


def test_kernel_rejects_level_zero():
    with pytest.raises(InvalidInputError):
        Mollifier(1, 0)


def test_linear_drift_is_reproduced_in_the_interior():
    coeffs = CoefficientSet(dim=1, drift=lambda t, x, law: x.copy())
    smooth = mollify(coeffs, 8, 1.0)
    x = np.linspace(-3, 3, 101)[:, None]
    np.testing.assert_allclose(smooth.drift(0.5, x, None), x, atol=1e-12)


def test_drift_vanishes_far_outside_the_horizon():
    coeffs = CoefficientSet(dim=1, drift=lambda t, x, law: np.ones_like(x))
    smooth = mollify(coeffs, 4, 1.0)
    x = np.zeros((3, 1))
    np.testing.assert_array_equal(smooth.drift(-1.0, x, None), 0.0)
    np.testing.assert_array_equal(smooth.drift(2.0, x, None), 0.0)
    assert 0.0 < smooth.drift(0.0, x, None)[0, 0] < 1.0


def test_diffusion_is_identity_outside_the_horizon():
    coeffs = CoefficientSet(dim=1, diffusion=lambda t, x, law: np.full((x.shape[0], 1, 1), 2.0), ellipticity=4.0)
    smooth = mollify(coeffs, 4, 1.0)
    x = np.zeros((2, 1))
    np.testing.assert_allclose(smooth.diffusion(5.0, x, None), 1.0)
    np.testing.assert_allclose(smooth.diffusion(0.5, x, None), 2.0, rtol=1e-12)


def test_frozen_law_replaces_the_law_argument():
    coeffs = model_zoo("meanfield-ou")
    law = EmpiricalLaw("endpoint", np.array([[2.0]]))
    other = EmpiricalLaw("endpoint", np.array([[-5.0]]))
    smooth = mollify(coeffs, 4, 1.0, law=law)
    x = np.zeros((1, 1))
    np.testing.assert_allclose(smooth.drift(0.5, x, other), smooth.drift(0.5, x, law))
    assert smooth.law_free


def test_segment_drift_is_left_alone():
    coeffs = model_zoo("delay-linear")
    assert mollify(coeffs, 4, 1.0).segment_drift is coeffs.segment_drift


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 5.0), st.sampled_from([4, 16, 64]), st.floats(-2, 2))
def test_lipschitz_drift_error_is_within_support_radius(lip, level, centre):
    coeffs = CoefficientSet(dim=1, drift=lambda t, x, law: lip * np.abs(x - centre))
    smooth = mollify(coeffs, level, 1.0)
    x = np.linspace(-3, 3, 61)[:, None]
    err = np.abs(smooth.drift(0.5, x, None) - lip * np.abs(x - centre)).max()
    assert err <= lip / level
