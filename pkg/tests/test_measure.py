from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvsde.errors import InvalidInputError
from mvsde.measure import (
    EmpiricalLaw,
    optimal_plan,
    read_law_csv,
    sinkhorn,
    theta_moment,
    wasserstein_theta,
    write_law_csv,
)


def law(points, theta=2.0, weights=None, kind="endpoint"):
    return EmpiricalLaw(kind, np.asarray(points, dtype=float), weights, theta)


def test_identical_laws_are_at_distance_zero():
    mu = law([[0.0], [1.5], [-2.0]])
    assert wasserstein_theta(mu, mu) == 0.0


@pytest.mark.parametrize("theta", [1.0, 2.0])
def test_two_point_clouds(theta):
    # enumerating both matchings: (1+1)/2 beats (3+1)/2
    mu, nu = law([[0.0], [2.0]], theta), law([[1.0], [3.0]], theta)
    assert wasserstein_theta(mu, nu, theta) == pytest.approx(1.0, abs=1e-15)


def test_plan_for_equal_laws_is_diagonal():
    mu = law([[0.0], [1.0], [5.0]])
    plan = optimal_plan(mu, mu).matrix
    np.testing.assert_allclose(plan, np.eye(3) / 3, atol=1e-15)


def test_plan_is_monotone_matching():
    mu, nu = law([[0.0], [2.0]]), law([[1.0], [3.0]])
    np.testing.assert_allclose(optimal_plan(mu, nu).matrix, [[0.5, 0.0], [0.0, 0.5]], atol=1e-15)


def test_single_atom_forces_product_plan():
    mu = law([[0.0]])
    nu = law([[1.0], [2.0], [4.0]], weights=[0.2, 0.3, 0.5])
    plan = optimal_plan(mu, nu)
    np.testing.assert_allclose(plan.matrix, [[0.2, 0.3, 0.5]])
    assert plan.check()


def test_theta_moment_examples():
    assert theta_moment(law(np.zeros((4, 2)))) == 0.0
    assert theta_moment(law([[-1.0], [1.0]], theta=2.0)) == pytest.approx(1.0)
    seg = EmpiricalLaw("segment", np.full((1, 3, 1), -0.7), theta=1.0)
    assert theta_moment(seg) == pytest.approx(0.7)


def test_rejects_mismatched_kinds():
    a = law([[0.0]])
    b = EmpiricalLaw("segment", np.zeros((1, 3, 1)))
    with pytest.raises(InvalidInputError):
        wasserstein_theta(a, b)


def test_rejects_bad_weights():
    with pytest.raises(InvalidInputError):
        law([[0.0], [1.0]], weights=[0.7, 0.7])


def test_weighted_lp_matches_enumeration_of_extreme_plans():
    # 2 x 2 weighted problem: the optimal plan puts as much mass as possible on the diagonal
    mu = law([[0.0], [1.0]], weights=[0.25, 0.75])
    nu = law([[0.0], [1.0]], weights=[0.5, 0.5])
    assert wasserstein_theta(mu, nu, 2.0) == pytest.approx(math.sqrt(0.25), abs=1e-12)


def test_sinkhorn_brackets_exact_value():
    rng = np.random.default_rng(3)
    mu = law(rng.normal(size=(30, 2)))
    nu = law(rng.normal(size=(40, 2)) + 0.5)
    exact = wasserstein_theta(mu, nu)
    res = sinkhorn(mu, nu)
    assert res.lower - 1e-9 <= exact <= res.value + 1e-9
    assert res.value - res.lower <= res.gap + 1e-12
    assert wasserstein_theta(mu, nu, method="entropic") == pytest.approx(res.value)


def test_law_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    seg = EmpiricalLaw("segment", rng.normal(size=(5, 3, 2)), rng.dirichlet(np.ones(5)))
    write_law_csv(tmp_path / "s.csv", seg)
    back = read_law_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.samples, seg.samples)
    np.testing.assert_allclose(back.probabilities, seg.probabilities, rtol=1e-15)


def _brute(a, b, theta):
    n = a.shape[0]
    cost = np.linalg.norm(a[:, None] - b[None], axis=-1) ** theta
    return min(cost[np.arange(n), list(p)].mean() for p in itertools.permutations(range(n))) ** (1 / theta)


clouds = st.integers(1, 6).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-10, 10), min_size=n, max_size=n),
        st.lists(st.floats(-10, 10), min_size=n, max_size=n),
        st.lists(st.floats(-10, 10), min_size=n, max_size=n),
    )
)


@settings(max_examples=60, deadline=None)
@given(clouds, st.sampled_from([1.0, 2.0, 3.0]))
def test_distance_properties(xyz, theta):
    a, b, c = (np.asarray(v)[:, None] for v in xyz)
    mu, nu, rho = law(a, theta), law(b, theta), law(c, theta)
    dab = wasserstein_theta(mu, nu, theta)
    assert dab >= 0.0
    assert dab == pytest.approx(wasserstein_theta(nu, mu, theta), abs=1e-9)
    assert dab <= wasserstein_theta(mu, rho, theta) + wasserstein_theta(rho, nu, theta) + 1e-9
    assert dab == pytest.approx(_brute(a, b, theta), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(clouds)
def test_distance_grows_with_order(xyz):
    a, b, _ = (np.asarray(v)[:, None] for v in xyz)
    w1 = wasserstein_theta(law(a, 1.0), law(b, 1.0), 1.0)
    w2 = wasserstein_theta(law(a, 2.0), law(b, 2.0), 2.0)
    assert w1 <= w2 + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.floats(-3, 3))
def test_translation_moves_distance_by_offset(xs, c):
    a = np.asarray(xs)[:, None]
    assert wasserstein_theta(law(a), law(a + c)) == pytest.approx(abs(c), abs=1e-9)
