"""Empirical laws on endpoint space R^d or segment space, and Wasserstein-theta.

Exact transport uses sorted matching in one dimension, an assignment solver
for equal-size uniform clouds and a linear program otherwise. The entropic
route is a log-domain Sinkhorn iteration that reports a certified duality gap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import optimize, sparse
from scipy.special import logsumexp

from .errors import ConvergenceError, InvalidInputError, UnsupportedSizeError

ENDPOINT = "endpoint"
SEGMENT = "segment"
SUPPORT_KINDS = (ENDPOINT, SEGMENT)

EXACT_CAP = 512


@dataclass(frozen=True, eq=False)
class EmpiricalLaw:
    """Weighted atoms on ``R^d`` (``kind='endpoint'``) or on segments.

    ``samples`` has shape ``(N, d)`` for endpoint laws and ``(N, n_r + 1, d)``
    for segment laws. ``weights=None`` means uniform.
    """

    kind: str
    samples: np.ndarray
    weights: np.ndarray | None = None
    theta: float = 2.0
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        if not self.validate:
            return
        if self.kind not in SUPPORT_KINDS:
            raise InvalidInputError(f"unknown support kind {self.kind!r}")
        samples = np.asarray(self.samples, dtype=np.float64)
        want = 2 if self.kind == ENDPOINT else 3
        if samples.ndim == want - 1:
            samples = samples[..., None]
        if samples.ndim != want or samples.shape[0] < 1:
            raise InvalidInputError(f"{self.kind} law needs samples of rank {want}, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("law samples must be finite")
        object.__setattr__(self, "samples", samples)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (samples.shape[0],) or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise InvalidInputError("weights must be finite, nonnegative, one per atom")
            if abs(w.sum() - 1.0) > 1e-12:
                raise InvalidInputError(f"weights sum to {w.sum()!r}, not 1")
            object.__setattr__(self, "weights", w)
        if not self.theta >= 1:
            raise InvalidInputError(f"theta must be >= 1, got {self.theta!r}")

    @classmethod
    def trusted(cls, kind: str, samples: np.ndarray, theta: float = 2.0) -> "EmpiricalLaw":
        """Uniform law over solver-produced samples, skipping validation."""
        return cls(kind, samples, None, theta, validate=False)

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[-1]

    @property
    def is_uniform(self) -> bool:
        return self.weights is None

    @property
    def probabilities(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.size, 1.0 / self.size)
        return self.weights

    def endpoints(self) -> np.ndarray:
        """Atoms projected to their value at ``s = 0``, shape ``(N, d)``."""
        return self.samples if self.kind == ENDPOINT else self.samples[:, -1, :]

    @cached_property
    def mean(self) -> np.ndarray:
        """Mean of the endpoint marginal."""
        x = self.endpoints()
        if self.weights is None:
            return x.mean(axis=0)
        return self.weights @ x

    def norms(self) -> np.ndarray:
        """Per-atom norm: Euclidean (endpoint) or node-wise sup (segment)."""
        if self.kind == ENDPOINT:
            return np.sqrt(np.sum(self.samples**2, axis=-1))
        return np.sqrt(np.sum(self.samples**2, axis=-1)).max(axis=1)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    source: EmpiricalLaw
    target: EmpiricalLaw
    matrix: np.ndarray

    def check(self, tol: float = 1e-9) -> bool:
        return bool(
            np.all(self.matrix >= -tol)
            and np.allclose(self.matrix.sum(axis=1), self.source.probabilities, atol=tol, rtol=0)
            and np.allclose(self.matrix.sum(axis=0), self.target.probabilities, atol=tol, rtol=0)
        )


def _check_pair(mu: EmpiricalLaw, nu: EmpiricalLaw) -> None:
    if mu.kind != nu.kind:
        raise InvalidInputError(f"cannot compare a {mu.kind} law with a {nu.kind} law")
    if mu.samples.shape[1:] != nu.samples.shape[1:]:
        raise InvalidInputError(f"atom shapes differ: {mu.samples.shape[1:]} vs {nu.samples.shape[1:]}")


def cost_matrix(mu: EmpiricalLaw, nu: EmpiricalLaw) -> np.ndarray:
    """Pairwise ground distances: Euclidean or segment sup distance."""
    _check_pair(mu, nu)
    a, b = mu.samples, nu.samples
    if mu.kind == ENDPOINT:
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        diff = a[i][None] - b
        out[i] = np.sqrt(np.sum(diff * diff, axis=-1)).max(axis=1)
    return out


def _sorted_1d(mu: EmpiricalLaw, nu: EmpiricalLaw) -> bool:
    return mu.kind == ENDPOINT and mu.dim == 1 and mu.is_uniform and nu.is_uniform and mu.size == nu.size


def _uniform_square(mu: EmpiricalLaw, nu: EmpiricalLaw) -> bool:
    return mu.is_uniform and nu.is_uniform and mu.size == nu.size


def _lp_plan(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> np.ndarray:
    n, m = cost.shape
    rows = sparse.kron(sparse.identity(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.identity(m))
    a_eq = sparse.vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([a, b])
    res = optimize.linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise ConvergenceError(f"transport LP failed: {res.message}", float("nan"), int(getattr(res, "nit", 0)))
    return np.clip(res.x.reshape(n, m), 0.0, None)


def optimal_plan(mu: EmpiricalLaw, nu: EmpiricalLaw, theta: float | None = None, exact_cap: int = EXACT_CAP) -> TransportPlan:
    """An optimal coupling for the cost ``distance**theta``."""
    theta = mu.theta if theta is None else float(theta)
    _check_pair(mu, nu)
    if mu.size > exact_cap or nu.size > exact_cap:
        raise UnsupportedSizeError(f"exact plan limited to {exact_cap} atoms, got {mu.size} x {nu.size}")
    a, b = mu.probabilities, nu.probabilities
    if mu.size == 1 or nu.size == 1:
        return TransportPlan(mu, nu, np.outer(a, b))
    cost = cost_matrix(mu, nu) ** theta
    if _uniform_square(mu, nu):
        rows, cols = optimize.linear_sum_assignment(cost)
        plan = np.zeros_like(cost)
        plan[rows, cols] = 1.0 / mu.size
        return TransportPlan(mu, nu, plan)
    return TransportPlan(mu, nu, _lp_plan(a, b, cost))


def wasserstein_theta(
    mu: EmpiricalLaw,
    nu: EmpiricalLaw,
    theta: float | None = None,
    method: str = "exact",
    exact_cap: int = EXACT_CAP,
) -> float:
    """Wasserstein distance of order ``theta`` between two empirical laws.

    Parameters
    ----------
    method : {"exact", "entropic"}
        ``exact`` solves the transport problem; one-dimensional equal-size
        uniform clouds use sorted matching and are not subject to
        ``exact_cap``. ``entropic`` runs :func:`sinkhorn` and returns its
        primal value (see :class:`SinkhornResult` for the gap).
    """
    theta = mu.theta if theta is None else float(theta)
    if theta < 1:
        raise InvalidInputError(f"theta must be >= 1, got {theta!r}")
    _check_pair(mu, nu)
    if method == "entropic":
        return sinkhorn(mu, nu, theta).value
    if method != "exact":
        raise InvalidInputError(f"unknown method {method!r}")
    if _sorted_1d(mu, nu):
        x = np.sort(mu.samples[:, 0])
        y = np.sort(nu.samples[:, 0])
        return float(np.mean(np.abs(x - y) ** theta) ** (1.0 / theta))
    if mu.size > exact_cap or nu.size > exact_cap:
        raise UnsupportedSizeError(f"exact transport limited to {exact_cap} atoms, got {mu.size} x {nu.size}")
    if mu.size == 1 or nu.size == 1:
        cost = cost_matrix(mu, nu) ** theta
        total = float(np.sum(np.outer(mu.probabilities, nu.probabilities) * cost))
        return total ** (1.0 / theta)
    cost = cost_matrix(mu, nu) ** theta
    if _uniform_square(mu, nu):
        rows, cols = optimize.linear_sum_assignment(cost)
        return float(np.mean(cost[rows, cols]) ** (1.0 / theta))
    plan = _lp_plan(mu.probabilities, nu.probabilities, cost)
    return float(max(np.sum(plan * cost), 0.0) ** (1.0 / theta))


@dataclass(frozen=True)
class SinkhornResult:
    """Entropic transport estimate with a certified bracket.

    ``value`` is the cost of a feasible plan (an upper bound on the exact
    distance) and ``gap`` is ``value`` minus a feasible dual lower bound, both
    in distance units, so ``|value - exact| <= gap``.
    """

    value: float
    gap: float
    lower: float
    epsilon: float
    iterations: int
    residual: float
    plan: np.ndarray = field(repr=False)


def _round_to_marginals(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Altschuler-Weed-Rigollet rounding onto the transport polytope
    x = np.minimum(a / np.maximum(plan.sum(axis=1), 1e-300), 1.0)
    plan = plan * x[:, None]
    y = np.minimum(b / np.maximum(plan.sum(axis=0), 1e-300), 1.0)
    plan = plan * y[None, :]
    err_a = a - plan.sum(axis=1)
    err_b = b - plan.sum(axis=0)
    total = err_a.sum()
    if total > 0:
        plan = plan + np.outer(err_a, err_b) / total
    return plan


def sinkhorn(
    mu: EmpiricalLaw,
    nu: EmpiricalLaw,
    theta: float | None = None,
    epsilon: float | None = None,
    max_iter: int = 2000,
    tol: float = 1e-8,
) -> SinkhornResult:
    """Log-domain Sinkhorn with epsilon-scaling warm start.

    The default regularization is one percent of the median pairwise cost.
    Convergence is declared when the L1 marginal violation drops below
    ``tol``; otherwise :class:`ConvergenceError` is raised with the residual.
    """
    theta = mu.theta if theta is None else float(theta)
    _check_pair(mu, nu)
    cost = cost_matrix(mu, nu) ** theta
    a, b = mu.probabilities, nu.probabilities
    log_a, log_b = np.log(a), np.log(b)
    scale = float(np.median(cost))
    if scale <= 0:
        scale = float(cost.max())
    if scale <= 0:
        return SinkhornResult(0.0, 0.0, 0.0, 0.0, 0, 0.0, np.outer(a, b))
    eps_final = 0.01 * scale if epsilon is None else float(epsilon)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    eps = max(eps_final, scale)
    residual = np.inf
    it = 0
    while it < max_iter:
        it += 1
        f = eps * (log_a - logsumexp((g[None, :] - cost) / eps, axis=1))
        g = eps * (log_b - logsumexp((f[:, None] - cost) / eps, axis=0))
        if eps > eps_final:
            eps = max(eps_final, eps * 0.5)
            continue
        log_plan = (f[:, None] + g[None, :] - cost) / eps
        residual = float(np.abs(np.exp(logsumexp(log_plan, axis=1)) - a).sum())
        if residual < tol:
            break
    if residual >= tol:
        raise ConvergenceError("Sinkhorn did not reach the marginal tolerance", residual, it)
    plan = _round_to_marginals(np.exp((f[:, None] + g[None, :] - cost) / eps), a, b)
    primal = float(np.sum(plan * cost))
    g_feasible = np.min(cost - f[:, None], axis=0)
    dual = float(a @ f + b @ g_feasible)
    upper = primal ** (1.0 / theta)
    lower = max(dual, 0.0) ** (1.0 / theta)
    return SinkhornResult(upper, max(upper - lower, 0.0), lower, eps, it, residual, plan)


def theta_moment(mu: EmpiricalLaw, theta: float | None = None) -> float:
    """``sum_i w_i |x_i|**theta`` with the support's norm."""
    theta = mu.theta if theta is None else float(theta)
    return float(mu.probabilities @ (mu.norms() ** theta))


def write_law_csv(path: str | Path, law: EmpiricalLaw) -> None:
    """One atom per row: ``weight,x_1,...`` or ``weight,v_0_1,...,v_{n_r}_d``."""
    d = law.dim
    if law.kind == ENDPOINT:
        header = ["weight"] + [f"x_{j + 1}" for j in range(d)]
        flat = law.samples
    else:
        n = law.samples.shape[1]
        header = ["weight"] + [f"v_{k}_{j + 1}" for k in range(n) for j in range(d)]
        flat = law.samples.reshape(law.size, -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p, row in zip(law.probabilities, flat):
            w.writerow([f"{p:.17g}"] + [f"{v:.17g}" for v in row])


def read_law_csv(path: str | Path, theta: float = 2.0) -> EmpiricalLaw:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "weight":
        raise InvalidInputError(f"{path}: missing 'weight' header")
    header, body = rows[0], rows[1:]
    if not body:
        raise InvalidInputError(f"{path}: no atoms")
    data = np.array([[float(v) for v in row] for row in body], dtype=np.float64)
    weights = data[:, 0]
    weights = weights / weights.sum()
    if header[1].startswith("x_"):
        return EmpiricalLaw(ENDPOINT, data[:, 1:], weights, theta)
    d = max(int(col.rsplit("_", 1)[1]) for col in header[1:])
    samples = data[:, 1:].reshape(len(body), -1, d)
    return EmpiricalLaw(SEGMENT, samples, weights, theta)
