"""Coefficient models, their regularity metadata and probe-based checks.

A :class:`CoefficientSet` bundles the segment drift, the pointwise drift and
the diffusion matrix together with declared constants. Nothing here proves
a hypothesis; :func:`probe` tries to falsify the declared constants on
random inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np
from scipy import integrate

from .errors import ConditioningError, DivergenceError, InvalidInputError
from .measure import ENDPOINT, SEGMENT, EmpiricalLaw, wasserstein_theta
from .segment import SegmentBatch

# ---------------------------------------------------------------------------
# continuity moduli


@dataclass(frozen=True)
class DiniModulus:
    """Increasing modulus with a finite Dini integral.

    Built-in kinds
    --------------
    ``power``      ``scale * s**alpha`` with ``0 < alpha <= 1/2``.
    ``log-power``  ``1 / log(c + 1/s)**(1 + delta)``, ``delta > 0``.
    ``table``      monotone samples ``(s_k, value_k)`` with linear interpolation.
    """

    kind: str
    alpha: float = 0.25
    scale: float = 1.0
    delta: float = 1.0
    c: float = math.e**2
    table_s: tuple = ()
    table_v: tuple = ()

    def __post_init__(self):
        if self.kind == "power":
            if not (0 < self.alpha <= 0.5):
                raise InvalidInputError(f"power modulus needs 0 < alpha <= 1/2, got {self.alpha!r}")
            if not self.scale > 0:
                raise InvalidInputError("power modulus scale must be positive")
        elif self.kind == "log-power":
            if not self.delta > 0:
                raise InvalidInputError(f"log-power modulus needs delta > 0, got {self.delta!r}")
            if not self.c > 1:
                raise InvalidInputError(f"log-power modulus needs c > 1, got {self.c!r}")
            if not _square_concave(self, np.geomspace(1e-8, 1.0, 400)):
                raise InvalidInputError(f"squared log-power modulus is not concave for c={self.c!r}")
        elif self.kind == "table":
            s = np.asarray(self.table_s, dtype=float)
            v = np.asarray(self.table_v, dtype=float)
            if s.ndim != 1 or s.shape != v.shape or s.size < 3:
                raise InvalidInputError("table modulus needs matching 1-D arrays of length >= 3")
            if np.any(np.diff(s) <= 0) or s[0] <= 0 or np.any(np.diff(v) < 0) or v[0] < 0:
                raise InvalidInputError("table modulus must be increasing on increasing positive abscissae")
        else:
            raise InvalidInputError(f"unknown modulus kind {self.kind!r}")

    @classmethod
    def power(cls, alpha: float, scale: float = 1.0) -> "DiniModulus":
        return cls("power", alpha=alpha, scale=scale)

    @classmethod
    def log_power(cls, delta: float = 1.0, c: float = math.e**2) -> "DiniModulus":
        return cls("log-power", delta=delta, c=c)

    @classmethod
    def table(cls, s, values) -> "DiniModulus":
        return cls("table", table_s=tuple(map(float, s)), table_v=tuple(map(float, values)))

    def __call__(self, s):
        s = np.maximum(np.asarray(s, dtype=np.float64), 0.0)
        if self.kind == "power":
            return self.scale * s**self.alpha
        if self.kind == "log-power":
            safe = np.where(s > 0, s, 1.0)
            # log(c + 1/s) written without forming 1/s
            level = np.log1p(self.c * safe) - np.log(safe)
            return np.where(s > 0, level ** (-(1.0 + self.delta)), 0.0)
        ts = np.concatenate([[0.0], self.table_s])
        tv = np.concatenate([[0.0], self.table_v])
        return np.interp(s, ts, tv)


def _square_concave(phi: DiniModulus, grid: np.ndarray) -> bool:
    sq = phi(grid) ** 2
    slopes = np.diff(sq) / np.diff(grid)
    return bool(np.all(np.diff(slopes) <= 1e-10 * np.max(np.abs(slopes))))


def dini_integral(phi: DiniModulus) -> float:
    """``int_0^1 phi(s) / s ds``.

    Closed form ``scale / alpha`` for the power kind. The log-power kind is
    integrated after the substitution ``s = exp(-u)``. Tables are integrated
    by the trapezoid rule in ``log s`` plus a power-law tail fitted to the
    three smallest abscissae; a non-decaying tail raises
    :class:`DivergenceError`.
    """
    if phi.kind == "power":
        return phi.scale / phi.alpha
    if phi.kind == "log-power":
        expo = -(1.0 + phi.delta)
        val, _ = integrate.quad(lambda u: (u + math.log1p(phi.c * math.exp(-u))) ** expo, 0.0, np.inf, limit=200)
        return float(val)
    s = np.asarray(phi.table_s)
    v = np.asarray(phi.table_v)
    head = slice(0, 3)
    if np.any(v[head] <= 0):
        tail = 0.0 if np.all(v[head] == 0) else None
        if tail is None:
            raise DivergenceError("table modulus tail cannot be fitted near 0")
    else:
        slope, icept = np.polyfit(np.log(s[head]), np.log(v[head]), 1)
        if slope <= 1e-6:
            raise DivergenceError(f"table modulus decays like s**{slope:.3g} at 0; Dini integral diverges")
        tail = math.exp(icept) * s[0] ** slope / slope
    upper = s <= 1.0
    body = float(np.trapezoid(v[upper], np.log(s[upper]))) if upper.sum() > 1 else 0.0
    if s[-1] < 1.0:
        body += float(v[-1] * math.log(1.0 / s[-1]))
    return tail + body


# ---------------------------------------------------------------------------
# integrability pairs and mixed norms


@dataclass(frozen=True)
class PairClassK:
    """Integrability exponents ``(p, q)`` in dimension ``d``."""

    p: float
    q: float
    d: int

    def __post_init__(self):
        if not (self.p > 1 and self.q > 1):
            raise InvalidInputError(f"exponents must exceed 1, got p={self.p!r}, q={self.q!r}")
        if self.d < 1:
            raise InvalidInputError("dimension must be >= 1")

    @property
    def index(self) -> Fraction:
        """``d/p + 2/q`` in exact rational arithmetic."""
        return Fraction(self.d) / Fraction(self.p) + Fraction(2) / Fraction(self.q)

    @property
    def member(self) -> bool:
        return self.index < 2

    @property
    def strict(self) -> bool:
        return self.index < 1


def pair_in_K(p: float, q: float, d: int) -> tuple[bool, bool]:
    """``(d/p + 2/q < 2, d/p + 2/q < 1)``, evaluated exactly."""
    pair = PairClassK(p, q, d)
    return pair.member, pair.strict


def lqp_norm(values, p: float, q: float, dt: float, dx) -> float:
    """Mixed norm ``(int (int |f|^p dx)^(q/p) dt)^(1/q)`` by the midpoint rule.

    Parameters
    ----------
    values : array, shape ``(n_t, n_1, ..., n_d)``
        Samples at cell centres of a rectangular grid; the function is
        taken to vanish outside the box.
    dt : float
        Time cell width.
    dx : float or sequence of float
        Space cell widths (one per axis, or a common scalar).
    """
    if not (p >= 1 and q >= 1):
        raise InvalidInputError(f"p and q must be >= 1, got p={p!r}, q={q!r}")
    f = np.abs(np.asarray(values, dtype=np.float64))
    if f.ndim < 2:
        raise InvalidInputError("values need a time axis and at least one space axis")
    n_space = f.ndim - 1
    widths = np.broadcast_to(np.asarray(dx, dtype=np.float64), (n_space,))
    cell = float(np.prod(widths))
    inner = (np.sum(f**p, axis=tuple(range(1, f.ndim))) * cell) ** (1.0 / p)
    return float((np.sum(inner**q) * dt) ** (1.0 / q))


@dataclass(frozen=True)
class NormValue:
    value: float
    is_lower_bound: bool


def lqp_norm_of(
    func: Callable,
    p: float,
    q: float,
    T: float,
    box: tuple[float, float],
    dim: int = 1,
    cells: int = 400,
    time_cells: int = 50,
    compact: bool = False,
) -> NormValue:
    """Sample ``func(t, x)`` on ``[0, T] x box**dim`` and take :func:`lqp_norm`.

    Unless the function is declared ``compact`` (vanishing outside the box),
    the result is flagged as a lower bound of the norm over all of space.
    """
    lo, hi = map(float, box)
    if not hi > lo:
        raise InvalidInputError("empty box")
    dx = (hi - lo) / cells
    dt = T / time_cells
    axis = lo + (np.arange(cells) + 0.5) * dx
    mesh = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    times = (np.arange(time_cells) + 0.5) * dt
    values = np.stack([np.asarray(func(t, mesh), dtype=np.float64).reshape([cells] * dim) for t in times])
    return NormValue(lqp_norm(values, p, q, dt, dx), not compact)


# ---------------------------------------------------------------------------
# coefficient sets

DriftFn = Callable[[float, np.ndarray, EmpiricalLaw], np.ndarray]
SegmentDriftFn = Callable[[float, SegmentBatch, EmpiricalLaw], np.ndarray]


@dataclass(frozen=True)
class CoefficientSet:
    """Segment drift, pointwise drift and diffusion plus declared constants.

    Callables are vectorized over particles:

    * ``drift(t, x, law)`` with ``x`` of shape ``(M, d)`` returns ``(M, d)``;
    * ``segment_drift(t, seg, law)`` with a :class:`SegmentBatch` returns ``(M, d)``;
    * ``diffusion(t, x, law)`` returns ``(d, d)`` or ``(M, d, d)``;
      ``None`` means the identity and is handled without a matrix product.

    Metadata
    --------
    ellipticity : eigenvalues of ``a = sigma sigma^T`` lie in ``[1/K, K]``,
        and ``|drift|^2 <= envelope + K``.
    segment_lipschitz : Lipschitz constant of ``segment_drift`` in the sup norm.
    law_lipschitz : Lipschitz constant of both drifts in ``W_theta``.
    segment_drift_bound : sup of ``|segment_drift|`` (``inf`` if unbounded).
    modulus : continuity modulus of ``drift`` in space.
    envelope : singular envelope ``F(t, x) -> (M,)``.
    envelope_norm : ``T -> ||F||`` in the mixed norm with exponents ``integrability``.
    drift_bounded : whether the envelope bound is claimed at all; linear
        models grow with the state and opt out.
    """

    dim: int
    drift: DriftFn | None = None
    segment_drift: SegmentDriftFn | None = None
    diffusion: DriftFn | None = None
    ellipticity: float = 1.0 + 1e-9
    segment_lipschitz: float = 0.0
    law_lipschitz: float = 0.0
    segment_drift_bound: float = 0.0
    modulus: DiniModulus | None = None
    envelope: Callable[[float, np.ndarray], np.ndarray] | None = None
    envelope_norm: Callable[[float], float] | None = None
    integrability: tuple[float, float] | None = None
    diffusion_law_free: bool = True
    diffusion_state_free: bool = True
    law_free: bool = False
    drift_bounded: bool = True
    name: str = "custom"
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInputError("dimension must be >= 1")
        if not self.ellipticity >= 1:
            raise InvalidInputError(f"ellipticity constant must be >= 1, got {self.ellipticity!r}")

    def with_(self, **changes) -> "CoefficientSet":
        return replace(self, **changes)

    @property
    def identity_diffusion(self) -> bool:
        return self.diffusion is None

    def total_drift(self, t: float, seg: SegmentBatch, law: EmpiricalLaw) -> np.ndarray:
        x = seg.endpoint
        out = np.zeros((len(seg), self.dim))
        if self.drift is not None:
            out = out + self.drift(t, x, law)
        if self.segment_drift is not None:
            out = out + self.segment_drift(t, seg, law)
        return out

    def diffusion_matrix(self, t: float, x: np.ndarray, law: EmpiricalLaw) -> np.ndarray:
        """Diffusion at each particle, shape ``(M, d, d)``."""
        m = x.shape[0]
        if self.diffusion is None:
            return np.broadcast_to(np.eye(self.dim), (m, self.dim, self.dim))
        s = np.asarray(self.diffusion(t, x, law), dtype=np.float64)
        return np.broadcast_to(s, (m, self.dim, self.dim))

    def apply_diffusion(self, t: float, x: np.ndarray, law: EmpiricalLaw, dw: np.ndarray) -> np.ndarray:
        """``sigma(t, x, law) dW`` row by row.

        The product is an explicit sum over columns so each row depends only on
        its own inputs, which keeps results independent of how rows are chunked.
        """
        if self.diffusion is None:
            return dw
        s = np.asarray(self.diffusion(t, x, law), dtype=np.float64)
        if s.ndim == 2:
            s = s[None]
        out = s[:, :, 0] * dw[:, 0:1]
        for j in range(1, self.dim):
            out = out + s[:, :, j] * dw[:, j : j + 1]
        return out

    def state_free_inverse(self, t: float, law: EmpiricalLaw, cond_max: float = 1e12) -> np.ndarray | None:
        """Inverse of a state-independent diffusion (``None`` for the identity)."""
        if self.diffusion is None:
            return None
        if not self.diffusion_state_free:
            raise InvalidInputError(f"{self.name}: diffusion depends on the state")
        s = np.asarray(self.diffusion(t, np.zeros((1, self.dim)), law), dtype=np.float64)
        s = s.reshape(-1, self.dim, self.dim)[0]
        cond = np.linalg.cond(s)
        if not np.isfinite(cond) or cond > cond_max:
            raise ConditioningError(f"{self.name}: diffusion matrix condition number {cond:.3e} at t={t:.12g}")
        return np.linalg.inv(s)


def apply_matrix(mat: np.ndarray | None, v: np.ndarray) -> np.ndarray:
    """Row-wise ``mat @ v`` with a fixed summation order (``None`` is the identity)."""
    if mat is None:
        return v
    mat = np.asarray(mat)
    if mat.ndim == 2:
        mat = mat[None]
    out = mat[:, :, 0] * v[:, 0:1]
    for j in range(1, v.shape[1]):
        out = out + mat[:, :, j] * v[:, j : j + 1]
    return out


# ---------------------------------------------------------------------------
# probes


@dataclass(frozen=True)
class ProbeCheck:
    name: str
    ok: bool
    worst: float
    detail: str = ""


@dataclass(frozen=True)
class ProbeReport:
    model: str
    checks: tuple[ProbeCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def __getitem__(self, name: str) -> ProbeCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _random_segments(rng: np.random.Generator, window: int, m: int, d: int, h: float, scale: float) -> np.ndarray:
    start = rng.normal(0.0, scale, size=(1, m, d))
    steps = rng.normal(0.0, math.sqrt(h), size=(window - 1, m, d))
    return np.concatenate([start, start + np.cumsum(steps, axis=0)], axis=0)


def probe(
    coeffs: CoefficientSet,
    T: float = 1.0,
    window: int = 5,
    h: float = 0.01,
    points: int = 1000,
    law_pairs: int = 20,
    atoms: int = 8,
    theta: float = 1.0,
    law_support: str = ENDPOINT,
    seed: int = 0,
    slack: float = 1e-9,
) -> ProbeReport:
    """Try to falsify the declared constants on random inputs.

    Checks ellipticity of ``sigma sigma^T``, the drift envelope, the segment
    drift bound and Lipschitz constant, and the ``W_theta`` Lipschitz constant
    on pairs of small random clouds.
    """
    rng = np.random.default_rng(seed)
    d = coeffs.dim
    k = coeffs.ellipticity
    checks: list[ProbeCheck] = []

    def make_law(centre: float) -> EmpiricalLaw:
        seg = _random_segments(rng, window, atoms, d, h, 1.0) + centre
        if law_support == SEGMENT:
            return EmpiricalLaw(SEGMENT, seg.transpose(1, 0, 2), theta=theta)
        return EmpiricalLaw(ENDPOINT, seg[-1], theta=theta)

    laws = [make_law(rng.normal(0.0, 1.0)) for _ in range(law_pairs)]
    seg = _random_segments(rng, window, points, d, h, 2.0)
    batch = SegmentBatch(seg)
    x = batch.endpoint
    ts = rng.uniform(0.0, T, size=law_pairs)

    worst_eig = 0.0
    worst_env = -np.inf
    worst_bound = 0.0
    for t, law in zip(ts, laws):
        s = coeffs.diffusion_matrix(t, x, law)
        eig = np.linalg.eigvalsh(np.einsum("mij,mkj->mik", s, s))
        worst_eig = max(worst_eig, float(np.max(np.maximum(eig.max(axis=1) / k, 1.0 / (k * eig.min(axis=1).clip(1e-300))))))
        if coeffs.drift is not None:
            b = coeffs.drift(t, x, law)
            env = coeffs.envelope(t, x) if coeffs.envelope is not None else 0.0
            worst_env = max(worst_env, float(np.max(np.sum(b * b, axis=1) - env - k)))
        if coeffs.segment_drift is not None:
            worst_bound = max(worst_bound, float(np.max(np.linalg.norm(coeffs.segment_drift(t, batch, law), axis=1))))
    checks.append(ProbeCheck("ellipticity", worst_eig <= 1.0 + slack, worst_eig, "max eigen-ratio to K"))
    if coeffs.drift is not None and coeffs.drift_bounded:
        checks.append(ProbeCheck("envelope", worst_env <= slack, worst_env, "max |b|^2 - F - K"))
    if coeffs.segment_drift is not None:
        ok = worst_bound <= coeffs.segment_drift_bound + slack
        checks.append(ProbeCheck("segment-bound", ok, worst_bound, "max |B|"))

        other = SegmentBatch(seg + rng.normal(0.0, 0.5, size=seg.shape))
        gap = np.sqrt(np.sum((seg - other.time_major()) ** 2, axis=2)).max(axis=0)
        worst = 0.0
        ok = True
        for t, law in zip(ts, laws):
            diff = np.linalg.norm(coeffs.segment_drift(t, batch, law) - coeffs.segment_drift(t, other, law), axis=1)
            ok &= bool(np.all(diff <= coeffs.segment_lipschitz * gap + slack))
            worst = max(worst, float(np.max(diff / gap)))
        checks.append(ProbeCheck("segment-lipschitz", ok, worst, "max |B(xi)-B(eta)|/|xi-eta|"))

    worst = 0.0
    ok = True
    for i in range(0, law_pairs - 1, 2):
        mu, nu = laws[i], laws[i + 1]
        w = wasserstein_theta(mu, nu, theta)
        t = ts[i]
        diff = np.zeros(points)
        if coeffs.drift is not None:
            diff = diff + np.linalg.norm(coeffs.drift(t, x, mu) - coeffs.drift(t, x, nu), axis=1)
        if coeffs.segment_drift is not None:
            diff = diff + np.linalg.norm(coeffs.segment_drift(t, batch, mu) - coeffs.segment_drift(t, batch, nu), axis=1)
        ok &= bool(np.all(diff <= coeffs.law_lipschitz * w + slack))
        if w > 0:
            worst = max(worst, float(np.max(diff) / w))
    checks.append(ProbeCheck("law-lipschitz", ok, worst, f"max drift gap / W_{theta:g}"))
    return ProbeReport(coeffs.name, tuple(checks))
