"""Change-of-measure couplings and exponential weights.

The shift coupling runs a frozen-law particle system ``X`` and sets
``Xbar = X + ramp`` node by node, where the ramp grows linearly from 0 to
``shift(-r)`` and then traces the shift itself so that ``Xbar_T = X_T + shift``.
The drift mismatch ``Phi`` between the two systems is absorbed by a Girsanov
weight computed on the same Brownian increments. Because the ramp's discrete
derivative is a forward difference, the discrete weight is an exact density
for the Euler scheme, not only an approximation of the continuous one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize

from .coeffs import CoefficientSet, DiniModulus, apply_matrix
from .errors import ConditioningError, InvalidHorizonError, InvalidInputError, UnsupportedModelError
from .measure import EmpiricalLaw
from .segment import SegmentBatch, TimeGrid
from .solver import InitialLaw, LawFlow, ParticleEnsemble, SolverConfig, run_frozen_law
from .stats import StatEstimate, estimate_mean

MAX_EXPONENT = 700.0


class GirsanovAccumulator:
    """Per-particle running sums for ``R = exp(-I - Q/2)``.

    ``I`` is the Ito sum of ``<u_k, dW_k>`` and ``Q`` the sum of ``|u_k|^2 h``.
    Both are kept in plain (not exponentiated) form so long horizons never
    overflow.
    """

    def __init__(self, particles: int):
        self.stochastic = np.zeros(particles)
        self.quadratic = np.zeros(particles)

    def add(self, u: np.ndarray, dw: np.ndarray, h: float) -> None:
        self.stochastic += np.sum(u * dw, axis=1)
        self.quadratic += np.sum(u * u, axis=1) * h

    @property
    def log_weights(self) -> np.ndarray:
        return -self.stochastic - 0.5 * self.quadratic

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


# ---------------------------------------------------------------------------
# shift functions


@dataclass(frozen=True)
class Shift:
    """A ``C^1`` shift on ``[-r, 0]``.

    ``affine``  ``offset + slope * s``;
    ``table``   values at the segment nodes of a grid, differentiated by
                centred differences.
    """

    kind: str
    offset: tuple[float, ...] = (0.0,)
    slope: tuple[float, ...] = (0.0,)
    r: float = 0.0
    nodes: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        if self.kind not in ("affine", "table"):
            raise InvalidInputError(f"unknown shift kind {self.kind!r}")
        object.__setattr__(self, "offset", tuple(float(v) for v in np.atleast_1d(self.offset)))
        object.__setattr__(self, "slope", tuple(float(v) for v in np.atleast_1d(self.slope)))
        if self.kind == "table":
            arr = np.asarray(self.nodes, dtype=float)
            if arr.ndim != 2 or arr.shape[0] < 2 or not np.all(np.isfinite(arr)):
                raise InvalidInputError("table shift needs a finite (nodes, d) array with >= 2 nodes")
            if not self.r > 0:
                raise InvalidInputError("table shift needs r > 0")

    @classmethod
    def affine(cls, offset, slope=0.0) -> "Shift":
        return cls("affine", offset, slope)

    @classmethod
    def zero(cls, dim: int = 1) -> "Shift":
        return cls("affine", np.zeros(dim), np.zeros(dim))

    @classmethod
    def table(cls, r: float, values) -> "Shift":
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        return cls("table", r=float(r), nodes=tuple(map(tuple, arr)))

    @property
    def dim(self) -> int:
        if self.kind == "table":
            return len(self.nodes[0])
        return max(len(self.offset), len(self.slope))

    def _table(self):
        arr = np.asarray(self.nodes, dtype=float)
        s = np.linspace(-self.r, 0.0, arr.shape[0])
        return s, arr

    def __call__(self, s) -> np.ndarray:
        """Values at offsets ``s``, shape ``(len(s), d)``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.kind == "affine":
            return np.asarray(self.offset)[None, :] + s[:, None] * np.asarray(self.slope)[None, :]
        grid, arr = self._table()
        return np.stack([np.interp(s, grid, arr[:, j]) for j in range(arr.shape[1])], axis=-1)

    def derivative(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.kind == "affine":
            return np.broadcast_to(np.asarray(self.slope)[None, :], (s.size, self.dim)).copy()
        grid, arr = self._table()
        der = np.gradient(arr, grid, axis=0)
        return np.stack([np.interp(s, grid, der[:, j]) for j in range(arr.shape[1])], axis=-1)

    def sup_norm(self, r: float) -> float:
        """Sup of ``|shift|`` over ``[-r, 0]``; exact at the ends for affine shifts."""
        if self.kind == "affine":
            ends = self(np.array([-r, 0.0]))
            return float(np.max(np.linalg.norm(ends, axis=1)))
        return float(np.max(np.linalg.norm(self._table()[1], axis=1)))

    def energy(self, r: float) -> float:
        """``int_{-r}^0 |shift'(s)|^2 ds``."""
        if self.kind == "affine":
            return float(r * np.sum(np.asarray(self.slope) ** 2))
        grid, _ = self._table()
        der = self.derivative(grid)
        return float(np.trapezoid(np.sum(der * der, axis=1), grid))

    def is_zero(self) -> bool:
        if self.kind == "affine":
            return not any(self.offset) and not any(self.slope)
        return not np.any(np.asarray(self.nodes))


@dataclass(frozen=True)
class ShiftCoupling:
    """Ramp from 0 to ``shift(-r)`` on ``[0, T - r]`` followed by the shift itself."""

    shift: Shift
    T: float
    r: float

    def ramp(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        head = np.clip(s, 0.0, None) / (self.T - self.r)
        start = self.shift(np.array([-self.r]))[0]
        first = head[:, None] * start[None, :]
        tail = self.shift(np.clip(s - self.T, -self.r, 0.0))
        return np.where((s <= self.T - self.r)[:, None], first, tail)

    def ramp_derivative(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        start = self.shift(np.array([-self.r]))[0]
        first = np.where((s >= 0)[:, None], start[None, :] / (self.T - self.r), 0.0)
        tail = self.shift.derivative(np.clip(s - self.T, -self.r, 0.0))
        return np.where((s <= self.T - self.r)[:, None], first, tail)

    def node_table(self, grid: TimeGrid) -> np.ndarray:
        """Ramp values on every node of ``grid`` (from ``-r`` to ``T``), shape ``(n_nodes, d)``."""
        if abs(grid.T - self.T) > 1e-12 or abs(grid.r - self.r) > 1e-12:
            raise InvalidInputError("grid does not match the coupling horizon and delay")
        table = self.ramp(grid.times())
        # pin the last window to the shift's own node values so Xbar_T = X_T + shift exactly
        table[grid.n_T :] = self.shift(grid.segment_offsets())
        return table

    def energy(self) -> float:
        """``int_0^T |ramp'|^2``: the ramp part plus the shift's own energy."""
        start = self.shift(np.array([-self.r]))[0]
        return float(np.sum(start**2) / (self.T - self.r) + self.shift.energy(self.r))


def shift_gamma(shift: Shift, T: float, r: float) -> ShiftCoupling:
    """Build the ramp coupling for ``shift``; requires ``T > r``."""
    if not T > r:
        raise InvalidHorizonError(f"shift coupling needs T > r, got T={T!r}, r={r!r}")
    return ShiftCoupling(shift, float(T), float(r))


# ---------------------------------------------------------------------------
# coupled run


@dataclass(frozen=True, eq=False)
class CoupledRun:
    """Output of :func:`coupled_shift_run`.

    ``shifted`` holds the final segments of ``Xbar`` (particle-major
    ``(M, n_r + 1, d)``). ``phi_energy`` is ``int |Phi|^2`` and
    ``drift_energy`` is ``int |sigma^{-1} Phi|^2`` per particle.
    """

    ensemble: ParticleEnsemble
    shifted: np.ndarray
    log_weights: np.ndarray
    phi_energy: np.ndarray
    drift_energy: np.ndarray
    coupling: ShiftCoupling

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def final(self) -> np.ndarray:
        """Final segments of ``X``, particle-major."""
        return self.ensemble.segment().values

    def entropy_samples(self) -> np.ndarray:
        """Per-particle ``R log R``."""
        return self.weights * self.log_weights

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["particle", "R", "logR", "int_phi_sq"])
            for i, (lr, e) in enumerate(zip(self.log_weights, self.phi_energy)):
                w.writerow([i, f"{math.exp(lr):.12g}", f"{lr:.12g}", f"{e:.12g}"])


def _require_state_free(coeffs: CoefficientSet) -> None:
    if not coeffs.diffusion_state_free:
        raise UnsupportedModelError(f"{coeffs.name}: shift coupling needs a state-independent diffusion")


def coupled_shift_run(
    coeffs: CoefficientSet,
    config: SolverConfig,
    flow: LawFlow,
    shift: Shift,
    initial: InitialLaw | None = None,
) -> CoupledRun:
    """Frozen-law run of ``X`` with the shifted copy and its Girsanov weight.

    Parameters
    ----------
    config : solver settings; the grid horizon is the coupling horizon.
    flow : law flow used for both systems.
    """
    _require_state_free(coeffs)
    grid = config.grid
    coupling = shift_gamma(shift, grid.T, grid.r)
    if shift.dim != coeffs.dim:
        raise InvalidInputError(f"shift has dimension {shift.dim}, model has {coeffs.dim}")
    table = coupling.node_table(grid)
    slope = np.diff(table, axis=0) / grid.h
    acc = GirsanovAccumulator(config.particles)
    phi_energy = np.zeros(config.particles)
    h = grid.h
    n_r, w = grid.n_r, grid.window
    zero_shift = shift.is_zero()
    holder: dict[str, np.ndarray] = {}

    def observe(k: int, t: float, seg: SegmentBatch, law: EmpiricalLaw, dw) -> None:
        if dw is None:
            holder["final"] = seg.shifted(table[k : k + w]).values.copy()
            return
        if zero_shift:
            return
        shifted = seg.shifted(table[k : k + w])
        phi = np.broadcast_to(slope[n_r + k], seg.endpoint.shape).copy()
        if coeffs.drift is not None:
            phi += coeffs.drift(t, seg.endpoint, law) - coeffs.drift(t, shifted.endpoint, law)
        if coeffs.segment_drift is not None:
            phi += coeffs.segment_drift(t, seg, law) - coeffs.segment_drift(t, shifted, law)
        inv = coeffs.state_free_inverse(t, law)
        u = apply_matrix(inv, phi)
        acc.add(u, dw, h)
        phi_energy[:] += np.sum(phi * phi, axis=1) * h

    cfg = config.with_(record="window")
    ens = run_frozen_law(coeffs, flow, cfg, initial, observers=[observe])
    final_x = ens.segment().values
    shifted_final = holder["final"]
    eta_nodes = shift(grid.segment_offsets())
    if not np.array_equal(shifted_final, final_x + eta_nodes[None, :, :]):
        raise AssertionError("shifted terminal segment differs from X_T + shift")
    return CoupledRun(ens, shifted_final, acc.log_weights, phi_energy, acc.quadratic.copy(), coupling)


# ---------------------------------------------------------------------------
# bounds


@dataclass(frozen=True)
class BetaBound:
    """Terms of the shift-Harnack cost and their weighted total.

    ``total = inv_sigma_sq * C * (ramp + energy + modulus + size)`` where
    ``ramp = |shift(-r)|^2/(T-r)``, ``energy = int |shift'|^2``,
    ``modulus = T phi(C ||shift||)^2`` and ``size = T ||shift||^2``.
    """

    T: float
    r: float
    constant: float
    inv_sigma_sq: float
    ramp: float
    energy: float
    modulus: float
    size: float

    @property
    def total(self) -> float:
        return self.inv_sigma_sq * self.constant * (self.ramp + self.energy + self.modulus + self.size)

    def envelope(self) -> float:
        """Path-wise bound on ``int |Phi|^2`` (no ``sigma^{-1}`` factor)."""
        return self.constant * (self.ramp + self.energy + self.modulus + self.size)


def _modulus_fn(modulus: DiniModulus | Callable | None) -> Callable:
    if modulus is None:
        return lambda s: 0.0
    return lambda s: float(np.asarray(modulus(s)))


def beta_bound(
    shift: Shift,
    T: float,
    r: float,
    modulus: DiniModulus | Callable | None = None,
    constant: float = 2.0,
    inv_sigma_norm: float = 1.0,
) -> BetaBound:
    """Evaluate the shift-Harnack cost with a trial ``constant``."""
    if not T > r:
        raise InvalidHorizonError(f"shift cost needs T > r, got T={T!r}, r={r!r}")
    phi = _modulus_fn(modulus)
    start = shift(np.array([-r]))[0]
    norm = shift.sup_norm(r)
    return BetaBound(
        T=float(T),
        r=float(r),
        constant=float(constant),
        inv_sigma_sq=float(inv_sigma_norm) ** 2,
        ramp=float(np.sum(start**2) / (T - r)),
        energy=shift.energy(r),
        modulus=float(T * phi(constant * norm) ** 2),
        size=float(T * norm**2),
    )


def implied_constant(
    observed: float,
    shift: Shift,
    T: float,
    r: float,
    modulus: DiniModulus | Callable | None = None,
    upper: float = 1e12,
) -> float:
    """Smallest ``C`` whose path-wise envelope covers ``observed``.

    Returns 0 when nothing needs covering and ``inf`` if even ``upper`` fails.
    """
    if observed <= 0:
        return 0.0

    def gap(c: float) -> float:
        return beta_bound(shift, T, r, modulus, c).envelope() - observed

    if gap(upper) < 0:
        return math.inf
    return float(optimize.brentq(gap, 0.0, upper, xtol=1e-14, rtol=1e-12))


def log_harnack_drift(
    coeffs: CoefficientSet,
    t: float,
    seg: SegmentBatch,
    mu: EmpiricalLaw,
    nu: EmpiricalLaw,
) -> np.ndarray:
    """Drift mismatch between the laws ``mu`` and ``nu`` mapped through ``sigma^T (sigma sigma^T)^{-1}``.

    Evaluated at the states in ``seg``; returns ``(M, d)``.
    """
    x = seg.endpoint
    gap = np.zeros_like(x)
    if mu is nu:
        return gap
    if coeffs.drift is not None:
        gap = gap + coeffs.drift(t, x, mu) - coeffs.drift(t, x, nu)
    if coeffs.segment_drift is not None:
        gap = gap + coeffs.segment_drift(t, seg, mu) - coeffs.segment_drift(t, seg, nu)
    if coeffs.diffusion is None:
        return gap
    s = coeffs.diffusion_matrix(t, x, mu)
    a = np.einsum("mij,mkj->mik", s, s)
    if np.any(np.linalg.cond(a) > 1e12):
        raise ConditioningError(f"{coeffs.name}: sigma sigma^T is singular at t={t:.12g}")
    y = np.linalg.solve(a, gap[..., None])[..., 0]
    return np.einsum("mji,mj->mi", s, y)


@dataclass(frozen=True)
class WeightMoment:
    estimate: StatEstimate
    overflow: bool
    max_exponent: float


def weight_moment(log_weights, s: float) -> WeightMoment:
    """Monte Carlo ``E R**s`` from log-weights, flagging exponent overflow."""
    if s < 1:
        raise InvalidInputError(f"moment order must be >= 1, got {s!r}")
    lw = np.asarray(log_weights, dtype=np.float64)
    expo = s * lw
    top = float(np.max(expo))
    if top > MAX_EXPONENT:
        return WeightMoment(StatEstimate(math.inf, math.inf, lw.size), True, top)
    return WeightMoment(estimate_mean(np.exp(expo)), False, top)
