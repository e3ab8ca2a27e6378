"""Space-time mollification of the pointwise drift and the diffusion.

The base kernel is ``rho(t, x) = c * bump(sqrt(2) t) * bump(sqrt(2) |x|)`` with
``bump(u) = exp(-1 / (1 - u**2))`` on ``|u| < 1``. Its support is the cylinder
``|t|, |x| <= 1/sqrt(2)``, which sits inside the closed unit ball of
``R^(1+d)``, so the level-``n`` kernel ``n**(1+d) rho(n t, n x)`` has support
radius ``1/n``. Averages are computed by a tensor Gauss-Legendre rule on the
support box with weights renormalized to sum to one.

Outside ``[0, T]`` the drift is extended by zero and ``a = sigma sigma^T`` by
the identity. The segment drift is left untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .coeffs import CoefficientSet
from .errors import InvalidInputError, ResolutionError
from .measure import EmpiricalLaw

_HALF_WIDTH = 1.0 / math.sqrt(2.0)
MAX_NODES = 4096


def _bump(u):
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def _radial_mass(d: int) -> float:
    # integral over R^d of bump(sqrt(2)|x|)
    area = 2.0 * math.pi ** (d / 2.0) / special.gamma(d / 2.0)
    val, _ = integrate.quad(lambda r: float(_bump(math.sqrt(2.0) * r)) * r ** (d - 1), 0.0, _HALF_WIDTH, epsabs=1e-14, epsrel=1e-12)
    return area * val


def _time_mass() -> float:
    val, _ = integrate.quad(lambda t: float(_bump(math.sqrt(2.0) * t)), -_HALF_WIDTH, _HALF_WIDTH, epsabs=1e-14, epsrel=1e-12)
    return val


@dataclass(frozen=True)
class Mollifier:
    """Level-``n`` kernel in dimension ``d`` with a tensor quadrature rule.

    Attributes
    ----------
    offsets : array ``(Q, 1 + d)``
        Node displacements ``(tau, xi)``, all within distance ``1/n`` of 0.
    weights : array ``(Q,)``
        Normalized kernel weights (sum exactly one up to rounding).
    """

    dim: int
    level: int
    nodes_per_axis: int = 8
    offsets: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    constant: float = field(init=False)

    def __post_init__(self):
        if self.level < 1:
            raise InvalidInputError(f"mollification level must be >= 1, got {self.level!r}")
        if self.nodes_per_axis < 2:
            raise InvalidInputError("need at least 2 quadrature nodes per axis")
        total = self.nodes_per_axis ** (1 + self.dim)
        if total > MAX_NODES:
            raise ResolutionError(f"{total} quadrature nodes exceed the budget of {MAX_NODES}")
        g, w = np.polynomial.legendre.leggauss(self.nodes_per_axis)
        half = _HALF_WIDTH / self.level
        g = g * half
        w = w * half
        axes = np.meshgrid(*([g] * (1 + self.dim)), indexing="ij")
        pts = np.stack([a.ravel() for a in axes], axis=1)
        wts = np.ones(pts.shape[0])
        for a in np.meshgrid(*([w] * (1 + self.dim)), indexing="ij"):
            wts = wts * a.ravel()
        n = float(self.level)
        dens = _bump(math.sqrt(2.0) * n * pts[:, 0]) * _bump(math.sqrt(2.0) * n * np.linalg.norm(pts[:, 1:], axis=1))
        c = 1.0 / (_time_mass() * _radial_mass(self.dim))
        raw = wts * dens
        keep = raw > 0
        object.__setattr__(self, "constant", c)
        object.__setattr__(self, "offsets", pts[keep])
        object.__setattr__(self, "weights", raw[keep] / raw[keep].sum())

    @property
    def radius(self) -> float:
        return 1.0 / self.level

    def density(self, t, x) -> np.ndarray:
        """Level-``n`` kernel density at ``(t, x)``, ``x`` of shape ``(..., d)``."""
        n = float(self.level)
        t = np.asarray(t, dtype=np.float64)
        r = np.linalg.norm(np.asarray(x, dtype=np.float64), axis=-1)
        return self.constant * n ** (1 + self.dim) * _bump(math.sqrt(2.0) * n * t) * _bump(math.sqrt(2.0) * n * r)

    def mass(self, nodes: int = 64) -> float:
        """Independent high-order quadrature of the kernel's total mass."""
        g, w = np.polynomial.legendre.leggauss(nodes)
        half = _HALF_WIDTH / self.level
        g, w = g * half, w * half
        axes = np.meshgrid(*([g] * (1 + self.dim)), indexing="ij")
        wts = np.ones(axes[0].shape)
        for a in np.meshgrid(*([w] * (1 + self.dim)), indexing="ij"):
            wts = wts * a
        x = np.stack(axes[1:], axis=-1)
        return float(np.sum(wts * self.density(axes[0], x)))


def mollify(
    coeffs: CoefficientSet,
    level: int,
    horizon: float,
    law: EmpiricalLaw | None = None,
    nodes_per_axis: int = 8,
) -> CoefficientSet:
    """Kernel-averaged copy of ``coeffs`` at mollification ``level``.

    Parameters
    ----------
    horizon : float
        End of the time interval outside which the drift is taken as zero and
        ``a`` as the identity.
    law : EmpiricalLaw, optional
        If given, the returned coefficients ignore their law argument and use
        this one throughout.
    """
    if not horizon > 0:
        raise InvalidInputError(f"horizon must be positive, got {horizon!r}")
    kern = Mollifier(coeffs.dim, level, nodes_per_axis)
    offs, wts = kern.offsets, kern.weights
    d = coeffs.dim
    inner_drift = coeffs.drift
    inner_diff = coeffs.diffusion

    def pick(given):
        return law if law is not None else given

    def averaged_drift(t, x, lw):
        lw = pick(lw)
        out = np.zeros_like(x)
        for (tau, *xi), w in zip(offs, wts):
            s = t - tau
            if 0.0 <= s <= horizon:
                out = out + w * inner_drift(s, x - np.asarray(xi), lw)
        return out

    floor = 0.5 / coeffs.ellipticity
    eye = np.eye(d)

    def averaged_diffusion(t, x, lw):
        lw = pick(lw)
        acc = np.zeros((x.shape[0], d, d))
        for (tau, *xi), w in zip(offs, wts):
            s = t - tau
            if 0.0 <= s <= horizon:
                sig = np.broadcast_to(np.asarray(inner_diff(s, x - np.asarray(xi), lw)), (x.shape[0], d, d))
                acc = acc + w * np.einsum("mij,mkj->mik", sig, sig)
            else:
                acc = acc + w * eye
        vals, vecs = np.linalg.eigh(acc)
        vals = np.maximum(vals, floor)
        return np.einsum("mij,mj,mkj->mik", vecs, np.sqrt(vals), vecs)

    seg = coeffs.segment_drift
    if law is not None and seg is not None:
        inner_seg = seg

        def seg(t, batch, lw):
            return inner_seg(t, batch, law)

    return coeffs.with_(
        drift=averaged_drift if inner_drift is not None else None,
        diffusion=averaged_diffusion if inner_diff is not None else None,
        segment_drift=seg,
        name=f"{coeffs.name}@n={level}",
        law_free=coeffs.law_free or law is not None,
    )
