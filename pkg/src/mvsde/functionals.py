"""Bounded test functionals on segments and space-time integrands.

A segment functional has the form ``offset + scale * g(<w, v> + bias)`` where
``v`` is the segment's endpoint (or its node average when ``window`` is set)
and ``g`` is one of

``clip``    identity clamped to ``[-limit, limit]``;
``square``  square of the clamped identity;
``tanh``    hyperbolic tangent;
``tanh2``   squared hyperbolic tangent;
``exp``     exponential of the clamped identity.

Every ``g`` is bounded, so each functional carries certified lower and upper
bounds that the verifiers check against their preconditions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Mapping

import numpy as np

from .errors import InvalidInputError

SHAPES = ("clip", "square", "tanh", "tanh2", "exp")
_RANGES = {
    "clip": lambda c: (-c, c),
    "square": lambda c: (0.0, c * c),
    "tanh": lambda c: (-1.0, 1.0),
    "tanh2": lambda c: (0.0, 1.0),
    "exp": lambda c: (math.exp(-c), math.exp(c)),
}


@dataclass(frozen=True)
class SegmentFunctional:
    shape: str = "tanh"
    weight: tuple[float, ...] = (1.0,)
    bias: float = 0.0
    scale: float = 1.0
    offset: float = 0.0
    limit: float = 1e6
    window: bool = False

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise InvalidInputError(f"unknown functional shape {self.shape!r}; choose from {SHAPES}")
        object.__setattr__(self, "weight", tuple(float(v) for v in np.atleast_1d(self.weight)))
        if not self.limit > 0:
            raise InvalidInputError("limit must be positive")
        if self.shape == "exp" and self.limit > 700:
            object.__setattr__(self, "limit", 50.0)

    @classmethod
    def constant(cls, value: float) -> "SegmentFunctional":
        return cls("tanh", scale=0.0, offset=float(value))

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> "SegmentFunctional":
        known = {"shape", "weight", "bias", "scale", "offset", "limit", "window"}
        unknown = sorted(set(spec) - known)
        if unknown:
            raise InvalidInputError(f"unknown functional key(s): {', '.join(unknown)}")
        return cls(**dict(spec))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["weight"] = list(self.weight)
        return out

    @property
    def bounds(self) -> tuple[float, float]:
        lo, hi = _RANGES[self.shape](self.limit)
        a, b = self.offset + self.scale * lo, self.offset + self.scale * hi
        return (min(a, b), max(a, b))

    @property
    def is_constant(self) -> bool:
        return self.scale == 0.0

    def _argument(self, segments: np.ndarray) -> np.ndarray:
        seg = np.asarray(segments, dtype=np.float64)
        if seg.ndim == 2:
            seg = seg[:, None, :]
        v = seg.mean(axis=1) if self.window else seg[:, -1, :]
        w = np.broadcast_to(np.asarray(self.weight), (v.shape[1],))
        acc = v[:, 0] * w[0]
        for j in range(1, v.shape[1]):
            acc = acc + v[:, j] * w[j]
        return acc + self.bias

    def __call__(self, segments: np.ndarray) -> np.ndarray:
        """Values on particle-major segments ``(M, n_r + 1, d)`` (or endpoints ``(M, d)``)."""
        z = self._argument(segments)
        if self.scale == 0.0:
            return np.full(z.shape, float(self.offset))
        if self.shape == "clip":
            g = np.clip(z, -self.limit, self.limit)
        elif self.shape == "square":
            g = np.clip(z, -self.limit, self.limit) ** 2
        elif self.shape == "tanh":
            g = np.tanh(z)
        elif self.shape == "tanh2":
            g = np.tanh(z) ** 2
        else:
            g = np.exp(np.clip(z, -self.limit, self.limit))
        return self.offset + self.scale * g


@dataclass(frozen=True)
class SpaceTimeFunction:
    """Nonnegative integrand ``f(t, x)`` for occupation estimates.

    ``constant``   ``value`` everywhere; its mixed norm is taken over the
                   declared box ``[-box, box]^d``.
    ``indicator``  ``value`` on ``|x_j| <= radius`` for all ``j``.
    """

    kind: str = "constant"
    value: float = 1.0
    radius: float = 1.0
    box: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "indicator"):
            raise InvalidInputError(f"unknown integrand kind {self.kind!r}")
        if self.value < 0:
            raise InvalidInputError("integrand must be nonnegative")
        if not (self.radius > 0 and self.box > 0):
            raise InvalidInputError("radius and box must be positive")

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> "SpaceTimeFunction":
        known = {"kind", "value", "radius", "box"}
        unknown = sorted(set(spec) - known)
        if unknown:
            raise InvalidInputError(f"unknown integrand key(s): {', '.join(unknown)}")
        return cls(**dict(spec))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def sup(self) -> float:
        return float(self.value)

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "constant":
            return np.full(x.shape[0], float(self.value))
        inside = np.all(np.abs(x) <= self.radius, axis=1)
        return np.where(inside, float(self.value), 0.0)

    def norm(self, p: float, q: float, T: float, dim: int) -> float:
        """Mixed norm over ``[0, T]`` and the support (or the declared box)."""
        half = self.box if self.kind == "constant" else self.radius
        volume = (2.0 * half) ** dim
        return float(self.value * volume ** (1.0 / p) * T ** (1.0 / q))
