"""Built-in coefficient models.

``brownian``        no drift, identity diffusion.
``meanfield-ou``    drift ``a (mean(law) - x)``.
``delay-linear``    segment drift ``c * xi(-r)``.
``dini-drift``      drift ``phi(min(|x|, 1)) e_1 + kappa * mean(law)`` with a
                    power modulus, plus an optional bounded delay term
                    ``delay * tanh(xi(-r))``.
``singular-drift``  one-dimensional ``min(|x|**-beta, cap) sign(x)`` on ``|x| <= 1``.

All models use the identity diffusion, which is both state- and law-free.
"""

from __future__ import annotations

import math
from typing import Any, Mapping

import numpy as np

from .coeffs import CoefficientSet, DiniModulus
from .errors import InvalidInputError

MODEL_NAMES = ("brownian", "meanfield-ou", "delay-linear", "dini-drift", "singular-drift")

_DEFAULTS: dict[str, dict[str, Any]] = {
    "brownian": {},
    "meanfield-ou": {"a": 1.0},
    "delay-linear": {"c": 1.0},
    "dini-drift": {"alpha": 0.25, "kappa": 0.5, "delay": 0.0, "mean_bound": 10.0},
    "singular-drift": {"beta": 0.25, "cap": 100.0, "p": None, "q": 4.0},
}

_K_IDENTITY = 1.0 + 1e-9


def model_params(name: str) -> dict[str, Any]:
    """Default parameters of a built-in model."""
    if name not in _DEFAULTS:
        raise InvalidInputError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    return dict(_DEFAULTS[name])


def model_zoo(name: str, dim: int = 1, params: Mapping[str, Any] | None = None) -> CoefficientSet:
    """Return the named built-in model.

    Parameters
    ----------
    name : one of :data:`MODEL_NAMES`
    dim : state dimension (``singular-drift`` requires 1)
    params : overrides of the defaults in :func:`model_params`
    """
    defaults = model_params(name)
    params = dict(params or {})
    unknown = sorted(set(params) - set(defaults))
    if unknown:
        raise InvalidInputError(f"model {name!r} has no parameter(s) {', '.join(unknown)}")
    defaults.update(params)
    p = defaults
    if dim < 1:
        raise InvalidInputError("dimension must be >= 1")

    if name == "brownian":
        return CoefficientSet(dim=dim, law_free=True, name=name, params=p)

    if name == "meanfield-ou":
        a = float(p["a"])

        def drift(t, x, law):
            return a * (law.mean - x)

        return CoefficientSet(
            dim=dim, drift=drift, law_lipschitz=abs(a), drift_bounded=False, name=name, params=p
        )

    if name == "delay-linear":
        c = float(p["c"])

        def seg_drift(t, seg, law):
            return c * seg.delayed

        return CoefficientSet(
            dim=dim,
            segment_drift=seg_drift,
            segment_lipschitz=abs(c),
            segment_drift_bound=math.inf,
            law_free=True,
            drift_bounded=False,
            name=name,
            params=p,
        )

    if name == "dini-drift":
        modulus = DiniModulus.power(float(p["alpha"]))
        kappa = float(p["kappa"])
        delay = float(p["delay"])
        bound = float(p["mean_bound"])

        def drift(t, x, law):
            radius = np.minimum(np.sqrt(np.sum(x * x, axis=1)), 1.0)
            out = np.broadcast_to(kappa * law.mean, x.shape).copy()
            out[:, 0] += modulus(radius)
            return out

        seg_drift = None
        if delay != 0.0:

            def seg_drift(t, seg, law):
                return delay * np.tanh(seg.delayed)

        return CoefficientSet(
            dim=dim,
            drift=drift,
            segment_drift=seg_drift,
            ellipticity=max(_K_IDENTITY, (1.0 + abs(kappa) * bound) ** 2),
            segment_lipschitz=abs(delay),
            law_lipschitz=abs(kappa),
            segment_drift_bound=abs(delay) * math.sqrt(dim),
            modulus=modulus,
            name=name,
            params=p,
        )

    if name == "singular-drift":
        if dim != 1:
            raise InvalidInputError("singular-drift is one-dimensional")
        beta = float(p["beta"])
        cap = float(p["cap"])
        if not 0 < beta < 0.5:
            raise InvalidInputError(f"singular-drift needs 0 < beta < 1/2, got {beta!r}")
        # space exponent with 2*beta*p = 0.9 keeps |x|**(-2 beta p) integrable
        pexp = float(p["p"]) if p["p"] is not None else 0.9 / (2.0 * beta)
        qexp = float(p["q"])
        if not 2.0 * beta * pexp < 1.0:
            raise InvalidInputError(f"p={pexp!r} makes the envelope non-integrable for beta={beta!r}")
        p["p"] = pexp

        def drift(t, x, law):
            ax = np.abs(x)
            with np.errstate(divide="ignore"):
                mag = np.minimum(np.where(ax > 0, ax, 1.0) ** (-beta), cap)
            return np.where(ax <= 1.0, mag * np.sign(x), 0.0)

        def envelope(t, x):
            ax = np.abs(np.asarray(x)).reshape(np.shape(x)[0], -1)[:, 0]
            with np.errstate(divide="ignore"):
                return np.where(ax <= 1.0, np.where(ax > 0, ax, 0.0) ** (-2.0 * beta), 0.0)

        space = (2.0 / (1.0 - 2.0 * beta * pexp)) ** (1.0 / pexp)

        def envelope_norm(T):
            return T ** (1.0 / qexp) * space

        return CoefficientSet(
            dim=1,
            drift=drift,
            envelope=envelope,
            envelope_norm=envelope_norm,
            integrability=(pexp, qexp),
            law_free=True,
            name=name,
            params=p,
        )

    raise InvalidInputError(f"unknown model {name!r}")
