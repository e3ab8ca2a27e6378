"""Monte Carlo checks of occupation, Harnack-type and gradient estimates.

Each verifier returns a report with both sides of the inequality as
:class:`~mvsde.stats.StatEstimate` values, the margin ``rhs - lhs``, a verdict
and, where the inequality involves an unspecified constant, the smallest
constant the data would accept. A report is ``violated`` only when the margin
is below minus three combined half-widths.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import optimize

from .coeffs import CoefficientSet, pair_in_K
from .errors import (
    DegenerateInputError,
    InvalidHorizonError,
    InvalidInputError,
    InvalidTestFunctionError,
    UnsupportedModelError,
)
from .functionals import SegmentFunctional, SpaceTimeFunction
from .girsanov import Shift, beta_bound, coupled_shift_run, implied_constant
from .rng import DOMAIN_MIXTURE, uniforms
from .segment import SegmentBatch
from .solver import InitialLaw, LawFlow, SolverConfig, run_interacting, sample_initial
from .stats import StatEstimate, batch_statistic, combined_ci, estimate_mean

HOLDS = "holds"
WITHIN = "holds-within-CI"
VIOLATED = "violated"
MAX_EXPONENT = 700.0


def verdict(margin: float, ci: float) -> str:
    if margin >= 0:
        return HOLDS
    if margin >= -3.0 * ci:
        return WITHIN
    return VIOLATED


def digest(payload: Any) -> str:
    """sha256 of the canonical JSON form of ``payload``."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return {k: getattr(obj, k) for k in obj.__dataclass_fields__}
    return repr(obj)


@dataclass(frozen=True)
class HarnackReport:
    inequality: str
    lhs: StatEstimate
    rhs: StatEstimate
    implied_constant: float | None
    digest: str
    extra: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.rhs.value - self.lhs.value

    @property
    def combined_ci(self) -> float:
        return combined_ci(self.lhs.ci, self.rhs.ci)

    @property
    def verdict(self) -> str:
        return verdict(self.margin, self.combined_ci)

    def row(self) -> dict:
        return {
            "inequality": self.inequality,
            "lhs": self.lhs.value,
            "lhs_ci": self.lhs.ci,
            "rhs": self.rhs.value,
            "rhs_ci": self.rhs.ci,
            "margin": self.margin,
            "implied_constant": self.implied_constant,
            "verdict": self.verdict,
        }

    def to_dict(self) -> dict:
        out = self.row()
        out["digest"] = self.digest
        out["extra"] = self.extra
        return out


# ---------------------------------------------------------------------------
# helpers


def _horizon_config(config: SolverConfig, t: float) -> SolverConfig:
    grid = config.grid.with_horizon(t)
    return config.with_(grid=grid, record="window", mode="interacting")


def _require_after_delay(config: SolverConfig, t: float) -> None:
    if not t > config.grid.r:
        raise InvalidHorizonError(f"time t={t!r} must exceed the delay r={config.grid.r!r}")


def _terminal(coeffs: CoefficientSet, initial, cfg: SolverConfig) -> np.ndarray:
    ens, _ = run_interacting(coeffs, cfg, initial, record_flow=False)
    return ens.segment().values


def _initial_gap(coeffs, cfg, mu0, nu0) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Coupled initial segments and the squared endpoint and sup gaps."""
    x0 = sample_initial(coeffs, cfg, mu0)
    y0 = sample_initial(coeffs, cfg, nu0)
    diff = x0 - y0
    sup_sq = np.max(np.sum(diff * diff, axis=2), axis=0)
    end_sq = np.sum(diff[-1] * diff[-1], axis=1)
    return x0, y0, end_sq, sup_sq


def _check_range(f: SegmentFunctional, values: np.ndarray, lower: float, what: str) -> None:
    if f.bounds[0] < lower or np.any(values < lower):
        raise InvalidTestFunctionError(f"test functional must be >= {lower:g} for {what}; declared bounds {f.bounds}")


def _describe_initial(law) -> Any:
    if isinstance(law, InitialLaw):
        out = {"kind": law.kind, "value": list(law.value), "slope": list(law.slope), "std": law.std}
        if law.atoms is not None:
            out["atoms"] = hashlib.sha256(np.ascontiguousarray(law.atoms.samples).tobytes()).hexdigest()
        return out
    return repr(law)


def _inputs(config: SolverConfig, **kw) -> str:
    payload = {
        "grid": [config.grid.h, config.grid.r, config.grid.T],
        "particles": config.particles,
        "seed": int(config.seed),
        "theta": config.theta,
        "law_support": config.law_support,
    }
    payload.update({k: (_describe_initial(v) if isinstance(v, InitialLaw) else v) for k, v in kw.items()})
    return digest(payload)


# ---------------------------------------------------------------------------
# semigroup


def estimate_Ptf(coeffs: CoefficientSet, initial: InitialLaw, t: float, f: SegmentFunctional, config: SolverConfig) -> StatEstimate:
    """Monte Carlo ``E f(X_t)`` for the particle system started from ``initial``."""
    cfg = _horizon_config(config, t)
    return estimate_mean(f(_terminal(coeffs, initial, cfg)))


# ---------------------------------------------------------------------------
# log-Harnack, gradient and power-Harnack


def verify_log_harnack(
    coeffs: CoefficientSet,
    mu0: InitialLaw,
    nu0: InitialLaw,
    t: float,
    f: SegmentFunctional,
    config: SolverConfig,
    constant: float = 1.0,
) -> HarnackReport:
    """``E log f(Y_t) <= log E f(X_t) + C/(t-r) E||X_0 - Y_0||^2``.

    ``X`` starts from ``mu0`` and ``Y`` from ``nu0``; both use one seed so
    their initial segments and increments are synchronously coupled.
    """
    if not coeffs.diffusion_law_free:
        raise UnsupportedModelError(f"{coeffs.name}: log-Harnack check needs a law-free diffusion")
    _require_after_delay(config, t)
    cfg = _horizon_config(config, t)
    _, _, _, sup_sq = _initial_gap(coeffs, cfg, mu0, nu0)
    fx = f(_terminal(coeffs, mu0, cfg))
    fy = f(_terminal(coeffs, nu0, cfg))
    _check_range(f, fx, 1.0, "the log-Harnack inequality")
    _check_range(f, fy, 1.0, "the log-Harnack inequality")
    lag = t - cfg.grid.r
    lhs = estimate_mean(np.log(fy))
    rhs = batch_statistic(lambda m, g: math.log(m) + constant / lag * g, fx, sup_sq)
    log_pf = math.log(float(fx.mean()))
    gap = float(sup_sq.mean())
    implied = (lhs.value - log_pf) * lag / gap if gap > 0 else None
    extra = {"initial_gap_sq": gap, "log_Ptf_mu": log_pf, "constant": constant, "t": t}
    return HarnackReport("log-harnack", lhs, rhs, implied, _inputs(cfg, f=f, mu0=mu0, nu0=nu0, t=t, constant=constant), extra)


def _mixture(x0: np.ndarray, y0: np.ndarray, weight: float, seed: int, ids: np.ndarray) -> np.ndarray:
    pick = uniforms(seed, 0, ids, DOMAIN_MIXTURE) < weight
    return np.where(pick[None, :, None], y0, x0)


def verify_gradient_estimate(
    coeffs: CoefficientSet,
    mu0: InitialLaw,
    nu0: InitialLaw,
    t: float,
    f: SegmentFunctional,
    config: SolverConfig,
    constant: float = 1.0,
    ball_samples: int = 8,
) -> HarnackReport:
    """Squared difference quotient of ``P_t f`` against the variance sweep.

    The supremum over the Wasserstein ball is replaced by the largest variance
    among the mixtures ``(1 - l) mu0 + l nu0`` for ``l = j / J``, ``j < J``;
    those all lie strictly inside the ball, so the check is one-sided.
    """
    if ball_samples < 8:
        raise InvalidInputError(f"need at least 8 sampled laws, got {ball_samples}")
    _require_after_delay(config, t)
    cfg = _horizon_config(config, t)
    x0, y0, _, sup_sq = _initial_gap(coeffs, cfg, mu0, nu0)
    w2 = float(sup_sq.mean())
    if math.sqrt(w2) < 1e-9:
        raise DegenerateInputError("initial laws coincide under the coupling; the quotient is undefined")
    fx = f(_terminal(coeffs, mu0, cfg))
    fy = f(_terminal(coeffs, nu0, cfg))
    lhs = batch_statistic(lambda a, b, g: (a - b) ** 2 / g, fx, fy, sup_sq)
    ids = np.arange(cfg.particles, dtype=np.uint64)
    variances = []
    for j in range(ball_samples):
        init = _mixture(x0, y0, j / ball_samples, int(cfg.seed), ids)
        fv = f(_terminal(coeffs, init, cfg))
        variances.append(batch_statistic(lambda m2, m: m2 - m * m, fv * fv, fv))
    top = max(variances, key=lambda e: e.value)
    lag = t - cfg.grid.r
    rhs = StatEstimate(2.0 * constant / lag * top.value, 2.0 * constant / lag * top.ci, top.samples, top.batches, top.low_sample)
    implied = lhs.value * lag / (2.0 * top.value) if top.value > 0 else (0.0 if lhs.value == 0 else math.inf)
    extra = {"w2_sq": w2, "variances": [v.value for v in variances], "constant": constant, "t": t}
    return HarnackReport("gradient", lhs, rhs, implied, _inputs(cfg, f=f, mu0=mu0, nu0=nu0, t=t, constant=constant, J=ball_samples), extra)


def verify_power_harnack(
    coeffs: CoefficientSet,
    mu0: InitialLaw,
    nu0: InitialLaw,
    t: float,
    f: SegmentFunctional,
    p: float,
    config: SolverConfig,
    constant: float = 1.0,
    p_floor: float = 2.0,
) -> HarnackReport:
    """``(E f(Y_t))^p <= E f(X_t)^p * (E exp(H (1 + |gap(0)|^2/(t-r) + ||gap||^2)))^p``.

    ``H`` is the trial ``constant``; the report's implied constant is the
    smallest ``H >= 0`` that balances the two sides.
    """
    if not p > p_floor:
        raise InvalidInputError(f"power p={p!r} must exceed the configured floor {p_floor!r}")
    _require_after_delay(config, t)
    cfg = _horizon_config(config, t)
    _, _, end_sq, sup_sq = _initial_gap(coeffs, cfg, mu0, nu0)
    fx = f(_terminal(coeffs, mu0, cfg))
    fy = f(_terminal(coeffs, nu0, cfg))
    _check_range(f, fx, 0.0, "the power-Harnack inequality")
    _check_range(f, fy, 0.0, "the power-Harnack inequality")
    lag = t - cfg.grid.r
    expo_base = 1.0 + end_sq / lag + sup_sq
    lhs = batch_statistic(lambda m: m**p, fy)
    top = float(constant * np.max(expo_base))
    overflow = top > MAX_EXPONENT
    if overflow:
        rhs = StatEstimate(math.inf, 0.0, cfg.particles)
    else:
        factor = np.exp(constant * expo_base)
        rhs = batch_statistic(lambda a, e: a * e**p, fx**p, factor)
    fp_mean = float(np.mean(fx**p))

    def balance(h: float) -> float:
        return math.log(fp_mean) + p * math.log(float(np.mean(np.exp(h * expo_base)))) - math.log(lhs.value)

    if lhs.value <= 0 or balance(0.0) >= 0:
        implied = 0.0
    elif fp_mean <= 0:
        implied = math.inf
    else:
        hi = 1.0
        while balance(hi) < 0 and hi * np.max(expo_base) < MAX_EXPONENT:
            hi *= 2.0
        implied = float(optimize.brentq(balance, 0.0, hi, xtol=1e-14)) if balance(hi) >= 0 else math.inf
    extra = {"p": p, "constant": constant, "overflow": overflow, "max_exponent": top, "t": t}
    return HarnackReport("power-harnack", lhs, rhs, implied, _inputs(cfg, f=f, mu0=mu0, nu0=nu0, t=t, p=p, constant=constant), extra)


# ---------------------------------------------------------------------------
# shift Harnack


def _pilot_flow(coeffs: CoefficientSet, initial, cfg: SolverConfig, particles: int) -> LawFlow:
    pilot = cfg.with_(particles=max(2, min(cfg.particles, particles)), record="full", mode="interacting")
    if coeffs.law_free:
        # the law argument is ignored; a single-atom flow keeps the run cheap
        pilot = pilot.with_(particles=2)
    _, flow = run_interacting(coeffs, pilot, initial, record_flow=True)
    return flow


@dataclass(frozen=True)
class ShiftReports:
    log_form: HarnackReport
    power_form: HarnackReport


def verify_shift_harnack(
    coeffs: CoefficientSet,
    initial: InitialLaw,
    t: float,
    shift: Shift,
    f: SegmentFunctional,
    p: float,
    config: SolverConfig,
    constant: float = 2.0,
    flow_particles: int = 10_000,
    flow: LawFlow | None = None,
) -> ShiftReports:
    """Log and power shift-Harnack inequalities from one coupled run.

    The law flow is taken from a pilot interacting run (or supplied), the
    coupled system is simulated against it, and

    * log form: ``E log f(X_t) <= log E f(X_t + shift) + E[R log R]``;
    * power form: ``(E f(X_t))^p <= E f^p(X_t + shift) * exp(p/(2(p-1)) max int |u|^2)``
      with ``u = sigma^{-1} Phi``.

    The cost-formula route with trial ``constant`` is reported alongside,
    together with the smallest constant whose path-wise envelope covers the
    observed ``int |Phi|^2``.
    """
    if not coeffs.diffusion_state_free:
        raise UnsupportedModelError(f"{coeffs.name}: shift coupling needs a state-independent diffusion")
    if not p > 1:
        raise InvalidInputError(f"power p={p!r} must exceed 1")
    _require_after_delay(config, t)
    cfg = config.with_(grid=config.grid.with_horizon(t), mode="frozen-law", record="window")
    if flow is None:
        flow = _pilot_flow(coeffs, initial, cfg, flow_particles)
    run = coupled_shift_run(coeffs, cfg, flow, shift, initial)
    fx = f(run.final)
    fs = f(run.shifted)
    _check_range(f, fx, 1e-300, "the log form")
    _check_range(f, fs, 1e-300, "the log form")
    weights = run.weights
    rlogr = run.entropy_samples()
    r, T = cfg.grid.r, t
    inv = coeffs.state_free_inverse(0.0, flow[0])
    inv_norm = 1.0 if inv is None else float(np.linalg.norm(inv, 2))
    beta = beta_bound(shift, T, r, coeffs.modulus, constant, inv_norm)
    tag = _inputs(cfg, f=f, initial=initial, t=t, shift=shift, p=p, constant=constant)

    entropy = batch_statistic(lambda a, b: a - 0.5 * b, rlogr, weights * run.drift_energy)
    direct = estimate_mean(rlogr)
    via_drift = estimate_mean(0.5 * weights * run.drift_energy)
    closed = 0.5 * run.coupling.energy() * beta.inv_sigma_sq if coeffs.drift is None and coeffs.segment_drift is None else None
    path_c = implied_constant(float(np.max(run.phi_energy)), shift, T, r, coeffs.modulus)

    lhs = estimate_mean(np.log(fx))
    rhs = batch_statistic(lambda a, b: math.log(a) + b, fs, rlogr)
    log_pf_shift = math.log(float(fs.mean()))

    def beta_gap(c: float) -> float:
        return log_pf_shift + beta_bound(shift, T, r, coeffs.modulus, c, inv_norm).total - lhs.value

    if beta_gap(0.0) >= 0:
        beta_c = 0.0
    elif beta_gap(1e12) < 0:
        beta_c = math.inf
    else:
        beta_c = float(optimize.brentq(beta_gap, 0.0, 1e12, xtol=1e-14, rtol=1e-12))
    common = {
        "t": t,
        "constant": constant,
        "beta": beta.total,
        "beta_terms": {"ramp": beta.ramp, "energy": beta.energy, "modulus": beta.modulus, "size": beta.size},
        "entropy_direct": direct.value,
        "entropy_direct_ci": direct.ci,
        "entropy_via_drift": via_drift.value,
        "entropy_via_drift_ci": via_drift.ci,
        "entropy_gap": entropy.value,
        "entropy_gap_ci": entropy.ci,
        "entropy_closed_form": closed,
        "path_envelope_constant": path_c,
        "mean_weight": float(weights.mean()),
    }
    log_extra = dict(common)
    log_extra.update(
        {
            "rhs_beta": log_pf_shift + beta.total,
            "rhs_min": log_pf_shift + min(beta.total, direct.value),
            "beta_implied_constant": beta_c,
        }
    )
    log_report = HarnackReport("shift-harnack-log", lhs, rhs, beta_c, tag, log_extra)

    top = float(np.max(run.drift_energy))
    expo = p / (2.0 * (p - 1.0))
    plhs = batch_statistic(lambda m: m**p, fx)
    fsp = fs**p
    overflow = expo * top > MAX_EXPONENT
    if overflow:
        prhs = StatEstimate(math.inf, 0.0, fsp.size)
    else:
        scale = math.exp(expo * top)
        est = estimate_mean(fsp)
        prhs = StatEstimate(est.value * scale, est.ci * scale, est.samples, est.batches, est.low_sample)
    beta_rhs = float(np.mean(fsp)) * math.exp(min(expo * beta.total, MAX_EXPONENT))
    log_ratio = math.log(plhs.value) - math.log(float(np.mean(fsp))) if plhs.value > 0 else -math.inf

    def pbeta_gap(c: float) -> float:
        return expo * beta_bound(shift, T, r, coeffs.modulus, c, inv_norm).total - log_ratio

    if pbeta_gap(0.0) >= 0:
        pbeta_c = 0.0
    elif pbeta_gap(1e12) < 0:
        pbeta_c = math.inf
    else:
        pbeta_c = float(optimize.brentq(pbeta_gap, 0.0, 1e12, xtol=1e-14, rtol=1e-12))
    power_extra = dict(common)
    power_extra.update({"p": p, "max_drift_energy": top, "overflow": overflow, "rhs_beta": beta_rhs, "beta_implied_constant": pbeta_c})
    power_report = HarnackReport("shift-harnack-power", plhs, prhs, pbeta_c, tag, power_extra)
    return ShiftReports(log_report, power_report)


# ---------------------------------------------------------------------------
# occupation estimates


@dataclass(frozen=True)
class KrylovReport:
    function: dict
    pairs: tuple[tuple[float, float], ...]
    estimates: tuple[StatEstimate, ...]
    exponent: float
    constant: float
    normalized_constant: float
    r_squared: float
    norm: float
    monotone: bool
    verdict: str
    digest: str

    def row(self) -> dict:
        return {
            "inequality": "krylov",
            "lhs": max(e.value for e in self.estimates),
            "lhs_ci": max(e.ci for e in self.estimates),
            "rhs": self.constant * max(t - s for s, t in self.pairs) ** self.exponent,
            "rhs_ci": 0.0,
            "margin": min(
                self.constant * (t - s) ** self.exponent - e.value for (s, t), e in zip(self.pairs, self.estimates)
            ),
            "implied_constant": self.normalized_constant,
            "verdict": HOLDS if self.verdict == "holds" else (VIOLATED if self.verdict == "violated" else self.verdict),
        }

    def to_dict(self) -> dict:
        out = self.row()
        out.update(
            {
                "function": self.function,
                "pairs": [list(p) for p in self.pairs],
                "estimates": [e.as_dict() for e in self.estimates],
                "exponent": self.exponent,
                "constant": self.constant,
                "r_squared": self.r_squared,
                "norm": self.norm,
                "monotone": self.monotone,
                "digest": self.digest,
            }
        )
        return out


class _Occupation:
    """Observer accumulating trapezoid time integrals of ``f(t, X(t))``."""

    def __init__(self, f: SpaceTimeFunction, nodes: Sequence[int], h: float, particles: int):
        self.f = f
        self.h = h
        self.nodes = set(nodes)
        self.sum = np.zeros(particles)
        self.first: np.ndarray | None = None
        self.snapshots: dict[int, np.ndarray] = {}

    def __call__(self, k: int, t: float, seg: SegmentBatch, law, dw) -> None:
        v = self.f(t, seg.endpoint)
        if self.first is None:
            self.first = v
        self.sum += v
        if k in self.nodes:
            # trapezoid integral over [0, t_k]: h * (sum_{j<=k} f_j - (f_0 + f_k)/2)
            self.snapshots[k] = self.h * (self.sum - 0.5 * (self.first + v))

    def integral(self, i: int, j: int) -> np.ndarray:
        return self.snapshots[j] - self.snapshots[i]


def _occupation_run(coeffs, f, initial, config, nodes) -> _Occupation:
    cfg = config.with_(record="window", mode="interacting")
    obs = _Occupation(f, nodes, cfg.grid.h, cfg.particles)
    run_interacting(coeffs, cfg, initial, observers=[obs], record_flow=False)
    return obs


def default_pairs(T: float, h: float) -> tuple[tuple[float, float], ...]:
    lengths = [T / 2**k for k in range(5, -1, -1)]
    return tuple((0.0, round(L / h) * h) for L in lengths if round(L / h) >= 1)


def krylov_check(
    coeffs: CoefficientSet,
    f: SpaceTimeFunction,
    p: float,
    q: float,
    config: SolverConfig,
    pairs: Sequence[tuple[float, float]] | None = None,
    initial: InitialLaw | None = None,
) -> KrylovReport:
    """Occupation integrals ``E int_s^t f(r, X(r)) dr`` and their power-law fit.

    The fit is ``estimate ~ C (t - s)**delta`` by least squares in log-log
    coordinates; ``C`` is the raw prefactor and ``C / ||f||`` is reported as
    the normalized constant. The check passes when ``delta > 0``, the fit has
    ``R^2 >= 0.9`` and every estimate lies below the fit plus three
    half-widths.
    """
    member, _ = pair_in_K(p, q, coeffs.dim)
    if not member:
        raise InvalidInputError(f"(p, q) = ({p}, {q}) is outside the admissible class in dimension {coeffs.dim}")
    grid = config.grid
    pairs = tuple(pairs) if pairs is not None else default_pairs(grid.T, grid.h)
    idx = [(grid.step_index(s), grid.step_index(t)) for s, t in pairs]
    if any(j <= i for i, j in idx):
        raise InvalidInputError("each pair needs s < t")
    nodes = sorted({n for pair in idx for n in pair})
    obs = _occupation_run(coeffs, f, initial, config, nodes)
    ests = tuple(estimate_mean(obs.integral(i, j)) for i, j in idx)
    norm = f.norm(p, q, grid.T, coeffs.dim)
    tag = _inputs(config, f=f.to_dict(), p=p, q=q, pairs=[list(x) for x in pairs])
    lengths = np.array([t - s for s, t in pairs])
    vals = np.array([e.value for e in ests])
    if np.all(vals <= 0):
        return KrylovReport(f.to_dict(), tuple(pairs), ests, math.nan, math.nan, math.nan, math.nan, norm, True, "degenerate", tag)
    pos = vals > 0
    x, y = np.log(lengths[pos]), np.log(vals[pos])
    if pos.sum() >= 2 and np.ptp(x) > 0:
        slope, icept = np.polyfit(x, y, 1)
        resid = y - (slope * x + icept)
        ss = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    else:
        slope, icept, r2 = math.nan, math.nan, math.nan
    const = math.exp(icept) if np.isfinite(icept) else math.nan
    order = np.argsort(lengths, kind="stable")
    monotone = all(
        ests[order[a]].value <= ests[order[a + 1]].value + 3.0 * combined_ci(ests[order[a]].ci, ests[order[a + 1]].ci)
        for a in range(len(order) - 1)
    )
    within = all(e.value <= const * L**slope * (1 + 1e-12) + 3.0 * e.ci for e, L in zip(ests, lengths)) if np.isfinite(const) else False
    ok = bool(np.isfinite(slope) and slope > 0 and r2 >= 0.9 and within)
    return KrylovReport(
        f.to_dict(),
        tuple(pairs),
        ests,
        float(slope),
        const,
        const / norm if norm > 0 else math.inf,
        float(r2),
        norm,
        monotone,
        "holds" if ok else "violated",
        tag,
    )


@dataclass(frozen=True)
class KhasminskiiReport:
    function: dict
    lambdas: tuple[float, ...]
    estimates: tuple[StatEstimate, ...]
    log_slope_ok: bool
    overflow: bool
    max_exponent: float
    moments: dict
    moment_constant: float
    exponent: float
    verdict: str
    digest: str

    horizon: float = 1.0
    sup: float = 0.0

    def row(self) -> dict:
        top = self.estimates[-1]
        bound = math.exp(min(self.lambdas[-1] * self.sup * self.horizon, MAX_EXPONENT))
        return {
            "inequality": "khasminskii",
            "lhs": top.value,
            "lhs_ci": top.ci,
            "rhs": bound,
            "rhs_ci": 0.0,
            "margin": bound - top.value,
            "implied_constant": self.moment_constant,
            "verdict": HOLDS if self.verdict == "holds" else VIOLATED,
        }

    def to_dict(self) -> dict:
        out = self.row()
        out.update(
            {
                "function": self.function,
                "lambdas": list(self.lambdas),
                "estimates": [e.as_dict() for e in self.estimates],
                "log_slope_ok": self.log_slope_ok,
                "overflow": self.overflow,
                "max_exponent": self.max_exponent,
                "moments": self.moments,
                "moment_constant": self.moment_constant,
                "exponent": self.exponent,
                "digest": self.digest,
            }
        )
        return out


def khasminskii_check(
    coeffs: CoefficientSet,
    f: SpaceTimeFunction,
    lambdas: Sequence[float],
    config: SolverConfig,
    initial: InitialLaw | None = None,
    pairs: Sequence[tuple[float, float]] | None = None,
) -> KhasminskiiReport:
    """Exponential moments ``E exp(lambda int_0^T f(r, X(r)) dr)``.

    Passes when no estimate overflows and ``log E exp(...) <= lambda sup f T``.
    Factorial moments ``E (int_s^t f)^n`` for ``n = 1, 2, 3`` are fitted to
    ``c n! (t - s)**(delta n)`` with ``delta`` from the first moments, and the
    smallest admissible ``c`` is reported.
    """
    lambdas = tuple(float(v) for v in lambdas)
    if not lambdas or any(v < 0 for v in lambdas):
        raise InvalidInputError("need a non-empty list of nonnegative lambdas")
    grid = config.grid
    pairs = tuple(pairs) if pairs is not None else default_pairs(grid.T, grid.h)
    idx = [(grid.step_index(s), grid.step_index(t)) for s, t in pairs]
    nodes = sorted({n for pair in idx for n in pair} | {0, grid.n_T})
    obs = _occupation_run(coeffs, f, initial, config, nodes)
    total = obs.integral(0, grid.n_T)
    ests = []
    overflow = False
    top = 0.0
    for lam in lambdas:
        expo = lam * total
        top = max(top, float(np.max(expo)))
        if np.max(expo) > MAX_EXPONENT:
            overflow = True
            ests.append(StatEstimate(math.inf, math.inf, total.size))
        else:
            ests.append(estimate_mean(np.exp(expo)))
    envelope_ok = all(
        math.log(e.value) <= lam * f.sup * grid.T * (1 + 1e-12) + 1e-12 for e, lam in zip(ests, lambdas) if np.isfinite(e.value) and e.value > 0
    )
    moments: dict[str, list[float]] = {}
    lengths = np.array([t - s for s, t in pairs])
    first = np.array([float(obs.integral(i, j).mean()) for i, j in idx])
    pos = first > 0
    if pos.sum() >= 2:
        delta = float(np.polyfit(np.log(lengths[pos]), np.log(first[pos]), 1)[0])
    else:
        delta = math.nan
    c_fit = 0.0
    for n in (1, 2, 3):
        vals = [float(np.mean(obs.integral(i, j) ** n)) for i, j in idx]
        moments[str(n)] = vals
        if np.isfinite(delta):
            for v, L in zip(vals, lengths):
                c_fit = max(c_fit, v / (math.factorial(n) * L ** (delta * n)))
    ok = not overflow and envelope_ok
    return KhasminskiiReport(
        f.to_dict(),
        lambdas,
        tuple(ests),
        envelope_ok,
        overflow,
        top,
        moments,
        float(c_fit) if np.isfinite(delta) else math.nan,
        delta,
        "holds" if ok else "violated",
        _inputs(config, f=f.to_dict(), lambdas=list(lambdas)),
        grid.T,
        f.sup,
    )
