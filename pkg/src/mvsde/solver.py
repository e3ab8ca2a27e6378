"""Euler-Maruyama particle simulation with segment-dependent drift.

Three modes share one stepping kernel:

``frozen-law``   the law argument is read from a supplied :class:`LawFlow`;
``interacting``  it is the empirical law of the current particle cloud;
``picard``       repeated frozen-law sweeps, each driven by the previous
                 sweep's flow, with the coefficients mollified per sweep.

Gaussian increments are keyed by ``(seed, step, particle)`` so every mode and
every sweep sees the same noise. Work is split into fixed-size particle
blocks whose boundaries do not depend on the thread count, which makes the
output bitwise independent of parallelism.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .coeffs import CoefficientSet
from .errors import BlowUpError, InvalidInputError
from .measure import ENDPOINT, SEGMENT, SUPPORT_KINDS, EmpiricalLaw, wasserstein_theta
from .mollify import mollify
from .rng import DOMAIN_INITIAL, DOMAIN_INCREMENTS, standard_normals, uniforms
from .segment import SegmentBatch, TimeGrid, Trajectory

MODES = ("frozen-law", "interacting", "picard")
BLOWUP_THRESHOLD = 1e8
BLOCK = 8192
DEFAULT_SCHEDULE = (4, 16, 64)


def default_schedule(sweeps: int) -> tuple[int, ...]:
    """``4, 16, 64, 64, ...`` truncated or padded to ``sweeps`` entries."""
    base = list(DEFAULT_SCHEDULE)
    while len(base) < sweeps:
        base.append(base[-1])
    return tuple(base[:sweeps])


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("MVSDE_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise InvalidInputError(f"thread count must be >= 1, got {threads!r}")
    return int(threads)


@dataclass(frozen=True)
class SolverConfig:
    """Simulation settings.

    ``mollification`` lists one level per Picard sweep; ``None`` selects
    :func:`default_schedule`. ``record='window'`` keeps only the last segment
    of each particle instead of the whole path.
    """

    grid: TimeGrid
    particles: int = 10_000
    seed: int = 42
    mode: str = "interacting"
    sweeps: int = 3
    mollification: tuple[int, ...] | None = None
    theta: float = 2.0
    law_support: str = ENDPOINT
    threads: int | None = None
    record: str = "full"
    quadrature_nodes: int = 8
    distance_atoms: int = 512

    def __post_init__(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.particles < 1 or (self.mode != "frozen-law" and self.particles < 2):
            problems.append(f"particle count {self.particles!r} too small for mode {self.mode!r}")
        if self.sweeps < 1:
            problems.append(f"sweeps must be >= 1, got {self.sweeps!r}")
        if self.mollification is not None:
            levels = tuple(int(n) for n in self.mollification)
            if len(levels) < self.sweeps:
                problems.append(f"mollification schedule has {len(levels)} levels for {self.sweeps} sweeps")
            if any(n < 1 for n in levels):
                problems.append("mollification levels must be >= 1")
            object.__setattr__(self, "mollification", levels)
        if not self.theta >= 1:
            problems.append(f"theta must be >= 1, got {self.theta!r}")
        if self.law_support not in SUPPORT_KINDS:
            problems.append(f"law support must be one of {SUPPORT_KINDS}, got {self.law_support!r}")
        if self.record not in ("full", "window"):
            problems.append(f"record must be 'full' or 'window', got {self.record!r}")
        if not 0 <= int(self.seed) < 2**64:
            problems.append(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if problems:
            raise InvalidInputError("; ".join(problems))

    @property
    def levels(self) -> tuple[int, ...]:
        if self.mollification is None:
            return default_schedule(self.sweeps)
        return self.mollification[: self.sweeps]

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# initial laws


@dataclass(frozen=True, eq=False)
class InitialLaw:
    """Law of the initial segment.

    ``point``     deterministic segment ``s -> value + slope * s``;
    ``gaussian``  constant segment ``value + std * Z`` with ``Z`` standard normal;
    ``atoms``     resampling from a weighted segment cloud.

    Draws are keyed by ``(seed, particle)``, so two initial laws sampled with
    one seed form a synchronous coupling.
    """

    kind: str = "point"
    value: tuple[float, ...] = (0.0,)
    slope: tuple[float, ...] = (0.0,)
    std: float = 0.0
    atoms: EmpiricalLaw | None = None

    def __post_init__(self):
        if self.kind not in ("point", "gaussian", "atoms"):
            raise InvalidInputError(f"unknown initial law kind {self.kind!r}")
        if self.kind == "atoms":
            if self.atoms is None or self.atoms.kind != SEGMENT:
                raise InvalidInputError("atoms initial law needs a segment EmpiricalLaw")
        object.__setattr__(self, "value", tuple(float(v) for v in np.atleast_1d(self.value)))
        object.__setattr__(self, "slope", tuple(float(v) for v in np.atleast_1d(self.slope)))
        if self.std < 0:
            raise InvalidInputError("std must be >= 0")

    @classmethod
    def point(cls, value, slope=0.0) -> "InitialLaw":
        return cls("point", value, slope)

    @classmethod
    def gaussian(cls, value, std: float) -> "InitialLaw":
        return cls("gaussian", value, 0.0, float(std))

    @classmethod
    def from_law(cls, law: EmpiricalLaw) -> "InitialLaw":
        return cls("atoms", atoms=law)

    def sample(self, grid: TimeGrid, dim: int, ids: np.ndarray, seed: int) -> np.ndarray:
        """Initial segments for particles ``ids``, time-major ``(n_r + 1, M, d)``."""
        m = ids.shape[0]
        if self.kind == "atoms":
            if self.atoms.samples.shape[1:] != (grid.window, dim):
                raise InvalidInputError("initial atoms do not match the grid window and dimension")
            u = uniforms(seed, 0, ids, DOMAIN_INITIAL)
            cdf = np.cumsum(self.atoms.probabilities)
            pick = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), self.atoms.size - 1)
            return np.ascontiguousarray(self.atoms.samples[pick].transpose(1, 0, 2))
        value = np.broadcast_to(np.asarray(self.value), (dim,))
        slope = np.broadcast_to(np.asarray(self.slope), (dim,))
        base = value[None, :] + grid.segment_offsets()[:, None] * slope[None, :]
        out = np.broadcast_to(base[:, None, :], (grid.window, m, dim)).copy()
        if self.kind == "gaussian" and self.std > 0:
            z = standard_normals(seed, 0, ids, dim, DOMAIN_INITIAL)
            out += self.std * z[None, :, :]
        return out


# ---------------------------------------------------------------------------
# ensembles and law flows


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Particle paths stored time-major.

    ``paths[j]`` holds all particles at grid node ``first_node + j`` (node 0
    is time ``-r``). A full record starts at node 0; a window record keeps the
    last ``n_r + 1`` nodes. ``step`` is the index ``k`` of the current time
    ``k h``.
    """

    grid: TimeGrid
    paths: np.ndarray
    step: int
    seed: int
    ids: np.ndarray
    first_node: int = 0

    @property
    def size(self) -> int:
        return self.paths.shape[1]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    @property
    def time(self) -> float:
        return self.step * self.grid.h

    def _row(self, node: int) -> int:
        j = node - self.first_node
        if j < 0 or j > self.step + self.grid.n_r - self.first_node:
            raise InvalidInputError(f"node {node} is not stored in this ensemble")
        return j

    def values_at(self, k: int) -> np.ndarray:
        """Particle values at time ``k h``, shape ``(M, d)``."""
        return self.paths[self._row(k + self.grid.n_r)]

    def segment(self, k: int | None = None) -> SegmentBatch:
        k = self.step if k is None else k
        j = self._row(k)
        self._row(k + self.grid.n_r)
        return SegmentBatch(self.paths[j : j + self.grid.window])

    @property
    def endpoints(self) -> np.ndarray:
        return self.values_at(self.step)

    def law(self, k: int | None = None, kind: str = ENDPOINT, theta: float = 2.0) -> EmpiricalLaw:
        k = self.step if k is None else k
        if kind == ENDPOINT:
            return EmpiricalLaw.trusted(ENDPOINT, self.values_at(k), theta)
        return EmpiricalLaw.trusted(SEGMENT, self.segment(k).values, theta)

    def trajectory(self, i: int) -> Trajectory:
        if self.first_node != 0 or self.step != self.grid.n_T:
            raise InvalidInputError("trajectories need a complete full-record ensemble")
        return Trajectory(self.grid, self.paths[:, i, :])


@dataclass(frozen=True, eq=False)
class LawFlow:
    """One law per grid node ``0, h, ..., T``."""

    grid: TimeGrid
    laws: tuple[EmpiricalLaw, ...]

    def __post_init__(self):
        if len(self.laws) != self.grid.n_T + 1:
            raise InvalidInputError(f"flow has {len(self.laws)} laws for {self.grid.n_T + 1} nodes")
        kinds = {law.kind for law in self.laws}
        if len(kinds) != 1:
            raise InvalidInputError("all laws in a flow must share a support kind")

    def __len__(self) -> int:
        return len(self.laws)

    def __getitem__(self, k: int) -> EmpiricalLaw:
        return self.laws[k]

    @property
    def kind(self) -> str:
        return self.laws[0].kind

    @property
    def theta(self) -> float:
        return self.laws[0].theta

    def means(self) -> np.ndarray:
        """Endpoint means at every node, shape ``(n_T + 1, d)``."""
        return np.stack([law.mean for law in self.laws])

    @classmethod
    def from_paths(cls, grid: TimeGrid, paths: np.ndarray, kind: str, theta: float) -> "LawFlow":
        """Flow of views into a full time-major ``(n_nodes, M, d)`` array."""
        n_r = grid.n_r
        if kind == ENDPOINT:
            laws = tuple(EmpiricalLaw.trusted(ENDPOINT, paths[n_r + k], theta) for k in range(grid.n_T + 1))
        else:
            laws = tuple(
                EmpiricalLaw.trusted(SEGMENT, paths[k : k + grid.window].transpose(1, 0, 2), theta)
                for k in range(grid.n_T + 1)
            )
        return cls(grid, laws)


# ---------------------------------------------------------------------------
# stepping kernel

Observer = Callable[[int, float, SegmentBatch, EmpiricalLaw, "np.ndarray | None"], None]


def _advance(coeffs: CoefficientSet, t: float, seg: SegmentBatch, law: EmpiricalLaw, dw: np.ndarray, h: float) -> np.ndarray:
    x = seg.endpoint
    return x + coeffs.total_drift(t, seg, law) * h + coeffs.apply_diffusion(t, x, law, dw)


def increments(seed: int, k: int, ids: np.ndarray, dim: int, h: float) -> np.ndarray:
    """Brownian increments over step ``k``, shape ``(M, d)``."""
    return math.sqrt(h) * standard_normals(seed, k, ids, dim, DOMAIN_INCREMENTS)


def _blocks(m: int) -> list[slice]:
    return [slice(a, min(a + BLOCK, m)) for a in range(0, m, BLOCK)]


def _check_finite(new: np.ndarray, ids: np.ndarray, t: float) -> None:
    mag = np.abs(new)
    if np.all(mag <= BLOWUP_THRESHOLD):
        return
    bad = ~(mag <= BLOWUP_THRESHOLD)
    i = int(np.argmax(bad.any(axis=1)))
    raise BlowUpError(int(ids[i]), t, float(np.max(mag[i])) if np.all(np.isfinite(mag[i])) else math.inf)


def advance_all(
    coeffs: CoefficientSet,
    t: float,
    seg: SegmentBatch,
    law: EmpiricalLaw,
    dw: np.ndarray,
    h: float,
    pool: ThreadPoolExecutor | None = None,
) -> np.ndarray:
    """One Euler step for every particle, evaluated block by block."""
    m = len(seg)
    out = np.empty((m, seg.dim))
    blocks = _blocks(m)

    def run(sl: slice) -> None:
        out[sl] = _advance(coeffs, t, seg.rows(sl.start, sl.stop), law, dw[sl], h)

    if pool is None or len(blocks) == 1:
        for sl in blocks:
            run(sl)
    else:
        list(pool.map(run, blocks))
    return out


class _Engine:
    """Steps a particle system from ``t = 0`` to ``T``."""

    def __init__(
        self,
        coeffs: CoefficientSet,
        config: SolverConfig,
        initial: np.ndarray,
        ids: np.ndarray,
        flow: LawFlow | None,
        observers: Sequence[Observer] = (),
    ):
        grid = config.grid
        if flow is not None and not flow.grid.same_nodes(grid):
            raise InvalidInputError("law flow lives on a different grid")
        if initial.shape != (grid.window, ids.shape[0], coeffs.dim):
            raise InvalidInputError(f"initial segments have shape {initial.shape}")
        self.coeffs = coeffs
        self.config = config
        self.grid = grid
        self.ids = ids
        self.flow = flow
        self.observers = list(observers)
        self.full = config.record == "full"
        m, d = ids.shape[0], coeffs.dim
        if self.full:
            self.buf = np.full((grid.n_nodes, m, d), np.nan)
            self.buf[: grid.window] = initial
            self.base = 0
        else:
            spare = max(1, min(grid.n_T, 256))
            self.buf = np.empty((grid.window + spare, m, d))
            self.buf[: grid.window] = initial
            self.base = 0  # global node index of buf[0]
        self.k = 0

    def _segment(self) -> SegmentBatch:
        j = self.k - self.base
        return SegmentBatch(self.buf[j : j + self.grid.window])

    def _law(self, seg: SegmentBatch) -> EmpiricalLaw:
        if self.flow is not None:
            return self.flow[self.k]
        theta = self.config.theta
        if self.config.law_support == ENDPOINT:
            return EmpiricalLaw.trusted(ENDPOINT, seg.endpoint, theta)
        return EmpiricalLaw.trusted(SEGMENT, seg.values, theta)

    def run(self, record_flow: bool = False) -> tuple[ParticleEnsemble, list[EmpiricalLaw] | None]:
        grid, h = self.grid, self.grid.h
        laws: list[EmpiricalLaw] | None = [] if record_flow else None
        threads = resolve_threads(self.config.threads)
        pool = ThreadPoolExecutor(threads) if threads > 1 else None
        try:
            while True:
                t = self.k * h
                seg = self._segment()
                law = self._law(seg)
                if laws is not None:
                    laws.append(law if self.full else _detach(law))
                if self.k == grid.n_T:
                    for obs in self.observers:
                        obs(self.k, t, seg, law, None)
                    break
                dw = increments(self.config.seed, self.k, self.ids, self.coeffs.dim, h)
                for obs in self.observers:
                    obs(self.k, t, seg, law, dw)
                new = advance_all(self.coeffs, t, seg, law, dw, h, pool)
                _check_finite(new, self.ids, t + h)
                self._store(new)
                self.k += 1
        finally:
            if pool is not None:
                pool.shutdown()
        j = self.k - self.base
        if self.full:
            paths, first = self.buf, 0
        else:
            paths, first = self.buf[j : j + grid.window].copy(), self.k
        ens = ParticleEnsemble(grid, paths, self.k, int(self.config.seed), self.ids, first)
        return ens, laws

    def _store(self, new: np.ndarray) -> None:
        w = self.grid.window
        pos = self.k + w - self.base
        if not self.full and pos >= self.buf.shape[0]:
            j = self.k + 1 - self.base
            self.buf[: w - 1] = self.buf[j : j + w - 1]
            self.base = self.k + 1
            pos = w - 1
        self.buf[pos] = new


def _detach(law: EmpiricalLaw) -> EmpiricalLaw:
    return EmpiricalLaw.trusted(law.kind, law.samples.copy(), law.theta)


def _ids(config: SolverConfig) -> np.ndarray:
    return np.arange(config.particles, dtype=np.uint64)


def _initial(coeffs: CoefficientSet, config: SolverConfig, initial, ids: np.ndarray) -> np.ndarray:
    # an array is taken as ready-made time-major initial segments
    if isinstance(initial, np.ndarray):
        return initial
    initial = initial or InitialLaw.point(np.zeros(coeffs.dim))
    return initial.sample(config.grid, coeffs.dim, ids, config.seed)


def sample_initial(coeffs: CoefficientSet, config: SolverConfig, initial: InitialLaw | None = None) -> np.ndarray:
    """Initial segments of all particles, time-major ``(n_r + 1, M, d)``."""
    return _initial(coeffs, config, initial, _ids(config))


# ---------------------------------------------------------------------------
# public drivers


def initial_ensemble(coeffs: CoefficientSet, config: SolverConfig, initial: InitialLaw | None = None) -> ParticleEnsemble:
    """A full-record ensemble at ``t = 0`` holding only the initial segments."""
    ids = _ids(config)
    grid = config.grid
    buf = np.full((grid.n_nodes, ids.shape[0], coeffs.dim), np.nan)
    buf[: grid.window] = _initial(coeffs, config, initial, ids)
    return ParticleEnsemble(grid, buf, 0, int(config.seed), ids, 0)


def euler_step(ens: ParticleEnsemble, coeffs: CoefficientSet, law: EmpiricalLaw, t: float) -> ParticleEnsemble:
    """Advance a full-record ensemble by one step from time ``t``.

    Particle ``i`` moves by ``(B + b) h + sigma dW`` with the increment keyed by
    ``(seed, step, particle id)``; the input ensemble is left unchanged.
    """
    grid = ens.grid
    k = grid.step_index(t)
    if k != ens.step:
        raise InvalidInputError(f"ensemble is at t={ens.time!r}, not t={t!r}")
    if k >= grid.n_T:
        raise InvalidInputError("cannot step past the horizon")
    if ens.first_node != 0:
        raise InvalidInputError("euler_step needs a full-record ensemble")
    seg = ens.segment(k)
    dw = increments(ens.seed, k, ens.ids, ens.dim, grid.h)
    new = advance_all(coeffs, t, seg, law, dw, grid.h)
    _check_finite(new, ens.ids, t + grid.h)
    paths = ens.paths.copy()
    paths[grid.n_r + k + 1] = new
    return ParticleEnsemble(grid, paths, k + 1, ens.seed, ens.ids, 0)


def run_frozen_law(
    coeffs: CoefficientSet,
    flow: LawFlow,
    config: SolverConfig,
    initial: InitialLaw | np.ndarray | None = None,
    observers: Sequence[Observer] = (),
) -> ParticleEnsemble:
    """Simulate with the law argument read from ``flow`` at each node."""
    ids = _ids(config)
    eng = _Engine(coeffs, config, _initial(coeffs, config, initial, ids), ids, flow, observers)
    ens, _ = eng.run()
    return ens


def run_interacting(
    coeffs: CoefficientSet,
    config: SolverConfig,
    initial: InitialLaw | np.ndarray | None = None,
    observers: Sequence[Observer] = (),
    record_flow: bool = True,
) -> tuple[ParticleEnsemble, LawFlow | None]:
    """Mean-field particle system: the law argument is the empirical law of all particles."""
    if config.particles < 2:
        raise InvalidInputError("interacting mode needs at least 2 particles")
    ids = _ids(config)
    eng = _Engine(coeffs, config, _initial(coeffs, config, initial, ids), ids, None, observers)
    ens, laws = eng.run(record_flow)
    return ens, (LawFlow(config.grid, tuple(laws)) if laws is not None else None)


def law_flow_distance(a: LawFlow, b: LawFlow, theta: float | None = None, atoms: int | None = None) -> float:
    """Largest node-wise ``W_theta`` between two flows."""
    return float(np.max(node_distances(a, b, theta, atoms)))


def node_distances(a: LawFlow, b: LawFlow, theta: float | None = None, atoms: int | None = None) -> np.ndarray:
    """``W_theta(a_t, b_t)`` at every node.

    ``atoms`` keeps only the first atoms of each cloud, which brings large
    clouds outside the one-dimensional fast path under the exact-solver cap.
    """
    if not a.grid.same_nodes(b.grid) or len(a) != len(b) or a.kind != b.kind:
        raise InvalidInputError("flows differ in grid or support kind")
    theta = a.theta if theta is None else theta
    out = np.empty(len(a))
    for k, (mu, nu) in enumerate(zip(a.laws, b.laws)):
        if atoms is not None and not (mu.kind == ENDPOINT and mu.dim == 1):
            mu = EmpiricalLaw.trusted(mu.kind, mu.samples[:atoms], mu.theta)
            nu = EmpiricalLaw.trusted(nu.kind, nu.samples[:atoms], nu.theta)
        out[k] = 0.0 if mu.samples is nu.samples else wasserstein_theta(mu, nu, theta)
    return out


@dataclass(frozen=True, eq=False)
class PicardResult:
    """Flows of sweeps ``0..P-1``, the final ensemble and sweep-to-sweep distances.

    ``distances[k]`` holds node-wise distances between flows ``k`` and ``k + 1``.
    """

    flows: tuple[LawFlow, ...]
    ensemble: ParticleEnsemble
    distances: np.ndarray
    levels: tuple[int, ...]
    notes: tuple[str, ...] = field(default=())

    @property
    def sup_distances(self) -> np.ndarray:
        return self.distances.max(axis=1)


def _frozen_start_flow(coeffs: CoefficientSet, config: SolverConfig, initial: InitialLaw | None, ids: np.ndarray) -> LawFlow:
    grid = config.grid
    init = _initial(coeffs, config, initial, ids)
    paths = np.empty((grid.n_nodes, ids.shape[0], coeffs.dim))
    paths[: grid.window] = init
    paths[grid.window :] = init[-1]
    return LawFlow.from_paths(grid, paths, config.law_support, config.theta)


def run_picard(
    coeffs: CoefficientSet,
    config: SolverConfig,
    initial: InitialLaw | EmpiricalLaw | None = None,
) -> PicardResult:
    """Lagged-law iteration.

    Sweep 0 simulates the frozen-law equation against the initial segment
    law held constant after time 0. Sweep ``k >= 1`` uses the flow of sweep
    ``k - 1``. Sweep ``k`` mollifies the coefficients at level ``levels[k]``.
    A sweep distance that fails to decrease produces a warning, not an error.
    """
    if isinstance(initial, EmpiricalLaw):
        initial = InitialLaw.from_law(initial)
    cfg = config.with_(record="full")
    ids = _ids(cfg)
    frozen = _frozen_start_flow(coeffs, cfg, initial, ids)
    flows: list[LawFlow] = []
    ens = None
    for level in cfg.levels:
        smooth = mollify(coeffs, level, cfg.grid.T, nodes_per_axis=cfg.quadrature_nodes)
        ens = run_frozen_law(smooth, flows[-1] if flows else frozen, cfg, initial)
        flows.append(LawFlow.from_paths(cfg.grid, ens.paths, cfg.law_support, cfg.theta))
    pairs = [node_distances(a, b, cfg.theta, cfg.distance_atoms) for a, b in zip(flows[:-1], flows[1:])]
    dist = np.stack(pairs) if pairs else np.zeros((0, cfg.grid.n_nodes))
    notes = []
    sups = dist.max(axis=1)
    for k in range(1, len(sups)):
        if sups[k] > sups[k - 1]:
            notes.append(f"sweep distance rose from {sups[k - 1]:.6g} to {sups[k]:.6g} at sweep {k + 1}")
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return PicardResult(tuple(flows), ens, dist, cfg.levels, tuple(notes))
