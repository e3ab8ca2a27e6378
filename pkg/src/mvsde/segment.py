"""Discretized segment paths on ``[-r, 0]`` and the segment-extraction operator.

Paths live on a uniform grid of step ``h`` that divides the delay ``r``
exactly, so the delayed value ``X(t - r)`` is always a stored node. A segment
is represented by its ``n_r + 1`` node values; norms and distances are taken
over nodes (the piecewise-linear interpolant attains its sup at a node).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

_GRID_TOL = 1e-9


def _exact_ratio(num: float, den: float, what: str) -> int:
    ratio = num / den
    n = int(round(ratio))
    if abs(n - ratio) > _GRID_TOL * max(1.0, abs(ratio)):
        raise InvalidInputError(f"{what}: {num!r} is not an integer multiple of h={den!r}")
    return n


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[-r, T]`` with step ``h``."""

    h: float
    r: float
    T: float
    n_r: int = field(init=False)
    n_T: int = field(init=False)

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise InvalidInputError(f"step h must be positive, got {self.h!r}")
        if not (np.isfinite(self.r) and self.r >= 0):
            raise InvalidInputError(f"delay r must be nonnegative, got {self.r!r}")
        if not (np.isfinite(self.T) and self.T >= 0):
            raise InvalidInputError(f"horizon T must be nonnegative, got {self.T!r}")
        object.__setattr__(self, "n_r", _exact_ratio(self.r, self.h, "delay r"))
        object.__setattr__(self, "n_T", _exact_ratio(self.T, self.h, "horizon T"))

    @property
    def n_nodes(self) -> int:
        return self.n_r + self.n_T + 1

    @property
    def window(self) -> int:
        """Number of nodes in one segment."""
        return self.n_r + 1

    def times(self) -> np.ndarray:
        """All node times from ``-r`` to ``T``."""
        return (np.arange(self.n_nodes) - self.n_r) * self.h

    def segment_offsets(self) -> np.ndarray:
        """Node offsets ``s`` in ``[-r, 0]``."""
        return (np.arange(self.window) - self.n_r) * self.h

    def step_index(self, t: float) -> int:
        """Index ``k`` with ``t = k h``, for ``t`` a grid node in ``[0, T]``."""
        k = t / self.h
        n = int(round(k))
        if abs(n - k) > _GRID_TOL * max(1.0, abs(k)) or n < 0 or n > self.n_T:
            raise InvalidInputError(f"time {t!r} is not a grid node in [0, {self.T!r}]")
        return n

    def with_horizon(self, T: float) -> "TimeGrid":
        return TimeGrid(self.h, self.r, T)

    def same_nodes(self, other: "TimeGrid") -> bool:
        return self.n_r == other.n_r and self.n_T == other.n_T and abs(self.h - other.h) <= _GRID_TOL * self.h


def _as_nodes(values, n: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidInputError(f"expected a non-empty (nodes, d) array, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise InvalidInputError(f"expected {n} nodes, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("path values must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SegmentPath:
    """One segment ``s -> f(t + s)``, ``s`` in ``[-r, 0]``, anchored at ``t``."""

    grid: TimeGrid
    t: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_nodes(self.values, self.grid.window))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __call__(self, s) -> np.ndarray:
        """Piecewise-linear evaluation at offsets ``s`` in ``[-r, 0]``."""
        offs = self.grid.segment_offsets()
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        return np.stack([np.interp(s, offs, self.values[:, j]) for j in range(self.dim)], axis=-1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A full path on ``[-r, T]``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_nodes(self.values, self.grid.n_nodes))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def initial_segment(self) -> SegmentPath:
        return extract_segment(self, 0.0)


def uniform_norm(path: SegmentPath | np.ndarray) -> float:
    """Sup over nodes of the Euclidean norm."""
    values = path.values if isinstance(path, SegmentPath) else np.asarray(path, dtype=np.float64)
    if values.size == 0:
        raise InvalidInputError("uniform norm of an empty path")
    if values.ndim == 1:
        return float(np.max(np.abs(values)))
    return float(np.max(np.sqrt(np.sum(values * values, axis=-1))))


def extract_segment(traj: Trajectory, t: float) -> SegmentPath:
    """The window of ``n_r + 1`` values ending at ``t``."""
    k = traj.grid.step_index(t)
    return SegmentPath(traj.grid, k * traj.grid.h, traj.values[k : k + traj.grid.window])


def segment_sup_distance(a: SegmentPath, b: SegmentPath) -> float:
    if not a.grid.same_nodes(b.grid) or a.values.shape != b.values.shape:
        raise InvalidInputError("segments live on different grids")
    return uniform_norm(a.values - b.values)


class SegmentBatch:
    """``M`` segments sharing one grid, stored time-major as ``(n_r + 1, M, d)``.

    An optional deterministic ``offset`` of shape ``(n_r + 1, d)`` is added
    lazily, which lets shifted paths ``X + gamma`` be evaluated without
    materializing a copy of the window.
    """

    __slots__ = ("_nodes", "_offset")

    def __init__(self, nodes: np.ndarray, offset: np.ndarray | None = None):
        self._nodes = nodes
        self._offset = offset

    def __len__(self) -> int:
        return self._nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self._nodes.shape[0]

    @property
    def dim(self) -> int:
        return self._nodes.shape[2]

    def node(self, j: int) -> np.ndarray:
        """Values at node ``j`` (0 is ``s = -r``, -1 is ``s = 0``), shape ``(M, d)``."""
        if self._offset is None:
            return self._nodes[j]
        return self._nodes[j] + self._offset[j]

    @property
    def endpoint(self) -> np.ndarray:
        return self.node(-1)

    @property
    def delayed(self) -> np.ndarray:
        return self.node(0)

    def time_major(self) -> np.ndarray:
        if self._offset is None:
            return self._nodes
        return self._nodes + self._offset[:, None, :]

    @property
    def values(self) -> np.ndarray:
        """Particle-major view ``(M, n_r + 1, d)``."""
        return self.time_major().transpose(1, 0, 2)

    def node_mean(self) -> np.ndarray:
        """Average over the window nodes, shape ``(M, d)``."""
        out = self._nodes.mean(axis=0)
        if self._offset is not None:
            out = out + self._offset.mean(axis=0)
        return out

    def sup_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.time_major() ** 2, axis=2)).max(axis=0)

    def rows(self, start: int, stop: int) -> "SegmentBatch":
        return SegmentBatch(self._nodes[:, start:stop], self._offset)

    def shifted(self, offset: np.ndarray) -> "SegmentBatch":
        offset = np.asarray(offset, dtype=np.float64).reshape(self.n_nodes, -1)
        if self._offset is not None:
            offset = offset + self._offset
        return SegmentBatch(self._nodes, offset)

    def path(self, i: int, grid: TimeGrid, t: float) -> SegmentPath:
        return SegmentPath(grid, t, self.values[i])


def write_trajectory_csv(path: str | Path, traj: Trajectory) -> None:
    """CSV with header ``t,x_1,...,x_d``, one row per node, 12 significant digits."""
    times = traj.grid.times()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{j + 1}" for j in range(traj.dim)])
        for t, row in zip(times, traj.values):
            w.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in row])


def read_trajectory_csv(path: str | Path, r: float) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise InvalidInputError(f"{path}: not a trajectory CSV")
    data = np.array([[float(v) for v in row] for row in body])
    times = data[:, 0]
    h = float(times[-1] - times[0]) / (len(times) - 1)
    grid = TimeGrid(h, r, float(times[-1]))
    return Trajectory(grid, data[:, 1:])
