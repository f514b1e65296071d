"""Uniformly sampled path containers and their CSV form.

``Path`` lives on the forward grid ``{0, dt, ..., T}``; ``PastPath`` lives on
``{-T_past, ..., -dt, 0}`` and is stored in ascending time order, so
``values[-1]`` is the value at time 0.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

GRID_RTOL = 1e-9


def _as_2d(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"path values must be (n+1,) or (n+1, d), got shape {arr.shape}")
    return arr


def steps_on_grid(t: float, dt: float) -> int:
    """Number of grid steps in ``t``; raises if ``t`` is not a multiple of ``dt``."""
    k = int(round(t / dt))
    if abs(k * dt - t) > GRID_RTOL * max(abs(t), dt):
        raise ValueError(f"time {t!r} is not on the grid with step {dt!r}")
    return k


@dataclass(frozen=True, eq=False)
class Path:
    dt: float
    values: np.ndarray
    tail_bound: float = 0.0

    def __post_init__(self):
        vals = _as_2d(self.values)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if not self.dt > 0:
            raise ValueError("grid step must be positive")
        if vals.shape[0] < 2:
            raise ValueError("a Path needs at least two grid nodes")

    @property
    def n(self) -> int:
        return self.values.shape[0] - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return self.n * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n + 1)

    def at(self, t: float) -> np.ndarray:
        return self.values[steps_on_grid(t, self.dt)]

    def truncate(self, T: float) -> "Path":
        k = steps_on_grid(T, self.dt)
        if k > self.n:
            raise ValueError(f"cannot truncate a path of length {self.T} to {T}")
        return Path(self.dt, self.values[: k + 1], self.tail_bound)

    def to_csv(self) -> str:
        return _to_csv(self.times, self.values)


@dataclass(frozen=True, eq=False)
class PastPath:
    dt: float
    values: np.ndarray
    tail_bound: float = 0.0

    def __post_init__(self):
        vals = _as_2d(self.values)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if not self.dt > 0:
            raise ValueError("grid step must be positive")
        if vals.shape[0] < 1:
            raise ValueError("empty path")

    @classmethod
    def zeros(cls, n: int, dt: float, d: int = 1) -> "PastPath":
        return cls(dt, np.zeros((n + 1, d)))

    @classmethod
    def from_function(cls, fn, T_past: float, dt: float) -> "PastPath":
        """Sample ``fn`` (vectorized over times, returning (m,) or (m, d)) on the past grid."""
        n = steps_on_grid(T_past, dt)
        return cls(dt, fn(dt * (np.arange(n + 1) - n)))

    @property
    def n(self) -> int:
        return self.values.shape[0] - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def T_past(self) -> float:
        return self.n * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * (np.arange(self.n + 1) - self.n)

    @property
    def anchored(self) -> bool:
        return bool(np.all(self.values[-1] == 0.0))

    def at(self, s: float) -> np.ndarray:
        """Value at past time ``s <= 0``."""
        k = steps_on_grid(-s, self.dt)
        if k > self.n:
            raise ValueError(f"time {s} is beyond the horizon {self.T_past}")
        return self.values[self.n - k]

    def reversed_values(self) -> np.ndarray:
        """Values ordered by lag: row ``m`` is the value at time ``-m*dt``."""
        return self.values[::-1]

    def to_csv(self) -> str:
        return _to_csv(self.times, self.values)


def _to_csv(times: np.ndarray, values: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(values.shape[1])])
    for t, row in zip(times, values):
        w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
    return buf.getvalue()


def read_path_csv(text: str, past: bool = False):
    rows = list(csv.reader(io.StringIO(text)))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    t, vals = data[:, 0], data[:, 1:]
    dt = float(t[1] - t[0])
    return PastPath(dt, vals) if past else Path(dt, vals)


def sidecar(meta: dict) -> str:
    return json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
