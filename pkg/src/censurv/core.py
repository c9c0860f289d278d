"""Time grid, observation records and the dataset container with CSV I/O."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_T_MAX = 156


class DatasetFormatError(ValueError):
    """Raised when a dataset file or record violates the data contract."""


class CensoringStatus(enum.IntEnum):
    """Observation status, encoded as in the dataset CSV ``status`` column."""

    UNCENSORED = 1
    RIGHT = 0
    LEFT = 2
    INTERVAL = 3


@dataclass(frozen=True)
class TimeGrid:
    """The discrete month grid ``{1, ..., t_max}``."""

    t_max: int = DEFAULT_T_MAX

    def __post_init__(self):
        if int(self.t_max) != self.t_max or self.t_max < 2:
            raise ValueError(f"t_max must be an integer >= 2, got {self.t_max!r}")

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.t_max + 1)

    def __len__(self) -> int:
        return self.t_max


@dataclass(frozen=True)
class Observation:
    covariates: tuple[float, ...]
    status: CensoringStatus
    time: int
    time2: int | None = None


def check_times(status: int, time: int, time2: int | None, t_max: int) -> None:
    """Raise ``ValueError`` if ``(status, time, time2)`` is inadmissible on the grid."""
    if not 1 <= time <= t_max:
        raise ValueError(f"time {time} outside grid 1..{t_max}")
    if status == CensoringStatus.INTERVAL:
        if time2 is None:
            raise ValueError("interval-censored observation needs time2")
        if not (time2 <= t_max and time2 - time >= 2):
            raise ValueError(
                f"interval bounds ({time}, {time2}) must satisfy time2 - time >= 2 "
                f"and time2 <= {t_max}"
            )
    elif time2 is not None:
        raise ValueError("time2 is only allowed for interval-censored observations")
    if status == CensoringStatus.RIGHT and time > t_max - 1:
        raise ValueError(f"right-censoring time {time} leaves no event time on the grid")
    if status == CensoringStatus.LEFT and time < 2:
        raise ValueError(f"left-censoring time {time} leaves no event time on the grid")


class Dataset:
    """Immutable column store of observations sharing one grid and covariate dimension.

    Parameters
    ----------
    X : array-like, shape (n, d)
        Covariates.
    status : array-like of int, shape (n,)
        :class:`CensoringStatus` codes.
    time : array-like of int, shape (n,)
        Event time (uncensored), censoring time (right/left) or lower bound (interval).
    time2 : array-like of int, shape (n,), optional
        Upper interval bound; 0 where absent.
    grid : TimeGrid
    """

    __slots__ = ("X", "status", "time", "time2", "grid")

    def __init__(self, X, status, time, time2=None, grid: TimeGrid | None = None,
                 *, validate: bool = True):
        grid = grid or TimeGrid()
        X = np.asarray(X, dtype=float)
        status = np.asarray(status, dtype=np.int64).reshape(-1)
        time = np.asarray(time, dtype=np.int64).reshape(-1)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(len(status), 0)
        if time2 is None:
            time2 = np.zeros_like(time)
        time2 = np.asarray(time2, dtype=np.int64).reshape(-1)
        if validate:
            if X.ndim != 2 or X.shape[0] != status.shape[0]:
                raise ValueError("X must have shape (n, d) matching status")
            if not (status.shape == time.shape == time2.shape):
                raise ValueError("status, time and time2 must have equal length")
            if not np.all(np.isfinite(X)):
                raise ValueError("covariates must be finite")
            for i in range(status.shape[0]):
                s = int(status[i])
                if s not in _STATUS_CODES:
                    raise ValueError(f"row {i}: unknown status {s}")
                t2 = int(time2[i]) if s == CensoringStatus.INTERVAL else None
                try:
                    check_times(s, int(time[i]), t2, grid.t_max)
                except ValueError as exc:
                    raise ValueError(f"row {i}: {exc}") from None
        for arr in (X, status, time, time2):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "time2", time2)
        object.__setattr__(self, "grid", grid)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    def __len__(self) -> int:
        return self.status.shape[0]

    def __repr__(self) -> str:
        counts = {s.name.lower(): int(np.sum(self.status == s)) for s in CensoringStatus}
        return f"Dataset(n={len(self)}, d={self.d}, t_max={self.grid.t_max}, {counts})"

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def t_max(self) -> int:
        return self.grid.t_max

    @property
    def uncensored(self) -> np.ndarray:
        """Boolean mask of uncensored rows."""
        return self.status == CensoringStatus.UNCENSORED

    @classmethod
    def from_observations(cls, observations: Sequence[Observation],
                          grid: TimeGrid | None = None, d: int | None = None) -> "Dataset":
        grid = grid or TimeGrid()
        if observations:
            dims = {len(o.covariates) for o in observations}
            if len(dims) != 1:
                raise ValueError(f"inconsistent covariate dimensions {sorted(dims)}")
            d = dims.pop()
        X = np.array([o.covariates for o in observations], dtype=float).reshape(
            len(observations), d or 0)
        return cls(
            X,
            [int(o.status) for o in observations],
            [o.time for o in observations],
            [o.time2 or 0 for o in observations],
            grid,
        )

    @property
    def observations(self) -> list[Observation]:
        out = []
        for i in range(len(self)):
            s = CensoringStatus(int(self.status[i]))
            out.append(Observation(
                tuple(float(v) for v in self.X[i]), s, int(self.time[i]),
                int(self.time2[i]) if s == CensoringStatus.INTERVAL else None,
            ))
        return out

    def subset(self, idx) -> "Dataset":
        """Rows ``idx`` (array of indices or boolean mask), in the given order."""
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.status[idx], self.time[idx], self.time2[idx],
                       self.grid, validate=False)

    @staticmethod
    def concat(parts: Iterable["Dataset"]) -> "Dataset":
        parts = list(parts)
        return Dataset(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.status for p in parts]),
            np.concatenate([p.time for p in parts]),
            np.concatenate([p.time2 for p in parts]),
            parts[0].grid, validate=False,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.grid == other.grid
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.status, other.status)
                and np.array_equal(self.time, other.time)
                and np.array_equal(self.time2, other.time2))

    __hash__ = None


_STATUS_CODES = {int(s) for s in CensoringStatus}


def partition_indices(ds: Dataset) -> tuple[set[int], set[int], set[int], set[int]]:
    """Index sets of (uncensored, right, left, interval) observations."""
    def members(code):
        return {int(i) for i in np.flatnonzero(ds.status == code)}

    return (members(CensoringStatus.UNCENSORED), members(CensoringStatus.RIGHT),
            members(CensoringStatus.LEFT), members(CensoringStatus.INTERVAL))


# --- CSV I/O ---------------------------------------------------------------

def _format_float(v: float) -> str:
    return repr(float(v))


def _parse_int(field: str, name: str, lineno: int) -> int:
    try:
        return int(field)
    except ValueError:
        raise DatasetFormatError(f"row {lineno}: {name} {field!r} is not an integer") from None


def parse_dataset(text: str, grid: TimeGrid | None = None) -> Dataset:
    """Parse dataset CSV text. Row numbers in errors count the header as row 1."""
    grid = grid or TimeGrid()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError("empty file: missing header") from None
    if header[:3] != ["status", "time", "time2"] or any(
            h != f"x{k + 1}" for k, h in enumerate(header[3:])):
        raise DatasetFormatError(f"bad header {header!r}")
    d = len(header) - 3
    rows_x, rows_s, rows_t, rows_t2 = [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            raise DatasetFormatError(f"row {lineno}: empty line")
        if len(row) != d + 3:
            raise DatasetFormatError(
                f"row {lineno}: expected {d} covariates, got {len(row) - 3}")
        status = _parse_int(row[0], "status", lineno)
        if status not in _STATUS_CODES:
            raise DatasetFormatError(f"row {lineno}: unknown status {status}")
        time = _parse_int(row[1], "time", lineno)
        time2 = _parse_int(row[2], "time2", lineno) if row[2] != "" else None
        try:
            x = [float(v) for v in row[3:]]
        except ValueError:
            raise DatasetFormatError(f"row {lineno}: non-numeric covariate") from None
        if not all(math.isfinite(v) for v in x):
            raise DatasetFormatError(f"row {lineno}: non-finite covariate")
        try:
            check_times(status, time, time2, grid.t_max)
        except ValueError as exc:
            raise DatasetFormatError(f"row {lineno}: {exc}") from None
        rows_x.append(x)
        rows_s.append(status)
        rows_t.append(time)
        rows_t2.append(time2 or 0)
    X = np.array(rows_x, dtype=float).reshape(len(rows_s), d)
    return Dataset(X, rows_s, rows_t, rows_t2, grid, validate=False)


def format_dataset(ds: Dataset) -> str:
    lines = [",".join(["status", "time", "time2"] + [f"x{k + 1}" for k in range(ds.d)])]
    for i in range(len(ds)):
        s = int(ds.status[i])
        t2 = str(int(ds.time2[i])) if s == CensoringStatus.INTERVAL else ""
        fields = [str(s), str(int(ds.time[i])), t2] + [_format_float(v) for v in ds.X[i]]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def read_dataset(path, grid: TimeGrid | None = None) -> Dataset:
    """Read and validate a dataset CSV file."""
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_dataset(fh.read(), grid)


def write_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_dataset(ds))
    return path
