"""Data model for multivariate time series: CSV ingestion, min-max scaling,
chronological splitting and construction of the lagged supervised matrix.

Time indices are 1-based throughout the data model, so the value of a column
at time ``l`` is ``values[l - 1]``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)


class AccessLog:
    """Append-only record of column reads, used by leakage tests.

    Entries are ``(phase, column, start, end)`` with 1-based inclusive row
    ranges expressed in the coordinates of the dataset the log was attached
    to.  Row slices share the parent's log, so reads through a slice are
    recorded with the original row numbers.
    """

    def __init__(self) -> None:
        self.entries: list[tuple[str, str, int, int]] = []
        self.phase = ""

    def set_phase(self, phase: str) -> None:
        self.phase = phase

    def record(self, column: str, start: int, end: int) -> None:
        self.entries.append((self.phase, column, start, end))

    def max_row_read(self) -> int:
        return max((e[3] for e in self.entries), default=0)


def _as_locked_array(values: Iterable[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError(f"column {name!r} must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0]) + 1
        raise DataError(f"column {name!r} has a non-finite value at row {bad}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """A named, equal-length column of finite reals."""

    name: str
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _as_locked_array(self.values, self.name))

    def __len__(self) -> int:
        return int(self.values.size)


class Dataset:
    """A set of equal-length named columns with one designated KPI column.

    Immutable after construction.  ``values(name)`` is the canonical numeric
    accessor; it feeds the optional :class:`AccessLog` used by leakage tests.
    """

    def __init__(
        self,
        series: Sequence[TimeSeries],
        kpi: str,
        access_log: AccessLog | None = None,
        _row_offset: int = 0,
    ) -> None:
        if not series:
            raise DataError("dataset needs at least one column")
        names = [s.name for s in series]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names in dataset")
        lengths = {len(s) for s in series}
        if len(lengths) != 1:
            raise DataError(f"columns have unequal lengths: {sorted(lengths)}")
        if kpi not in names:
            raise DataError(f"KPI column {kpi!r} not found (have: {', '.join(names)})")
        self._series = tuple(series)
        self._by_name = {s.name: s for s in series}
        self.kpi = kpi
        self.access_log = access_log
        self._row_offset = _row_offset

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self._series)

    @property
    def aux_names(self) -> tuple[str, ...]:
        return tuple(n for n in self.names if n != self.kpi)

    @property
    def kpi_index(self) -> int:
        return self.names.index(self.kpi)

    @property
    def length(self) -> int:
        return len(self._series[0])

    @property
    def n_aux(self) -> int:
        return len(self._series) - 1

    def column(self, name: str) -> TimeSeries:
        try:
            return self._by_name[name]
        except KeyError:
            raise DataError(f"no column named {name!r}") from None

    def values(self, name: str) -> np.ndarray:
        col = self.column(name)
        if self.access_log is not None:
            self.access_log.record(
                name, self._row_offset + 1, self._row_offset + self.length
            )
        return col.values

    def rows(self, start: int, end: int) -> "Dataset":
        """Contiguous row slice, 1-based inclusive on both ends."""
        if not (1 <= start <= end <= self.length):
            raise DataError(
                f"row range [{start}, {end}] out of bounds for length {self.length}"
            )
        sliced = [
            TimeSeries(s.name, s.values[start - 1 : end]) for s in self._series
        ]
        return Dataset(
            sliced,
            self.kpi,
            access_log=self.access_log,
            _row_offset=self._row_offset + start - 1,
        )

    def with_access_log(self, log: AccessLog) -> "Dataset":
        return Dataset(self._series, self.kpi, access_log=log, _row_offset=self._row_offset)


def load_csv(path: str | Path, kpi_name: str) -> Dataset:
    """Load a header-plus-rows CSV of reals into a :class:`Dataset`.

    Every cell must parse as a finite real; missing values are a hard error.
    Row numbers in error messages are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if any(not h for h in header):
            raise DataError(f"{path}: blank column name in header")
        columns: list[list[float]] = [[] for _ in header]
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}"
                )
            for col_no, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell at row {row_no}, "
                        f"column {header[col_no]!r}: {cell!r}"
                    ) from None
                if not np.isfinite(value):
                    raise DataError(
                        f"{path}: non-finite value at row {row_no}, "
                        f"column {header[col_no]!r}"
                    )
                columns[col_no].append(value)
    if not columns[0]:
        raise DataError(f"{path}: no data rows")
    if kpi_name not in header:
        raise DataError(
            f"{path}: KPI column {kpi_name!r} not present (have: {', '.join(header)})"
        )
    series = [TimeSeries(name, vals) for name, vals in zip(header, columns)]
    return Dataset(series, kpi_name)


@dataclass(frozen=True)
class NormalizationParams:
    """Per-variable (min, max) recorded at fit time; constant columns flagged."""

    minima: dict[str, float]
    maxima: dict[str, float]
    constant: frozenset[str]

    def transform_values(self, name: str, values: np.ndarray) -> np.ndarray:
        if name not in self.minima:
            raise DataError(f"no normalization parameters for column {name!r}")
        if name in self.constant:
            return np.zeros_like(values)
        lo, hi = self.minima[name], self.maxima[name]
        return (values - lo) / (hi - lo)

    def inverse_values(self, name: str, values: np.ndarray) -> np.ndarray:
        if name not in self.minima:
            raise DataError(f"no normalization parameters for column {name!r}")
        if name in self.constant:
            return np.full_like(values, self.minima[name])
        lo, hi = self.minima[name], self.maxima[name]
        return values * (hi - lo) + lo

    def transform(self, ds: Dataset) -> Dataset:
        series = [
            TimeSeries(name, self.transform_values(name, ds.column(name).values))
            for name in ds.names
        ]
        return Dataset(
            series, ds.kpi, access_log=ds.access_log, _row_offset=ds._row_offset
        )

    def to_dict(self) -> dict:
        return {
            "minima": dict(self.minima),
            "maxima": dict(self.maxima),
            "constant": sorted(self.constant),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "NormalizationParams":
        return cls(
            minima=dict(payload["minima"]),
            maxima=dict(payload["maxima"]),
            constant=frozenset(payload["constant"]),
        )

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "NormalizationParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_minmax(ds: Dataset) -> NormalizationParams:
    minima: dict[str, float] = {}
    maxima: dict[str, float] = {}
    constant: set[str] = set()
    for name in ds.names:
        vals = ds.column(name).values
        lo, hi = float(vals.min()), float(vals.max())
        minima[name] = lo
        maxima[name] = hi
        if hi == lo:
            constant.add(name)
            logger.warning("column %r is constant; normalized to 0", name)
    return NormalizationParams(minima, maxima, frozenset(constant))


def normalize_minmax(ds: Dataset) -> tuple[Dataset, NormalizationParams]:
    """Scale every non-constant column to [0, 1]; constants map to 0."""
    params = fit_minmax(ds)
    return params.transform(ds), params


@dataclass(frozen=True)
class SplitSpec:
    """Chronological cutoffs: rows [1..train_end], (train_end..validation_end],
    and the remainder as test."""

    train_end: int
    validation_end: int

    def validate(self, length: int) -> None:
        if not (0 < self.train_end < self.validation_end <= length):
            raise DataError(
                f"invalid split (train_end={self.train_end}, "
                f"validation_end={self.validation_end}) for length {length}"
            )


def chronological_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset | None]:
    """Split into contiguous, time-ordered (train, validation, test) segments.

    The test segment is ``None`` when ``validation_end`` equals the length.
    """
    spec.validate(ds.length)
    train = ds.rows(1, spec.train_end)
    validation = ds.rows(spec.train_end + 1, spec.validation_end)
    test = None
    if spec.validation_end < ds.length:
        test = ds.rows(spec.validation_end + 1, ds.length)
    return train, validation, test


@dataclass(frozen=True, order=True)
class FeatureId:
    """One model input: an auxiliary variable observed ``lag`` steps back."""

    variable: str
    lag: int


@dataclass(frozen=True)
class SupervisedMatrix:
    """Lagged regression layout: row ``l`` holds y_i(l - lag) per feature and
    the KPI value x(l), for l in [d+1 .. L]."""

    features: tuple[FeatureId, ...]
    X: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    max_delay: int

    @property
    def n_rows(self) -> int:
        return int(self.y.size)

    def restrict_labels(self, lo: int, hi: int) -> "SupervisedMatrix":
        """Keep rows whose KPI time label lies in [lo, hi] (inclusive)."""
        mask = (self.labels >= lo) & (self.labels <= hi)
        if not mask.any():
            raise DataError(f"no supervised rows with labels in [{lo}, {hi}]")
        return SupervisedMatrix(
            self.features, self.X[mask], self.y[mask], self.labels[mask], self.max_delay
        )


def build_supervised(
    ds: Dataset, features: Sequence[FeatureId], max_delay: int
) -> SupervisedMatrix:
    """Assemble the lagged feature matrix and KPI target for a feature set."""
    feats = tuple(features)
    if not feats:
        raise DataError("empty feature set")
    if max_delay < 1:
        raise DataError(f"max_delay must be >= 1, got {max_delay}")
    L = ds.length
    if max_delay >= L:
        raise DataError(f"max_delay {max_delay} leaves no labeled rows for length {L}")
    for f in feats:
        if f.variable == ds.kpi:
            raise DataError(f"feature {f} references the KPI column")
        if not (1 <= f.lag <= max_delay):
            raise DataError(f"feature {f} has lag outside [1, {max_delay}]")
    labels = np.arange(max_delay + 1, L + 1)
    n = labels.size
    X = np.empty((n, len(feats)), dtype=np.float64)
    for j, f in enumerate(feats):
        col = ds.values(f.variable)
        X[:, j] = col[labels - 1 - f.lag]
    y = ds.values(ds.kpi)[labels - 1]
    return SupervisedMatrix(feats, X, y, labels, max_delay)
