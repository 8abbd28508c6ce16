"""State-space reconstruction of scalar series and embedding-dimension
selection with the false-nearest-neighbor criteria of Kennel et al.

An embedding vector at time l is [v(l), v(l-tau), ..., v(l-(E-1)tau)], so a
series of length L yields L - (E-1)*tau vectors, the first labeled
t_min = 1 + (E-1)*tau.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, TimeSeries
from .errors import DataError

logger = logging.getLogger(__name__)

_CHUNK = 256


@dataclass(frozen=True)
class EmbeddingConfig:
    """Reconstruction hyper-parameters: dimension E and embedding delay tau."""

    E: int
    tau: int = 1

    def __post_init__(self) -> None:
        if self.E < 1:
            raise DataError(f"embedding dimension must be >= 1, got {self.E}")
        if self.tau < 1:
            raise DataError(f"embedding delay must be >= 1, got {self.tau}")

    @property
    def t_min(self) -> int:
        return 1 + (self.E - 1) * self.tau


@dataclass(frozen=True)
class Manifold:
    """Trajectory matrix of one variable: points[i] is the embedding vector
    at time label labels[i]."""

    source: str
    config: EmbeddingConfig
    points: np.ndarray
    labels: np.ndarray

    @property
    def t_min(self) -> int:
        return self.config.t_min

    @property
    def count(self) -> int:
        return int(self.labels.size)

    def row_for_label(self, label: int) -> int:
        if not (self.t_min <= label <= int(self.labels[-1])):
            raise DataError(
                f"label {label} outside manifold range "
                f"[{self.t_min}, {int(self.labels[-1])}]"
            )
        return label - self.t_min


def embed(series: TimeSeries, cfg: EmbeddingConfig) -> Manifold:
    """Build the delay-coordinate trajectory matrix of one series."""
    v = series.values
    L = v.size
    if L <= (cfg.E - 1) * cfg.tau:
        raise DataError(
            f"series {series.name!r} too short (L={L}) for E={cfg.E}, tau={cfg.tau}"
        )
    count = L - (cfg.E - 1) * cfg.tau
    points = np.empty((count, cfg.E), dtype=np.float64)
    for k in range(cfg.E):
        start = (cfg.E - 1) * cfg.tau - k * cfg.tau
        points[:, k] = v[start : start + count]
    points.flags.writeable = False
    labels = np.arange(cfg.t_min, L + 1)
    labels.flags.writeable = False
    return Manifold(series.name, cfg, points, labels)


@dataclass(frozen=True)
class FnnProfile:
    """Fraction of false nearest neighbors per embedding dimension 1..E_max."""

    source: str
    dimensions: np.ndarray
    fractions: np.ndarray


def _nearest_neighbor(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index and squared distance of each point's nearest neighbor,
    self excluded, ties broken toward the smaller index."""
    n = points.shape[0]
    nn_idx = np.empty(n, dtype=np.intp)
    nn_d2 = np.empty(n, dtype=np.float64)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        diff = points[start:stop, None, :] - points[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        idx = np.argmin(d2, axis=1)
        nn_idx[start:stop] = idx
        nn_d2[start:stop] = d2[np.arange(stop - start), idx]
    return nn_idx, nn_d2


def fnn_profile(
    series: TimeSeries,
    tau: int = 1,
    e_max: int = 10,
    r_tol: float = 15.0,
    a_tol: float = 2.0,
) -> FnnProfile:
    """False-nearest-neighbor fractions for E = 1..e_max.

    A neighbor pair in dimension E is false when the coordinate gained in
    dimension E+1 (the sample one step ahead of the window) either inflates
    the pair distance by more than ``r_tol`` relative to its E-dimensional
    distance, or pushes the (E+1)-dimensional distance beyond ``a_tol``
    attractor sizes.
    """
    if e_max < 2:
        raise DataError(f"e_max must be >= 2, got {e_max}")
    v = series.values
    sigma = float(v.std())
    if sigma == 0.0:
        raise DataError(f"series {series.name!r} is constant; FNN undefined")
    L = v.size
    fractions = np.empty(e_max, dtype=np.float64)
    for E in range(1, e_max + 1):
        t_min_next = 1 + E * tau
        if L - t_min_next + 1 < 2:
            raise DataError(
                f"series {series.name!r} too short for FNN at E={E}, tau={tau}"
            )
        # E+1 vectors hold the forward coordinate in column 0 and the E-dim
        # window in the remaining columns; only points whose extension exists
        # take part
        full = embed(series, EmbeddingConfig(E + 1, tau))
        points_e = full.points[:, 1:]
        extra = full.points[:, 0]
        nn_idx, nn_d2 = _nearest_neighbor(points_e)
        delta = np.abs(extra - extra[nn_idx])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(nn_d2 > 0.0, delta / np.sqrt(nn_d2), np.where(delta > 0.0, np.inf, 0.0))
        dist_next = np.sqrt(nn_d2 + delta**2)
        false = (ratio > r_tol) | (dist_next / sigma > a_tol)
        fractions[E - 1] = false.mean()
    return FnnProfile(series.name, np.arange(1, e_max + 1), fractions)


@dataclass(frozen=True)
class EmbeddingSelection:
    """Outcome of automatic dimension selection over a dataset."""

    E: int
    profiles: dict[str, FnnProfile]
    skipped_constant: tuple[str, ...]


def select_embedding_dim(
    ds: Dataset,
    tau: int = 1,
    e_max: int = 10,
    threshold: float = 0.05,
    r_tol: float = 15.0,
    a_tol: float = 2.0,
) -> EmbeddingSelection:
    """Smallest E at which every variable's FNN fraction drops below the
    threshold.  Constant columns are skipped with a warning."""
    profiles: dict[str, FnnProfile] = {}
    skipped: list[str] = []
    for name in ds.names:
        col = ds.column(name)
        if float(col.values.std()) == 0.0:
            logger.warning("skipping constant column %r in FNN selection", name)
            skipped.append(name)
            continue
        profiles[name] = fnn_profile(col, tau=tau, e_max=e_max, r_tol=r_tol, a_tol=a_tol)
    if not profiles:
        raise DataError("all columns constant; cannot select embedding dimension")
    stacked = np.vstack([p.fractions for p in profiles.values()])
    below = np.all(stacked < threshold, axis=0)
    hits = np.flatnonzero(below)
    if hits.size == 0:
        raise DataError(
            f"no embedding dimension <= {e_max} brings all FNN fractions "
            f"below {threshold}"
        )
    return EmbeddingSelection(int(hits[0]) + 1, profiles, tuple(skipped))
