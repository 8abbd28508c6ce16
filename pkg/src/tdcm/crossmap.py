"""Simplex-weight nearest-neighbor cross mapping.

Causal strength from a cause series Y to an effect series X is measured by
how well X's reconstructed manifold predicts Y: neighbors of the effect
manifold at time l are combined with exponentially distance-decayed weights
to estimate y(l - delay), and the Pearson correlation between estimates and
truth is the strength at that delay.  Sweeping the delay over a window that
may extend to negative lags yields a causal-strength curve; a peak at a
negative lag is the signature of synchrony-driven false causality.

Neighbor search is exact brute force with deterministic tie-breaking toward
the smaller time label, so results are reproducible across runs and worker
schedules.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Dataset, TimeSeries
from .embedding import EmbeddingConfig, Manifold, embed
from .errors import DataError

_CHUNK = 256

WORKERS_ENV = "TDCM_WORKERS"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass(frozen=True)
class NeighborSet:
    """E+1 nearest manifold points of one query, ascending by distance."""

    query_label: int
    labels: np.ndarray
    distances: np.ndarray


def _pairwise_d2(queries: np.ndarray, library: np.ndarray) -> np.ndarray:
    diff = queries[:, None, :] - library[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _knn_rows(d2: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Smallest-k columns of each row under (distance, index) order.

    Rows must already have excluded entries set to +inf.  argpartition finds
    the k-th smallest value; everything at or below it is then ordered with a
    stable sort so that equal distances resolve toward the smaller index.
    """
    q, n = d2.shape
    part = np.argpartition(d2, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(d2, part, axis=1).max(axis=1)
    mask = d2 <= kth[:, None]
    counts = mask.sum(axis=1)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    cols = np.nonzero(mask)[1]
    idx = np.empty((q, k), dtype=np.intp)
    for i in range(q):
        cand = cols[offsets[i] : offsets[i + 1]]
        order = np.argsort(d2[i, cand], kind="stable")[:k]
        idx[i] = cand[order]
    return idx, np.take_along_axis(d2, idx, axis=1)


def _simplex_weights_from_distances(dist: np.ndarray) -> np.ndarray:
    """Exponential simplex weights for one ascending distance row.

    Zero nearest distance degenerates exp(-d/0); the convention is equal
    weight over all zero-distance neighbors, zero elsewhere.
    """
    d1 = dist[0]
    if d1 == 0.0:
        zero = dist == 0.0
        return zero / zero.sum()
    v = np.exp(-dist / d1)
    return v / v.sum()


class NeighborTable:
    """Precomputed E+1 nearest neighbors and simplex weights for every
    manifold point, optionally restricted to a leading library segment.

    One table serves every delay and every target series cross-mapped from
    the same manifold, because the neighbor geometry lives entirely in the
    predictor's reconstructed space.
    """

    def __init__(self, manifold: Manifold, library_size: int | None = None) -> None:
        n = manifold.count
        k = manifold.config.E + 1
        lib = n if library_size is None else int(library_size)
        if not (k + 1 <= lib <= n):
            raise DataError(
                f"library size {lib} not in [{k + 1}, {n}] for manifold "
                f"{manifold.source!r}"
            )
        self.manifold = manifold
        self.library_size = lib
        self.k = k
        points = manifold.points
        library = points[:lib]
        nn_labels = np.empty((n, k), dtype=np.int64)
        nn_dist = np.empty((n, k), dtype=np.float64)
        for start in range(0, n, _CHUNK):
            stop = min(start + _CHUNK, n)
            d2 = _pairwise_d2(points[start:stop], library)
            for i in range(start, min(stop, lib)):
                d2[i - start, i] = np.inf
            idx, sel_d2 = _knn_rows(d2, k)
            nn_labels[start:stop] = manifold.labels[idx]
            nn_dist[start:stop] = np.sqrt(sel_d2)
        weights = np.empty_like(nn_dist)
        for i in range(n):
            weights[i] = _simplex_weights_from_distances(nn_dist[i])
        self.neighbor_labels = nn_labels
        self.neighbor_distances = nn_dist
        self.weights = weights

    def query(self, label: int) -> NeighborSet:
        row = self.manifold.row_for_label(label)
        return NeighborSet(
            label, self.neighbor_labels[row].copy(), self.neighbor_distances[row].copy()
        )


def knn_query(manifold: Manifold, label: int) -> NeighborSet:
    """E+1 nearest manifold points of the point at ``label``, self excluded,
    ties broken toward the smaller time label."""
    if manifold.count < manifold.config.E + 2:
        raise DataError(
            f"manifold {manifold.source!r} has {manifold.count} points; "
            f"need at least E + 2 = {manifold.config.E + 2}"
        )
    row = manifold.row_for_label(label)
    d2 = _pairwise_d2(manifold.points[row : row + 1], manifold.points)[0]
    d2[row] = np.inf
    k = manifold.config.E + 1
    order = np.argsort(d2, kind="stable")[:k]
    return NeighborSet(label, manifold.labels[order], np.sqrt(d2[order]))


def simplex_weights(neighbors: NeighborSet) -> np.ndarray:
    """Nonnegative weights summing to one for a sorted neighbor set."""
    dist = np.asarray(neighbors.distances, dtype=np.float64)
    if dist.size == 0 or np.any(np.diff(dist) < 0):
        raise DataError("neighbor distances must be non-empty and ascending")
    return _simplex_weights_from_distances(dist)


@dataclass(frozen=True)
class CrossMapPrediction:
    """Cross-mapped estimates of a target series over prediction times.

    ``values[i]`` estimates target at time ``times[i]``; NaN marks the rare
    time points whose every neighbor fell outside the series after the delay
    shift.
    """

    times: np.ndarray
    values: np.ndarray


def _target_values(target: TimeSeries | np.ndarray) -> np.ndarray:
    if isinstance(target, TimeSeries):
        return target.values
    return np.asarray(target, dtype=np.float64)


def cross_map_predict(
    manifold: Manifold,
    target: TimeSeries | np.ndarray,
    delay: int = 0,
    table: NeighborTable | None = None,
) -> CrossMapPrediction:
    """Estimate target(t - delay) from the manifold's neighbors at t.

    For delay xi >= 0 the estimates cover times [t_min .. L - xi]; a negative
    delay shifts the window symmetrically to [t_min + |xi| .. L].  Neighbors
    whose shifted label leaves [1, L] are dropped and the remaining weights
    renormalized.
    """
    y = _target_values(target)
    L = int(manifold.labels[-1])
    if y.size != L:
        raise DataError(
            f"target length {y.size} does not match manifold series length {L}"
        )
    if table is None:
        table = NeighborTable(manifold)
    t_min = manifold.t_min
    lo = t_min + max(0, -delay)
    hi = L - max(0, delay)
    n_pred = hi - lo + 1
    if n_pred < manifold.config.E + 2:
        raise DataError(
            f"insufficient overlap at delay {delay}: {n_pred} predictable points"
        )
    times = np.arange(lo, hi + 1)
    rows = times + delay - t_min
    nbr = table.neighbor_labels[rows]
    w = table.weights[rows]
    mapped = nbr - delay
    valid = (mapped >= 1) & (mapped <= L)
    wv = np.where(valid, w, 0.0)
    sums = wv.sum(axis=1)
    safe_idx = np.where(valid, mapped - 1, 0)
    contrib = (wv * y[safe_idx]).sum(axis=1)
    values = np.full(n_pred, np.nan)
    ok = sums > 0.0
    values[ok] = contrib[ok] / sums[ok]
    # all positive-weight neighbors dropped but zero-distance ties remain:
    # rebuild simplex weights over the surviving neighbors
    refit = ~ok & valid.any(axis=1)
    for i in np.flatnonzero(refit):
        keep = valid[i]
        d = table.neighbor_distances[rows[i]][keep]
        order = np.argsort(d, kind="stable")
        wk = _simplex_weights_from_distances(d[order])
        values[i] = float(wk @ y[mapped[i][keep][order] - 1])
    return CrossMapPrediction(times, values)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Plain Pearson correlation; NaN when either side has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        return float("nan")
    r = float(da @ db) / np.sqrt(va * vb)
    return float(min(1.0, max(-1.0, r)))


def _strength(pred: CrossMapPrediction, y: np.ndarray) -> float:
    truth = y[pred.times - 1]
    ok = ~np.isnan(pred.values)
    if ok.sum() < 3:
        return float("nan")
    return pearson(pred.values[ok], truth[ok])


def ccm_rho(
    manifold: Manifold,
    target: TimeSeries | np.ndarray,
    table: NeighborTable | None = None,
) -> float:
    """Zero-delay cross-map strength (classic convergent cross mapping)."""
    pred = cross_map_predict(manifold, target, 0, table)
    return _strength(pred, _target_values(target))


@dataclass(frozen=True)
class CausalCurve:
    """Causal strength per integer delay for one directed pair."""

    cause: str
    effect: str
    delays: np.ndarray
    strengths: np.ndarray
    E: int
    tau: int
    L: int
    method: str = "tdccm"

    def __post_init__(self) -> None:
        d = np.asarray(self.delays)
        if d.size < 1 or np.any(np.diff(d) != 1):
            raise DataError("curve delays must increase in steps of 1")

    def value(self, delay: int) -> float:
        lo = int(self.delays[0])
        if not (lo <= delay <= int(self.delays[-1])):
            raise DataError(f"delay {delay} outside curve window")
        return float(self.strengths[delay - lo])

    def nonnegative(self) -> "CausalCurve":
        if int(self.delays[0]) >= 0:
            return self
        start = -int(self.delays[0])
        return CausalCurve(
            self.cause,
            self.effect,
            self.delays[start:],
            self.strengths[start:],
            self.E,
            self.tau,
            self.L,
            self.method,
        )


def tdccm_curve(
    manifold: Manifold,
    target: TimeSeries,
    max_delay: int,
    neg_window: int = 0,
    table: NeighborTable | None = None,
) -> CausalCurve:
    """Cross-map strength of ``target`` onto the manifold's variable for
    every delay in [-neg_window .. max_delay]."""
    if max_delay < 0 or neg_window < 0:
        raise DataError("max_delay and neg_window must be nonnegative")
    if table is None:
        table = NeighborTable(manifold)
    y = target.values
    L = int(manifold.labels[-1])
    extreme = max(max_delay, neg_window)
    if L - extreme - (manifold.config.E - 1) * manifold.config.tau < manifold.config.E + 2:
        raise DataError(
            f"series too short for delays up to {extreme} with "
            f"E={manifold.config.E}, tau={manifold.config.tau}"
        )
    delays = np.arange(-neg_window, max_delay + 1)
    strengths = np.empty(delays.size, dtype=np.float64)
    for i, xi in enumerate(delays):
        pred = cross_map_predict(manifold, y, int(xi), table)
        strengths[i] = _strength(pred, y)
    return CausalCurve(
        target.name,
        manifold.source,
        delays,
        strengths,
        manifold.config.E,
        manifold.config.tau,
        L,
    )


def convergence_scan(
    manifold: Manifold,
    target: TimeSeries,
    delay: int,
    library_sizes: Sequence[int],
) -> np.ndarray:
    """Cross-map strength at one delay as the neighbor library grows.

    Only the first ``n`` manifold points serve as the neighbor library;
    prediction times are unchanged, so the full-length entry reproduces the
    corresponding causal-curve value.
    """
    sizes = list(library_sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise DataError("library sizes must be strictly ascending")
    k = manifold.config.E + 1
    if sizes and sizes[0] < k + 1:
        raise DataError(f"smallest library size must be >= {k + 1}")
    if sizes and sizes[-1] > manifold.count:
        raise DataError(
            f"library size {sizes[-1]} exceeds manifold size {manifold.count}"
        )
    y = target.values
    out = np.empty(len(sizes), dtype=np.float64)
    for i, n in enumerate(sizes):
        table = NeighborTable(manifold, library_size=n)
        pred = cross_map_predict(manifold, y, delay, table)
        out[i] = _strength(pred, y)
    return out


class ManifoldSet:
    """Reconstructions and neighbor tables for every usable dataset column.

    Constant columns cannot be embedded meaningfully and are skipped; the
    names are kept so downstream stages can report them.
    """

    def __init__(self, ds: Dataset, cfg: EmbeddingConfig) -> None:
        self.config = cfg
        self.dataset = ds
        self.manifolds: dict[str, Manifold] = {}
        self.tables: dict[str, NeighborTable] = {}
        self.skipped_constant: tuple[str, ...] = tuple(
            name for name in ds.names if float(ds.values(name).std()) == 0.0
        )
        for name in ds.names:
            if name in self.skipped_constant:
                continue
            m = embed(TimeSeries(name, ds.values(name)), cfg)
            self.manifolds[name] = m
            self.tables[name] = NeighborTable(m)

    def usable(self, name: str) -> bool:
        return name in self.manifolds


class CurveSet(dict):
    """Mapping (cause, effect) -> CausalCurve with CSV-friendly export."""

    def to_rows(self) -> list[tuple[str, str, int, float, str]]:
        rows = []
        for (cause, effect), curve in sorted(self.items()):
            for d, s in zip(curve.delays, curve.strengths):
                rows.append((cause, effect, int(d), float(s), curve.method))
        return rows


def _curve_task(args) -> tuple[tuple[str, str], CausalCurve]:
    pair, manifold, table, target, max_delay, neg_window = args
    return pair, tdccm_curve(manifold, target, max_delay, neg_window, table)


def scan_pairs(ds: Dataset, kpi: str) -> list[tuple[str, str]]:
    """Directed pairs evaluated by the all-pairs scan: every ordered pair of
    auxiliaries plus each auxiliary onto the KPI."""
    aux = [n for n in ds.names if n != kpi]
    pairs = [(c, e) for c in aux for e in aux if c != e]
    pairs += [(c, kpi) for c in aux]
    return pairs


def compute_tdccm_curves(
    mset: ManifoldSet,
    max_delay: int,
    neg_window: int,
    pairs: Iterable[tuple[str, str]] | None = None,
    workers: int | None = None,
) -> CurveSet:
    """Full-pair time-delayed cross-mapping scan.

    Pair cells are independent; with more than one worker they are evaluated
    in a process pool and reassembled in pair order, so the result is
    identical for any worker count.
    """
    ds = mset.dataset
    if pairs is None:
        pairs = scan_pairs(ds, ds.kpi)
    tasks = []
    for cause, effect in pairs:
        if not mset.usable(effect) or not mset.usable(cause):
            continue
        tasks.append(
            (
                (cause, effect),
                mset.manifolds[effect],
                mset.tables[effect],
                TimeSeries(cause, ds.values(cause)),
                max_delay,
                neg_window,
            )
        )
    n_workers = worker_count() if workers is None else max(1, workers)
    curves = CurveSet()
    if n_workers == 1 or len(tasks) <= 1:
        for task in tasks:
            pair, curve = _curve_task(task)
            curves[pair] = curve
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for pair, curve in pool.map(_curve_task, tasks):
                curves[pair] = curve
    return curves
