"""PLS soft-sensor regression, evaluation metrics, training-size stability
sweeps and the Wilcoxon signed-rank comparison used to contrast methods.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlsModel:
    """Fitted partial-least-squares regressor (single response).

    Prediction is affine: ``X @ coef + intercept``.  Weights and loadings of
    the extracted components are kept for inspection.
    """

    n_components: int
    achieved_components: int
    x_mean: np.ndarray
    y_mean: float
    weights: np.ndarray
    x_loadings: np.ndarray
    y_loadings: np.ndarray
    coef: np.ndarray
    intercept: float
    feature_names: tuple[str, ...] | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        return pls_predict(self, X)

    def to_dict(self) -> dict:
        return {
            "n_components": self.n_components,
            "achieved_components": self.achieved_components,
            "x_mean": self.x_mean.tolist(),
            "y_mean": self.y_mean,
            "weights": self.weights.tolist(),
            "x_loadings": self.x_loadings.tolist(),
            "y_loadings": self.y_loadings.tolist(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "feature_names": list(self.feature_names) if self.feature_names else None,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PlsModel":
        names = payload.get("feature_names")
        return cls(
            n_components=int(payload["n_components"]),
            achieved_components=int(payload["achieved_components"]),
            x_mean=np.asarray(payload["x_mean"], dtype=np.float64),
            y_mean=float(payload["y_mean"]),
            weights=np.asarray(payload["weights"], dtype=np.float64),
            x_loadings=np.asarray(payload["x_loadings"], dtype=np.float64),
            y_loadings=np.asarray(payload["y_loadings"], dtype=np.float64),
            coef=np.asarray(payload["coef"], dtype=np.float64),
            intercept=float(payload["intercept"]),
            feature_names=tuple(names) if names else None,
        )


def pls_fit(
    X: np.ndarray,
    y: np.ndarray,
    n_components: int = 3,
    tol: float = 1e-10,
    max_iter: int = 500,
    feature_names: Sequence[str] | None = None,
) -> PlsModel:
    """Fit single-response PLS by iterative component extraction with
    deflation.

    Components are capped at min(n_samples - 1, n_features); if the residual
    covariance vanishes earlier, fitting stops with a warning and the
    achievable number of components.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError(f"X shape {X.shape} incompatible with y length {y.size}")
    n, p = X.shape
    if n_components < 1:
        raise DataError(f"n_components must be >= 1, got {n_components}")
    if n <= n_components:
        raise DataError(f"need more than {n_components} samples, got {n}")
    if float(y.std()) == 0.0:
        raise DataError("constant target; nothing to regress")
    cap = min(n - 1, p)
    n_comp = min(n_components, cap)
    if n_comp < n_components:
        logger.warning(
            "requested %d components but only %d are attainable", n_components, n_comp
        )

    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    scale = float(np.abs(yc).max()) * float(np.abs(Xc).max() + 1.0)

    W = np.zeros((p, n_comp))
    P = np.zeros((p, n_comp))
    Q = np.zeros(n_comp)
    achieved = 0
    for a in range(n_comp):
        w = Xc.T @ yc
        norm = float(np.linalg.norm(w))
        if norm <= tol * max(scale, 1.0):
            logger.warning(
                "residual covariance exhausted after %d components", achieved
            )
            break
        w = w / norm
        # single-response extraction is stationary after one pass; iterate to
        # the stated tolerance anyway
        for _ in range(max_iter):
            t = Xc @ w
            tt = float(t @ t)
            if tt == 0.0:
                break
            w_new = Xc.T @ yc
            w_new_norm = float(np.linalg.norm(w_new))
            if w_new_norm == 0.0:
                break
            w_new = w_new / w_new_norm
            delta = float(np.linalg.norm(w_new - w))
            w = w_new
            if delta <= tol:
                break
        t = Xc @ w
        tt = float(t @ t)
        if tt == 0.0:
            logger.warning("degenerate scores after %d components", achieved)
            break
        p_load = Xc.T @ t / tt
        q = float(yc @ t / tt)
        Xc = Xc - np.outer(t, p_load)
        yc = yc - q * t
        W[:, a] = w
        P[:, a] = p_load
        Q[a] = q
        achieved += 1

    if achieved == 0:
        raise DataError("no PLS component could be extracted (inputs uncorrelated)")
    W = W[:, :achieved]
    P = P[:, :achieved]
    Q = Q[:achieved]
    coef = W @ np.linalg.solve(P.T @ W, Q)
    intercept = y_mean - float(x_mean @ coef)
    return PlsModel(
        n_components=n_components,
        achieved_components=achieved,
        x_mean=x_mean,
        y_mean=y_mean,
        weights=W,
        x_loadings=P,
        y_loadings=Q,
        coef=coef,
        intercept=intercept,
        feature_names=tuple(feature_names) if feature_names is not None else None,
    )


def pls_predict(model: PlsModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.coef.size:
        raise DataError(
            f"input has {X.shape[1]} columns, model expects {model.coef.size}"
        )
    return X @ model.coef + model.intercept


@dataclass(frozen=True)
class Metrics:
    """Standard regression scores; r2 is NaN for a constant truth vector."""

    r2: float
    rmse: float
    mae: float

    def to_dict(self) -> dict:
        return {"r2": self.r2, "rmse": self.rmse, "mae": self.mae}


def metrics_eval(y: np.ndarray, y_hat: np.ndarray) -> Metrics:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.size != y_hat.size:
        raise DataError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size < 2:
        raise DataError("need at least 2 samples for metrics")
    err = y - y_hat
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        logger.warning("constant truth vector; R^2 undefined")
        r2 = float("nan")
    else:
        r2 = 1.0 - float(np.sum(err**2)) / sst
    return Metrics(r2, rmse, mae)


@dataclass(frozen=True)
class StabilitySweep:
    """Test-set metrics across training sizes with per-metric summaries."""

    sizes: tuple[int, ...]
    metrics: tuple[Metrics, ...]
    summary: dict[str, dict[str, float]]


def stability_sweep(
    sizes: Sequence[int], evaluate: Callable[[int], Metrics]
) -> StabilitySweep:
    """Re-run selection plus fitting for each training size and summarize
    the resulting fixed-test-set metrics."""
    sizes = [int(s) for s in sizes]
    if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise DataError("training sizes must be non-empty and strictly increasing")
    results = [evaluate(s) for s in sizes]
    summary: dict[str, dict[str, float]] = {}
    for key in ("r2", "rmse", "mae"):
        vals = np.array([getattr(m, key) for m in results], dtype=np.float64)
        summary[key] = {
            "mean": float(np.mean(vals)),
            "std": float(np.std(vals)),
            "min": float(np.min(vals)),
            "max": float(np.max(vals)),
        }
    return StabilitySweep(tuple(sizes), tuple(results), summary)


@dataclass(frozen=True)
class WilcoxonResult:
    r_plus: float
    r_minus: float
    p_value: float
    median_delta: float
    n: int
    method: str


def _exact_two_sided_p(ranks2: np.ndarray, w2_low: int) -> float:
    """Exact two-sided tail probability by subset-sum counting.

    ``ranks2`` are the doubled midranks (integers); the null distributes the
    doubled positive rank sum uniformly over sign assignments, so the table
    of achievable sums is built by convolution rather than enumeration.
    """
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in ranks2:
        r = int(r)
        counts[r:] = counts[r:] + counts[: total + 1 - r]
    n = ranks2.size
    low = int(counts[: w2_low + 1].sum())
    high = int(counts[total - w2_low :].sum())
    return min(1.0, (low + high) / 2**n)


def wilcoxon_signed_rank(a: np.ndarray, b: np.ndarray) -> WilcoxonResult:
    """Two-sided paired Wilcoxon test.

    Zero differences are dropped and tied magnitudes get midranks.  The
    p-value is exact for up to 12 nonzero differences; beyond that a
    tie-corrected normal approximation with continuity correction and a
    fourth-moment (Edgeworth) refinement is used.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size != b.size:
        raise DataError(f"paired samples differ in length: {a.size} vs {b.size}")
    d = a - b
    nz = d[d != 0.0]
    if nz.size == 0:
        raise DataError("all paired differences are zero")
    if nz.size < 5:
        raise DataError(f"need at least 5 nonzero differences, got {nz.size}")
    n = nz.size
    ranks = stats.rankdata(np.abs(nz))
    r_plus = float(ranks[nz > 0].sum())
    r_minus = float(ranks[nz < 0].sum())
    w_low = min(r_plus, r_minus)
    if n <= 12:
        ranks2 = np.rint(2.0 * ranks).astype(np.int64)
        p = _exact_two_sided_p(ranks2, int(round(2.0 * w_low)))
        method = "exact"
    else:
        mu = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var -= float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        z = (w_low - mu + 0.5) / np.sqrt(var)
        # excess kurtosis of the null rank sum sharpens the tail estimate
        excess = (-float(np.sum(ranks**4)) / 8.0) / var**2
        lower = stats.norm.cdf(z) - stats.norm.pdf(z) * (excess / 24.0) * (z**3 - 3 * z)
        p = float(min(1.0, max(0.0, 2.0 * lower)))
        method = "normal"
    return WilcoxonResult(
        r_plus=r_plus,
        r_minus=r_minus,
        p_value=p,
        median_delta=float(np.median(d)),
        n=n,
        method=method,
    )
