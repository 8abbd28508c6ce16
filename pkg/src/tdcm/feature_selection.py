"""Validation-driven causal feature selection.

Candidate thresholds combine a global grid over the observed strength range
with each variable's own peak.  For a threshold c, a variable contributes
the contiguous run of lags starting at its causal influence delay while the
strength stays at or above c; the winning threshold minimizes validation
RMSE of a PLS model trained on the corresponding lagged matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .crossmap import CausalCurve
from .dataset import Dataset, FeatureId, SplitSpec, build_supervised, fit_minmax
from .errors import DataError
from .soft_sensor import metrics_eval, pls_fit, pls_predict

logger = logging.getLogger(__name__)


def _nonneg_strengths(curve: CausalCurve) -> np.ndarray:
    nn = curve.nonnegative()
    return nn.strengths


def build_threshold_candidates(
    curves: Mapping[str, CausalCurve], n_candidates: int
) -> np.ndarray:
    """Sorted candidate thresholds: n_candidates - 1 equally spaced values
    from the global strength minimum upward, plus each variable's maximum
    (which supplies the global maximum), deduplicated.

    Only nonnegative delays count; the negative window exists for synchrony
    screening, not thresholding.
    """
    if n_candidates < 2:
        raise DataError(f"need at least 2 candidates, got {n_candidates}")
    per_var_max = []
    pooled = []
    for curve in curves.values():
        s = _nonneg_strengths(curve)
        finite = s[~np.isnan(s)]
        if finite.size == 0:
            continue
        pooled.append(finite)
        per_var_max.append(float(finite.max()))
    if not pooled:
        raise DataError("no finite causal strengths; cannot build thresholds")
    allvals = np.concatenate(pooled)
    lo, hi = float(allvals.min()), float(allvals.max())
    grid = np.linspace(lo, hi, n_candidates)[: n_candidates - 1]
    return np.unique(np.concatenate([grid, np.asarray(per_var_max)]))


def select_features_for_threshold(
    curves: Mapping[str, CausalCurve],
    delays: Mapping[str, int],
    threshold: float,
    max_delay: int,
    pre_delay_extension: int = 0,
) -> tuple[FeatureId, ...]:
    """Contiguous lag windows per variable under the influence-delay
    constraint.

    The window is anchored at the variable's causal influence delay and
    extends while the strength stays at or above the threshold, stopping at
    the first dip.  Lag 0 never becomes a feature.  A nonzero extension
    prepends up to that many pre-delay lags to every non-empty window.
    """
    if pre_delay_extension < 0:
        raise DataError("pre_delay_extension must be nonnegative")
    out: list[FeatureId] = []
    for name, curve in curves.items():
        if name not in delays:
            continue
        delta = delays[name]
        lags: list[int] = []
        gamma = delta
        while gamma <= max_delay:
            value = curve.value(gamma)
            if np.isnan(value) or value < threshold:
                break
            if gamma >= 1:
                lags.append(gamma)
            gamma += 1
        if lags and pre_delay_extension > 0:
            lo = max(1, delta - pre_delay_extension)
            lags = list(range(lo, delta)) + lags
        out.extend(FeatureId(name, lag) for lag in lags)
    return tuple(out)


@dataclass(frozen=True)
class SelectionResult:
    """Winning threshold with the per-candidate validation scores and the
    final feature set."""

    c_best: float
    scores: tuple[tuple[float, float], ...]
    features: tuple[FeatureId, ...]
    delays: dict[str, int]
    mode: str
    pre_delay_extension: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "c_best": self.c_best,
            "pre_delay_extension": self.pre_delay_extension,
            "delays": dict(sorted(self.delays.items())),
            "scores": [
                {"threshold": c, "validation_rmse": j} for c, j in self.scores
            ],
            "features": [
                {"variable": f.variable, "lag": f.lag} for f in self.features
            ],
        }


def optimize_threshold(
    dataset: Dataset,
    curves: Mapping[str, CausalCurve],
    delays: Mapping[str, int],
    candidates: np.ndarray,
    split: SplitSpec,
    max_delay: int,
    n_components: int = 3,
    pre_delay_extension: int = 0,
    mode: str = "tdpcm",
) -> SelectionResult:
    """Train one PLS model per candidate threshold and keep the candidate
    with the lowest validation RMSE; ties break toward the larger threshold
    (fewer features).

    The dataset must end before the test period.  Normalization parameters
    are fit on the rows available at training time (everything up to the
    last training label) and applied unchanged to the validation rows.
    """
    n_labeled = dataset.length - max_delay
    if n_labeled < 2:
        raise DataError("dataset too short for the given max_delay")
    split.validate(n_labeled)
    params = fit_minmax(dataset.rows(1, max_delay + split.train_end))
    normalized = params.transform(dataset)
    scores: list[tuple[float, float]] = []
    feature_sets: list[tuple[FeatureId, ...]] = []
    for c in np.asarray(candidates, dtype=np.float64):
        feats = select_features_for_threshold(
            curves, delays, float(c), max_delay, pre_delay_extension
        )
        feature_sets.append(feats)
        if not feats:
            scores.append((float(c), float("inf")))
            continue
        sup = build_supervised(normalized, feats, max_delay)
        train = sup.restrict_labels(max_delay + 1, max_delay + split.train_end)
        val = sup.restrict_labels(
            max_delay + split.train_end + 1, max_delay + split.validation_end
        )
        model = pls_fit(train.X, train.y, n_components)
        rmse = metrics_eval(val.y, pls_predict(model, val.X)).rmse
        scores.append((float(c), float(rmse)))
    best_idx = min(range(len(scores)), key=lambda i: (scores[i][1], -scores[i][0]))
    if not np.isfinite(scores[best_idx][1]):
        raise DataError("every candidate threshold produced an empty feature set")
    return SelectionResult(
        c_best=scores[best_idx][0],
        scores=tuple(scores),
        features=feature_sets[best_idx],
        delays=dict(delays),
        mode=mode,
        pre_delay_extension=pre_delay_extension,
    )


def monotonicity_check(
    curves: Mapping[str, CausalCurve],
    delays: Mapping[str, int],
    c_low: float,
    c_high: float,
    max_delay: int,
    pre_delay_extension: int = 0,
) -> tuple[tuple[FeatureId, ...], tuple[FeatureId, ...]]:
    """Verify the nestedness property F(c_high) subset-of F(c_low)."""
    if c_low > c_high:
        raise DataError("c_low must not exceed c_high")
    f_low = select_features_for_threshold(
        curves, delays, c_low, max_delay, pre_delay_extension
    )
    f_high = select_features_for_threshold(
        curves, delays, c_high, max_delay, pre_delay_extension
    )
    if not set(f_high) <= set(f_low):
        raise DataError(
            f"feature sets not nested for thresholds {c_low} <= {c_high}"
        )
    return f_low, f_high
