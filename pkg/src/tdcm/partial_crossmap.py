"""Direct-causality inference: delay resolution from strength-curve local
maxima, synchrony screening, and delay-resolved partial cross mapping that
conditions on every disturbing variable at once through the precision matrix
of a stacked prediction vector.

For a cause Y, effect X and disturbers Z_i, the stacked vector at delay g
holds the X-manifold estimate of Y at delay g, the true Y, and one
Z_i-manifold estimate of Y per disturber at the path-consistent delay
max(0, path_delay_i - pair_delay + g).  The direct strength is the partial
correlation between the first two columns given the rest, read off the
inverse covariance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .crossmap import (
    CausalCurve,
    CrossMapPrediction,
    CurveSet,
    ManifoldSet,
    cross_map_predict,
    pearson,
)
from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)

_RESIDUAL_VAR_TOL = 1e-10


def local_maxima(curve: CausalCurve) -> np.ndarray:
    """Delays at which the strength strictly exceeds both neighbors.

    Boundary points never qualify, and plateaus fail the strict inequality.
    NaN strengths cannot be maxima and break any comparison they enter.
    """
    s = curve.strengths
    if s.size < 3:
        raise DataError("curve needs at least 3 points for local maxima")
    inner = s[1:-1]
    with np.errstate(invalid="ignore"):
        is_max = (inner > s[:-2]) & (inner > s[2:])
    return curve.delays[1:-1][is_max]


@dataclass(frozen=True)
class DelayDecision:
    """Optimal nonnegative delay of one directed pair, if any, plus the
    synchrony verdict from the full search window."""

    delay: int | None
    synchrony: bool
    peak_strength: float | None


def optimal_delay(curve: CausalCurve) -> DelayDecision:
    """Arg-max over nonnegative local maxima; synchrony is flagged when the
    global peak of the whole window sits at a negative delay."""
    maxima = local_maxima(curve)
    synchrony = False
    finite = ~np.isnan(curve.strengths)
    if finite.any():
        best = int(curve.delays[finite][np.argmax(curve.strengths[finite])])
        synchrony = best < 0
    candidates = maxima[maxima >= 0]
    if candidates.size == 0:
        return DelayDecision(None, synchrony, None)
    values = np.array([curve.value(int(d)) for d in candidates])
    pick = int(np.argmax(values))
    return DelayDecision(int(candidates[pick]), synchrony, float(values[pick]))


def path_delay(curve_cause_to_disturber: CausalCurve, pair_delay: int) -> int | None:
    """Best local-maximum delay of the cause-to-disturber curve within
    [0, pair_delay]; ``None`` when the feasible set is empty."""
    maxima = local_maxima(curve_cause_to_disturber)
    feasible = maxima[(maxima >= 0) & (maxima <= pair_delay)]
    if feasible.size == 0:
        return None
    values = np.array([curve_cause_to_disturber.value(int(d)) for d in feasible])
    return int(feasible[int(np.argmax(values))])


@dataclass(frozen=True)
class PrecisionResult:
    """Covariance, its (possibly ridge-regularized) inverse, and the ridge
    amount that was needed; 0.0 means the plain inverse succeeded."""

    covariance: np.ndarray
    precision: np.ndarray
    ridge: float


def precision_matrix(sigma: np.ndarray, tol: float = 1e-8) -> PrecisionResult:
    """Invert a covariance matrix, adding a doubling ridge until the product
    with the (regularized) covariance is the identity within ``tol``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    dim = sigma.shape[0]
    base = 1e-10 * float(np.trace(sigma)) / dim if dim else 0.0
    if base <= 0.0:
        base = 1e-300
    ridge = 0.0
    for _ in range(120):
        reg = sigma + ridge * np.eye(dim)
        try:
            omega = np.linalg.inv(reg)
        except np.linalg.LinAlgError:
            omega = None
        if omega is not None and np.all(np.isfinite(omega)):
            err = np.abs(omega @ reg - np.eye(dim)).max()
            if err <= tol:
                return PrecisionResult(sigma, omega, ridge)
        ridge = base if ridge == 0.0 else ridge * 2.0
    raise NumericalError("covariance matrix could not be inverted even with ridge")


@dataclass(frozen=True)
class PartialCorrelation:
    value: float
    precision: PrecisionResult | None
    degenerate: bool


def partial_pcc_detailed(
    a: np.ndarray, b: np.ndarray, conditioners: list[np.ndarray] | tuple = ()
) -> PartialCorrelation:
    """Partial Pearson correlation of a and b given the conditioning vectors.

    Computed as -omega_12 / sqrt(omega_11 * omega_22) on the precision matrix
    of the stacked covariance.  Degenerate when either variable retains no
    residual variance after conditioning (value NaN).
    """
    cols = [np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)]
    cols += [np.asarray(c, dtype=np.float64) for c in conditioners]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise DataError("all vectors must share the same length")
    if n < len(cols) - 2 + 3:
        raise DataError(
            f"need at least {len(cols) + 1} samples for {len(cols) - 2} conditioners"
        )
    if len(cols) == 2:
        r = pearson(cols[0], cols[1])
        return PartialCorrelation(r, None, np.isnan(r))
    stacked = np.column_stack(cols)
    sigma = np.cov(stacked, rowvar=False)
    if np.any(np.diag(sigma) <= 0.0):
        return PartialCorrelation(float("nan"), None, True)
    prec = precision_matrix(sigma)
    omega = prec.precision
    res_var_a = 1.0 / omega[0, 0]
    res_var_b = 1.0 / omega[1, 1]
    # residual variance at the ridge floor means the variable was fully
    # explained by the conditioners (the regularizer alone props it up)
    floor_a = max(_RESIDUAL_VAR_TOL * sigma[0, 0], 100.0 * prec.ridge)
    floor_b = max(_RESIDUAL_VAR_TOL * sigma[1, 1], 100.0 * prec.ridge)
    if res_var_a < floor_a or res_var_b < floor_b:
        return PartialCorrelation(float("nan"), prec, True)
    r = -omega[0, 1] / np.sqrt(omega[0, 0] * omega[1, 1])
    return PartialCorrelation(float(min(1.0, max(-1.0, r))), prec, False)


def partial_pcc(a, b, conditioners=()) -> float:
    return partial_pcc_detailed(a, b, conditioners).value


@dataclass
class DelayResolution:
    """Resolved delays for every scanned pair plus per-pair exclusion
    decisions for the conditioning stage."""

    kpi: str
    pair_delays: dict[tuple[str, str], int | None] = field(default_factory=dict)
    synchrony: dict[tuple[str, str], bool] = field(default_factory=dict)
    peak_strengths: dict[tuple[str, str], float | None] = field(default_factory=dict)
    path_delays: dict[tuple[str, str], int | None] = field(default_factory=dict)
    excluded: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    synchrony_filter: bool = True

    def conditioning_set(self, cause: str) -> list[str]:
        dropped = {name for name, _ in self.excluded.get(cause, [])}
        out = []
        for (c, z), delay in self.path_delays.items():
            if c == cause and z not in dropped and delay is not None:
                out.append(z)
        return out

    def to_dict(self) -> dict:
        return {
            "kpi": self.kpi,
            "synchrony_filter": self.synchrony_filter,
            "pair_delays": {
                f"{c}->{e}": d for (c, e), d in sorted(self.pair_delays.items())
            },
            "synchrony": {
                f"{c}->{e}": bool(s) for (c, e), s in sorted(self.synchrony.items())
            },
            "path_delays": {
                f"{c}|{z}": d for (c, z), d in sorted(self.path_delays.items())
            },
            "excluded_disturbers": {
                c: [{"disturber": z, "reason": r} for z, r in sorted(items)]
                for c, items in sorted(self.excluded.items())
            },
        }


def resolve_delays(
    curves: CurveSet, kpi: str, synchrony_filter: bool = True
) -> DelayResolution:
    """Turn a full TDCCM scan into per-pair optimal delays and per-cause
    conditioning sets.

    A disturber is dropped from a cause's conditioning set when the
    cause-to-disturber relation is itself synchrony-flagged (unless the
    filter is disabled) or when no local maximum falls inside [0, pair
    delay].  With the filter disabled, synchrony-flagged cause-to-KPI pairs
    are assigned a causal delay of 1, reproducing the no-screening ablation.
    """
    res = DelayResolution(kpi=kpi, synchrony_filter=synchrony_filter)
    for (cause, effect), curve in curves.items():
        decision = optimal_delay(curve)
        res.synchrony[(cause, effect)] = decision.synchrony
        res.peak_strengths[(cause, effect)] = decision.peak_strength
        delay = decision.delay
        if (
            not synchrony_filter
            and effect == kpi
            and decision.synchrony
        ):
            delay = 1
        res.pair_delays[(cause, effect)] = delay
    for (cause, effect), curve in curves.items():
        if effect != kpi:
            continue
        pair_delay = res.pair_delays[(cause, kpi)]
        exclusions: list[tuple[str, str]] = []
        for (c, z), zcurve in curves.items():
            if c != cause or z == kpi:
                continue
            if pair_delay is None:
                exclusions.append((z, "cause has no resolved delay to the KPI"))
                continue
            if synchrony_filter and res.synchrony.get((cause, z), False):
                exclusions.append((z, "cause-to-disturber peak at negative delay"))
                continue
            pd = path_delay(zcurve, pair_delay)
            res.path_delays[(cause, z)] = pd
            if pd is None:
                exclusions.append((z, "no local maximum within the pair delay"))
        if exclusions:
            res.excluded[cause] = exclusions
            for z, _ in exclusions:
                res.path_delays.pop((cause, z), None)
    return res


@dataclass(frozen=True)
class TdpcmResult:
    """One direct-causality curve with per-delay diagnostics."""

    curve: CausalCurve
    disturbers: tuple[str, ...]
    clamped: np.ndarray
    ridge: np.ndarray


def tdpcm_curve(
    mset: ManifoldSet,
    cause: str,
    effect: str,
    disturbers: list[str],
    max_delay: int,
    resolution: DelayResolution | None = None,
) -> TdpcmResult:
    """Direct causal strength of ``cause`` on ``effect`` given disturbers,
    for every delay in [0 .. max_delay].

    With no disturbers this reduces pointwise to the plain cross-map curve.
    Conditioning delays that would go negative are clamped to zero and the
    clamp is recorded per (delay, disturber).
    """
    if not mset.usable(effect) or not mset.usable(cause):
        raise DataError(f"pair ({cause} -> {effect}) not available in manifold set")
    ds = mset.dataset
    y = ds.values(cause)
    effect_manifold = mset.manifolds[effect]
    effect_table = mset.tables[effect]
    cfg = mset.config
    L = int(effect_manifold.labels[-1])
    t_min = effect_manifold.t_min

    pair_delay = None
    if resolution is not None:
        pair_delay = resolution.pair_delays.get((cause, effect))
    if disturbers and pair_delay is None:
        raise DataError(
            f"conditioning for {cause}->{effect} requires a resolved pair delay"
        )
    path = {}
    for z in disturbers:
        if resolution is None or resolution.path_delays.get((cause, z)) is None:
            raise DataError(f"no path delay resolved for ({cause}, {z})")
        path[z] = resolution.path_delays[(cause, z)]

    delays = np.arange(0, max_delay + 1)
    strengths = np.full(delays.size, np.nan)
    clamped = np.zeros((delays.size, len(disturbers)), dtype=bool)
    ridge = np.zeros(delays.size, dtype=np.float64)

    cond_cache: dict[tuple[str, int], CrossMapPrediction] = {}

    def conditioner(z: str, g: int) -> CrossMapPrediction:
        key = (z, g)
        if key not in cond_cache:
            cond_cache[key] = cross_map_predict(
                mset.manifolds[z], y, g, mset.tables[z]
            )
        return cond_cache[key]

    for i, gamma in enumerate(int(d) for d in delays):
        pred = cross_map_predict(effect_manifold, y, gamma, effect_table)
        hi = L - gamma
        times = np.arange(t_min, hi + 1)
        cols = [pred.values[: times.size], y[times - 1]]
        usable = ~np.isnan(cols[0])
        for j, z in enumerate(disturbers):
            g = path[z] - pair_delay + gamma
            if g < 0:
                clamped[i, j] = True
                g = 0
            zpred = conditioner(z, g)
            offset = times[0] - int(zpred.times[0])
            zvals = zpred.values[offset : offset + times.size]
            cols.append(zvals)
            usable &= ~np.isnan(zvals)
        if usable.sum() < len(cols) + 1:
            continue
        trimmed = [c[usable] for c in cols]
        detail = partial_pcc_detailed(trimmed[0], trimmed[1], trimmed[2:])
        if detail.precision is not None:
            ridge[i] = detail.precision.ridge
        strengths[i] = detail.value

    curve = CausalCurve(
        cause, effect, delays, strengths, cfg.E, cfg.tau, L, method="tdpcm"
    )
    return TdpcmResult(curve, tuple(disturbers), clamped, ridge)


def tdpcm_optimal_delay(curve: CausalCurve) -> DelayDecision:
    """Arg-max over nonnegative local maxima of a direct-strength curve."""
    return optimal_delay(curve)


def compute_tdpcm_curves(
    mset: ManifoldSet,
    resolution: DelayResolution,
    max_delay: int,
) -> dict[str, TdpcmResult]:
    """Run the conditioning stage for every auxiliary against the KPI."""
    ds = mset.dataset
    kpi = resolution.kpi
    out: dict[str, TdpcmResult] = {}
    for cause in ds.aux_names:
        if not mset.usable(cause):
            continue
        disturbers = [z for z in resolution.conditioning_set(cause) if mset.usable(z)]
        out[cause] = tdpcm_curve(mset, cause, kpi, disturbers, max_delay, resolution)
    return out
