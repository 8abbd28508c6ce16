"""End-to-end orchestration: configuration, stage caching, artifact layout.

A run writes one directory: the resolved config echo, causal-strength curves
(per pair and in long plot-friendly form), the delay resolution with
synchrony verdicts and disturber exclusions, the threshold-selection record,
the fitted model with its normalization parameters, test metrics and
predictions, and a manifest tying everything to the input digest and config
hash.  The expensive cross-mapping stage is cached by content hash so sweeps
and reruns reuse it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import __version__
from .crossmap import (
    CausalCurve,
    CurveSet,
    ManifoldSet,
    worker_count,
    compute_tdccm_curves,
)
from .dataset import (
    AccessLog,
    Dataset,
    FeatureId,
    SplitSpec,
    build_supervised,
    fit_minmax,
    load_csv,
)
from .embedding import EmbeddingConfig, select_embedding_dim
from .errors import ConfigError, DataError
from .feature_selection import (
    SelectionResult,
    build_threshold_candidates,
    optimize_threshold,
)
from .partial_crossmap import (
    DelayResolution,
    TdpcmResult,
    compute_tdpcm_curves,
    resolve_delays,
    tdpcm_optimal_delay,
)
from .soft_sensor import Metrics, metrics_eval, pls_fit, pls_predict, stability_sweep

logger = logging.getLogger(__name__)

MODES = ("tdccm", "tdpcm")


@dataclass
class RunConfig:
    """Validated description of one pipeline run.

    Row counts are 1-based and refer to the raw series: ``pre_test_rows``
    rows feed causal inference and model development, the rest are the test
    block.  ``train_rows`` (or the sweep range) counts labeled samples, of
    which there are ``pre_test_rows - max_delay``.
    """

    data: str
    kpi: str
    out_dir: str
    embedding_dim: int | str = "auto"
    tau: int = 1
    max_delay: int = 100
    neg_window: int = 50
    n_thresholds: int = 20
    mode: str = "tdpcm"
    n_components: int = 3
    pre_test_rows: int | None = None
    train_rows: int | None = None
    sweep: tuple[int, int, int] | None = None
    pre_delay_extension: int = 0
    disable_synchrony_filter: bool = False
    e_max: int = 10
    fnn_threshold: float = 0.05
    fnn_r_tol: float = 15.0
    fnn_a_tol: float = 2.0
    seed: int | None = None
    cache_dir: str | None = None

    def validate(self) -> None:
        if not self.data:
            raise ConfigError("a dataset path is required")
        if not self.kpi:
            raise ConfigError("a KPI column name is required")
        if not self.out_dir:
            raise ConfigError("an output directory is required")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.embedding_dim != "auto":
            if not isinstance(self.embedding_dim, int) or self.embedding_dim < 1:
                raise ConfigError("embedding_dim must be 'auto' or a positive integer")
        for name in ("tau", "max_delay", "n_thresholds", "n_components", "e_max"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.n_thresholds < 2:
            raise ConfigError("n_thresholds must be at least 2")
        if not isinstance(self.neg_window, int) or self.neg_window < 0:
            raise ConfigError("neg_window must be a nonnegative integer")
        if self.pre_delay_extension < 0:
            raise ConfigError("pre_delay_extension must be nonnegative")
        if self.sweep is not None:
            start, stop, step = self.sweep
            if step < 1 or stop < start or start < 1:
                raise ConfigError(f"invalid sweep range {self.sweep}")
        if self.train_rows is not None and self.train_rows < 1:
            raise ConfigError("train_rows must be positive")
        if self.pre_test_rows is not None and self.pre_test_rows < 2:
            raise ConfigError("pre_test_rows must be at least 2")
        if not (0.0 < self.fnn_threshold < 1.0):
            raise ConfigError("fnn_threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["sweep"] = list(self.sweep) if self.sweep is not None else None
        return payload

    def config_hash(self) -> str:
        payload = self.to_dict()
        payload.pop("out_dir")
        payload.pop("cache_dir")
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode()
        ).hexdigest()


@dataclass
class StageRecord:
    name: str
    seconds: float
    cache_hit: bool = False


@dataclass
class RunManifest:
    """Provenance record of one run: what was read, what was produced."""

    config: dict
    config_hash: str
    input_digest: str
    tool_version: str
    created_utc: str
    stages: list[StageRecord] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "tool_version": self.tool_version,
            "created_utc": self.created_utc,
            "config": self.config,
            "config_hash": self.config_hash,
            "input_digest": self.input_digest,
            "stages": [asdict(s) for s in self.stages],
            "artifacts": sorted(self.artifacts),
        }


def file_digest(path: str | Path) -> str:
    p = Path(path)
    if not p.exists():
        raise DataError(f"input file not found: {p}")
    return hashlib.sha256(p.read_bytes()).hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)

    def clean(obj):
        if isinstance(obj, float) and not np.isfinite(obj):
            return None
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, (np.floating, np.integer)):
            return clean(obj.item())
        return obj

    path.write_text(json.dumps(clean(payload), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [_fmt(v) if isinstance(v, float) else v for v in row]
            )


def emit_curve_plots_data(curves: Iterable[CausalCurve], path: str | Path) -> None:
    """Long-format CSV of strength curves, one row per (pair, delay),
    ordered by (cause, effect) for byte-stable output."""
    rows = []
    for curve in sorted(curves, key=lambda c: (c.cause, c.effect, c.method)):
        for d, s in zip(curve.delays, curve.strengths):
            rows.append((curve.cause, curve.effect, int(d), float(s), curve.method))
    write_csv(Path(path), ["cause", "effect", "delay", "strength", "method"], rows)


def _curves_to_payload(curves: CurveSet) -> dict:
    out = {}
    for (cause, effect), c in sorted(curves.items()):
        out[f"{cause}->{effect}"] = {
            "cause": cause,
            "effect": effect,
            "delays": [int(d) for d in c.delays],
            "strengths": [None if np.isnan(s) else float(s) for s in c.strengths],
            "E": c.E,
            "tau": c.tau,
            "L": c.L,
            "method": c.method,
        }
    return out


def _curves_from_payload(payload: dict) -> CurveSet:
    curves = CurveSet()
    for entry in payload.values():
        strengths = np.array(
            [np.nan if s is None else s for s in entry["strengths"]], dtype=np.float64
        )
        curves[(entry["cause"], entry["effect"])] = CausalCurve(
            entry["cause"],
            entry["effect"],
            np.asarray(entry["delays"], dtype=np.int64),
            strengths,
            entry["E"],
            entry["tau"],
            entry["L"],
            entry["method"],
        )
    return curves


class StageCache:
    """Content-addressed JSON store for stage outputs."""

    def __init__(self, root: Path) -> None:
        self.root = root

    def key(self, stage: str, payload: dict) -> str:
        blob = json.dumps({"stage": stage, **payload}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:24]

    def path(self, stage: str, key: str) -> Path:
        return self.root / f"{stage}_{key}.json"

    def load(self, stage: str, key: str) -> dict | None:
        p = self.path(stage, key)
        if not p.exists():
            return None
        try:
            return json.loads(p.read_text())
        except (json.JSONDecodeError, OSError):
            logger.warning("ignoring unreadable cache entry %s", p)
            return None

    def store(self, stage: str, key: str, payload: dict) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        self.path(stage, key).write_text(json.dumps(payload, sort_keys=True))


def selection_inputs(
    mode: str,
    tdccm: CurveSet,
    tdpcm: Mapping[str, TdpcmResult] | None,
    resolution: DelayResolution,
    disable_synchrony_filter: bool = False,
) -> tuple[dict[str, CausalCurve], dict[str, int]]:
    """Per-variable strength curves and causal influence delays for the
    selection stage, honoring the chosen method and the synchrony ablation.

    With the filter disabled, synchrony-flagged variables are forced to a
    causal delay of 1 so their high-strength early lags re-enter the
    candidate windows.
    """
    kpi = resolution.kpi
    curve_map: dict[str, CausalCurve] = {}
    delays: dict[str, int] = {}
    if mode == "tdccm":
        for (cause, effect), curve in sorted(tdccm.items()):
            if effect == kpi:
                curve_map[cause] = curve.nonnegative()
    else:
        if tdpcm is None:
            raise DataError("tdpcm curves required for tdpcm mode")
        curve_map = {cause: tdpcm[cause].curve for cause in sorted(tdpcm)}
    for cause, curve in curve_map.items():
        if disable_synchrony_filter and resolution.synchrony.get((cause, kpi)):
            delays[cause] = 1
            continue
        if mode == "tdccm":
            delay = resolution.pair_delays.get((cause, kpi))
        else:
            delay = tdpcm_optimal_delay(curve).delay
        if delay is not None:
            delays[cause] = delay
    return curve_map, delays


def _final_fit_and_eval(
    ds: Dataset,
    features: tuple[FeatureId, ...],
    pre_test_rows: int,
    max_delay: int,
    n_components: int,
    access_log: AccessLog | None,
):
    """Train on every labeled pre-test row, evaluate on the test block."""
    if access_log is not None:
        access_log.set_phase("final-train")
    params = fit_minmax(ds.rows(1, pre_test_rows))
    normalized_pre = params.transform(ds.rows(1, pre_test_rows))
    sup_train = build_supervised(normalized_pre, features, max_delay)
    model = pls_fit(
        sup_train.X,
        sup_train.y,
        n_components,
        feature_names=[f"{f.variable}(t-{f.lag})" for f in features],
    )
    if access_log is not None:
        access_log.set_phase("test-eval")
    normalized_full = params.transform(ds)
    sup_all = build_supervised(normalized_full, features, max_delay)
    sup_test = sup_all.restrict_labels(pre_test_rows + 1, ds.length)
    predictions = pls_predict(model, sup_test.X)
    metrics = metrics_eval(sup_test.y, predictions)
    return model, params, metrics, sup_test, predictions


def run_pipeline(cfg: RunConfig, access_log: AccessLog | None = None) -> RunManifest:
    """Execute every stage and persist all artifacts under cfg.out_dir."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(Path(cfg.cache_dir) if cfg.cache_dir else out / "cache")
    manifest = RunManifest(
        config=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        input_digest="",
        tool_version=__version__,
        created_utc=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    )

    def emit(relpath: str) -> Path:
        manifest.artifacts.append(relpath)
        return out / relpath

    write_json(emit("config.json"), cfg.to_dict())

    # ingest
    t0 = time.time()
    manifest.input_digest = file_digest(cfg.data)
    ds = load_csv(cfg.data, cfg.kpi)
    if access_log is not None:
        ds = ds.with_access_log(access_log)
        access_log.set_phase("ingest")
    L = ds.length
    pre_test_rows = cfg.pre_test_rows if cfg.pre_test_rows else (L * 3) // 4
    if not (1 < pre_test_rows < L):
        raise DataError(
            f"pre_test_rows {pre_test_rows} must leave a nonempty test block in {L} rows"
        )
    n_labeled = pre_test_rows - cfg.max_delay
    if n_labeled < 4:
        raise DataError(
            f"max_delay {cfg.max_delay} leaves {n_labeled} labeled rows; need >= 4"
        )
    pre = ds.rows(1, pre_test_rows)
    manifest.stages.append(StageRecord("ingest", time.time() - t0))

    # embedding dimension
    t0 = time.time()
    if access_log is not None:
        access_log.set_phase("embed-dim")
    if cfg.embedding_dim == "auto":
        selection = select_embedding_dim(
            pre,
            tau=cfg.tau,
            e_max=cfg.e_max,
            threshold=cfg.fnn_threshold,
            r_tol=cfg.fnn_r_tol,
            a_tol=cfg.fnn_a_tol,
        )
        E = selection.E
        write_csv(
            emit("fnn_profile.csv"),
            ["E"] + list(selection.profiles),
            [
                [e] + [float(p.fractions[e - 1]) for p in selection.profiles.values()]
                for e in range(1, cfg.e_max + 1)
            ],
        )
        write_json(
            emit("embedding.json"),
            {
                "E": E,
                "tau": cfg.tau,
                "source": "fnn",
                "threshold": cfg.fnn_threshold,
                "skipped_constant": list(selection.skipped_constant),
            },
        )
    else:
        E = int(cfg.embedding_dim)
        write_json(
            emit("embedding.json"), {"E": E, "tau": cfg.tau, "source": "config"}
        )
    manifest.stages.append(StageRecord("embed-dim", time.time() - t0))

    ecfg = EmbeddingConfig(E, cfg.tau)
    mset: ManifoldSet | None = None

    def manifolds() -> ManifoldSet:
        nonlocal mset
        if mset is None:
            mset = ManifoldSet(pre, ecfg)
        return mset

    # tdccm scan
    t0 = time.time()
    if access_log is not None:
        access_log.set_phase("tdccm")
    tdccm_key = cache.key(
        "tdccm",
        {
            "input": manifest.input_digest,
            "kpi": cfg.kpi,
            "pre_test_rows": pre_test_rows,
            "E": E,
            "tau": cfg.tau,
            "max_delay": cfg.max_delay,
            "neg_window": cfg.neg_window,
        },
    )
    cached = cache.load("tdccm", tdccm_key)
    tdccm_hit = cached is not None
    if tdccm_hit:
        tdccm = _curves_from_payload(cached)
    else:
        tdccm = compute_tdccm_curves(
            manifolds(), cfg.max_delay, cfg.neg_window, workers=worker_count()
        )
        cache.store("tdccm", tdccm_key, _curves_to_payload(tdccm))
    emit_curve_plots_data(tdccm.values(), emit("curves_tdccm.csv"))
    for (cause, effect), curve in sorted(tdccm.items()):
        write_csv(
            emit(f"curves/{cause}__{effect}_tdccm.csv"),
            ["delay", "rho"],
            zip((int(d) for d in curve.delays), (float(s) for s in curve.strengths)),
        )
    manifest.stages.append(
        StageRecord("tdccm", time.time() - t0, cache_hit=tdccm_hit)
    )

    resolution = resolve_delays(
        tdccm, cfg.kpi, synchrony_filter=not cfg.disable_synchrony_filter
    )
    write_json(emit("delay_resolution.json"), resolution.to_dict())

    # tdpcm conditioning
    tdpcm: dict[str, TdpcmResult] | None = None
    if cfg.mode == "tdpcm":
        t0 = time.time()
        if access_log is not None:
            access_log.set_phase("tdpcm")
        tdpcm_key = cache.key(
            "tdpcm",
            {
                "input": manifest.input_digest,
                "kpi": cfg.kpi,
                "pre_test_rows": pre_test_rows,
                "E": E,
                "tau": cfg.tau,
                "max_delay": cfg.max_delay,
                "neg_window": cfg.neg_window,
                "synchrony_filter": not cfg.disable_synchrony_filter,
            },
        )
        cached = cache.load("tdpcm", tdpcm_key)
        tdpcm_hit = cached is not None
        if tdpcm_hit:
            restored = _curves_from_payload(cached["curves"])
            tdpcm = {
                cause: TdpcmResult(
                    restored[(cause, cfg.kpi)],
                    tuple(cached["disturbers"][cause]),
                    np.asarray(cached["clamped"][cause], dtype=bool),
                    np.asarray(cached["ridge"][cause], dtype=np.float64),
                )
                for cause in cached["disturbers"]
            }
        else:
            tdpcm = compute_tdpcm_curves(manifolds(), resolution, cfg.max_delay)
            curveset = CurveSet(
                {(c, cfg.kpi): r.curve for c, r in tdpcm.items()}
            )
            cache.store(
                "tdpcm",
                tdpcm_key,
                {
                    "curves": _curves_to_payload(curveset),
                    "disturbers": {c: list(r.disturbers) for c, r in tdpcm.items()},
                    "clamped": {c: r.clamped.tolist() for c, r in tdpcm.items()},
                    "ridge": {c: r.ridge.tolist() for c, r in tdpcm.items()},
                },
            )
        emit_curve_plots_data(
            (r.curve for r in tdpcm.values()), emit("curves_tdpcm.csv")
        )
        for cause, r in sorted(tdpcm.items()):
            write_csv(
                emit(f"curves/{cause}_tdpcm.csv"),
                ["delay", "rho"],
                zip(
                    (int(d) for d in r.curve.delays),
                    (float(s) for s in r.curve.strengths),
                ),
            )
        write_json(
            emit("tdpcm_diagnostics.json"),
            {
                cause: {
                    "disturbers": list(r.disturbers),
                    "clamped_delays": [
                        int(d)
                        for d, any_clamp in zip(r.curve.delays, r.clamped.any(axis=1))
                        if any_clamp
                    ],
                    "max_ridge": float(r.ridge.max()) if r.ridge.size else 0.0,
                }
                for cause, r in sorted(tdpcm.items())
            },
        )
        manifest.stages.append(
            StageRecord("tdpcm", time.time() - t0, cache_hit=tdpcm_hit)
        )

    # threshold selection + final evaluation, optionally swept
    t0 = time.time()
    if access_log is not None:
        access_log.set_phase("select")
    curve_map, delays = selection_inputs(
        cfg.mode, tdccm, tdpcm, resolution, cfg.disable_synchrony_filter
    )
    candidates = build_threshold_candidates(curve_map, cfg.n_thresholds)
    default_train = max(1, (n_labeled * 9) // 10)
    if cfg.sweep is not None:
        start, stop, step = cfg.sweep
        sizes = list(range(start, stop + 1, step))
    else:
        sizes = [cfg.train_rows if cfg.train_rows else default_train]
    for size in sizes:
        if not (0 < size < n_labeled):
            raise DataError(
                f"train size {size} must lie in [1, {n_labeled - 1}] "
                f"(labeled rows minus validation)"
            )
    manifest.stages.append(StageRecord("select", time.time() - t0))

    t0 = time.time()
    last: dict = {}

    def evaluate(size: int) -> Metrics:
        if access_log is not None:
            access_log.set_phase("select")
        sel = optimize_threshold(
            pre,
            curve_map,
            delays,
            candidates,
            SplitSpec(size, n_labeled),
            cfg.max_delay,
            n_components=cfg.n_components,
            pre_delay_extension=cfg.pre_delay_extension,
            mode=cfg.mode,
        )
        model, params, metrics, sup_test, predictions = _final_fit_and_eval(
            ds, sel.features, pre_test_rows, cfg.max_delay, cfg.n_components,
            access_log,
        )
        last.update(
            selection=sel,
            model=model,
            params=params,
            metrics=metrics,
            sup_test=sup_test,
            predictions=predictions,
        )
        return metrics

    sweep = stability_sweep(sizes, evaluate)
    manifest.stages.append(StageRecord("train-eval", time.time() - t0))

    sel: SelectionResult = last["selection"]
    write_json(emit("selection.json"), sel.to_dict())
    write_csv(
        emit("features.csv"),
        ["variable", "lag"],
        [(f.variable, f.lag) for f in sel.features],
    )
    write_csv(emit("threshold_scores.csv"), ["threshold", "validation_rmse"], sel.scores)
    write_json(emit("model.json"), last["model"].to_dict())
    last["params"].to_json(emit("normalization.json"))
    write_json(emit("metrics.json"), last["metrics"].to_dict())
    write_csv(
        emit("predictions.csv"),
        ["time", "actual", "predicted"],
        zip(
            (int(t) for t in last["sup_test"].labels),
            (float(v) for v in last["sup_test"].y),
            (float(v) for v in last["predictions"]),
        ),
    )
    write_csv(
        emit("sweep_metrics.csv"),
        ["train_size", "r2", "rmse", "mae"],
        [
            (size, m.r2, m.rmse, m.mae)
            for size, m in zip(sweep.sizes, sweep.metrics)
        ],
    )
    write_json(emit("sweep_summary.json"), sweep.summary)

    write_json(emit("manifest.json"), manifest.to_dict())
    return manifest
