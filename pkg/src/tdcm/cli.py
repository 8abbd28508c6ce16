"""Command-line interface.

Subcommands cover the full workflow: ``synth`` writes benchmark data,
``ingest`` validates a CSV, ``embed-dim`` selects the reconstruction
dimension, ``tdccm``/``tdpcm`` run the causal scans, ``select`` optimizes the
feature threshold, ``train-eval`` fits and scores the soft sensor,
``compare`` runs the paired significance test, and ``pipeline`` chains
everything with caching.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .crossmap import compute_tdccm_curves, worker_count
from .dataset import FeatureId, SplitSpec, build_supervised, fit_minmax, load_csv
from .embedding import EmbeddingConfig, select_embedding_dim
from .errors import ConfigError, DataError, ToolError
from .feature_selection import build_threshold_candidates, optimize_threshold
from .crossmap import ManifoldSet
from .partial_crossmap import compute_tdpcm_curves, resolve_delays
from .pipeline import (
    RunConfig,
    emit_curve_plots_data,
    file_digest,
    run_pipeline,
    selection_inputs,
    write_csv,
    write_json,
)
from .soft_sensor import metrics_eval, pls_fit, pls_predict, wilcoxon_signed_rank
from .synthetic import chain_spec, fork_spec, generate

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ConfigError(message)


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="input CSV (header row of names)")
    p.add_argument("--kpi", required=True, help="name of the KPI column")


def _add_embed_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "-E",
        "--embedding-dim",
        default="auto",
        help="embedding dimension, or 'auto' for FNN selection (default auto)",
    )
    p.add_argument("--tau", type=int, default=1, help="embedding delay (default 1)")
    p.add_argument("--e-max", type=int, default=10, help="largest E tried by FNN")
    p.add_argument("--fnn-threshold", type=float, default=0.05)
    p.add_argument("--r-tol", type=float, default=15.0, help="FNN distance-ratio bound")
    p.add_argument("--a-tol", type=float, default=2.0, help="FNN attractor-size bound")


def _add_scan_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-delay", type=int, default=100, help="largest delay scanned")
    p.add_argument(
        "--neg-window", type=int, default=50, help="negative-lag synchrony window"
    )
    p.add_argument(
        "--pre-test-rows",
        type=int,
        default=None,
        help="rows used for inference and model development (default 3/4 of data)",
    )


def _resolve_embedding(ds, args) -> int:
    if args.embedding_dim == "auto":
        sel = select_embedding_dim(
            ds,
            tau=args.tau,
            e_max=args.e_max,
            threshold=args.fnn_threshold,
            r_tol=args.r_tol,
            a_tol=args.a_tol,
        )
        logger.info("FNN selected E=%d", sel.E)
        return sel.E
    try:
        return int(args.embedding_dim)
    except ValueError:
        raise ConfigError(
            f"embedding dimension must be an integer or 'auto', got {args.embedding_dim!r}"
        ) from None


def _pre_test_slice(ds, args):
    pre_rows = args.pre_test_rows if args.pre_test_rows else (ds.length * 3) // 4
    if not (1 < pre_rows <= ds.length):
        raise DataError(f"pre_test_rows {pre_rows} out of range for {ds.length} rows")
    return ds.rows(1, pre_rows), pre_rows


def _cmd_synth(args) -> int:
    make = chain_spec if args.topology == "chain" else fork_spec
    kwargs = dict(
        length=args.length,
        seed=args.seed,
        burn_in=args.burn_in,
        literal_coupling=args.literal_eq,
    )
    if args.noise_std is not None:
        kwargs["noise_std"] = args.noise_std
    spec = make(**kwargs)
    ds, truth = generate(spec, kpi=args.kpi_column)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = zip(*[ds.column(n).values for n in ds.names])
    write_csv(out / "data.csv", list(ds.names), rows)
    write_json(out / "ground_truth.json", truth.to_dict())
    print(f"wrote {out / 'data.csv'} ({ds.length} rows) and ground_truth.json")
    return 0


def _cmd_ingest(args) -> int:
    ds = load_csv(args.data, args.kpi)
    summary = {
        "path": str(args.data),
        "digest": file_digest(args.data),
        "rows": ds.length,
        "kpi": ds.kpi,
        "n_auxiliary": ds.n_aux,
        "columns": {},
    }
    for name in ds.names:
        v = ds.column(name).values
        mean = float(v.mean())
        std = float(v.std())
        summary["columns"][name] = {
            "min": float(v.min()),
            "max": float(v.max()),
            "mean": mean,
            "std": std,
            "coefficient_of_variation": std / abs(mean) if mean != 0.0 else None,
            "constant": bool(std == 0.0),
        }
    if args.out:
        write_json(Path(args.out) / "dataset_summary.json", summary)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_embed_dim(args) -> int:
    ds = load_csv(args.data, args.kpi)
    pre, _ = _pre_test_slice(ds, args)
    sel = select_embedding_dim(
        pre,
        tau=args.tau,
        e_max=args.e_max,
        threshold=args.fnn_threshold,
        r_tol=args.r_tol,
        a_tol=args.a_tol,
    )
    names = list(sel.profiles)
    print(",".join(["E"] + names))
    for e in range(1, args.e_max + 1):
        vals = [repr(float(sel.profiles[n].fractions[e - 1])) for n in names]
        print(",".join([str(e)] + vals))
    print(f"selected_E,{sel.E}")
    if args.out:
        out = Path(args.out)
        write_csv(
            out / "fnn_profile.csv",
            ["E"] + names,
            [
                [e] + [float(sel.profiles[n].fractions[e - 1]) for n in names]
                for e in range(1, args.e_max + 1)
            ],
        )
        write_json(
            out / "embedding.json",
            {"E": sel.E, "tau": args.tau, "source": "fnn",
             "skipped_constant": list(sel.skipped_constant)},
        )
    return 0


def _scan(args, need_tdpcm: bool):
    ds = load_csv(args.data, args.kpi)
    pre, pre_rows = _pre_test_slice(ds, args)
    E = _resolve_embedding(pre, args)
    mset = ManifoldSet(pre, EmbeddingConfig(E, args.tau))
    curves = compute_tdccm_curves(
        mset, args.max_delay, args.neg_window, workers=worker_count()
    )
    synchrony_filter = not getattr(args, "disable_synchrony_filter", False)
    resolution = resolve_delays(curves, args.kpi, synchrony_filter=synchrony_filter)
    tdpcm = None
    if need_tdpcm:
        tdpcm = compute_tdpcm_curves(mset, resolution, args.max_delay)
    return ds, pre, pre_rows, E, curves, resolution, tdpcm


def _cmd_tdccm(args) -> int:
    _, _, _, E, curves, resolution, _ = _scan(args, need_tdpcm=False)
    out = Path(args.out)
    for (cause, effect), curve in sorted(curves.items()):
        write_csv(
            out / f"{cause}__{effect}_tdccm.csv",
            ["delay", "rho"],
            zip((int(d) for d in curve.delays), (float(s) for s in curve.strengths)),
        )
    emit_curve_plots_data(curves.values(), out / "curves_tdccm.csv")
    peaks = {
        f"{c}->{e}": {
            "delay": resolution.pair_delays[(c, e)],
            "peak_strength": resolution.peak_strengths[(c, e)],
            "synchrony": resolution.synchrony[(c, e)],
        }
        for (c, e) in sorted(resolution.pair_delays)
    }
    write_json(out / "peaks.json", {"E": E, "tau": args.tau, "pairs": peaks})
    print(f"wrote {len(curves)} curves to {out}")
    return 0


def _cmd_tdpcm(args) -> int:
    ds, _, _, E, curves, resolution, tdpcm = _scan(args, need_tdpcm=True)
    out = Path(args.out)
    emit_curve_plots_data((r.curve for r in tdpcm.values()), out / "curves_tdpcm.csv")
    for cause, r in sorted(tdpcm.items()):
        write_csv(
            out / f"{cause}_tdpcm.csv",
            ["delay", "rho"],
            zip((int(d) for d in r.curve.delays), (float(s) for s in r.curve.strengths)),
        )
    write_json(out / "delay_resolution.json", resolution.to_dict())
    excluded = resolution.to_dict()["excluded_disturbers"]
    write_json(out / "excluded_disturbers.json", excluded)
    print(f"wrote {len(tdpcm)} conditioned curves to {out}")
    return 0


def _cmd_select(args) -> int:
    ds, pre, pre_rows, E, curves, resolution, tdpcm = _scan(
        args, need_tdpcm=args.mode == "tdpcm"
    )
    curve_map, delays = selection_inputs(
        args.mode, curves, tdpcm, resolution, args.disable_synchrony_filter
    )
    candidates = build_threshold_candidates(curve_map, args.D)
    n_labeled = pre_rows - args.max_delay
    train_rows = args.train_rows if args.train_rows else max(1, (n_labeled * 9) // 10)
    sel = optimize_threshold(
        pre,
        curve_map,
        delays,
        candidates,
        SplitSpec(train_rows, n_labeled),
        args.max_delay,
        n_components=args.n_components,
        pre_delay_extension=args.pre_delay_extension,
        mode=args.mode,
    )
    out = Path(args.out)
    write_json(out / "selection.json", sel.to_dict())
    write_csv(
        out / "features.csv",
        ["variable", "lag"],
        [(f.variable, f.lag) for f in sel.features],
    )
    write_csv(out / "threshold_scores.csv", ["threshold", "validation_rmse"], sel.scores)
    print(
        f"selected {len(sel.features)} features at threshold {sel.c_best!r} "
        f"({args.mode} mode)"
    )
    return 0


def _read_features(path: str) -> list[FeatureId]:
    feats = []
    with open(path, newline="") as fh:
        import csv as _csv

        reader = _csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"variable", "lag"}:
            raise DataError(f"{path}: expected columns 'variable' and 'lag'")
        for row in reader:
            feats.append(FeatureId(row["variable"], int(row["lag"])))
    if not feats:
        raise DataError(f"{path}: no features listed")
    return feats


def _cmd_train_eval(args) -> int:
    ds = load_csv(args.data, args.kpi)
    feats = _read_features(args.features)
    max_delay = args.max_delay if args.max_delay else max(f.lag for f in feats)
    pre, pre_rows = _pre_test_slice(ds, args)
    if pre_rows >= ds.length:
        raise DataError("no test rows left; lower --pre-test-rows")
    params = fit_minmax(pre)
    sup_train = build_supervised(params.transform(pre), feats, max_delay)
    model = pls_fit(
        sup_train.X,
        sup_train.y,
        args.n_components,
        feature_names=[f"{f.variable}(t-{f.lag})" for f in feats],
    )
    sup_all = build_supervised(params.transform(ds), feats, max_delay)
    sup_test = sup_all.restrict_labels(pre_rows + 1, ds.length)
    predictions = pls_predict(model, sup_test.X)
    metrics = metrics_eval(sup_test.y, predictions)
    out = Path(args.out)
    write_json(out / "model.json", model.to_dict())
    out.mkdir(parents=True, exist_ok=True)
    params.to_json(out / "normalization.json")
    write_json(out / "metrics.json", metrics.to_dict())
    write_csv(
        out / "metrics.csv",
        ["r2", "rmse", "mae"],
        [(metrics.r2, metrics.rmse, metrics.mae)],
    )
    write_csv(
        out / "predictions.csv",
        ["time", "actual", "predicted"],
        zip(
            (int(t) for t in sup_test.labels),
            (float(v) for v in sup_test.y),
            (float(v) for v in predictions),
        ),
    )
    print(f"test metrics: r2={metrics.r2!r} rmse={metrics.rmse!r} mae={metrics.mae!r}")
    return 0


def _read_metric_column(path: str, metric: str) -> np.ndarray:
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None or metric not in reader.fieldnames:
            raise DataError(f"{path}: no column named {metric!r}")
        vals = [float(row[metric]) for row in reader]
    if not vals:
        raise DataError(f"{path}: empty metrics file")
    return np.asarray(vals)


def _cmd_compare(args) -> int:
    results = {}
    for metric in args.metrics.split(","):
        metric = metric.strip()
        a = _read_metric_column(args.a, metric)
        b = _read_metric_column(args.b, metric)
        if a.size != b.size:
            raise DataError(
                f"metric {metric!r}: {args.a} has {a.size} rows, {args.b} has {b.size}"
            )
        res = wilcoxon_signed_rank(a, b)
        results[metric] = {
            "r_plus": res.r_plus,
            "r_minus": res.r_minus,
            "p_value": res.p_value,
            "median_delta": res.median_delta,
            "n": res.n,
            "method": res.method,
        }
    print(json.dumps(results, indent=2, sort_keys=True))
    if args.out:
        write_json(Path(args.out) / "comparison.json", results)
    return 0


def _cmd_pipeline(args) -> int:
    file_cfg: dict = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    overrides = {
        "data": args.data,
        "kpi": args.kpi,
        "out_dir": args.out,
        "embedding_dim": args.embedding_dim,
        "tau": args.tau,
        "max_delay": args.max_delay,
        "neg_window": args.neg_window,
        "n_thresholds": args.D,
        "mode": args.mode,
        "n_components": args.n_components,
        "pre_test_rows": args.pre_test_rows,
        "train_rows": args.train_rows,
        "pre_delay_extension": args.pre_delay_extension,
        "disable_synchrony_filter": args.disable_synchrony_filter or None,
        "e_max": args.e_max,
        "fnn_threshold": args.fnn_threshold,
        "fnn_r_tol": args.r_tol,
        "fnn_a_tol": args.a_tol,
        "seed": args.seed,
        "cache_dir": args.cache_dir,
    }
    if args.sweep:
        overrides["sweep"] = args.sweep
    merged = dict(file_cfg)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    merged.setdefault("disable_synchrony_filter", False)
    if "sweep" in merged and merged["sweep"] is not None:
        merged["sweep"] = tuple(int(v) for v in merged["sweep"])
    if "embedding_dim" in merged and merged["embedding_dim"] != "auto":
        merged["embedding_dim"] = int(merged["embedding_dim"])
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = {"data", "kpi", "out_dir"} - set(merged)
    if missing:
        raise ConfigError(f"missing required config keys: {sorted(missing)}")
    cfg = RunConfig(**merged)
    manifest = run_pipeline(cfg)
    print(f"pipeline complete: {len(manifest.artifacts)} artifacts in {cfg.out_dir}")
    print(f"config hash: {manifest.config_hash}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(
        prog="tdcm",
        description=(
            "Time-delayed cross mapping: causal-strength curves over delay "
            "windows, direct-causality screening, validation-driven feature "
            "selection and PLS soft sensors."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a benchmark system CSV")
    p.add_argument("--topology", choices=["chain", "fork"], required=True)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--noise-std", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--kpi-column", default=None, help="KPI name (default last variable)")
    p.add_argument(
        "--literal-eq",
        action="store_true",
        help="use the alternate third-map coupling (self term from variable 2)",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="validate a CSV and print a summary")
    _add_data_args(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("embed-dim", help="FNN embedding-dimension selection")
    _add_data_args(p)
    _add_embed_args(p)
    p.add_argument("--pre-test-rows", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_embed_dim)

    p = sub.add_parser("tdccm", help="all-pairs delayed cross-mapping scan")
    _add_data_args(p)
    _add_embed_args(p)
    _add_scan_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_tdccm)

    p = sub.add_parser("tdpcm", help="direct-causality scan with conditioning")
    _add_data_args(p)
    _add_embed_args(p)
    _add_scan_args(p)
    p.add_argument("--disable-synchrony-filter", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_tdpcm)

    p = sub.add_parser("select", help="validation-driven feature selection")
    _add_data_args(p)
    _add_embed_args(p)
    _add_scan_args(p)
    p.add_argument("--mode", choices=["tdccm", "tdpcm"], default="tdpcm")
    p.add_argument("--D", type=int, default=20, help="number of threshold candidates")
    p.add_argument("--n-components", type=int, default=3)
    p.add_argument("--train-rows", type=int, default=None)
    p.add_argument("--pre-delay-extension", type=int, default=0)
    p.add_argument("--disable-synchrony-filter", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("train-eval", help="fit PLS on a feature manifest and score")
    _add_data_args(p)
    p.add_argument("--features", required=True, help="features.csv manifest")
    p.add_argument("--max-delay", type=int, default=None)
    p.add_argument("--n-components", type=int, default=3)
    p.add_argument("--pre-test-rows", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_eval)

    p = sub.add_parser("compare", help="Wilcoxon signed-rank between metric CSVs")
    p.add_argument("--a", required=True, help="first metrics CSV")
    p.add_argument("--b", required=True, help="second metrics CSV")
    p.add_argument("--metrics", default="rmse", help="comma-separated column names")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--config", default=None, help="JSON config; flags override it")
    p.add_argument("--data", default=None)
    p.add_argument("--kpi", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("-E", "--embedding-dim", default=None)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--e-max", type=int, default=None)
    p.add_argument("--fnn-threshold", type=float, default=None)
    p.add_argument("--r-tol", type=float, default=None)
    p.add_argument("--a-tol", type=float, default=None)
    p.add_argument("--max-delay", type=int, default=None)
    p.add_argument("--neg-window", type=int, default=None)
    p.add_argument("--D", type=int, default=None)
    p.add_argument("--mode", choices=["tdccm", "tdpcm"], default=None)
    p.add_argument("--n-components", type=int, default=None)
    p.add_argument("--pre-test-rows", type=int, default=None)
    p.add_argument("--train-rows", type=int, default=None)
    p.add_argument(
        "--sweep",
        nargs=3,
        type=int,
        metavar=("START", "STOP", "STEP"),
        default=None,
        help="sweep training sizes over labeled rows",
    )
    p.add_argument("--pre-delay-extension", type=int, default=None)
    p.add_argument("--disable-synchrony-filter", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ToolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
