"""Command-line front end: ``ersm prepare | train | predict | evaluate``.

Settings come from built-in defaults, then an optional flat JSON config
file (``--config``), then command-line flags; later sources win.
Exit codes: 0 success, 2 input error, 3 data-coverage error,
4 internal invariant violation.
"""

import argparse
import csv
import json
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import errors, harness, igrf, longnorm
from .ingest import read_kp
from .prepare import fill_for_modelling, load_station, prepare_station, station_metadata, write_prepared
from .regressors import build_features, fit_knn, fit_linear, fit_nn, load_model, predict, save_model
from .timeseries import SECONDS_PER_DAY, intersect

log = logging.getLogger("ersm")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_COVERAGE, EXIT_INTERNAL = 0, 2, 3, 4
KINDS = ("linear", "knn", "nn")

DEFAULTS = {
    "ers_path": None,
    "lrs_path": None,
    "kp_path": None,
    "igrf_path": None,
    "core_csv_path": None,
    "model": "all",
    "cutoff_cph": longnorm.DEFAULT_CUTOFF_CPH,
    "output_cutoff_cph": 1.5,
    "spike_threshold_nT": 100.0,
    "seed": None,
    "output_dir": ".",
    "start": None,
    "end": None,
    "train_start": None,
    "train_end": None,
    "model_file": None,
    "output": None,
    "nn_epochs": None,
    "knn_hops": None,
    "n_jobs": 1,
    "trace_block": None,
}
PATH_KEYS = ("ers_path", "lrs_path", "kp_path", "igrf_path", "core_csv_path", "output_dir", "model_file", "output")

COVERAGE_ERRORS = (
    errors.NoOverlap, errors.TooShort, errors.SpanTooShort, errors.EmptySeries,
    errors.NoValidationData, errors.InvalidShift, errors.DegenerateFit, errors.OutOfRange,
)
INPUT_ERRORS = (errors.ParseError, errors.InvalidArgument, OSError)


class UsageError(Exception):
    pass


def parse_time(value):
    """Epoch seconds from a number or an ISO date/datetime (UTC)."""
    if value is None or isinstance(value, (int, float)):
        return value
    try:
        return float(value)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    except ValueError:
        raise UsageError(f"cannot parse time {value!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _as_list(v):
    if v is None:
        return None
    return [v] if isinstance(v, str) else list(v)


def load_config(path):
    """Flat JSON object; relative paths resolve against the file's directory."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise errors.ParseError(f"invalid JSON: {exc.msg}", exc.lineno, str(path)) from None
    if not isinstance(doc, dict):
        raise errors.ParseError("config must be a JSON object", None, str(path))
    unknown = sorted(set(doc) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys in {path}: {', '.join(unknown)}")
    bad = [k for k, v in doc.items() if isinstance(v, (dict,))]
    if bad:
        raise UsageError(f"config must be flat; nested values for {', '.join(bad)}")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    for key in PATH_KEYS:
        v = doc.get(key)
        if isinstance(v, str):
            doc[key] = resolve(v)
        elif isinstance(v, list):
            doc[key] = [resolve(p) for p in v]
    return doc


def resolve_config(args):
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            cfg[key] = value
    for key in ("ers_path", "lrs_path", "core_csv_path"):
        cfg[key] = _as_list(cfg[key])
    if cfg["igrf_path"] and cfg["core_csv_path"]:
        raise UsageError("give either igrf_path or core_csv_path, not both")
    for key in ("start", "end", "train_start", "train_end"):
        cfg[key] = parse_time(cfg[key])
    return cfg


def _core_sources(cfg, n_stations):
    """One (model, core) pair per station."""
    if cfg["core_csv_path"]:
        paths = cfg["core_csv_path"]
        if len(paths) != n_stations:
            raise UsageError(f"core_csv_path needs {n_stations} file(s), one per station, got {len(paths)}")
        return [(None, igrf.read_core_csv(p)) for p in paths]
    model = igrf.read_coefficients(cfg["igrf_path"]) if cfg["igrf_path"] else igrf.load_default_model()
    return [(model, None)] * n_stations


def _check_paths(paths, key):
    if not paths:
        raise UsageError(f"{key} is required")
    for p in paths:
        if not os.path.exists(p):
            raise FileNotFoundError(f"{key}: no such file: {p}")


def _stations(cfg, need_lrs=True):
    roles = ["ers", "lrs"] if need_lrs else ["ers"]
    for role in roles:
        _check_paths(cfg[f"{role}_path"], f"{role}_path")
    cores = _core_sources(cfg, len(roles))
    out = []
    for role, (model, core) in zip(roles, cores):
        record, dv = load_station(cfg[f"{role}_path"], model, core, cfg["spike_threshold_nT"])
        out.append((record, fill_for_modelling(dv)))
    return out


def _kp(cfg):
    if not cfg["kp_path"]:
        return None
    _check_paths([cfg["kp_path"]], "kp_path")
    return read_kp(cfg["kp_path"])


def _output_dir(cfg):
    os.makedirs(cfg["output_dir"], exist_ok=True)
    return cfg["output_dir"]


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows, comments=()):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _span(ts, start, end):
    """Slice to ``[start, end)``; the series must cover the request."""
    stop_avail = ts.end_epoch + ts.period_s
    if start is not None and start < ts.start_epoch - 1e-6:
        raise errors.OutOfRange(f"requested start {start} precedes the data ({ts.start_epoch})")
    if end is not None and end > stop_avail + 1e-6:
        raise errors.OutOfRange(f"requested end {end} is after the data ({stop_avail})")
    if start is None and end is None:
        return ts
    return ts.slice_epochs(ts.start_epoch if start is None else start, stop_avail if end is None else end)


def _kinds(cfg):
    m = cfg["model"]
    if m == "all":
        return list(KINDS)
    if m not in KINDS:
        raise UsageError(f"model must be one of linear, knn, nn, all (got {m!r})")
    return [m]


def _model_options(cfg):
    knn, nn = {"output_cutoff_cph": cfg["output_cutoff_cph"]}, {"output_cutoff_cph": cfg["output_cutoff_cph"]}
    if cfg["knn_hops"] is not None:
        knn["hops"] = int(cfg["knn_hops"])
    if cfg["nn_epochs"] is not None:
        nn["epochs"] = int(cfg["nn_epochs"])
    nn["n_jobs"] = int(cfg["n_jobs"] or 1)
    return {"knn": knn, "nn": nn}


def cmd_prepare(cfg):
    roles = [r for r in ("ers", "lrs") if cfg[f"{r}_path"]]
    if not roles:
        raise UsageError("prepare needs ers_path and/or lrs_path")
    for role in roles:
        _check_paths(cfg[f"{role}_path"], f"{role}_path")
    cores = _core_sources(cfg, len(roles))
    out = _output_dir(cfg)
    for role, (model, core) in zip(roles, cores):
        record, dv, stats = prepare_station(cfg[f"{role}_path"], model, core, cfg["spike_threshold_nT"])
        path = os.path.join(out, f"{role}_{record.iaga_code}.csv")
        stats["inputs"] = [os.path.basename(p) for p in cfg[f"{role}_path"]]
        write_prepared(path, record, dv, stats)
        print(f"{role}: {path} ({len(dv)} samples, {stats['spikes_removed']} spikes, {stats['gaps_filled']} gaps)")
    return EXIT_OK


def _fit(kind, fm, kp, seed, options):
    if kind == "linear":
        return fit_linear(fm)
    if kind == "knn":
        return fit_knn(fm, kp=kp, seed=seed, **options.get("knn", {}))
    return fit_nn(fm, seed, **options.get("nn", {}))


def _model_summary(model):
    if model.kind == "linear":
        return {"scale_a": model.scale_a, "offset_b": model.offset_b}
    if model.kind == "knn":
        cv = model.cv
        return {
            "k": model.k, "alpha": model.alpha, "grid_k": cv.get("grid_k"), "grid_alpha": cv.get("grid_alpha"),
            "grid_cv_rmse_nT": cv.get("grid_score"), "cv_rmse_nT": cv.get("refined_score"),
            "n_folds": cv.get("n_folds"),
        }
    return {"n_members": len(model.members), **model.info}


def cmd_train(cfg):
    kinds = _kinds(cfg)
    if cfg["seed"] is None and any(k in ("knn", "nn") for k in kinds):
        raise UsageError("--seed is required when training knn or nn models")
    seed = int(cfg["seed"] or 0)
    (ers, ers_dv), (lrs, lrs_dv) = _stations(cfg)
    kp = _kp(cfg)
    ers_dv = _span(ers_dv, cfg["train_start"], cfg["train_end"])
    lrs_dv = _span(lrs_dv, cfg["train_start"], cfg["train_end"])
    aligned = longnorm.align(ers_dv, lrs_dv, ers, lrs, cutoff_cph=cfg["cutoff_cph"])
    fm = build_features(aligned, kp)
    out = _output_dir(cfg)
    metadata = {
        "ers": station_metadata(ers),
        "lrs": station_metadata(lrs),
        "offset_s": aligned.offset_s,
        "delta_lon_deg": aligned.delta_lon_deg,
        "cutoff_cph": cfg["cutoff_cph"],
        "period_s": fm.period_s,
        "train_start": float(fm.epochs[0]),
        "train_end": float(fm.epochs[-1] + fm.period_s),
        "seed": seed,
        "uses_kp": kp is not None,
    }
    manifest = {"schema_version": SCHEMA_VERSION, "n_rows": len(fm), "models": {}, **metadata}
    options = _model_options(cfg)
    for kind in kinds:
        model = _fit(kind, fm, kp, seed, options)
        path = os.path.join(out, f"model_{kind}.json")
        save_model(model, path, metadata)
        manifest["models"][kind] = {"file": os.path.basename(path), **_model_summary(model)}
        print(f"{kind}: {path}")
    _write_json(os.path.join(out, "train_manifest.json"), manifest)
    return EXIT_OK


def cmd_predict(cfg):
    if not cfg["model_file"]:
        raise UsageError("predict needs --model-file")
    _check_paths([cfg["model_file"]], "model_file")
    model, meta = load_model(cfg["model_file"])
    if "offset_s" not in meta:
        raise errors.ParseError("model file lacks alignment metadata", None, cfg["model_file"])
    (ers, ers_dv), = _stations(cfg, need_lrs=False)
    if ers.iaga_code != meta["ers"]["iaga_code"]:
        log.warning("model was trained on ERS %s, predicting from %s", meta["ers"]["iaga_code"], ers.iaga_code)
    kp = _kp(cfg)
    if meta.get("uses_kp") and kp is None and model.kind == "nn":
        log.warning("model was trained with Kp; predicting with the storm flag off")
    ers_dv = _span(ers_dv, cfg["start"], cfg["end"])
    eta = longnorm.normalize(ers_dv, meta["offset_s"], meta.get("cutoff_cph", cfg["cutoff_cph"]))
    pred = predict(model, build_features(eta, kp))
    path = cfg["output"] or os.path.join(_output_dir(cfg), "prediction.csv")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    _write_csv(
        path, ["epoch_s", "predicted_dv_nT"],
        ([f"{t:.0f}", repr(float(v))] for t, v in zip(pred.epochs, pred.values)),
        [f"model_kind: {model.kind}", f"ers: {ers.iaga_code}", f"lrs: {meta['lrs']['iaga_code']}"],
    )
    print(f"prediction: {path} ({len(pred)} samples)")
    return EXIT_OK


def _cdf_rows(report):
    for m in report.models:
        for s in harness.STRATA:
            v = np.sort(report.daily_rmse(m, s))
            for i, x in enumerate(v, start=1):
                yield [m, s, repr(float(x)), repr(i / v.size)]


def _distribution_rows(report):
    for m in report.models:
        for s in harness.STRATA:
            v = report.daily_rmse(m, s)
            if v.size:
                q = np.percentile(v, [0, 25, 50, 75, 100])
                yield [m, s, v.size] + [repr(float(x)) for x in q]


def cmd_evaluate(cfg):
    kinds = _kinds(cfg)
    if cfg["seed"] is None and any(k in ("knn", "nn") for k in kinds):
        raise UsageError("--seed is required when evaluating knn or nn models")
    seed = int(cfg["seed"] or 0)
    (ers, ers_dv), (lrs, lrs_dv) = _stations(cfg)
    kp = _kp(cfg)
    a, b = intersect(ers_dv, lrs_dv)
    if len(a) == 0:
        raise errors.NoOverlap("the two stations share no timestamps")
    start = cfg["start"]
    if start is None:
        start = float(np.ceil(a.start_epoch / SECONDS_PER_DAY) * SECONDS_PER_DAY)
    end = cfg["end"] if cfg["end"] is not None else a.end_epoch + a.period_s
    _span(a, start, end)
    n_days = int(np.floor((end - start) / SECONDS_PER_DAY + 1e-9))
    missing = harness.missing_days([ers_dv, lrs_dv], start, n_days)
    schedule = harness.make_schedule(start, end, missing)
    report = harness.evaluate_pair(
        ers, lrs, ers_dv, lrs_dv, schedule, kinds, kp, seed, cfg["cutoff_cph"], _model_options(cfg)
    )
    out = _output_dir(cfg)
    with open(os.path.join(out, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    doc = report.to_dict()
    doc.update({"seed": seed, "missing_days": [harness._iso_day(d) for d in missing],
                "discarded_days": schedule.discarded_days})
    _write_json(os.path.join(out, "report.json"), doc)
    _write_csv(os.path.join(out, "plot_daily_rmse.csv"),
               ["model", "stratum", "n_days", "min_nT", "q1_nT", "median_nT", "q3_nT", "max_nT"],
               _distribution_rows(report))
    _write_csv(os.path.join(out, "plot_cdf.csv"), ["model", "stratum", "rmse_nT", "cumulative_fraction"],
               _cdf_rows(report))
    blocks = report.blocks
    trace_block = cfg["trace_block"] if cfg["trace_block"] is not None else (blocks[0] if blocks else None)
    trace_rows = []
    for kind in kinds:
        tr = report.traces.get((trace_block, kind))
        if tr is not None:
            trace_rows += [[f"{t:.0f}", trace_block, kind, repr(float(y)), repr(float(p))] for t, y, p in zip(*tr)]
    _write_csv(os.path.join(out, "plot_traces.csv"),
               ["epoch_s", "block", "model", "truth_nT", "predicted_nT"], trace_rows)
    for m, strata in report.summary().items():
        s = strata.get("all")
        if s:
            print(f"{m}: median daily RMSE {s['median']:.3f} nT over {s['n_days']} days")
    print(f"blocks evaluated: {len(blocks)}, failed: {len(report.failed_blocks)}, "
          f"dropped: {len(report.dropped_blocks)}; report in {out}")
    if not blocks:
        return EXIT_COVERAGE
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--ers-path", nargs="+", help="extended station: IAGA-2002 files or one prepared CSV")
    common.add_argument("--lrs-path", nargs="+", help="local station: IAGA-2002 files or one prepared CSV")
    common.add_argument("--kp-path", help="Kp index file (GFZ text export)")
    common.add_argument("--igrf-path", help="IGRF coefficient table (default: bundled IGRF-14)")
    common.add_argument("--core-csv-path", nargs="+", help="precomputed core magnitudes, one CSV per station")
    common.add_argument("--cutoff-cph", type=float, help="band split cutoff, cycles/hour (default 0.33)")
    common.add_argument("--output-cutoff-cph", type=float, help="model output lowpass (default 1.5)")
    common.add_argument("--spike-threshold-nT", dest="spike_threshold_nT", type=float)
    common.add_argument("--output-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ersm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="clean and core-subtract station files")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--model", choices=list(KINDS) + ["all"])
    training.add_argument("--seed", type=int)
    training.add_argument("--nn-epochs", type=int, help="override the training epoch count")
    training.add_argument("--knn-hops", type=int, help="override the basin-hopping count")
    training.add_argument("--n-jobs", type=int, help="worker processes for ensemble training")

    p = sub.add_parser("train", parents=[common, training], help="fit models on a training span")
    p.add_argument("--train-start", help="ISO date/time or epoch seconds")
    p.add_argument("--train-end")

    p = sub.add_parser("predict", parents=[common], help="predict the local series from a model file")
    p.add_argument("--model-file")
    p.add_argument("--start")
    p.add_argument("--end")
    p.add_argument("--output", help="prediction CSV path (default OUTPUT_DIR/prediction.csv)")

    p = sub.add_parser("evaluate", parents=[common, training], help="run the 17-day block protocol")
    p.add_argument("--start")
    p.add_argument("--end")
    p.add_argument("--trace-block", type=int, help="block whose traces go to plot_traces.csv")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except COVERAGE_ERRORS as exc:
        print(f"data coverage error: {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    except INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
