"""Block-protocol evaluation of station pairs and baseline adjustments.

A study span is cut into consecutive 17-day blocks: models are trained
on the first 10 days of a block and scored on the following 7. Scores
are RMSE per UTC day, also split by geomagnetic activity (Kp below 4 or
at least 4).
"""

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import dsp, longnorm
from .errors import EmptySeries, ErsmError, InvalidArgument, Misaligned, ParseError, SpanTooShort
from .ingest import kp_at
from .regressors import build_features, concat_features, fit_knn, fit_linear, fit_nn, predict
from .timeseries import SECONDS_PER_DAY, TimeSeries, check_aligned, from_samples, intersect

log = logging.getLogger(__name__)

TRAIN_DAYS = 10
EVAL_DAYS = 7
BLOCK_DAYS = TRAIN_DAYS + EVAL_DAYS
STORM_SPLIT_KP = 4.0
EARTH_RADIUS_KM = 6371.0
STRATA = ("all", "kp_lt_4", "kp_ge_4")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Block:
    """One training/evaluation block.

    ``train_days`` and ``eval_days`` hold the start epochs of the UTC
    days used; days without data are left out, so either list can be
    shorter than 10 or 7.
    """

    index: int
    start_epoch: float
    train_days: tuple
    eval_days: tuple

    @property
    def stop_epoch(self):
        return self.start_epoch + BLOCK_DAYS * SECONDS_PER_DAY

    @property
    def train_span(self):
        return self.start_epoch, self.start_epoch + TRAIN_DAYS * SECONDS_PER_DAY

    @property
    def eval_span(self):
        return self.start_epoch + TRAIN_DAYS * SECONDS_PER_DAY, self.stop_epoch


@dataclass(frozen=True)
class BlockSchedule:
    blocks: tuple
    start_epoch: float
    n_days: int
    dropped: tuple = ()

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def discarded_days(self):
        """Whole days after the last complete block."""
        return self.n_days % BLOCK_DAYS


def make_schedule(start_epoch, end_epoch, missing_days=()):
    """Consecutive 17-day blocks covering ``[start_epoch, end_epoch)``.

    ``missing_days`` lists epochs (any time within the day) of days
    without data; they are removed from their block's train or eval
    list. A block left with no train or no eval day is dropped and
    recorded in ``dropped`` as ``(block index, reason)``.
    """
    n_days = int(np.floor((end_epoch - start_epoch) / SECONDS_PER_DAY + 1e-9))
    if n_days < BLOCK_DAYS:
        raise SpanTooShort(f"span of {n_days} days is shorter than one {BLOCK_DAYS}-day block")
    missing = {int(np.floor((m - start_epoch) / SECONDS_PER_DAY)) for m in missing_days}
    blocks, dropped = [], []
    for i in range(n_days // BLOCK_DAYS):
        first = i * BLOCK_DAYS
        train = tuple(
            start_epoch + d * SECONDS_PER_DAY for d in range(first, first + TRAIN_DAYS) if d not in missing
        )
        evals = tuple(
            start_epoch + d * SECONDS_PER_DAY
            for d in range(first + TRAIN_DAYS, first + BLOCK_DAYS) if d not in missing
        )
        if not train:
            dropped.append((i, "no training days"))
        elif not evals:
            dropped.append((i, "no evaluation days"))
        else:
            blocks.append(Block(i, start_epoch + first * SECONDS_PER_DAY, train, evals))
    if n_days % BLOCK_DAYS:
        log.info("discarding %d trailing days", n_days % BLOCK_DAYS)
    return BlockSchedule(tuple(blocks), float(start_epoch), n_days, tuple(dropped))


def missing_days(series, start_epoch, n_days):
    """Start epochs of days on which any of ``series`` has no valid sample."""
    out = []
    for d in range(n_days):
        day0 = start_epoch + d * SECONDS_PER_DAY
        for ts in series:
            part = ts.slice_epochs(day0, day0 + SECONDS_PER_DAY)
            if len(part) == 0 or np.all(part.gap_mask | np.isnan(part.values)):
                out.append(day0)
                break
    return out


def rmse(pred, truth):
    check_aligned(pred, truth)
    if len(pred) == 0:
        raise EmptySeries("nothing to score")
    return float(np.sqrt(np.mean((pred.values - truth.values) ** 2)))


def _rmse_values(err):
    return float(np.sqrt(np.mean(err ** 2)))


def great_circle_km(lat1, lon1, lat2, lon2, radius_km=EARTH_RADIUS_KM):
    """Haversine distance on a sphere."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp, dl = p2 - p1, np.radians(lon2 - lon1)
    a = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return float(2 * radius_km * np.arcsin(min(1.0, np.sqrt(a))))


def mean_adjust(pred, truth):
    """Remove the mean bias of ``pred`` relative to ``truth``.

    Returns ``(adjusted, b_opt)`` with ``b_opt = mean(pred - truth)``,
    the constant minimizing the squared error of ``pred - b``.
    """
    check_aligned(pred, truth)
    if len(pred) == 0:
        raise EmptySeries("nothing to adjust")
    b = float(np.mean(pred.values - truth.values))
    return pred.replace(values=pred.values - b, gap_mask=pred.gap_mask), b


def lag_adjust(pred, truth, max_lag_s):
    """Undo the cross-correlation lag of ``pred`` relative to ``truth``.

    Returns ``(adjusted, lag_s)``; ``adjusted`` covers only the span
    common to the shifted prediction and ``truth``.
    """
    lag = dsp.best_lag(truth, pred, max_lag_s)
    adjusted = dsp.shift_series(pred, -lag) if lag else pred
    adjusted, _ = intersect(adjusted, truth)
    return adjusted, lag


def _as_vectors(v):
    if isinstance(v, (tuple, list)) and v and isinstance(v[0], TimeSeries):
        return np.column_stack([c.values for c in v])
    if hasattr(v, "as_array"):
        return np.atleast_2d(v.as_array())
    return np.atleast_2d(np.asarray(v, dtype=float))


def core_readdition(difi_vec, core_vec):
    """Scalar disturbance implied by a vector prediction: ``|d + c| - |c|``.

    ``difi_vec`` is a triple of aligned TimeSeries (or an ``(n, 3)``
    array); ``core_vec`` a FieldVector or ``(n, 3)`` array with one row
    per sample (a single row is broadcast).
    """
    d = _as_vectors(difi_vec)
    c = _as_vectors(core_vec)
    if c.shape[0] == 1:
        c = np.broadcast_to(c, d.shape)
    if d.shape != c.shape:
        raise Misaligned(f"{d.shape[0]} prediction samples vs {c.shape[0]} core samples")
    out = np.linalg.norm(d + c, axis=1) - np.linalg.norm(c, axis=1)
    if isinstance(difi_vec, (tuple, list)) and difi_vec and isinstance(difi_vec[0], TimeSeries):
        for comp in difi_vec[1:]:
            check_aligned(difi_vec[0], comp)
        return difi_vec[0].replace(values=out)
    return out


def read_baseline_csv(path=None, text=None):
    """External prediction CSV: ``epoch_s`` plus one scalar column or three
    vector columns. Returns a TimeSeries or a triple of TimeSeries."""
    if text is None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty baseline file", source=path) from None
    if not header or header[0] != "epoch_s" or len(header) not in (2, 4):
        raise ParseError("baseline CSV needs epoch_s plus 1 or 3 value columns", 1, path)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        try:
            rows.append([float(x) for x in row])
        except ValueError:
            raise ParseError(f"non-numeric value in {row!r}", lineno, path) from None
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns", lineno, path)
    if not rows:
        raise ParseError("baseline file has no data rows", source=path)
    data = np.array(rows)
    series = [from_samples(data[:, 0], data[:, j]) for j in range(1, data.shape[1])]
    return series[0] if len(series) == 1 else tuple(series)


def _iso_day(epoch):
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%d")


@dataclass
class EvalReport:
    """Scores from :func:`evaluate_pair`.

    ``rows`` are dicts with keys date, block, model, stratum, rmse_nT,
    n_samples; ``date`` is ``"all"`` for whole-block aggregates.
    ``traces`` maps ``(block, model)`` to ``(epochs, truth, prediction)``
    arrays over the evaluation days.
    """

    station_pair: tuple
    separation_km: float
    rows: list = field(default_factory=list)
    failed_blocks: list = field(default_factory=list)
    dropped_blocks: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)
    block_info: dict = field(default_factory=dict)

    @property
    def models(self):
        return sorted({r["model"] for r in self.rows})

    @property
    def blocks(self):
        return sorted({r["block"] for r in self.rows})

    def per_day(self, model=None, stratum="all"):
        return [
            r for r in self.rows
            if r["date"] != "all" and r["stratum"] == stratum and (model is None or r["model"] == model)
        ]

    def per_block(self, model=None, stratum="all"):
        return [
            r for r in self.rows
            if r["date"] == "all" and r["stratum"] == stratum and (model is None or r["model"] == model)
        ]

    def daily_rmse(self, model, stratum="all"):
        return np.array([r["rmse_nT"] for r in self.per_day(model, stratum)])

    def summary(self):
        """Median and quartiles of daily RMSE per model and stratum."""
        out = {}
        for m in self.models:
            out[m] = {}
            for s in STRATA:
                v = self.daily_rmse(m, s)
                if v.size:
                    q1, med, q3 = np.percentile(v, [25, 50, 75])
                    out[m][s] = {"median": float(med), "q1": float(q1), "q3": float(q3), "n_days": int(v.size)}
        return out

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date", "block", "model", "stratum", "rmse_nT", "n_samples"])
        for r in self.rows:
            w.writerow([r["date"], r["block"], r["model"], r["stratum"], repr(r["rmse_nT"]), r["n_samples"]])
        return buf.getvalue()

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "station_pair": list(self.station_pair),
            "separation_km": self.separation_km,
            "n_blocks": len(self.blocks),
            "failed_blocks": [list(b) for b in self.failed_blocks],
            "dropped_blocks": [list(b) for b in self.dropped_blocks],
            "summary": self.summary(),
            "blocks": {str(k): v for k, v in sorted(self.block_info.items())},
            "rows": self.rows,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _runs(days):
    """Split sorted day-start epochs into runs of consecutive days."""
    runs, current = [], []
    for d in days:
        if current and d - current[-1] > SECONDS_PER_DAY + 1e-6:
            runs.append(current)
            current = []
        current.append(d)
    if current:
        runs.append(current)
    return [(r[0], r[-1] + SECONDS_PER_DAY) for r in runs]


def _aligned_runs(ers, lrs, ers_dv, lrs_dv, days, kp, cutoff_cph, offset_s=None):
    out = []
    for start, stop in _runs(days):
        e, l = ers_dv.slice_epochs(start, stop), lrs_dv.slice_epochs(start, stop)
        aligned = longnorm.align(e, l, ers, lrs, cutoff_cph=cutoff_cph, offset_s=offset_s)
        out.append(build_features(aligned, kp))
    return out


def _default_fit(kind, fm, kp, seed, options):
    if kind == "linear":
        return fit_linear(fm)
    if kind == "knn":
        return fit_knn(fm, kp=kp, seed=seed, **options)
    if kind == "nn":
        return fit_nn(fm, seed, **options)
    raise InvalidArgument(f"unknown model kind {kind!r}")


def block_seed(seed, index):
    """Independent per-block seed derived from the run seed."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _score(pred, truth, kp_values, day_epoch_of_row):
    """(day, stratum) -> (rmse, n) plus block-level entries under day None."""
    err = pred - truth
    storm = kp_values >= STORM_SPLIT_KP
    masks = {"all": np.ones(err.size, bool), "kp_lt_4": ~storm, "kp_ge_4": storm}
    out = {}
    for day in [None] + sorted(set(day_epoch_of_row.tolist())):
        in_day = np.ones(err.size, bool) if day is None else day_epoch_of_row == day
        for s, m in masks.items():
            sel = in_day & m
            if sel.any():
                out[(day, s)] = (_rmse_values(err[sel]), int(sel.sum()))
    return out


def evaluate_block(block, ers, lrs, ers_dv, lrs_dv, models=("linear", "knn", "nn"), kp=None, seed=0,
                   cutoff_cph=longnorm.DEFAULT_CUTOFF_CPH, model_options=None, fitters=None):
    """Train on one block's training days and score its evaluation days.

    Returns ``(rows, traces, info)`` in the layout used by EvalReport.
    """
    model_options = model_options or {}
    fitters = fitters or {}
    train_fms = _aligned_runs(ers, lrs, ers_dv, lrs_dv, block.train_days, kp, cutoff_cph)
    train = concat_features(train_fms)
    _, offset = longnorm.longitude_offset(ers, lrs)
    eval_fms = _aligned_runs(ers, lrs, ers_dv, lrs_dv, block.eval_days, kp, cutoff_cph, offset_s=offset)
    bseed = block_seed(seed, block.index)
    rows, traces, info = [], {}, {"offset_s": offset, "seed": bseed, "models": {}}
    for kind in models:
        fit = fitters.get(kind)
        model = fit(train, kp, bseed) if fit else _default_fit(kind, train, kp, bseed, model_options.get(kind, {}))
        preds = [predict(model, fm).values for fm in eval_fms]
        pred = np.concatenate(preds)
        truth = np.concatenate([fm.target_nT for fm in eval_fms])
        epochs = np.concatenate([fm.epochs for fm in eval_fms])
        kp_values = np.concatenate([fm.kp for fm in eval_fms])
        kp_values = np.nan_to_num(kp_values, nan=0.0)
        day = np.floor(epochs / SECONDS_PER_DAY) * SECONDS_PER_DAY
        for (d, stratum), (value, n) in _score(pred, truth, kp_values, day).items():
            rows.append({
                "date": "all" if d is None else _iso_day(d),
                "block": block.index, "model": kind, "stratum": stratum,
                "rmse_nT": value, "n_samples": n,
            })
        traces[(block.index, kind)] = (epochs, truth, pred)
        minfo = {}
        if kind == "linear":
            minfo = {"scale_a": model.scale_a, "offset_b": model.offset_b}
        elif kind == "knn":
            minfo = {"k": model.k, "alpha": model.alpha}
        info["models"][kind] = minfo
    info["n_train_rows"] = len(train)
    info["n_eval_rows"] = int(sum(len(fm) for fm in eval_fms))
    return rows, traces, info


def evaluate_pair(ers, lrs, ers_dv, lrs_dv, schedule, models=("linear", "knn", "nn"), kp=None, seed=0,
                  cutoff_cph=longnorm.DEFAULT_CUTOFF_CPH, model_options=None, fitters=None):
    """Run the block protocol for one station pair.

    Parameters
    ----------
    ers, lrs : StationRecord
        Extended and local station metadata (longitudes set the offset).
    ers_dv, lrs_dv : TimeSeries
        Cleaned, core-subtracted series covering the schedule.
    schedule : BlockSchedule
    models : sequence of str
        Any of ``"linear"``, ``"knn"``, ``"nn"``.
    kp : KpSeries, optional
        Enables the storm flag, kNN validation pruning and Kp strata.
    seed : int
        Run seed; each block derives its own seed from it.
    model_options : dict, optional
        Extra keyword arguments per kind for the fit functions.
    fitters : dict, optional
        Replacement fit callables ``f(features, kp, seed)`` per kind.

    A block that raises a pipeline error is recorded in
    ``failed_blocks`` and skipped.
    """
    separation = great_circle_km(ers.latitude_deg, ers.longitude_deg, lrs.latitude_deg, lrs.longitude_deg)
    report = EvalReport((ers.iaga_code, lrs.iaga_code), separation,
                        dropped_blocks=[tuple(d) for d in schedule.dropped])
    for block in schedule.blocks:
        try:
            rows, traces, info = evaluate_block(
                block, ers, lrs, ers_dv, lrs_dv, models, kp, seed, cutoff_cph, model_options, fitters
            )
        except ErsmError as exc:
            log.warning("block %d failed: %s", block.index, exc)
            report.failed_blocks.append((block.index, f"{type(exc).__name__}: {exc}"))
            continue
        report.rows.extend(rows)
        report.traces.update(traces)
        info["train_days"] = [_iso_day(d) for d in block.train_days]
        info["eval_days"] = [_iso_day(d) for d in block.eval_days]
        report.block_info[block.index] = info
    return report


def kp_strata_counts(kp, epochs):
    """Row counts below and at-or-above the storm split."""
    v = np.asarray(kp_at(kp, epochs), dtype=float)
    storm = v >= STORM_SPLIT_KP
    return {"kp_lt_4": int((~storm).sum()), "kp_ge_4": int(storm.sum())}
