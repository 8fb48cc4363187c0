"""From raw observatory files to cleaned, core-subtracted station series.

Prepared series are stored as CSV with a ``# schema_version`` line,
``# key: value`` station metadata lines, and columns
``epoch_s, dv_nT, filled`` (``filled`` is 1 where the source had no
valid sample and the value was interpolated).
"""

import json
import os

import numpy as np

from . import igrf
from .errors import InvalidArgument, ParseError
from .ingest import (
    DEFAULT_SPIKE_THRESHOLD_NT, StationRecord, clean_series, concat_records, read_iaga2002,
    scalar_magnitude,
)
from .timeseries import TimeSeries, from_samples

SCHEMA_VERSION = 1
META_KEYS = ("iaga_code", "latitude_deg", "longitude_deg", "elevation_m")


def prepare_station(paths, model=None, core=None, spike_threshold_nT=DEFAULT_SPIKE_THRESHOLD_NT):
    """Parse, join, clean and core-subtract one station's IAGA-2002 files.

    Exactly one of ``model`` (IgrfModel) or ``core`` (``(epochs, core_nT)``)
    must be given. Returns ``(record, dv, stats)`` where ``stats`` counts
    spikes removed and gaps filled.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    records = [read_iaga2002(p) for p in paths]
    record = concat_records(records)
    cleaned, stats = clean_series(scalar_magnitude(record), spike_threshold_nT, return_stats=True)
    dv = igrf.temporal_scalar(cleaned, record, model=model, core=core)
    stats.update({"n_samples": len(dv), "n_files": len(records)})
    return record, dv, stats


def station_metadata(record):
    return {k: getattr(record, k) for k in META_KEYS}


def format_prepared(record, dv):
    lines = [f"# schema_version: {SCHEMA_VERSION}"]
    lines += [f"# {k}: {v}" for k, v in station_metadata(record).items()]
    lines.append("epoch_s,dv_nT,filled")
    filled = dv.gap_mask.astype(int)
    for t, v, f in zip(dv.epochs, dv.values, filled):
        lines.append(f"{t:.0f},{float(v)!r},{f}")
    return "\n".join(lines) + "\n"


def write_prepared(path, record, dv, stats=None):
    """Write the prepared CSV and, with ``stats``, a JSON sidecar beside it."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_prepared(record, dv))
    if stats is not None:
        doc = {"schema_version": SCHEMA_VERSION, "station": station_metadata(record), **stats}
        with open(sidecar_path(path), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")


def sidecar_path(path):
    root, _ = os.path.splitext(str(path))
    return root + ".json"


def is_prepared(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.readline().startswith("# schema_version:")
    except (OSError, UnicodeDecodeError):
        return False


def read_prepared(path):
    """Return ``(record, dv)``; ``record`` carries metadata only."""
    meta = {}
    epochs, values, filled = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
                continue
            if line.startswith("epoch_s"):
                continue
            parts = line.split(",")
            try:
                epochs.append(float(parts[0]))
                values.append(float(parts[1]))
                filled.append(len(parts) > 2 and parts[2].strip() == "1")
            except (ValueError, IndexError):
                raise ParseError(f"bad row {line!r}", lineno, str(path)) from None
    if meta.get("schema_version") != str(SCHEMA_VERSION):
        raise ParseError(f"unsupported schema_version {meta.get('schema_version')!r}", 1, str(path))
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise ParseError(f"missing metadata {missing}", None, str(path))
    if not epochs:
        raise ParseError("no data rows", None, str(path))
    ts = from_samples(epochs, values, period_s=None if len(epochs) > 1 else 60.0)
    mask = np.ones(len(ts), dtype=bool)
    idx = np.round((np.asarray(epochs) - ts.start_epoch) / ts.period_s).astype(int)
    mask[idx] = np.asarray(filled, dtype=bool)
    dv = TimeSeries(ts.start_epoch, ts.period_s, ts.values, mask | np.isnan(ts.values))
    try:
        record = StationRecord(
            meta["iaga_code"], float(meta["latitude_deg"]), float(meta["longitude_deg"]),
            float(meta["elevation_m"]),
        )
    except (ValueError, InvalidArgument) as exc:
        raise ParseError(f"bad station metadata: {exc}", None, str(path)) from None
    return record, dv


def load_station(paths, model=None, core=None, spike_threshold_nT=DEFAULT_SPIKE_THRESHOLD_NT):
    """A prepared CSV is read as is; IAGA-2002 files are prepared in memory."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    if len(paths) == 1 and is_prepared(paths[0]):
        return read_prepared(paths[0])
    if model is None and core is None:
        model = igrf.load_default_model()
    record, dv, _ = prepare_station(paths, model, core, spike_threshold_nT)
    return record, dv


def fill_for_modelling(dv):
    """Interpolate any remaining NaN samples so filters can run."""
    bad = np.isnan(dv.values)
    if not bad.any():
        return dv
    good = np.flatnonzero(~bad)
    values = np.array(dv.values)
    values[bad] = np.interp(np.flatnonzero(bad), good, values[good])
    return TimeSeries(dv.start_epoch, dv.period_s, values, dv.gap_mask)
