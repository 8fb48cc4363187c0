"""Observatory minute data (IAGA-2002) and planetary Kp index ingestion.

Parsers take text (a string or an open text stream) and return validated
in-memory objects; file paths are handled by the ``read_*`` helpers.
"""

import io
import re
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptySeries, InvalidArgument, OutOfRange, ParseError
from .timeseries import TimeSeries

IAGA_SENTINELS = (99999.0, 88888.0)
KNOWN_ORIENTATIONS = {
    "XYZ", "XYZF", "XYZG", "XYZS",
    "HDZ", "HDZF", "HDZG", "HDZS",
    "DHZ", "DHZF", "DHZG",
    "HEZ", "HEZF", "HEZG",
    "DIF", "DIFF",
}
REQUIRED_KEYS = ("IAGA CODE", "Geodetic Latitude", "Geodetic Longitude", "Elevation", "Reported")
HEADER_ORDER = (
    "Format", "Source of Data", "Station Name", "IAGA CODE", "Geodetic Latitude",
    "Geodetic Longitude", "Elevation", "Reported", "Sensor Orientation",
    "Digital Sampling", "Data Interval Type", "Data Type",
)

MEDIAN_WINDOW = 11
DEFAULT_SPIKE_THRESHOLD_NT = 100.0


def wrap_longitude(lon_deg):
    """Map a longitude in degrees into (-180, 180]."""
    lon = float(lon_deg) % 360.0
    return lon - 360.0 if lon > 180.0 else lon


@dataclass(frozen=True, eq=False)
class StationRecord:
    """Observatory metadata plus raw field channels.

    ``components`` maps channel letters (``"X"``, ``"H"``, ``"F"``, ...) to
    series that share one time grid.
    """

    iaga_code: str
    latitude_deg: float
    longitude_deg: float
    elevation_m: float
    components: dict = field(default_factory=dict)
    reported: str = ""
    station_name: str = ""
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        code = self.iaga_code.strip().upper()
        if not re.fullmatch(r"[A-Z0-9]{3,4}", code):
            raise InvalidArgument(f"bad IAGA code {self.iaga_code!r}")
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise InvalidArgument(f"latitude {self.latitude_deg} outside [-90, 90]")
        object.__setattr__(self, "iaga_code", code)
        object.__setattr__(self, "longitude_deg", wrap_longitude(self.longitude_deg))
        series = list(self.components.values())
        for ts in series[1:]:
            if (
                len(ts) != len(series[0])
                or ts.period_s != series[0].period_s
                or ts.start_epoch != series[0].start_epoch
            ):
                raise InvalidArgument("all components must share one time grid")

    @property
    def reference(self):
        """Any one component, for its time grid."""
        return next(iter(self.components.values()))


@dataclass(frozen=True)
class KpSeries:
    """Kp index entries as parallel arrays of epoch seconds and values."""

    epochs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.epochs, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise InvalidArgument("epochs and values must be 1-D and equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise InvalidArgument("Kp epochs must be strictly increasing")
        if np.any((v < 0) | (v > 9)):
            raise InvalidArgument("Kp values must lie in [0, 9]")
        object.__setattr__(self, "epochs", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.epochs.size

    @property
    def entries(self):
        return list(zip(self.epochs.tolist(), self.values.tolist()))


def _text_lines(text):
    if isinstance(text, str):
        return text.splitlines()
    return [line.rstrip("\n").rstrip("\r") for line in text]


def _to_epoch(date_str, time_str):
    frac = 0.0
    if "." in time_str:
        time_str, frac_str = time_str.split(".", 1)
        frac = float("0." + frac_str)
    dt = datetime.strptime(f"{date_str} {time_str}", "%Y-%m-%d %H:%M:%S")
    return dt.replace(tzinfo=timezone.utc).timestamp() + frac


def parse_iaga2002(text, source=None):
    """Parse one IAGA-2002 file into a StationRecord.

    Sentinel values (99999.00 missing, 88888.00 not recorded) become gaps.
    Rows missing from an otherwise uniform grid are also represented as
    gaps. Raises ParseError on malformed headers, non-monotonic or
    off-grid timestamps and unknown ``Reported`` orientations.
    """
    header = {}
    columns = None
    times, rows = [], []
    row_lines = []
    for lineno, raw in enumerate(_text_lines(text), start=1):
        line = raw.rstrip()
        if not line.strip():
            continue
        if columns is None:
            if line.lstrip().startswith("#"):
                continue
            if line.startswith("DATE"):
                columns = line.rstrip("|").split()
                if len(columns) < 4 or columns[:3] != ["DATE", "TIME", "DOY"]:
                    raise ParseError("bad column header", lineno, source)
                continue
            if not line.endswith("|"):
                raise ParseError("header line must end with '|'", lineno, source)
            key, value = line[:24].strip(), line[24:-1].strip()
            if not key:
                raise ParseError("header line without keyword", lineno, source)
            header[key] = (value, lineno)
            continue
        parts = line.split()
        if len(parts) != len(columns):
            raise ParseError(f"expected {len(columns)} fields, got {len(parts)}", lineno, source)
        try:
            t = _to_epoch(parts[0], parts[1])
            vals = [float(p) for p in parts[3:]]
        except ValueError as exc:
            raise ParseError(f"bad data row: {exc}", lineno, source) from None
        times.append(t)
        rows.append(vals)
        row_lines.append(lineno)

    for key in REQUIRED_KEYS:
        if key not in header:
            raise ParseError(f"missing header keyword {key!r}", None, source)

    def number(key):
        value, lineno = header[key]
        try:
            return float(value)
        except ValueError:
            raise ParseError(f"{key} is not numeric: {value!r}", lineno, source) from None

    lat = number("Geodetic Latitude")
    lon = number("Geodetic Longitude")
    elev = number("Elevation")
    if not -90 <= lat <= 90:
        raise ParseError(f"latitude {lat} outside [-90, 90]", header["Geodetic Latitude"][1], source)
    reported, rep_line = header["Reported"]
    reported = reported.upper()
    if reported not in KNOWN_ORIENTATIONS:
        raise ParseError(f"unknown Reported orientation {reported!r}", rep_line, source)
    code = header["IAGA CODE"][0].upper()
    if columns is None:
        raise ParseError("no column header line", None, source)

    names = []
    for col in columns[3:]:
        name = col[len(code):] if col.upper().startswith(code) else col[-1]
        names.append(name.upper() or col.upper())

    t = np.asarray(times, dtype=float)
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(names))
    if t.size > 1:
        steps = np.diff(t)
        bad = np.flatnonzero(steps <= 0)
        if bad.size:
            raise ParseError("timestamps are not increasing", row_lines[bad[0] + 1], source)
        period = float(np.min(steps))
        k = steps / period
        off = np.flatnonzero(np.abs(k - np.round(k)) > 1e-6)
        if off.size:
            raise ParseError("timestamp off the sample grid", row_lines[off[0] + 1], source)
    else:
        period = 60.0
    start = t[0] if t.size else 0.0
    n = int(round((t[-1] - start) / period)) + 1 if t.size else 0
    idx = np.round((t - start) / period).astype(int)

    components = {}
    for j, name in enumerate(names):
        values = np.full(n, np.nan)
        col = data[:, j]
        values[idx] = np.where(np.isin(col, IAGA_SENTINELS), np.nan, col)
        components[name] = TimeSeries(start, period, values)

    return StationRecord(
        iaga_code=code,
        latitude_deg=lat,
        longitude_deg=lon,
        elevation_m=elev,
        components=components,
        reported=reported,
        station_name=header.get("Station Name", ("", 0))[0],
        header={k: v for k, (v, _) in header.items()},
    )


def read_iaga2002(path):
    with open(path, encoding="ascii", errors="replace") as fh:
        return parse_iaga2002(fh.read(), source=str(path))


def write_iaga2002(record, stream=None):
    """Serialize a StationRecord as IAGA-2002 text.

    Gaps are written as 99999.00. Returns the text when ``stream`` is None.
    """
    out = stream if stream is not None else io.StringIO()
    header = dict(record.header)
    header.update({
        "Format": header.get("Format", "IAGA-2002"),
        "IAGA CODE": record.iaga_code,
        "Geodetic Latitude": f"{record.latitude_deg:.3f}",
        "Geodetic Longitude": f"{record.longitude_deg % 360.0:.3f}",
        "Elevation": f"{record.elevation_m:g}",
        "Reported": record.reported or "".join(record.components),
    })
    if record.station_name:
        header["Station Name"] = record.station_name
    keys = [k for k in HEADER_ORDER if k in header] + [k for k in header if k not in HEADER_ORDER]
    for key in keys:
        out.write(f" {key:<23}{header[key]:<45}|\n")
    names = list(record.components)
    cols = "".join(f"{record.iaga_code + n:>10}" for n in names)
    out.write(f"{'DATE       TIME         DOY':<28}{cols}".ljust(69) + "|\n")
    ref = record.reference
    stacked = np.column_stack([np.where(c.gap_mask, 99999.0, c.values) for c in record.components.values()])
    for epoch, row in zip(ref.epochs, stacked):
        dt = datetime.fromtimestamp(round(epoch, 3), tz=timezone.utc)
        stamp = dt.strftime("%Y-%m-%d %H:%M:%S") + f".{dt.microsecond // 1000:03d}"
        doy = dt.timetuple().tm_yday
        out.write(f"{stamp} {doy:03d}    " + "".join(f"{v:10.2f}" for v in row) + "\n")
    if stream is None:
        return out.getvalue()
    return None


def concat_records(records):
    """Join consecutive StationRecords (e.g. one file per day) on one grid.

    Missing stretches between files become gaps.
    """
    records = sorted(records, key=lambda r: r.reference.start_epoch)
    if not records:
        raise EmptySeries("no records to concatenate")
    first = records[0]
    for r in records[1:]:
        if r.iaga_code != first.iaga_code:
            raise InvalidArgument(f"mixed stations {first.iaga_code} and {r.iaga_code}")
        if set(r.components) != set(first.components):
            raise InvalidArgument("records report different components")
    period = first.reference.period_s
    start = first.reference.start_epoch
    stop = max(r.reference.end_epoch for r in records)
    n = int(round((stop - start) / period)) + 1
    components = {}
    for name in first.components:
        values = np.full(n, np.nan)
        mask = np.ones(n, dtype=bool)
        for r in records:
            ts = r.components[name]
            if ts.period_s != period:
                raise InvalidArgument("records have different sample periods")
            i0 = int(round((ts.start_epoch - start) / period))
            values[i0:i0 + len(ts)] = ts.values
            mask[i0:i0 + len(ts)] = ts.gap_mask
        components[name] = TimeSeries(start, period, values, mask)
    return StationRecord(
        first.iaga_code, first.latitude_deg, first.longitude_deg, first.elevation_m,
        components, first.reported, first.station_name, dict(first.header),
    )


def scalar_magnitude(record):
    """Total-field magnitude series for a station.

    Uses the F channel where it is reported; samples where F is missing
    (or stations that do not report F) fall back to the vector norm of
    the orthogonal channels.
    """
    comps = record.components
    if {"X", "Y", "Z"} <= comps.keys():
        vec = np.sqrt(comps["X"].values ** 2 + comps["Y"].values ** 2 + comps["Z"].values ** 2)
    elif {"H", "Z"} <= comps.keys():
        vec = np.hypot(comps["H"].values, comps["Z"].values)
    else:
        vec = np.full(len(record.reference), np.nan)
    if "F" in comps:
        f = comps["F"].values
        total = np.where(np.isnan(f), vec, f)
    else:
        total = vec
    ref = record.reference
    return TimeSeries(ref.start_epoch, ref.period_s, total)


_ISO_ROW = re.compile(r"^(\d{4}-\d{2}-\d{2})[T ](\d{2}:\d{2}(?::\d{2}(?:\.\d*)?)?)Z?[\s,;]+(\S+)")


def parse_kp(text, source=None):
    """Parse a GFZ Kp ASCII export into a KpSeries.

    Two row layouts are accepted: the GFZ ``Kp_ap`` table
    (``YYYY MM DD hh.h hh._m days days_m Kp ap D``) and two-column
    ``ISO-datetime kp`` exports. Each entry is stamped with the start of
    its interval. GFZ marks not-yet-available intervals with Kp = -1;
    those rows are skipped.
    """
    epochs, values = [], []
    for lineno, raw in enumerate(_text_lines(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _ISO_ROW.match(line)
        try:
            if m:
                time_str = m.group(2)
                if time_str.count(":") == 1:
                    time_str += ":00"
                epoch = _to_epoch(m.group(1), time_str)
                kp = float(m.group(3))
            else:
                parts = line.split()
                if len(parts) < 8:
                    raise ValueError(f"expected at least 8 columns, got {len(parts)}")
                y, mo, d = int(parts[0]), int(parts[1]), int(parts[2])
                hour = float(parts[3])
                epoch = datetime(y, mo, d, tzinfo=timezone.utc).timestamp() + hour * 3600.0
                kp = float(parts[7])
        except ValueError as exc:
            raise ParseError(f"unparseable Kp row: {exc}", lineno, source) from None
        if kp == -1.0:
            continue
        if not 0.0 <= kp <= 9.0:
            raise ParseError(f"Kp value {kp} outside [0, 9]", lineno, source)
        if epochs and epoch <= epochs[-1]:
            raise ParseError("Kp epochs are not increasing", lineno, source)
        epochs.append(epoch)
        values.append(kp)
    return KpSeries(np.asarray(epochs, dtype=float), np.asarray(values, dtype=float))


def read_kp(path):
    with open(path, encoding="ascii", errors="replace") as fh:
        return parse_kp(fh.read(), source=str(path))


def kp_at(kp, epoch_s):
    """Kp in force at ``epoch_s``: the latest entry not after it.

    Vectorised over array input. Never looks at future entries.
    """
    q = np.asarray(epoch_s, dtype=float)
    if len(kp) == 0 or np.any(q < kp.epochs[0]):
        raise OutOfRange("query precedes the first Kp entry")
    idx = np.searchsorted(kp.epochs, q, side="right") - 1
    out = kp.values[idx]
    return float(out) if out.ndim == 0 else out


def _rolling_median(values, valid, window):
    half = window // 2
    padded = np.full(values.size + 2 * half, np.nan)
    padded[half:half + values.size] = np.where(valid, values, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmedian(sliding_window_view(padded, window), axis=1)


def find_spikes(ts, spike_threshold_nT=DEFAULT_SPIKE_THRESHOLD_NT, window=MEDIAN_WINDOW):
    """Boolean mask of samples deviating from the centred rolling median.

    Medians are taken over valid samples only, and the flagging is
    repeated until no further sample is flagged, so the result is
    stable under re-application.
    """
    if not spike_threshold_nT > 0:
        raise InvalidArgument("spike_threshold_nT must be positive")
    values = ts.values
    valid = ~(ts.gap_mask | np.isnan(values))
    spikes = np.zeros(values.size, dtype=bool)
    while True:
        med = _rolling_median(values, valid, window)
        with np.errstate(invalid="ignore"):
            new = valid & (np.abs(values - med) > spike_threshold_nT)
        if not new.any():
            return spikes
        spikes |= new
        valid &= ~new


def fill_gaps(values, gaps):
    """Linear interpolation across gaps, nearest-value at the ends."""
    good = np.flatnonzero(~gaps)
    if good.size == 0:
        raise EmptySeries("every sample is a gap")
    out = np.array(values, dtype=float)
    bad = np.flatnonzero(gaps)
    out[bad] = np.interp(bad, good, out[good])
    return out


def clean_series(ts, spike_threshold_nT=DEFAULT_SPIKE_THRESHOLD_NT, return_stats=False):
    """Remove spikes and fill every gap.

    Samples more than ``spike_threshold_nT`` away from the 11-sample
    centred rolling median are flagged as gaps; all gaps are then filled
    by linear interpolation between the nearest valid neighbours, with
    nearest-value extension at the series ends. Valid samples are never
    modified. The returned ``gap_mask`` marks every filled sample.

    With ``return_stats`` a dict with ``spikes_removed`` and
    ``gaps_filled`` (source gaps, excluding spikes) is returned as well.
    """
    source_gaps = ts.gap_mask | np.isnan(ts.values)
    spikes = find_spikes(ts, spike_threshold_nT)
    gaps = source_gaps | spikes
    cleaned = ts.replace(values=fill_gaps(ts.values, gaps), gap_mask=gaps)
    if return_stats:
        stats = {"spikes_removed": int(spikes.sum()), "gaps_filled": int(source_gaps.sum())}
        return cleaned, stats
    return cleaned
