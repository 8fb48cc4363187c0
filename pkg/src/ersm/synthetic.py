"""Synthetic observatory data for tests and demonstrations.

The quiet-day variation is modelled as a few harmonics of local solar
time, so two stations at different longitudes see the same pattern
offset in time. A shared disturbance term, identical in universal time at
both stations, stands in for storm-time activity.
"""

from datetime import datetime, timezone

import numpy as np

from . import igrf
from .ingest import KpSeries, StationRecord, write_iaga2002
from .longnorm import EARTH_ROTATION_DEG_PER_S
from .timeseries import SECONDS_PER_DAY, TimeSeries

# (relative amplitude, phase in radians) of the 1, 2, 3 cycle/day terms
SQ_HARMONICS = ((1.0, 3.4), (0.5, 1.0), (0.2, 0.3))


def sq_variation(epochs, lon_deg, amplitude_nT=20.0, harmonics=SQ_HARMONICS):
    """Quiet-day signal depending only on local solar time."""
    local = np.asarray(epochs, dtype=float) + lon_deg / EARTH_ROTATION_DEG_PER_S
    phase = 2 * np.pi * local / SECONDS_PER_DAY
    return amplitude_nT * sum(a * np.cos((i + 1) * phase - p) for i, (a, p) in enumerate(harmonics))


def disturbance(n, rng, amplitude_nT=5.0, correlation=0.995):
    """Red-noise (AR(1)) series with unit-``amplitude_nT`` stationary spread."""
    out = np.empty(n)
    innov = rng.normal(0.0, amplitude_nT * np.sqrt(1 - correlation ** 2), n)
    out[0] = rng.normal(0.0, amplitude_nT)
    for i in range(1, n):
        out[i] = correlation * out[i - 1] + innov[i]
    return out


def station_pair(start_epoch, n_days, ers_lon, lrs_lon, period_s=60.0, seed=0, noise_nT=0.5,
                 disturbance_nT=5.0, lrs_scale=1.0, lrs_offset_nT=0.0):
    """Temporal-field series for an extended and a local station.

    Both share the disturbance term; each has its own quiet-day signal
    from its longitude and independent white noise. The local series is
    additionally scaled by ``lrs_scale`` and offset by ``lrs_offset_nT``.
    Returns ``(ers_dv, lrs_dv)``.
    """
    rng = np.random.default_rng(seed)
    n = int(round(n_days * SECONDS_PER_DAY / period_s))
    t = start_epoch + period_s * np.arange(n)
    common = disturbance(n, rng, disturbance_nT) if disturbance_nT else np.zeros(n)
    ers = sq_variation(t, ers_lon) + common + rng.normal(0, noise_nT, n)
    lrs = lrs_scale * (sq_variation(t, lrs_lon) + common) + lrs_offset_nT + rng.normal(0, noise_nT, n)
    return TimeSeries(start_epoch, period_s, ers), TimeSeries(start_epoch, period_s, lrs)


def station_record(code, lat_deg, lon_deg, elevation_m, dv, model=None):
    """XYZF StationRecord whose total field is IGRF magnitude plus ``dv``.

    The disturbance is added along the core-field direction, so
    ``|B| - |B_core|`` equals ``dv`` exactly (up to file precision).
    """
    model = model or igrf.load_default_model()
    meta = StationRecord(code, lat_deg, lon_deg, elevation_m)
    t = dv.epochs
    nodes = np.arange(np.floor(t[0] / igrf.CORE_STEP_S), np.ceil(t[-1] / igrf.CORE_STEP_S) + 1) * igrf.CORE_STEP_S
    core_mag = igrf.core_magnitude_at(model, meta, t)
    vec = igrf.core_vectors_at(model, meta, nodes)
    unit = np.column_stack([np.interp(t, nodes, vec[:, j]) for j in range(3)])
    unit /= np.linalg.norm(unit, axis=1, keepdims=True)
    total = core_mag + np.nan_to_num(dv.values)
    xyz = unit * total[:, None]
    gap = dv.gap_mask
    comps = {}
    for name, values in zip("XYZF", (xyz[:, 0], xyz[:, 1], xyz[:, 2], total)):
        comps[name] = TimeSeries(dv.start_epoch, dv.period_s, np.where(gap, np.nan, values))
    return StationRecord(code, lat_deg, lon_deg, elevation_m, comps, reported="XYZF",
                         station_name=f"Synthetic {code}",
                         header={"Source of Data": "synthetic", "Data Type": "variation"})


def split_days(record):
    """One StationRecord per UTC day, as observatories distribute files."""
    ref = record.reference
    first = np.floor(ref.start_epoch / SECONDS_PER_DAY) * SECONDS_PER_DAY
    out = []
    day = first
    while day <= ref.end_epoch:
        comps = {k: v.slice_epochs(day, day + SECONDS_PER_DAY) for k, v in record.components.items()}
        if len(next(iter(comps.values()))):
            out.append(StationRecord(record.iaga_code, record.latitude_deg, record.longitude_deg,
                                     record.elevation_m, comps, record.reported, record.station_name,
                                     dict(record.header)))
        day += SECONDS_PER_DAY
    return out


def write_daily_files(record, directory):
    """Write ``<code><yyyymmdd>vmin.min`` files; returns the paths."""
    paths = []
    for day in split_days(record):
        stamp = datetime.fromtimestamp(day.reference.start_epoch, tz=timezone.utc).strftime("%Y%m%d")
        path = f"{directory}/{record.iaga_code.lower()}{stamp}vmin.min"
        with open(path, "w", encoding="ascii") as fh:
            write_iaga2002(day, fh)
        paths.append(path)
    return paths


def kp_series(start_epoch, n_days, seed=0, storm_days=()):
    """Three-hourly Kp on the thirds grid; ``storm_days`` (day indices) get Kp >= 7."""
    rng = np.random.default_rng(seed)
    n = int(n_days * 8)
    epochs = start_epoch + 10800.0 * np.arange(n)
    values = np.round(rng.uniform(0, 3.6, n) * 3) / 3
    for d in storm_days:
        values[d * 8:(d + 1) * 8] = 7.0 + np.round(rng.uniform(0, 1.5, 8) * 3) / 3
    return KpSeries(epochs, np.minimum(values, 9.0))


def format_kp(kp):
    """GFZ-style ``Kp_ap`` text for a KpSeries."""
    lines = ["# synthetic Kp", "# YYYY MM DD hh.h hh._m        days      days_m    Kp  ap  D"]
    for t, v in kp.entries:
        dt = datetime.fromtimestamp(t, tz=timezone.utc)
        hour = dt.hour + dt.minute / 60
        days = (t - datetime(1932, 1, 1, tzinfo=timezone.utc).timestamp()) / SECONDS_PER_DAY
        lines.append(f"{dt.year} {dt.month:02d} {dt.day:02d} {hour:04.1f} {hour + 1.5:04.1f} "
                     f"{days:11.5f} {days + 0.0625:11.5f} {v:6.3f} {0:4d} 1")
    return "\n".join(lines) + "\n"
