"""IGRF core-field synthesis and core-field removal.

Coefficients come from the official IGRF text table (one row per g/h
coefficient, one column per model epoch, last column secular variation).
The 14th-generation table ships with the package.
"""

from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources

import numpy as np

from .errors import InvalidArgument, Misaligned, OutOfRange, ParseError
from .timeseries import TimeSeries

NMAX = 13
REFERENCE_RADIUS_KM = 6371.2
WGS84_A_KM = 6378.137
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

EXTRAPOLATION_YEARS = 5.0
CORE_STEP_S = 3600.0
_POLE_EPS_RAD = 1e-7


@dataclass(frozen=True, eq=False)
class IgrfModel:
    """Gauss coefficients for every model epoch.

    ``g`` and ``h`` have shape ``(n_epochs, NMAX + 1, NMAX + 1)`` indexed
    ``[epoch, n, m]``; ``sv_g``/``sv_h`` hold nT/year rates for the final
    epoch.
    """

    epochs: np.ndarray
    g: np.ndarray
    h: np.ndarray
    sv_g: np.ndarray
    sv_h: np.ndarray

    @property
    def valid_range(self):
        return float(self.epochs[0]), float(self.epochs[-1]) + EXTRAPOLATION_YEARS

    def coefficients_at(self, time):
        """Coefficients at decimal year(s) ``time``.

        Linear between bracketing epochs, secular-variation extrapolation
        past the final epoch. Returns arrays of shape ``(T, 14, 14)``.
        """
        t = np.atleast_1d(np.asarray(time, dtype=float))
        lo, hi = self.valid_range
        if np.any((t < lo - 1e-9) | (t > hi + 1e-9)) or np.any(np.isnan(t)):
            raise OutOfRange(f"time outside IGRF validity [{lo}, {hi}]")
        last = self.epochs[-1]
        idx = np.clip(np.searchsorted(self.epochs, t, side="right") - 1, 0, len(self.epochs) - 1)
        g = np.empty((t.size, NMAX + 1, NMAX + 1))
        h = np.empty_like(g)
        past = t >= last
        dt = (t[past] - last)[:, None, None]
        g[past] = self.g[-1] + self.sv_g * dt
        h[past] = self.h[-1] + self.sv_h * dt
        inner = ~past
        i = idx[inner]
        w = ((t[inner] - self.epochs[i]) / (self.epochs[i + 1] - self.epochs[i]))[:, None, None]
        g[inner] = (1.0 - w) * self.g[i] + w * self.g[i + 1]
        h[inner] = (1.0 - w) * self.h[i] + w * self.h[i + 1]
        return g, h


@dataclass(frozen=True)
class FieldVector:
    """Field components in nT, geodetic north/east/down frame."""

    north_nT: np.ndarray
    east_nT: np.ndarray
    down_nT: np.ndarray

    @property
    def magnitude(self):
        return np.sqrt(self.north_nT ** 2 + self.east_nT ** 2 + self.down_nT ** 2)

    def as_array(self):
        """Components stacked on the last axis as (N, E, D)."""
        return np.stack([self.north_nT, self.east_nT, self.down_nT], axis=-1)


def load_coefficients(text, source=None):
    """Parse an official IGRF coefficient table."""
    lines = text.splitlines() if isinstance(text, str) else list(text)
    epochs = None
    rows = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "g/h":
            tokens = parts[3:]
            try:
                epochs = np.array([float(tok) for tok in tokens[:-1]])
            except ValueError:
                raise ParseError("bad epoch header", lineno, source) from None
            continue
        if parts[0] not in ("g", "h"):
            continue
        if epochs is None:
            raise ParseError("coefficient row before the epoch header", lineno, source)
        try:
            n, m = int(parts[1]), int(parts[2])
            vals = [float(v) for v in parts[3:]]
        except (ValueError, IndexError):
            raise ParseError("bad coefficient row", lineno, source) from None
        if len(vals) != epochs.size + 1:
            raise ParseError(f"expected {epochs.size + 1} values, got {len(vals)}", lineno, source)
        if not (1 <= n <= NMAX and 0 <= m <= n) or (parts[0] == "h" and m == 0):
            raise ParseError(f"invalid degree/order {parts[0]}({n},{m})", lineno, source)
        rows[parts[0], n, m] = vals
    if epochs is None:
        raise ParseError("no epoch header found", None, source)

    k = epochs.size
    g = np.zeros((k, NMAX + 1, NMAX + 1))
    h = np.zeros_like(g)
    sv_g = np.zeros((NMAX + 1, NMAX + 1))
    sv_h = np.zeros_like(sv_g)
    for n in range(1, NMAX + 1):
        for m in range(n + 1):
            for kind, arr, sv in (("g", g, sv_g), ("h", h, sv_h)):
                if kind == "h" and m == 0:
                    continue
                vals = rows.get((kind, n, m))
                if vals is None:
                    raise ParseError(f"missing coefficient {kind}({n},{m})", None, source)
                arr[:, n, m] = vals[:-1]
                sv[n, m] = vals[-1]
    return IgrfModel(epochs, g, h, sv_g, sv_h)


def read_coefficients(path):
    with open(path) as fh:
        return load_coefficients(fh.read(), source=str(path))


def load_default_model():
    """The IGRF-14 model bundled with the package."""
    text = resources.files("ersm").joinpath("data/igrf14coeffs.txt").read_text()
    return load_coefficients(text, source="igrf14coeffs.txt")


def decimal_year(epoch_s):
    """Unix seconds to decimal year, using each calendar year's length."""
    t = np.atleast_1d(np.asarray(epoch_s, dtype=float))
    years = np.array([datetime.fromtimestamp(v, tz=timezone.utc).year for v in t])
    out = np.empty(t.size)
    for year in np.unique(years):
        start = datetime(int(year), 1, 1, tzinfo=timezone.utc).timestamp()
        end = datetime(int(year) + 1, 1, 1, tzinfo=timezone.utc).timestamp()
        sel = years == year
        out[sel] = year + (t[sel] - start) / (end - start)
    return out if np.ndim(epoch_s) else float(out[0])


def geodetic_to_geocentric(lat_deg, alt_m):
    """WGS-84 geodetic latitude/height to geocentric radius and latitude.

    Returns ``(r_km, geocentric_lat_deg)``.
    """
    lat = np.radians(lat_deg)
    h = np.asarray(alt_m, dtype=float) / 1000.0
    sin_lat, cos_lat = np.sin(lat), np.cos(lat)
    n_curv = WGS84_A_KM / np.sqrt(1.0 - WGS84_E2 * sin_lat ** 2)
    x = (n_curv + h) * cos_lat
    z = (n_curv * (1.0 - WGS84_E2) + h) * sin_lat
    return np.hypot(x, z), np.degrees(np.arctan2(z, x))


def schmidt_legendre(theta_rad, nmax=NMAX):
    """Schmidt semi-normalized P(n, m)(cos theta) and dP/dtheta.

    Both are built by forward recursion in sin/cos of colatitude, which
    stays finite at the poles. Returns two ``(nmax+1, nmax+1)`` arrays.
    """
    st, ct = np.sin(theta_rad), np.cos(theta_rad)
    p = np.zeros((nmax + 1, nmax + 1))
    dp = np.zeros_like(p)
    p[0, 0] = 1.0
    for n in range(1, nmax + 1):
        if n == 1:
            p[1, 1], dp[1, 1] = st, ct
        else:
            k = np.sqrt((2 * n - 1) / (2 * n))
            p[n, n] = k * st * p[n - 1, n - 1]
            dp[n, n] = k * (ct * p[n - 1, n - 1] + st * dp[n - 1, n - 1])
        for m in range(n):
            a = np.sqrt(n * n - m * m)
            b = np.sqrt((n - 1) ** 2 - m * m) if n - 1 >= m else 0.0
            p2 = p[n - 2, m] if n >= 2 else 0.0
            dp2 = dp[n - 2, m] if n >= 2 else 0.0
            p[n, m] = ((2 * n - 1) * ct * p[n - 1, m] - b * p2) / a
            dp[n, m] = ((2 * n - 1) * (ct * dp[n - 1, m] - st * p[n - 1, m]) - b * dp2) / a
    return p, dp


def synthesize(g, h, r_km, theta_rad, phi_rad):
    """Spherical-harmonic synthesis at one geocentric point.

    ``g``/``h`` may carry a leading axis of length T (several coefficient
    sets); the returned ``(Br, Btheta, Bphi)`` then have shape ``(T,)``.
    """
    theta = np.clip(theta_rad, _POLE_EPS_RAD, np.pi - _POLE_EPS_RAD)
    p, dp = schmidt_legendre(theta)
    n = np.arange(NMAX + 1)[:, None]
    m = np.arange(NMAX + 1)[None, :]
    ratio = (REFERENCE_RADIUS_KM / r_km) ** (n + 2)
    cos_m, sin_m = np.cos(m * phi_rad), np.sin(m * phi_rad)
    g = np.asarray(g)
    h = np.asarray(h)
    radial = (g * cos_m + h * sin_m) * ratio
    br = np.sum(radial * (n + 1) * p, axis=(-2, -1))
    btheta = -np.sum(radial * dp, axis=(-2, -1))
    bphi = np.sum((g * sin_m - h * cos_m) * ratio * m * p, axis=(-2, -1)) / np.sin(theta)
    return br, btheta, bphi


def core_field(model, lat_deg, lon_deg, alt_m, time):
    """IGRF field at a geodetic location.

    ``time`` is a decimal year or an array of them; the position is a
    single point. Components come back in the geodetic north/east/down
    frame.
    """
    if not -90.0 <= lat_deg <= 90.0:
        raise InvalidArgument(f"latitude {lat_deg} outside [-90, 90]")
    g, h = model.coefficients_at(time)
    r, gc_lat = geodetic_to_geocentric(lat_deg, alt_m)
    theta = np.radians(90.0 - gc_lat)
    br, btheta, bphi = synthesize(g, h, r, theta, np.radians(lon_deg))
    delta = np.radians(lat_deg - gc_lat)
    north_gc = -btheta
    north = north_gc * np.cos(delta) - br * np.sin(delta)
    down = -br * np.cos(delta) - north_gc * np.sin(delta)
    if np.ndim(time) == 0:
        return FieldVector(float(north[0]), float(bphi[0]), float(down[0]))
    return FieldVector(north, bphi, down)


def core_magnitude_at(model, station, epochs, step_s=CORE_STEP_S):
    """Core-field magnitude at a station for every epoch in ``epochs``.

    The field is synthesized on an hourly grid covering the epochs and
    linearly interpolated in between.
    """
    epochs = np.asarray(epochs, dtype=float)
    if epochs.size == 0:
        return np.empty(0)
    t0 = np.floor(epochs.min() / step_s) * step_s
    t1 = np.ceil(epochs.max() / step_s) * step_s
    nodes = np.arange(t0, t1 + step_s / 2, step_s)
    vec = core_field(
        model, station.latitude_deg, station.longitude_deg, station.elevation_m, decimal_year(nodes)
    )
    mag = np.atleast_1d(vec.magnitude)
    if nodes.size == 1:
        return np.full(epochs.size, mag[0])
    return np.interp(epochs, nodes, mag)


def core_vectors_at(model, station, epochs):
    """Core-field vectors (N, E, D) at every epoch, shape ``(len, 3)``."""
    vec = core_field(
        model, station.latitude_deg, station.longitude_deg, station.elevation_m,
        decimal_year(np.asarray(epochs, dtype=float)),
    )
    return vec.as_array()


def read_core_csv(path):
    """Read precomputed core magnitudes: columns ``epoch_s, core_nT``.

    Returns two arrays ``(epochs, core_nT)``.
    """
    data = np.genfromtxt(path, delimiter=",", comments="#", names=True, dtype=float)
    names = data.dtype.names
    if names is None or "epoch_s" not in names or "core_nT" not in names:
        raise ParseError("core CSV needs columns epoch_s, core_nT", None, str(path))
    return np.atleast_1d(data["epoch_s"]), np.atleast_1d(data["core_nT"])


def temporal_scalar(total, station, model=None, core=None):
    """Total-field magnitude minus core-field magnitude, per sample.

    Either ``model`` (an IgrfModel) or ``core`` (a pair of arrays
    ``(epochs, core_nT)`` of precomputed magnitudes, e.g. from
    :func:`read_core_csv`) must be supplied.
    """
    if (model is None) == (core is None):
        raise InvalidArgument("give exactly one of model or core")
    t = total.epochs
    if model is not None:
        core_nT = core_magnitude_at(model, station, t)
    else:
        ct, cv = (np.asarray(a, dtype=float) for a in core)
        if ct.size == 0 or t.size and (t[0] < ct[0] - 1e-6 or t[-1] > ct[-1] + 1e-6):
            raise Misaligned("precomputed core magnitudes do not cover the series")
        core_nT = np.interp(t, ct, cv)
    return total.replace(values=total.values - core_nT, gap_mask=total.gap_mask)
