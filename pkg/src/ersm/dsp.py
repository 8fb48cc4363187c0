"""Filtering, shifting and lag estimation on TimeSeries."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .errors import DegenerateSignal, InvalidArgument, InvalidCutoff, InvalidShift, Misaligned, TooShort
from .timeseries import TimeSeries

DEFAULT_ORDER = 4
SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True, eq=False)
class IirFilter:
    """Cascade of second-order sections.

    ``sections`` has one row ``(b0, b1, b2, 1, a1, a2)`` per section, the
    layout used by :mod:`scipy.signal`.
    """

    sections: np.ndarray
    cutoff_cph: float
    sample_period_s: float
    order: int
    kind: str = "lowpass"

    @property
    def poles(self):
        return np.concatenate([np.roots(sec[3:]) for sec in self.sections])

    def response(self, freq_cph):
        """Complex frequency response at frequencies in cycles/hour."""
        fs_cph = SECONDS_PER_HOUR / self.sample_period_s
        _, h = signal.sosfreqz(self.sections, worN=np.atleast_1d(freq_cph), fs=fs_cph)
        return h


def nyquist_cph(sample_period_s):
    return 0.5 * SECONDS_PER_HOUR / sample_period_s


def design_butterworth_lowpass(order, cutoff_cph, sample_period_s):
    """Digital Butterworth lowpass via the prewarped bilinear transform."""
    if int(order) != order or not 1 <= order <= 8:
        raise InvalidArgument(f"order must be an integer in [1, 8], got {order}")
    if not sample_period_s > 0:
        raise InvalidArgument("sample_period_s must be positive")
    nyq = nyquist_cph(sample_period_s)
    if not 0 < cutoff_cph < nyq:
        raise InvalidCutoff(f"cutoff {cutoff_cph} cph must lie in (0, {nyq}) cph")
    return _butterworth(int(order), float(cutoff_cph), float(sample_period_s))


@lru_cache(maxsize=64)
def _butterworth(order, cutoff_cph, sample_period_s):
    fs_cph = SECONDS_PER_HOUR / sample_period_s
    sos = signal.butter(order, cutoff_cph, btype="lowpass", output="sos", fs=fs_cph)
    return IirFilter(sos, cutoff_cph, sample_period_s, order)


def filtfilt(filt, ts):
    """Zero-phase (forward-backward) application of ``filt`` to ``ts``.

    Edges are extended by odd-symmetric padding of ``30 * order`` samples
    (shortened for short series), removed after filtering.
    """
    n = len(ts)
    warmup = 3 * filt.order
    if n <= 3 * warmup:
        raise TooShort(f"series of {n} samples is too short for an order-{filt.order} filter")
    if not np.isclose(ts.period_s, filt.sample_period_s):
        raise Misaligned("filter was designed for a different sample period")
    padlen = min(warmup * 10, n - 1)
    out = signal.sosfiltfilt(filt.sections, ts.values, padtype="odd", padlen=padlen)
    return ts.replace(values=out, gap_mask=ts.gap_mask)


def lowpass(ts, cutoff_cph, order=DEFAULT_ORDER):
    return filtfilt(design_butterworth_lowpass(order, cutoff_cph, ts.period_s), ts)


def complementary_split(ts, cutoff_cph, order=DEFAULT_ORDER):
    """Split into ``(low, high)`` with ``low + high == ts`` exactly.

    The low band is the zero-phase Butterworth lowpass; the high band is
    the remainder.
    """
    low = lowpass(ts, cutoff_cph, order)
    high = ts.replace(values=ts.values - low.values, gap_mask=ts.gap_mask)
    return low, high


def shift_series(ts, offset_s):
    """Delay ``ts`` by ``offset_s`` seconds on its own sample grid.

    The output at time t is ``ts(t - offset_s)``, linearly interpolated
    for fractional offsets. Grid points whose source time falls outside
    the input span are dropped.
    """
    n = len(ts)
    if abs(offset_s) >= ts.duration_s:
        raise InvalidShift(f"offset {offset_s} s exceeds series duration {ts.duration_s} s")
    shift = offset_s / ts.period_s
    k = int(round(shift))
    if abs(shift - k) < 1e-9:
        if k >= 0:
            return TimeSeries(ts.start_epoch + k * ts.period_s, ts.period_s,
                              ts.values[:n - k], ts.gap_mask[:n - k])
        return TimeSeries(ts.start_epoch, ts.period_s, ts.values[-k:], ts.gap_mask[-k:])
    i0 = int(np.ceil(shift))
    i1 = int(np.floor(n - 1 + shift))
    i0, i1 = max(i0, 0), min(i1, n - 1)
    idx = np.arange(i0, i1 + 1)
    pos = idx - shift
    j = np.clip(np.floor(pos).astype(int), 0, n - 2)
    frac = pos - j
    v = ts.values
    values = (1.0 - frac) * v[j] + frac * v[j + 1]
    mask = ts.gap_mask[j] | ts.gap_mask[j + 1]
    return TimeSeries(ts.start_epoch + i0 * ts.period_s, ts.period_s, values, mask)


def time_derivative(ts):
    """Forward difference in nT/s; the last sample repeats its neighbour."""
    if len(ts) < 2:
        raise TooShort("need at least two samples")
    d = np.diff(ts.values) / ts.period_s
    return ts.replace(values=np.append(d, d[-1]), gap_mask=ts.gap_mask)


def _grid_offset(a, b):
    if not np.isclose(a.period_s, b.period_s):
        raise Misaligned("series have different sample periods")
    steps = (b.start_epoch - a.start_epoch) / a.period_s
    k = int(round(steps))
    if abs(steps - k) > 1e-6:
        raise Misaligned("series are not on a common sample grid")
    return k


def _lag_correlation(a, b, k, base):
    # pairs a[i] with b at a's time plus k samples
    ia0 = max(0, base - k)
    ia1 = min(len(a), len(b) + base - k)
    if ia1 - ia0 < 2:
        return -np.inf
    x = a.values[ia0:ia1]
    y = b.values[ia0 + k - base:ia1 + k - base]
    x = x - x.mean()
    y = y - y.mean()
    denom = np.sqrt(np.dot(x, x) * np.dot(y, y))
    if denom == 0:
        return -np.inf
    return float(np.dot(x, y) / denom)


def lag_correlations(a, b, max_lag_s):
    """Normalized cross-correlation for every integer-sample lag.

    Returns ``(lags_s, corr)`` where ``corr[i]`` correlates ``a(t)`` with
    ``b(t + lags_s[i])`` over their overlap, each segment mean-removed.
    """
    base = _grid_offset(a, b)
    max_k = int(np.floor(max_lag_s / a.period_s + 1e-9))
    overlap = min(a.end_epoch, b.end_epoch) - max(a.start_epoch, b.start_epoch)
    if max_lag_s >= overlap:
        raise InvalidArgument(f"max_lag_s {max_lag_s} must be below the overlap {overlap} s")
    if np.ptp(a.values) == 0 or np.ptp(b.values) == 0:
        raise DegenerateSignal("zero-variance input")
    ks = np.arange(-max_k, max_k + 1)
    corr = np.array([_lag_correlation(a, b, int(k), base) for k in ks])
    return ks * a.period_s, corr


def best_lag(a, b, max_lag_s):
    """Lag in seconds at which ``b`` best matches ``a``.

    ``best_lag(a, shift_series(a, L), ...) == L``. Signed correlation is
    maximised; ties go to the smaller absolute lag, then the negative one.
    """
    lags, corr = lag_correlations(a, b, max_lag_s)
    if not np.isfinite(corr).any():
        raise DegenerateSignal("no lag with a non-degenerate overlap")
    best = np.max(corr)
    ties = np.flatnonzero(corr >= best - 1e-12 * max(1.0, abs(best)))
    pick = min(ties, key=lambda i: (abs(lags[i]), lags[i]))
    return float(lags[pick])
