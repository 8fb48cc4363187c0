"""Uniformly sampled scalar series, the common currency of the pipeline."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, Misaligned

SECONDS_PER_DAY = 86400


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Scalar samples at ``start_epoch + i * period_s``.

    Parameters
    ----------
    start_epoch : float
        Unix time of the first sample, in seconds.
    period_s : float
        Sample spacing in seconds (60 for minute data).
    values : ndarray
        Samples in nT. May hold NaN where ``gap_mask`` is set, until the
        series has been cleaned.
    gap_mask : ndarray of bool, optional
        True where the value was absent in the source. Defaults to
        ``isnan(values)``.
    """

    start_epoch: float
    period_s: float
    values: np.ndarray
    gap_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise InvalidArgument("values must be one-dimensional")
        if not self.period_s > 0:
            raise InvalidArgument("period_s must be positive")
        if self.gap_mask is None:
            mask = np.isnan(values)
        else:
            mask = np.asarray(self.gap_mask, dtype=bool)
            if mask.shape != values.shape:
                raise InvalidArgument("gap_mask must match values in shape")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "gap_mask", mask)
        object.__setattr__(self, "start_epoch", float(self.start_epoch))
        object.__setattr__(self, "period_s", float(self.period_s))

    def __len__(self):
        return self.values.size

    @property
    def epochs(self):
        return self.start_epoch + self.period_s * np.arange(len(self))

    @property
    def end_epoch(self):
        """Epoch of the last sample."""
        return self.start_epoch + self.period_s * (len(self) - 1)

    @property
    def duration_s(self):
        return self.period_s * (len(self) - 1) if len(self) else 0.0

    def replace(self, values=None, gap_mask=None, start_epoch=None):
        """Copy with some fields swapped. A new ``values`` resets the mask
        to all-False unless one is given."""
        if values is None:
            values = self.values
            if gap_mask is None:
                gap_mask = self.gap_mask
        elif gap_mask is None:
            gap_mask = np.zeros(np.shape(values), dtype=bool)
        return TimeSeries(
            self.start_epoch if start_epoch is None else start_epoch,
            self.period_s,
            values,
            gap_mask,
        )

    def index_of(self, epoch):
        """Sample index of ``epoch``, which must fall on the sample grid."""
        pos = (epoch - self.start_epoch) / self.period_s
        idx = int(round(pos))
        if abs(pos - idx) > 1e-6:
            raise Misaligned(f"epoch {epoch} is not on the sample grid")
        return idx

    def slice_epochs(self, start, stop):
        """Samples with ``start <= epoch < stop``."""
        t = self.epochs
        keep = np.flatnonzero((t >= start - 1e-6) & (t < stop - 1e-6))
        if keep.size == 0:
            return TimeSeries(start, self.period_s, np.empty(0), np.empty(0, bool))
        i0, i1 = keep[0], keep[-1] + 1
        return TimeSeries(t[i0], self.period_s, self.values[i0:i1], self.gap_mask[i0:i1])

    def __add__(self, other):
        if np.isscalar(other):
            return self.replace(values=self.values + other, gap_mask=self.gap_mask)
        check_aligned(self, other)
        return self.replace(values=self.values + other.values, gap_mask=self.gap_mask | other.gap_mask)

    def __sub__(self, other):
        if np.isscalar(other):
            return self.replace(values=self.values - other, gap_mask=self.gap_mask)
        check_aligned(self, other)
        return self.replace(values=self.values - other.values, gap_mask=self.gap_mask | other.gap_mask)


def check_aligned(a, b):
    """Raise Misaligned unless ``a`` and ``b`` share identical timestamps."""
    if (
        len(a) != len(b)
        or not np.isclose(a.period_s, b.period_s)
        or (len(a) and abs(a.start_epoch - b.start_epoch) > 1e-6)
    ):
        raise Misaligned(
            f"series differ: start {a.start_epoch} vs {b.start_epoch}, "
            f"length {len(a)} vs {len(b)}, period {a.period_s} vs {b.period_s}"
        )


def intersect(a, b):
    """Restrict two series on the same grid to their common timestamps."""
    if not np.isclose(a.period_s, b.period_s):
        raise Misaligned("series have different sample periods")
    start = max(a.start_epoch, b.start_epoch)
    stop = min(a.end_epoch, b.end_epoch) + a.period_s
    return a.slice_epochs(start, stop), b.slice_epochs(start, stop)


def from_samples(epochs, values, period_s=None):
    """Place (epoch, value) samples on a uniform grid; absent rows become gaps.

    ``period_s`` defaults to the smallest spacing between epochs. Epochs
    must be strictly increasing and lie on the grid.
    """
    epochs = np.asarray(epochs, dtype=float)
    values = np.asarray(values, dtype=float)
    if epochs.shape != values.shape or epochs.ndim != 1:
        raise InvalidArgument("epochs and values must be matching 1-D arrays")
    if epochs.size == 0:
        raise InvalidArgument("no samples")
    steps = np.diff(epochs)
    if np.any(steps <= 0):
        raise InvalidArgument("epochs must be strictly increasing")
    if period_s is None:
        if epochs.size < 2:
            raise InvalidArgument("period_s is required for a single sample")
        period_s = float(steps.min())
    pos = (epochs - epochs[0]) / period_s
    idx = np.round(pos).astype(np.int64)
    if np.any(np.abs(pos - idx) > 1e-6):
        raise Misaligned("epochs do not lie on a uniform grid")
    out = np.full(idx[-1] + 1, np.nan)
    out[idx] = values
    return TimeSeries(epochs[0], period_s, out)
