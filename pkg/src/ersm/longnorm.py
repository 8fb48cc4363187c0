"""Longitudinal normalization of an extended reference station.

The slow (solar-driven) part of the extended station's variation is
delayed by the time the Earth takes to rotate through the longitude
difference, so that it lines up with the local station's solar time.
"""

from dataclasses import dataclass

from . import dsp
from .errors import NoOverlap
from .ingest import wrap_longitude
from .timeseries import intersect

EARTH_ROTATION_DEG_PER_S = 0.004178
DEFAULT_CUTOFF_CPH = 0.33
# +1: a station east of the target sees solar features first, so its low
# band is delayed. Flip to -1 to reverse the convention.
SHIFT_SIGN = 1.0


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    aligned_ers: object
    truncated_lrs: object
    offset_s: float
    delta_lon_deg: float


def longitude_offset(ers, lrs):
    """``(delta_lon_deg, offset_s)`` between two stations.

    The longitude difference (extended minus local) is wrapped into
    (-180, 180] before conversion to seconds of Earth rotation.
    """
    delta = wrap_longitude(ers.longitude_deg - lrs.longitude_deg)
    return delta, delta / EARTH_ROTATION_DEG_PER_S


def normalize(ers_dv, offset_s, cutoff_cph=DEFAULT_CUTOFF_CPH, order=dsp.DEFAULT_ORDER):
    """Shift the low band of ``ers_dv`` by ``offset_s`` and restore the
    unshifted high band on the surviving timestamps."""
    low, high = dsp.complementary_split(ers_dv, cutoff_cph, order)
    shifted = dsp.shift_series(low, SHIFT_SIGN * offset_s)
    high_kept, shifted = intersect(high, shifted)
    return shifted + high_kept


def align(ers_dv, lrs_dv, ers, lrs, cutoff_cph=DEFAULT_CUTOFF_CPH, offset_s=None, order=dsp.DEFAULT_ORDER):
    """Time-align the extended station to the local one.

    Both outputs are truncated to their common timestamps. ``offset_s``
    overrides the value computed from the station longitudes (used to
    reuse a training offset at evaluation time).
    """
    delta, computed = longitude_offset(ers, lrs)
    if offset_s is None:
        offset_s = computed
    eta = normalize(ers_dv, offset_s, cutoff_cph, order)
    eta, local = intersect(eta, lrs_dv)
    if len(eta) == 0:
        raise NoOverlap("aligned series do not overlap the local station")
    return AlignmentResult(eta, local, float(offset_s), float(delta))
