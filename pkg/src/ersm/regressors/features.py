"""Per-timestamp feature rows shared by the regressors."""

from dataclasses import dataclass

import numpy as np

from .. import dsp
from ..errors import InvalidArgument
from ..ingest import kp_at
from ..longnorm import AlignmentResult
from ..timeseries import SECONDS_PER_DAY, TimeSeries

STORM_KP = 7.0


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Feature columns, one row per timestamp.

    ``kp`` holds the Kp value in force at each row (NaN when no Kp series
    was supplied); ``target_nT`` is None for prediction-only matrices.
    """

    epochs: np.ndarray
    tod_s: np.ndarray
    deriv_nTps: np.ndarray
    mag_nT: np.ndarray
    storm_flag: np.ndarray
    kp: np.ndarray
    period_s: float
    target_nT: np.ndarray = None

    def __len__(self):
        return self.epochs.size

    @property
    def knn_columns(self):
        """``(n, 3)`` array of time of day, derivative, magnitude."""
        return np.column_stack([self.tod_s, self.deriv_nTps, self.mag_nT])

    @property
    def nn_columns(self):
        """``(n, 4)`` array: the kNN columns plus the storm flag as 0/1."""
        return np.column_stack([self.knn_columns, self.storm_flag.astype(float)])

    @property
    def day(self):
        """UTC day number of each row."""
        return np.floor(self.epochs / SECONDS_PER_DAY).astype(np.int64)

    @property
    def is_contiguous(self):
        return len(self) < 2 or np.allclose(np.diff(self.epochs), self.period_s)

    def take(self, rows):
        """Subset of rows (boolean mask or index array)."""
        target = None if self.target_nT is None else self.target_nT[rows]
        return FeatureMatrix(
            self.epochs[rows], self.tod_s[rows], self.deriv_nTps[rows], self.mag_nT[rows],
            self.storm_flag[rows], self.kp[rows], self.period_s, target,
        )

    def as_series(self, values):
        """Wrap per-row values as a TimeSeries on this matrix's grid."""
        if not self.is_contiguous:
            raise InvalidArgument("rows are not contiguous; cannot form a series")
        start = self.epochs[0] if len(self) else 0.0
        return TimeSeries(start, self.period_s, np.asarray(values, dtype=float))


def time_of_day(epoch_s):
    return np.mod(epoch_s, SECONDS_PER_DAY)


def build_features(aligned, kp=None):
    """Feature rows from an alignment result (or a bare aligned series).

    Passing an :class:`AlignmentResult` also fills ``target_nT`` from the
    truncated local series. Without ``kp`` the storm flag is False and
    ``kp`` is NaN throughout.
    """
    if isinstance(aligned, AlignmentResult):
        eta, target = aligned.aligned_ers, aligned.truncated_lrs.values
    else:
        eta, target = aligned, None
    epochs = eta.epochs
    if kp is not None:
        kp_values = np.asarray(kp_at(kp, epochs), dtype=float).reshape(epochs.shape)
        storm = kp_values >= STORM_KP
    else:
        kp_values = np.full(epochs.size, np.nan)
        storm = np.zeros(epochs.size, dtype=bool)
    return FeatureMatrix(
        epochs=epochs,
        tod_s=time_of_day(epochs),
        deriv_nTps=dsp.time_derivative(eta).values,
        mag_nT=np.array(eta.values),
        storm_flag=storm,
        kp=kp_values,
        period_s=eta.period_s,
        target_nT=None if target is None else np.array(target),
    )


def concat_features(matrices):
    """Stack feature matrices row-wise (e.g. several contiguous runs)."""
    matrices = list(matrices)
    if not matrices:
        raise InvalidArgument("no feature matrices to join")
    period = matrices[0].period_s
    if any(m.period_s != period for m in matrices):
        raise InvalidArgument("feature matrices have different sample periods")
    targets = [m.target_nT for m in matrices]
    target = None if any(t is None for t in targets) else np.concatenate(targets)
    return FeatureMatrix(
        np.concatenate([m.epochs for m in matrices]),
        np.concatenate([m.tod_s for m in matrices]),
        np.concatenate([m.deriv_nTps for m in matrices]),
        np.concatenate([m.mag_nT for m in matrices]),
        np.concatenate([m.storm_flag for m in matrices]),
        np.concatenate([m.kp for m in matrices]),
        period,
        target,
    )
