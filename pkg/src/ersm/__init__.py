"""Predict a local geomagnetic observatory's diurnal variation from a
distant observatory's data: longitude-shifted alignment followed by a
learned correction (linear, kNN or residual-MLP ensemble)."""

from . import dsp, harness, igrf, ingest, longnorm, regressors
from .harness import evaluate_pair, make_schedule
from .ingest import parse_iaga2002, parse_kp, read_iaga2002, read_kp
from .longnorm import align, normalize
from .timeseries import TimeSeries

__version__ = "0.1.0"
