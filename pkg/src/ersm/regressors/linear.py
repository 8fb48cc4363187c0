"""Scale-and-offset least-squares model on the aligned magnitude."""

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateFit


@dataclass(frozen=True)
class LinearModel:
    scale_a: float
    offset_b: float

    kind = "linear"

    def to_dict(self):
        return {"scale_a": self.scale_a, "offset_b": self.offset_b}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["scale_a"]), float(d["offset_b"]))


def rss(a, b, x, y):
    return float(np.sum((y - (a * x + b)) ** 2))


def fit_linear(fm):
    """Ordinary least squares of the target on the magnitude column only."""
    x, y = np.asarray(fm.mag_nT, dtype=float), np.asarray(fm.target_nT, dtype=float)
    if x.size < 2:
        raise DegenerateFit("need at least two rows")
    xm, ym = x.mean(), y.mean()
    sxx = np.dot(x - xm, x - xm)
    if not sxx > 0:
        raise DegenerateFit("aligned magnitude has zero variance")
    a = np.dot(x - xm, y - ym) / sxx
    return LinearModel(float(a), float(ym - a * xm))


def predict_linear(model, fm):
    values = model.scale_a * np.asarray(fm.mag_nT, dtype=float) + model.offset_b
    return fm.as_series(values)
