"""Shared constructors for synthetic test data."""

import numpy as np

from ersm import longnorm, synthetic
from ersm.regressors import nn as nn_mod
from ersm.ingest import StationRecord
from ersm.regressors import build_features

DAY = 86400
APR6 = 1680739200.0


def identity_features(n_days=10, period_s=600.0, seed=0, scale=1.0, offset=0.0, noise_nT=0.0):
    """Features from a co-located pair where the target is ``scale * mag + offset``."""
    ers_dv, _ = synthetic.station_pair(APR6, n_days, 0.0, 0.0, period_s=period_s, seed=seed)
    st = StationRecord("AAA", 40.0, 0.0, 0.0)
    rng = np.random.default_rng(seed + 1)
    lrs_dv = ers_dv.replace(values=scale * ers_dv.values + offset + rng.normal(0, noise_nT, len(ers_dv))
                            if noise_nT else scale * ers_dv.values + offset)
    return build_features(longnorm.align(ers_dv, lrs_dv, st, st))


# one line per acceptance criterion, echoed in the terminal summary
CRITERIA = []


def criterion(number, title, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" [{detail}]" if detail else "")
    CRITERIA.append(line)
    print(line)
    assert ok, line


def criterion_not_run(number, title, reason):
    line = f"NOT RUN criterion {number}: {title} [{reason}]"
    CRITERIA.append(line)
    print(line)


def finite_difference_check(params, x, t, **kw):
    _, grads = nn_mod.mse_loss_and_grad(params, x, t, **kw)
    worst = 0.0
    for name, value in params.items():
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + 1e-4
            up = nn_mod.mse_loss_and_grad(params, x, t, **kw)[0]
            value[idx] = orig - 1e-4
            down = nn_mod.mse_loss_and_grad(params, x, t, **kw)[0]
            value[idx] = orig
            fd, an = (up - down) / 2e-4, grads[name][idx]
            scale = max(abs(fd), abs(an))
            if scale > 1e-7:
                worst = max(worst, abs(fd - an) / scale)
    return worst
