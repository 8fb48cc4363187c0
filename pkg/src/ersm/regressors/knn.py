"""k-nearest-neighbour regression on quantile-scaled features.

Distances are Manhattan with the derivative axis weighted by ``alpha``;
neighbours are combined by normalized inverse-distance weights.
Hyperparameters are chosen by day-fold cross-validation followed by a
basin-hopping refinement of ``alpha``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.spatial import cKDTree

from .. import dsp
from ..errors import InvalidArgument, NoValidationData, TooShort
from ..ingest import kp_at
from ..timeseries import TimeSeries

log = logging.getLogger(__name__)

N_QUANTILES = 1000
DEFAULT_K_GRID = tuple(range(5, 101, 5))
DEFAULT_ALPHA_GRID = tuple(range(1, 51))
ALPHA_BOUNDS = (1.0, 50.0)
VALIDATION_KP_MAX = 4.0
OUTPUT_CUTOFF_CPH = 1.5
HOPS = 20
HOP_STEP = 2.0
BOUNDS_EPS = 1e-7


def _interp(x, xp, fp):
    """``np.interp`` for sorted ``xp``, computing the fraction rather than a slope.

    A slope over a subnormal anchor spacing overflows; the fraction stays in [0, 1].
    """
    i = np.clip(np.searchsorted(xp, x, side="right") - 1, 0, len(xp) - 2)
    lo, hi = xp[i], xp[i + 1]
    width = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(width > 0, (x - lo) / width, 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    return fp[i] + frac * (fp[i + 1] - fp[i])


class QuantileTransform:
    """Per-column empirical CDF mapping onto [0, 1].

    ``anchors[j]`` holds the training quantiles of column j at evenly
    spaced probabilities; values in between are linearly interpolated and
    values outside the training range are clipped.
    """

    def __init__(self, anchors):
        self.anchors = np.asarray(anchors, dtype=float)
        self.references = np.linspace(0.0, 1.0, self.anchors.shape[1])

    @classmethod
    def fit(cls, X, n_quantiles=N_QUANTILES):
        X = np.asarray(X, dtype=float)
        nq = max(2, min(n_quantiles, X.shape[0]))
        probs = np.linspace(0.0, 1.0, nq)
        # interpolated quantiles of subnormal values can come out of order
        return cls(np.maximum.accumulate(np.quantile(X, probs, axis=0), axis=0).T)

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        out = np.empty_like(X)
        ref = self.references
        for j, q in enumerate(self.anchors):
            x = np.clip(X[:, j], q[0], q[-1])
            # average of the two one-sided interpolants keeps repeated anchors monotone
            col = 0.5 * (_interp(x, q, ref) - _interp(-x, -q[::-1], -ref[::-1]))
            # values at (or within 1e-7 of) the range ends map exactly onto 0 and 1
            col[X[:, j] + BOUNDS_EPS > q[-1]] = 1.0
            col[X[:, j] - BOUNDS_EPS < q[0]] = 0.0
            out[:, j] = col
        return out


def knn_distance(p, q, alpha):
    """Weighted Manhattan distance between two transformed feature triples."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    diff = np.abs(p - q)
    return float(diff[..., 0] + alpha * diff[..., 1] + diff[..., 2])


def _scaled(points, alpha):
    return points * np.array([1.0, alpha, 1.0])


def _inverse_weights(dist):
    """Per-row inverse distances scaled by the row's smallest nonzero distance.

    Scaling keeps every weight in (0, 1] so tiny distances cannot overflow;
    it cancels in the normalized mean. Zero distances get weight 0.
    """
    zero = dist == 0
    positive = np.where(zero, np.inf, dist)
    scale = positive.min(axis=1, keepdims=True)
    scale = np.where(np.isfinite(scale), scale, 1.0)
    with np.errstate(divide="ignore"):
        return zero, np.where(zero, 0.0, scale / positive)


def inverse_distance_combine(dist, targets):
    """Row-wise inverse-distance weighted mean of neighbour targets.

    Rows with a zero distance return the mean target of their
    zero-distance neighbours instead.
    """
    dist = np.asarray(dist, dtype=float)
    targets = np.asarray(targets, dtype=float)
    zero, w = _inverse_weights(dist)
    exact = zero.any(axis=1)
    out = np.empty(dist.shape[0])
    wsum = w[~exact].sum(axis=1)
    out[~exact] = np.sum(w[~exact] * targets[~exact], axis=1) / wsum
    if exact.any():
        z = zero[exact]
        out[exact] = np.sum(np.where(z, targets[exact], 0.0), axis=1) / z.sum(axis=1)
    return out


def neighbor_weights(dist):
    """The weights used by :func:`inverse_distance_combine`, one row per query."""
    dist = np.asarray(dist, dtype=float)
    zero, inv = _inverse_weights(dist)
    exact = zero.any(axis=1, keepdims=True)
    w = np.where(exact, zero.astype(float), inv)
    return w / w.sum(axis=1, keepdims=True)


def _combine_prefixes(dist, targets, k_values):
    """:func:`inverse_distance_combine` for each ``k`` in ``k_values`` at once,
    using running sums over the sorted neighbour columns."""
    zero, w = _inverse_weights(dist)
    cw = np.cumsum(w, axis=1)
    cwy = np.cumsum(w * targets, axis=1)
    cz = np.cumsum(zero, axis=1)
    czy = np.cumsum(np.where(zero, targets, 0.0), axis=1)
    out = []
    for k in k_values:
        j = k - 1
        exact = cz[:, j] > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            out.append(np.where(exact, czy[:, j] / np.maximum(cz[:, j], 1), cwy[:, j] / cw[:, j]))
    return out


class _Index:
    """Exact neighbour search under the weighted L1 metric.

    A KD-tree over alpha-scaled points proposes candidates; distances are
    recomputed with :func:`knn_distance` arithmetic and ties are broken by
    training row index, so results match an exhaustive search.
    """

    EXTRA = 4

    def __init__(self, points, alpha):
        self.alpha = alpha
        self.points = np.asarray(points, dtype=float)
        self.weights = np.array([1.0, alpha, 1.0])
        self.tree = cKDTree(_scaled(self.points, alpha))

    def _exact(self, queries, idx):
        return np.sum(np.abs(self.points[idx] - queries[:, None, :]) * self.weights, axis=-1)

    def query(self, queries, k):
        queries = np.asarray(queries, dtype=float)
        n = len(self.points)
        kq = min(n, k + self.EXTRA)
        _, idx = self.tree.query(_scaled(queries, self.alpha), k=kq, p=1, workers=-1)
        idx = idx.reshape(len(queries), kq)
        dist = self._exact(queries, idx)
        order = np.lexsort((idx, dist))
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        if kq < n:
            # a tie at the k-th distance may extend past the candidates
            tol = 1e-12 * np.maximum(1.0, dist[:, -1])
            for row in np.flatnonzero(dist[:, k - 1] >= dist[:, -1] - tol):
                r = dist[row, k - 1] * (1 + 1e-9) + 1e-12
                cand = np.array(self.tree.query_ball_point(_scaled(queries[row], self.alpha), r, p=1))
                d = self._exact(queries[row:row + 1], cand[None, :])[0]
                o = np.lexsort((cand, d))[:k]
                idx[row, :k], dist[row, :k] = cand[o], d[o]
        return dist[:, :k], idx[:, :k]


@dataclass(eq=False)
class KnnModel:
    transform: QuantileTransform
    train_points: np.ndarray
    targets: np.ndarray
    k: int
    alpha: float
    output_cutoff_cph: float = OUTPUT_CUTOFF_CPH
    cv: dict = field(default_factory=dict)

    kind = "knn"

    def __post_init__(self):
        if not 1 <= self.k <= len(self.targets):
            raise InvalidArgument(f"k={self.k} outside [1, {len(self.targets)}]")
        if not self.alpha >= 1.0:
            raise InvalidArgument("alpha must be at least 1")
        self._index = None

    @property
    def index(self):
        if self._index is None:
            self._index = _Index(self.train_points, self.alpha)
        return self._index

    def to_dict(self):
        return {
            "anchors": self.transform.anchors.tolist(),
            "train_points": self.train_points.tolist(),
            "targets": self.targets.tolist(),
            "k": int(self.k),
            "alpha": float(self.alpha),
            "output_cutoff_cph": float(self.output_cutoff_cph),
            "cv": self.cv,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            QuantileTransform(np.asarray(d["anchors"])),
            np.asarray(d["train_points"], dtype=float),
            np.asarray(d["targets"], dtype=float),
            int(d["k"]),
            float(d["alpha"]),
            float(d.get("output_cutoff_cph", OUTPUT_CUTOFF_CPH)),
            dict(d.get("cv", {})),
        )


def _smooth(values, period_s, cutoff_cph):
    """Output lowpass; skipped when there are too few samples to filter."""
    if cutoff_cph is None or values.size <= 9 * dsp.DEFAULT_ORDER:
        return values
    ts = TimeSeries(0.0, period_s, values)
    return dsp.lowpass(ts, cutoff_cph).values


def _fold_scores(folds, k_values):
    """Weighted mean RMSE over folds, weights = scored rows per fold."""
    counts = 0
    rmse_sum = np.zeros(len(k_values))
    for fold_sse, n in folds:
        if n == 0:
            continue
        rmse_sum += n * np.sqrt(fold_sse / n)
        counts += n
    if counts == 0:
        raise NoValidationData("every validation row was pruned by the Kp limit")
    return rmse_sum / counts


class _CrossValidator:
    """Day-fold CV over a fixed transformed training set."""

    def __init__(self, points, targets, days, kp, period_s, epochs, cutoff_cph):
        self.points = points
        self.targets = targets
        self.period_s = period_s
        self.cutoff_cph = cutoff_cph
        self.folds = []
        for day in np.unique(days):
            held = days == day
            keep = ~held
            scored = ~(kp[held] > VALIDATION_KP_MAX)
            contiguous = np.allclose(np.diff(epochs[held]), period_s) if held.sum() > 1 else False
            self.folds.append((held, keep, scored, contiguous))
        if len(self.folds) < 2:
            raise TooShort("cross-validation needs at least two days of rows")
        if not any(f[2].any() for f in self.folds):
            raise NoValidationData("every validation row was pruned by the Kp limit")

    def scores(self, alpha, k_values):
        k_values = list(k_values)
        results = []
        for held, keep, scored, contiguous in self.folds:
            n_train = int(keep.sum())
            kmax = min(max(k_values), n_train)
            index = _Index(self.points[keep], alpha)
            dist, idx = index.query(self.points[held], kmax)
            neigh = self.targets[keep][idx]
            truth = self.targets[held][scored]
            sse = np.empty(len(k_values))
            preds = _combine_prefixes(dist, neigh, [min(k, kmax) for k in k_values])
            for j, pred in enumerate(preds):
                if contiguous:
                    pred = _smooth(pred, self.period_s, self.cutoff_cph)
                sse[j] = np.sum((pred[scored] - truth) ** 2)
            results.append((sse, int(scored.sum())))
        return _fold_scores(results, k_values)


class _ReflectedStep:
    """Uniform perturbation of ``alpha``, reflected back into the bounds.

    basinhopping adapts ``stepsize`` in place.
    """

    def __init__(self, stepsize, lo, hi, rng):
        self.stepsize, self.lo, self.hi, self.rng = stepsize, lo, hi, rng

    def __call__(self, x):
        x = np.array(x, dtype=float) + self.rng.uniform(-self.stepsize, self.stepsize, np.shape(x))
        span = self.hi - self.lo
        x = np.abs(np.mod(x - self.lo, 2 * span))
        return self.lo + np.where(x > span, 2 * span - x, x)


def fit_knn(fm, k_grid=DEFAULT_K_GRID, alpha_grid=DEFAULT_ALPHA_GRID, kp=None, seed=0,
            hops=HOPS, hop_step=HOP_STEP, output_cutoff_cph=OUTPUT_CUTOFF_CPH, n_quantiles=N_QUANTILES):
    """Fit a kNN model with cross-validated ``k`` and ``alpha``.

    Each UTC day is one fold. Held-out rows with Kp above 4 are not
    scored; fold RMSEs are averaged with weights equal to the number of
    scored rows. After the grid search, ``alpha`` is refined on a
    continuum by basin hopping with Nelder-Mead local steps, keeping the
    grid-optimal ``k``.
    """
    X = fm.knn_columns
    y = np.asarray(fm.target_nT, dtype=float)
    if kp is not None:
        kp_values = np.asarray(kp_at(kp, fm.epochs), dtype=float)
    else:
        kp_values = np.nan_to_num(fm.kp, nan=0.0)
    transform = QuantileTransform.fit(X, n_quantiles)
    Z = transform.transform(X)
    cv = _CrossValidator(Z, y, fm.day, kp_values, fm.period_s, fm.epochs, output_cutoff_cph)

    k_grid = sorted(int(k) for k in k_grid)
    alpha_grid = [float(a) for a in alpha_grid]
    table = np.array([cv.scores(a, k_grid) for a in alpha_grid])
    ia, ik = np.unravel_index(np.argmin(table), table.shape)
    best_k, grid_alpha, grid_score = k_grid[ik], alpha_grid[ia], float(table[ia, ik])
    log.info("kNN grid optimum k=%d alpha=%g cv=%.4f", best_k, grid_alpha, grid_score)

    alpha, score = grid_alpha, grid_score
    if hops:
        lo, hi = ALPHA_BOUNDS
        cache = {}

        def objective(v):
            a = float(np.clip(np.ravel(v)[0], lo, hi))
            if a not in cache:
                cache[a] = float(cv.scores(a, [best_k])[0])
            return cache[a]

        result = optimize.basinhopping(
            objective, [grid_alpha], niter=hops, stepsize=hop_step,
            minimizer_kwargs={
                "method": "Nelder-Mead",
                "bounds": [ALPHA_BOUNDS],
                "options": {"xatol": 2e-2, "fatol": 1e-6, "maxfev": 25},
            },
            take_step=_ReflectedStep(hop_step, lo, hi, np.random.default_rng(seed)),
            rng=np.random.default_rng(seed),
        )
        cand = float(np.clip(np.ravel(result.x)[0], lo, hi))
        if objective(cand) < score:
            alpha, score = cand, objective(cand)
    info = {
        "k_grid": k_grid,
        "alpha_grid": alpha_grid,
        "grid_rmse": table.tolist(),
        "grid_k": best_k,
        "grid_alpha": grid_alpha,
        "grid_score": grid_score,
        "refined_alpha": alpha,
        "refined_score": score,
        "n_folds": len(cv.folds),
        "seed": seed,
    }
    return KnnModel(transform, Z, y, best_k, alpha, output_cutoff_cph, info)


def knn_raw_predict(model, fm):
    """Unfiltered kNN predictions, plus the neighbour distances and indices."""
    Z = model.transform.transform(fm.knn_columns)
    dist, idx = model.index.query(Z, model.k)
    return inverse_distance_combine(dist, model.targets[idx]), dist, idx


def predict_knn(model, fm):
    """Predicted local series: kNN estimates smoothed by the output lowpass."""
    raw, _, _ = knn_raw_predict(model, fm)
    series = fm.as_series(raw)
    if model.output_cutoff_cph:
        series = dsp.lowpass(series, model.output_cutoff_cph)
    return series
