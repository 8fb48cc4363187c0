"""Residual MLP ensemble, trained with hand-written backprop and Adam.

Each member maps 4 standardized features through three residual blocks
(linear 4->30, batch normalization, ReLU, dropout, linear 30->4, plus the
block input) and a final linear 4->1 layer. Sixteen members are trained
from independent seeds; at prediction time each member's output is
lowpass filtered, the member farthest from the per-sample median is
dropped and the remaining fifteen are averaged.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import dsp
from ..errors import InvalidArgument, TooShort, TrainingDiverged

log = logging.getLogger(__name__)

N_MEMBERS = 16
N_BLOCKS = 3
N_INPUTS = 4
HIDDEN = 30
DROPOUT = 0.1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LEARNING_RATE = 1e-3
BATCH_SIZE = 256
EPOCHS = 200
MAX_RETRIES = 3
OUTPUT_CUTOFF_CPH = 1.5


def init_params(rng, n_inputs=N_INPUTS, hidden=HIDDEN, n_blocks=N_BLOCKS):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""

    def linear(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return (rng.uniform(-bound, bound, (fan_in, fan_out)),
                rng.uniform(-bound, bound, fan_out))

    params = {}
    for b in range(n_blocks):
        params[f"W1_{b}"], params[f"b1_{b}"] = linear(n_inputs, hidden)
        params[f"gamma_{b}"] = np.ones(hidden)
        params[f"beta_{b}"] = np.zeros(hidden)
        params[f"W2_{b}"], params[f"b2_{b}"] = linear(hidden, n_inputs)
    params["Wo"], params["bo"] = linear(n_inputs, 1)
    return params


def init_buffers(hidden=HIDDEN, n_blocks=N_BLOCKS):
    buffers = {}
    for b in range(n_blocks):
        buffers[f"mean_{b}"] = np.zeros(hidden)
        buffers[f"var_{b}"] = np.ones(hidden)
    return buffers


def n_blocks_of(params):
    return sum(1 for k in params if k.startswith("W1_"))


def forward(params, x, buffers=None, train=False, rng=None, norm=True, dropout=DROPOUT,
            momentum=BN_MOMENTUM):
    """Network output of shape ``(batch,)`` and a cache for :func:`backward`.

    In training mode batch statistics normalize the hidden layer (and
    update ``buffers`` in place) and dropout is applied with ``rng``.
    In evaluation mode the running statistics in ``buffers`` are used.
    """
    cache = {"x": x, "blocks": []}
    h = x
    for b in range(n_blocks_of(params)):
        z1 = h @ params[f"W1_{b}"] + params[f"b1_{b}"]
        blk = {"h": h}
        if norm:
            if train:
                mu = z1.mean(axis=0)
                var = z1.var(axis=0)
                if buffers is not None:
                    n = z1.shape[0]
                    unbiased = var * n / (n - 1) if n > 1 else var
                    buffers[f"mean_{b}"] = (1 - momentum) * buffers[f"mean_{b}"] + momentum * mu
                    buffers[f"var_{b}"] = (1 - momentum) * buffers[f"var_{b}"] + momentum * unbiased
            else:
                mu, var = buffers[f"mean_{b}"], buffers[f"var_{b}"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            zh = (z1 - mu) * inv_std
            y = params[f"gamma_{b}"] * zh + params[f"beta_{b}"]
            blk.update(zh=zh, inv_std=inv_std)
        else:
            y = z1
        a = np.maximum(y, 0.0)
        if train and dropout > 0:
            keep = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            a_d = a * keep
            blk["keep"] = keep
        else:
            a_d = a
        z2 = a_d @ params[f"W2_{b}"] + params[f"b2_{b}"]
        blk.update(y=y, a_d=a_d)
        cache["blocks"].append(blk)
        h = h + z2
    cache["h_out"] = h
    out = (h @ params["Wo"] + params["bo"])[:, 0]
    cache["norm"] = norm
    return out, cache


def backward(params, cache, dout):
    """Gradients of a scalar loss given ``dout = dloss/doutput``."""
    grads = {}
    dout = dout[:, None]
    h = cache["h_out"]
    grads["Wo"] = h.T @ dout
    grads["bo"] = dout.sum(axis=0)
    dh = dout @ params["Wo"].T
    for b in reversed(range(len(cache["blocks"]))):
        blk = cache["blocks"][b]
        grads[f"W2_{b}"] = blk["a_d"].T @ dh
        grads[f"b2_{b}"] = dh.sum(axis=0)
        da = dh @ params[f"W2_{b}"].T
        if "keep" in blk:
            da = da * blk["keep"]
        dy = da * (blk["y"] > 0)
        if cache["norm"]:
            zh = blk["zh"]
            grads[f"gamma_{b}"] = np.sum(dy * zh, axis=0)
            grads[f"beta_{b}"] = dy.sum(axis=0)
            dzh = dy * params[f"gamma_{b}"]
            n = dzh.shape[0]
            dz1 = blk["inv_std"] / n * (n * dzh - dzh.sum(axis=0) - zh * np.sum(dzh * zh, axis=0))
        else:
            grads[f"gamma_{b}"] = np.zeros_like(params[f"gamma_{b}"])
            grads[f"beta_{b}"] = np.zeros_like(params[f"beta_{b}"])
            dz1 = dy
        grads[f"W1_{b}"] = blk["h"].T @ dz1
        grads[f"b1_{b}"] = dz1.sum(axis=0)
        dh = dh + dz1 @ params[f"W1_{b}"].T
    grads["x"] = dh
    return grads


def mse_loss_and_grad(params, x, t, **kw):
    """Mean squared error and its parameter gradients for one batch."""
    out, cache = forward(params, x, **kw)
    diff = out - t
    loss = float(np.mean(diff ** 2))
    grads = backward(params, cache, 2.0 * diff / diff.size)
    return loss, grads


class Adam:
    def __init__(self, params, lr=LEARNING_RATE, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train_member(x, t, seed, epochs=EPOCHS, batch_size=BATCH_SIZE, lr=LEARNING_RATE,
                 dropout=DROPOUT):
    """Train one network on standardized inputs and targets.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    Returns ``(params, buffers, final_epoch_loss)``; raises
    TrainingDiverged on a non-finite loss.
    """
    rng = np.random.default_rng(seed)
    params = init_params(rng, x.shape[1])
    buffers = init_buffers()
    opt = Adam(params, lr)
    n = x.shape[0]
    loss = np.nan
    for _ in range(epochs):
        order = rng.permutation(n)
        starts = list(range(0, n, batch_size))
        if len(starts) > 1 and n - starts[-1] < 2:
            starts.pop()
        total = 0.0
        for i, s in enumerate(starts):
            stop = starts[i + 1] if i + 1 < len(starts) else n
            sel = order[s:stop]
            loss_b, grads = mse_loss_and_grad(
                params, x[sel], t[sel], buffers=buffers, train=True, rng=rng, dropout=dropout
            )
            if not np.isfinite(loss_b):
                raise TrainingDiverged("non-finite training loss")
            opt.step(params, grads)
            total += loss_b * sel.size
        loss = total / n
    return params, buffers, loss


def _train_with_retries(args):
    x, t, seq, kwargs = args
    for attempt in range(MAX_RETRIES + 1):
        try:
            return train_member(x, t, seq, **kwargs)
        except TrainingDiverged:
            log.warning("member diverged (attempt %d); reseeding", attempt + 1)
            seq = seq.spawn(1)[0] if isinstance(seq, np.random.SeedSequence) else \
                np.random.SeedSequence([int(np.random.SeedSequence(seq).entropy), attempt]).spawn(1)[0]
    raise TrainingDiverged(f"member diverged after {MAX_RETRIES} retries")


@dataclass(eq=False)
class Member:
    params: dict
    buffers: dict

    def predict(self, x):
        return forward(self.params, x, buffers=self.buffers, train=False)[0]


@dataclass(eq=False)
class NnEnsemble:
    members: list
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float
    output_cutoff_cph: float = OUTPUT_CUTOFF_CPH
    info: dict = field(default_factory=dict)

    kind = "nn"

    def standardize(self, X):
        return (np.asarray(X, dtype=float) - self.feature_mean) / self.feature_std

    def member_outputs(self, fm):
        """Unfiltered outputs in nT, shape ``(n_members, rows)``."""
        z = self.standardize(fm.nn_columns)
        return np.array([m.predict(z) for m in self.members]) * self.target_std + self.target_mean

    def to_dict(self):
        return {
            "members": [
                {
                    "params": {k: v.tolist() for k, v in m.params.items()},
                    "buffers": {k: v.tolist() for k, v in m.buffers.items()},
                    "shapes": {k: list(v.shape) for k, v in m.params.items()},
                }
                for m in self.members
            ],
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "output_cutoff_cph": self.output_cutoff_cph,
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d):
        members = [
            Member(
                {k: np.asarray(v, dtype=float).reshape(m["shapes"][k]) for k, v in m["params"].items()},
                {k: np.asarray(v, dtype=float) for k, v in m["buffers"].items()},
            )
            for m in d["members"]
        ]
        return cls(
            members,
            np.asarray(d["feature_mean"], dtype=float),
            np.asarray(d["feature_std"], dtype=float),
            float(d["target_mean"]),
            float(d["target_std"]),
            float(d.get("output_cutoff_cph", OUTPUT_CUTOFF_CPH)),
            dict(d.get("info", {})),
        )


def _safe_std(values, axis=None):
    std = np.std(values, axis=axis)
    return np.where(std > 0, std, 1.0)


def fit_nn(fm, seed, n_members=N_MEMBERS, member_seeds=None, epochs=EPOCHS, batch_size=BATCH_SIZE,
           lr=LEARNING_RATE, dropout=DROPOUT, output_cutoff_cph=OUTPUT_CUTOFF_CPH, n_jobs=1):
    """Train the ensemble.

    Features and target are z-scored with training statistics. Member
    seeds are spawned from ``seed`` unless ``member_seeds`` is given.
    ``n_jobs > 1`` trains members in worker processes; results do not
    depend on it.
    """
    X = fm.nn_columns
    y = np.asarray(fm.target_nT, dtype=float)
    if X.shape[0] < 2:
        raise TooShort("need at least two training rows")
    mean, std = X.mean(axis=0), _safe_std(X, axis=0)
    t_mean, t_std = float(y.mean()), float(_safe_std(y))
    x = (X - mean) / std
    t = (y - t_mean) / t_std
    if member_seeds is None:
        member_seeds = np.random.SeedSequence(seed).spawn(n_members)
    elif len(member_seeds) != n_members:
        raise InvalidArgument("member_seeds must have one entry per member")
    kwargs = dict(epochs=epochs, batch_size=batch_size, lr=lr, dropout=dropout)
    jobs = [(x, t, s, kwargs) for s in member_seeds]
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            trained = list(pool.map(_train_with_retries, jobs))
    else:
        trained = [_train_with_retries(j) for j in jobs]
    members = [Member(p, b) for p, b, _ in trained]
    info = {"seed": seed, "final_loss": [float(l) for _, _, l in trained], "epochs": epochs,
            "batch_size": batch_size, "learning_rate": lr, "dropout": dropout}
    return NnEnsemble(members, mean, std, t_mean, t_std, output_cutoff_cph, info)


def trimmed_ensemble_mean(outputs):
    """Per column: drop the value farthest from the median, average the rest.

    ``outputs`` has shape ``(n_members, n_samples)``. Ties for the
    farthest value drop the highest member index, so members ``1..16``
    average to 8.
    """
    outputs = np.asarray(outputs, dtype=float)
    med = np.median(outputs, axis=0)
    n = outputs.shape[0]
    drop = n - 1 - np.argmax(np.abs(outputs - med)[::-1], axis=0)
    keep = np.ones(outputs.shape, dtype=bool)
    keep[drop, np.arange(outputs.shape[1])] = False
    return np.sum(np.where(keep, outputs, 0.0), axis=0) / (outputs.shape[0] - 1)


def filtered_member_outputs(model, fm):
    """Member outputs after the per-member output lowpass."""
    raw = model.member_outputs(fm)
    if not model.output_cutoff_cph:
        return raw
    return np.array([dsp.lowpass(fm.as_series(r), model.output_cutoff_cph).values for r in raw])


def predict_nn(model, fm):
    return fm.as_series(trimmed_ensemble_mean(filtered_member_outputs(model, fm)))
