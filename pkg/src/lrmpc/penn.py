"""Probabilistic ensemble of Gaussian-output MLPs, trained from scratch.

Each member maps a feature vector to (mean, variance) with a softplus
variance head and is fit by Gaussian negative log-likelihood with Adam.
Members share data but not initialization or batch order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lrmpc.rng import child_int, generator

log = logging.getLogger(__name__)

MODEL_FORMAT = "lrmpc-penn"
MODEL_VERSION = 1
VAR_FLOOR = 1e-6
HIDDEN = (128, 128, 64, 32)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ModelFormatError(ValueError):
    pass


class UnsupportedVersion(ModelFormatError):
    pass


@dataclass(frozen=True)
class GaussianPrediction:
    mean: float
    variance: float


@dataclass(frozen=True)
class EnsemblePrediction:
    members: tuple[GaussianPrediction, ...]

    @property
    def mixture_mean(self) -> float:
        return sum(g.mean for g in self.members) / len(self.members)


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class MlpMember:
    """Five dense layers, ReLU between them, last layer emits (mean, raw variance)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0
    var_floor: float = VAR_FLOOR

    @classmethod
    def init(cls, in_dim: int, seed: int, hidden=HIDDEN) -> "MlpMember":
        rng = generator(seed, 0)
        sizes = (in_dim, *hidden, 2)
        weights, biases = [], []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = math.sqrt(2.0 / a) if i < len(sizes) - 2 else math.sqrt(1.0 / a)
            weights.append(rng.normal(0.0, scale, size=(a, b)))
            biases.append(np.zeros(b))
        return cls(weights, biases, seed)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MlpMember":
        return MlpMember([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed, self.var_floor)

    def forward_batch(self, X: np.ndarray, keep: bool = False):
        """Mean and variance for a batch; ``keep`` also returns activations."""
        h = X
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        mu = h[:, 0]
        var = softplus(h[:, 1]) + self.var_floor
        if keep:
            return mu, var, acts
        return mu, var

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray):
        """Batch-mean NLL and its exact gradients, ordered like ``params()``."""
        mu, var, acts = self.forward_batch(X, keep=True)
        r = y - mu
        loss = 0.5 * (np.log(var) + r * r / var) + HALF_LOG_2PI
        n = len(y)
        g_out = np.empty((n, 2))
        g_out[:, 0] = -r / var / n
        g_out[:, 1] = 0.5 * (1.0 / var - r * r / (var * var)) * sigmoid(acts[-1][:, 1]) / n
        grads = []
        g = g_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(g.sum(axis=0))
            grads.append(acts[i].T @ g)
            if i > 0:
                g = (g @ self.weights[i].T) * (acts[i] > 0.0)
        grads.reverse()
        return float(loss.mean()), grads


def forward(member: MlpMember, X) -> GaussianPrediction:
    X = np.asarray(X, dtype=float)
    if X.shape != (member.in_dim,):
        raise ValueError(f"expected {member.in_dim} features, got shape {X.shape}")
    mu, var = member.forward_batch(X[None, :])
    return GaussianPrediction(float(mu[0]), float(var[0]))


def nll_loss(pred: GaussianPrediction, label: float) -> float:
    r = label - pred.mean
    return 0.5 * (math.log(pred.variance) + r * r / pred.variance) + HALF_LOG_2PI


def backward(member: MlpMember, X, label: float) -> list[np.ndarray]:
    X = np.asarray(X, dtype=float)
    if X.shape != (member.in_dim,):
        raise ValueError(f"expected {member.in_dim} features, got shape {X.shape}")
    return member.loss_and_grads(X[None, :], np.array([float(label)]))[1]


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch: int = 256
    max_epochs: int = 1000
    lr_factor: float = 0.5
    lr_patience: int = 5
    stop_patience: int = 10
    min_delta: float = 1e-5
    noise_std_frac: float = 0.05
    val_split: float = 0.15
    members: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_split < 1.0:
            raise ValueError("val_split must be in (0, 1)")
        if min(self.lr, self.batch, self.max_epochs, self.members) <= 0:
            raise ValueError("lr, batch, max_epochs and members must be positive")


class PlateauTracker:
    """Learning-rate halving and early stopping on a validation metric.

    Both counters reset on improvement; the scheduler counter also resets
    after each reduction.
    """

    def __init__(self, lr: float, cfg: TrainConfig):
        self.lr = lr
        self.cfg = cfg
        self.best = math.inf
        self.since_best = 0
        self.since_reduce = 0

    def update(self, val: float) -> bool:
        """Feed one epoch's metric; returns True if this epoch improved."""
        if val < self.best - self.cfg.min_delta:
            self.best = val
            self.since_best = 0
            self.since_reduce = 0
            return True
        self.since_best += 1
        self.since_reduce += 1
        if self.since_reduce >= self.cfg.lr_patience:
            self.lr *= self.cfg.lr_factor
            self.since_reduce = 0
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_best >= self.cfg.stop_patience


@dataclass
class MemberHistory:
    seed: int
    initial_val_nll: float
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def best_val_nll(self) -> float:
        if self.best_epoch == 0:
            return self.initial_val_nll
        return self.epochs[self.best_epoch - 1]["val_nll"]


def batch_nll(member: MlpMember, X: np.ndarray, y: np.ndarray, chunk: int = 8192) -> float:
    total = 0.0
    for i in range(0, len(y), chunk):
        mu, var = member.forward_batch(X[i:i + chunk])
        r = y[i:i + chunk] - mu
        total += float(np.sum(0.5 * (np.log(var) + r * r / var) + HALF_LOG_2PI))
    return total / len(y)


def train_member(member: MlpMember, Xtr, ytr, Xval, yval, cfg: TrainConfig, noise_std, rng) -> tuple[MlpMember, MemberHistory]:
    """Fit one member; returns the best-validation parameters."""
    hist = MemberHistory(member.seed, batch_nll(member, Xval, yval))
    best = member.copy()
    tracker = PlateauTracker(cfg.lr, cfg)
    tracker.best = hist.initial_val_nll
    opt = Adam(member.params(), cfg.lr)
    n = len(ytr)
    for epoch in range(1, cfg.max_epochs + 1):
        opt.lr = tracker.lr
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch):
            idx = order[i:i + cfg.batch]
            xb = Xtr[idx] + rng.normal(size=(len(idx), Xtr.shape[1])) * noise_std
            loss, grads = member.loss_and_grads(xb, ytr[idx])
            opt.step(grads)
            losses.append(loss * len(idx))
        val = batch_nll(member, Xval, yval)
        improved = tracker.update(val)
        hist.epochs.append({"epoch": epoch, "train_nll": sum(losses) / n, "val_nll": val, "lr": opt.lr})
        if improved:
            best = member.copy()
            hist.best_epoch = epoch
        if tracker.should_stop:
            hist.stopped_early = True
            break
    return best, hist


@dataclass
class Ensemble:
    members: list[MlpMember]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    label_scale: float = 100.0
    histories: list[MemberHistory] = field(default_factory=list, compare=False)

    @property
    def weights(self) -> list[float]:
        return [1.0 / len(self.members)] * len(self.members)

    @property
    def feature_dim(self) -> int:
        return len(self.feature_mean)

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.feature_mean) / self.feature_std

    def predict_arrays(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Member means and variances in label units, each shaped (m, n)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.feature_dim:
            raise ValueError(f"expected (n, {self.feature_dim}) features, got shape {X.shape}")
        Z = self.normalize(X)
        mus, vars_ = [], []
        for m in self.members:
            mu, var = m.forward_batch(Z)
            mus.append(mu * self.label_scale)
            vars_.append(var * self.label_scale ** 2)
        return np.array(mus), np.array(vars_)


def _to_preds(mus: np.ndarray, vars_: np.ndarray) -> list[EnsemblePrediction]:
    return [
        EnsemblePrediction(tuple(GaussianPrediction(float(mus[j, i]), float(vars_[j, i])) for j in range(mus.shape[0])))
        for i in range(mus.shape[1])
    ]


def predict(ens: Ensemble, X) -> EnsemblePrediction:
    X = np.asarray(X, dtype=float)
    if X.shape != (ens.feature_dim,):
        raise ValueError(f"expected {ens.feature_dim} features, got shape {X.shape}")
    return _to_preds(*ens.predict_arrays(X[None, :]))[0]


def predict_many(ens: Ensemble, X) -> list[EnsemblePrediction]:
    return _to_preds(*ens.predict_arrays(X))


def split_indices(n: int, val_split: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = generator(seed, 1).permutation(n)
    n_val = max(1, int(round(n * val_split)))
    if n_val >= n:
        raise ValueError("dataset too small for a validation split")
    return perm[n_val:], perm[:n_val]


def _train_one(args):
    j, Xtr, ytr, Xval, yval, cfg, noise = args
    member = MlpMember.init(Xtr.shape[1], child_int(cfg.seed, 100 + j))
    return train_member(member, Xtr, ytr, Xval, yval, cfg, noise, generator(cfg.seed, 200 + j))


def train(X, y, cfg: TrainConfig = TrainConfig(), label_scale: float = 100.0, workers: int = 1) -> Ensemble:
    """Fit ``cfg.members`` members on raw features ``X`` and raw labels ``y``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("cannot train on an empty dataset")
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be (n, d) matching n labels")
    mean = X.mean(axis=0)
    raw_std = X.std(axis=0)
    std = np.where(raw_std > 1e-8, raw_std, 1.0)
    Z = (X - mean) / std
    yn = y / label_scale
    tr, val = split_indices(len(y), cfg.val_split, cfg.seed)
    noise = cfg.noise_std_frac * raw_std / std
    jobs = [(j, Z[tr], yn[tr], Z[val], yn[val], cfg, noise) for j in range(cfg.members)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(job) for job in jobs]
    for j, (_, h) in enumerate(results):
        log.info("member %d: val nll %.4f -> %.4f at epoch %d", j, h.initial_val_nll, h.best_val_nll, h.best_epoch)
    return Ensemble([m for m, _ in results], mean, std, label_scale, [h for _, h in results])


def save_model(ens: Ensemble, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "feature_dim": ens.feature_dim,
        "label_scale": ens.label_scale,
        "feature_mean": ens.feature_mean.tolist(),
        "feature_std": ens.feature_std.tolist(),
        "members": [
            {
                "seed": m.seed,
                "var_floor": m.var_floor,
                "layers": [
                    {"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
                    for w, b in zip(m.weights, m.biases)
                ],
            }
            for m in ens.members
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> Ensemble:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot parse model file {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path} is not a {MODEL_FORMAT} model file")
    if doc.get("version") != MODEL_VERSION:
        raise UnsupportedVersion(f"model version {doc.get('version')!r} unsupported (expected {MODEL_VERSION})")
    try:
        members = []
        for md in doc["members"]:
            ws, bs = [], []
            for layer in md["layers"]:
                a, b = layer["shape"]
                ws.append(np.array(layer["weights"], dtype=float).reshape(a, b))
                bs.append(np.array(layer["bias"], dtype=float).reshape(b))
            members.append(MlpMember(ws, bs, int(md["seed"]), float(md["var_floor"])))
        ens = Ensemble(
            members,
            np.array(doc["feature_mean"], dtype=float),
            np.array(doc["feature_std"], dtype=float),
            float(doc["label_scale"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file {path}: {exc}") from None
    if ens.feature_dim != doc["feature_dim"] or any(m.in_dim != ens.feature_dim for m in members):
        raise ModelFormatError("feature dimension mismatch inside model file")
    return ens
