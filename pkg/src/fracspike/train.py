"""Losses, optimizers, the training loop and the finite-difference gradient check."""

from __future__ import annotations

import logging
import resource
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from .adjoint import backward
from .data_io import encode
from .exceptions import DivergenceError
from .fde import SolverOptions, TimeGrid, check_alpha
from .network import NetworkSpec, NetworkState, forward

logger = logging.getLogger(__name__)

LOSSES = ("cross_entropy_on_counts", "mse_on_counts")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    optimizer: str = "adam"
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    loss: str = "cross_entropy_on_counts"
    target_count: Optional[float] = None
    seed: int = 0
    T: int = 8
    time_interval: float = 1.0
    solver: SolverOptions = field(default_factory=SolverOptions)
    alpha: float = 1.0
    encoding: str = "bernoulli"
    adjoint: str = "discrete"
    eval_seed: int = 12345

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.T < 1 or int(self.T) != self.T:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if not self.time_interval > 0:
            raise ValueError("time_interval must be positive")
        self.alpha = check_alpha(self.alpha)
        self.betas = tuple(self.betas)
        self.solver.validate(self.alpha, self.T)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_step(self.time_interval, self.T)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class RunMetrics:
    train_loss: List[float] = field(default_factory=list)
    train_acc: List[float] = field(default_factory=list)
    test_acc: List[Optional[float]] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    peak_memory: List[int] = field(default_factory=list)
    firing_rates: List[List[float]] = field(default_factory=list)

    def record(self, epoch: int) -> dict:
        """Metrics of one epoch as a flat, JSON-ready record."""
        return {
            "epoch": epoch,
            "train_loss": self.train_loss[epoch],
            "train_acc": self.train_acc[epoch],
            "test_acc": self.test_acc[epoch],
            "seconds": self.seconds[epoch],
            "peak_memory_bytes": self.peak_memory[epoch],
            "firing_rates": self.firing_rates[epoch],
        }

    def records(self) -> List[dict]:
        return [self.record(e) for e in range(len(self.train_loss))]


def loss_and_grad(kind: str, counts, labels, target_count: Optional[float] = None):
    """Batch-mean loss on final spike counts and its gradient w.r.t. the counts."""
    counts = np.asarray(counts, dtype=np.float64)
    labels = np.asarray(labels)
    if counts.ndim != 2 or counts.shape[0] != labels.shape[0]:
        raise ValueError(f"counts {counts.shape} do not match {labels.shape[0]} labels")
    B, C = counts.shape
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    onehot = np.zeros_like(counts)
    onehot[np.arange(B), labels] = 1.0
    if kind == "cross_entropy_on_counts":
        logp = log_softmax(counts, axis=1)
        loss = -float(np.mean(logp[np.arange(B), labels]))
        grad = (softmax(counts, axis=1) - onehot) / B
        return loss, grad
    if kind == "mse_on_counts":
        if target_count is None:
            raise ValueError("mse_on_counts needs a target count")
        diff = counts - onehot * target_count
        return float(np.mean(diff**2)), 2.0 * diff / diff.size
    raise ValueError(f"unknown loss {kind!r}")


def predict_labels(counts) -> np.ndarray:
    """Arg-max over output counts; ties go to the lowest class index."""
    return np.argmax(np.asarray(counts), axis=1)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: Optional[List[np.ndarray]] = None
        self.v: Optional[List[np.ndarray]] = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(cfg.lr)
    return Adam(cfg.lr, cfg.betas, cfg.eps)


def _target(cfg: TrainConfig) -> float:
    return cfg.target_count if cfg.target_count is not None else float(cfg.T)


def _peak_rss() -> int:
    r = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(r if sys.platform == "darwin" else r * 1024)


def evaluate(
    spec: NetworkSpec,
    X,
    y=None,
    cfg: Optional[TrainConfig] = None,
    batch_size: int = 512,
    corrupt: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None,
    seed: Optional[int] = None,
    encoder: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None,
) -> dict:
    """Counts, predictions and (when labels are given) accuracy on intensities ``X``.

    ``corrupt(spikes, rng)`` is applied to each encoded batch before the
    forward pass (robustness sweeps). Encoding is seeded by ``cfg.eval_seed``
    unless ``seed`` is given, so repeated evaluations see the same spikes.
    ``encoder(X_batch, rng)`` replaces the default encoding when given.
    """
    cfg = cfg or TrainConfig(alpha=spec.alpha)
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(cfg.eval_seed if seed is None else seed)
    grid = cfg.grid
    counts = []
    totals = np.zeros(len(spec.layers))
    for start in range(0, len(X), batch_size):
        xb = X[start : start + batch_size]
        spikes = encoder(xb, rng) if encoder is not None else encode(cfg.encoding, xb, cfg.T, rng)
        if corrupt is not None:
            spikes = corrupt(spikes, rng)
        state = forward(spec, spikes, grid, cfg.solver)
        counts.append(state.counts)
        totals += state.spike_totals()
    counts = np.concatenate(counts) if counts else np.zeros((0, spec.out_dim))
    pred = predict_labels(counts)
    n = max(len(X), 1)
    out = {
        "counts": counts,
        "pred": pred,
        "firing_rates": [float(t / (cfg.T * layer.out_dim * n)) for t, layer in zip(totals, spec.layers)],
    }
    if y is not None:
        out["accuracy"] = float(np.mean(pred == np.asarray(y))) if len(X) else 0.0
    return out


def train_loop(
    spec: NetworkSpec,
    data,
    cfg: TrainConfig,
    test_data=None,
    on_epoch: Optional[Callable[[dict], None]] = None,
):
    """Train the weights of ``spec`` (a copy is returned) on ``(X, y)`` intensities.

    Each epoch shuffles the training set and draws fresh input spikes, both
    from one generator seeded by ``cfg.seed``; per batch the loop runs
    forward, loss, adjoint backward and one optimizer step.
    """
    X, y = (np.asarray(a) for a in data)
    if len(X) == 0:
        raise ValueError("training set is empty")
    if X.shape[1] != spec.in_dim:
        raise ValueError(f"data has {X.shape[1]} features, network expects {spec.in_dim}")
    if spec.alpha != cfg.alpha:
        raise ValueError(f"network alpha {spec.alpha} differs from config alpha {cfg.alpha}")
    spec = spec.copy()
    params = spec.weights()
    opt = make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    grid = cfg.grid
    metrics = RunMetrics()

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(X))
        loss_sum, correct, n_batches = 0.0, 0, 0
        totals = np.zeros(len(spec.layers))
        for b, start in enumerate(range(0, len(X), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            spikes = encode(cfg.encoding, X[idx], cfg.T, rng)
            state = forward(spec, spikes, grid, cfg.solver)
            loss, g = loss_and_grad(cfg.loss, state.counts, y[idx], _target(cfg))
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b
                )
            grads = backward(spec, state, g, grid, cfg.solver, mode=cfg.adjoint)
            opt.step(params, grads.dW)
            loss_sum += loss
            n_batches += 1
            correct += int(np.sum(predict_labels(state.counts) == y[idx]))
            totals += state.spike_totals()
        metrics.train_loss.append(loss_sum / n_batches)
        metrics.train_acc.append(correct / len(X))
        metrics.firing_rates.append(
            [float(t / (cfg.T * layer.out_dim * len(X))) for t, layer in zip(totals, spec.layers)]
        )
        if test_data is not None:
            metrics.test_acc.append(evaluate(spec, test_data[0], test_data[1], cfg)["accuracy"])
        else:
            metrics.test_acc.append(None)
        metrics.seconds.append(time.perf_counter() - t0)
        metrics.peak_memory.append(_peak_rss())
        rec = metrics.record(epoch)
        logger.info(
            "epoch %d loss %.4f train %.4f test %s", epoch, rec["train_loss"], rec["train_acc"], rec["test_acc"]
        )
        if on_epoch is not None:
            on_epoch(rec)
    return spec, metrics


@dataclass
class GradcheckReport:
    max_rel_error: float
    mean_rel_error: float
    worst: Tuple[int, Tuple[int, int]]
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "mean_rel_error": self.mean_rel_error,
            "worst_layer": self.worst[0],
            "worst_index": list(self.worst[1]),
            "n_params": int(self.analytic.size),
        }


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradcheck(
    spec: NetworkSpec,
    sample,
    label: int,
    cfg: TrainConfig,
    epsilon: float = 1e-4,
) -> GradcheckReport:
    """Compare adjoint gradients with central differences over every weight.

    ``sample`` is either a spike train of shape ``(T, in_dim)`` or an
    intensity vector, which is encoded with ``cfg.seed``. The network is run
    with its smooth (differentiable) forward nonlinearity.
    """
    spec = spec.copy(smooth=True)
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim == 1:
        sample = encode(cfg.encoding, sample[None, :], cfg.T, np.random.default_rng(cfg.seed))[:, 0]
    frames = sample[:, None, :]
    grid = cfg.grid
    labels = np.array([label])

    def loss_of(s: NetworkSpec):
        st = forward(s, frames, grid, cfg.solver)
        return st, loss_and_grad(cfg.loss, st.counts, labels, _target(cfg))

    state, (_, g) = loss_of(spec)
    analytic = backward(spec, state, g, grid, cfg.solver, mode=cfg.adjoint).flat()

    numeric = np.empty_like(analytic)
    where = []
    pos = 0
    for li, layer in enumerate(spec.layers):
        for idx in np.ndindex(layer.W.shape):
            orig = layer.W[idx]
            layer.W[idx] = orig + epsilon
            lp = loss_of(spec)[1][0]
            layer.W[idx] = orig - epsilon
            lm = loss_of(spec)[1][0]
            layer.W[idx] = orig
            numeric[pos] = (lp - lm) / (2.0 * epsilon)
            where.append((li, idx))
            pos += 1
    rel = relative_error(analytic, numeric)
    worst = int(np.argmax(rel)) if rel.size else 0
    return GradcheckReport(float(rel.max()), float(rel.mean()), where[worst], analytic, numeric)
