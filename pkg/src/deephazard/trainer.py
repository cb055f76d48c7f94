"""Mini-batch training of the hazard model with Adam and validation early stopping."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SurvivalDataset
from .estimator import loglik_estimate, minibatch_loss
from .hazard import HazardModel

log = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite training loss ({value}) at epoch {epoch}")
        self.epoch = epoch
        self.value = value


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-3
    batch_size: int = 256
    n_samples: int = 64
    max_epochs: int = 4000
    patience: int = 800
    weight_decay: float = 1e-5
    seed: int = 0
    eval_samples: int | None = None
    clip_norm: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        for name in ("batch_size", "n_samples", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.eval_samples is not None and self.eval_samples < 1:
            raise ValueError("eval_samples must be positive")

    @property
    def validation_samples(self) -> int:
        return self.eval_samples or self.n_samples

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    train_nll: list[float] = field(default_factory=list)
    valid_ll: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    initial_valid_ll: float = float("nan")
    best_epoch: int = 0  # 0 means the initial parameters were never beaten
    best_valid_ll: float = float("-inf")

    @property
    def n_epochs(self) -> int:
        return len(self.valid_ll)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_nll", "valid_ll", "seconds"])
            for i, row in enumerate(zip(self.train_nll, self.valid_ll, self.seconds), start=1):
                w.writerow([i, *(repr(float(v)) for v in row)])


class AdamState:
    """First/second moment buffers for a list of parameter arrays."""

    def __init__(self, arrays):
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.step = 0


def adaptive_update(params, grads, state: AdamState, lr: float, weight_decay: float = 0.0):
    """One Adam step with decoupled weight decay, applied in place.

    ``params`` and ``grads`` are congruent lists of arrays.
    """
    state.step += 1
    c1 = 1.0 - BETA1**state.step
    c2 = 1.0 - BETA2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p -= lr * ((m / c1) / (np.sqrt(v / c2) + ADAM_EPS) + weight_decay * p)
    return params, state


def validation_loglik(model: HazardModel, valid: SurvivalDataset, n_samples: int, seed) -> float:
    """IS log-likelihood of the whole set, eval mode, on fixed seeded samples."""
    if len(valid) == 0:
        raise ValueError("empty validation set")
    return loglik_estimate(model, valid, n_samples, np.random.default_rng(seed))


def _model_arrays(model: HazardModel):
    return [a for p in model.parameter_sets() for a in p.arrays()]


def _grad_arrays(model: HazardModel, grads):
    return [a for name in model.variant.order for a in grads[name].arrays()]


def train(
    model: HazardModel,
    train_set: SurvivalDataset,
    valid_set: SurvivalDataset,
    cfg: TrainConfig,
    callback=None,
) -> tuple[HazardModel, TrainHistory]:
    """Fit ``model`` by stochastic gradient descent on the IS loss.

    The input model is not modified. Each epoch shuffles the training rows,
    redraws importance samples for every batch and scores the validation set
    on a fixed sample stream. Stops after ``max_epochs`` or ``patience``
    epochs without improvement and returns the best-validation parameters.
    """
    if len(train_set) == 0 or len(valid_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if train_set.n_features != model.n_features:
        raise ValueError(
            f"model expects {model.n_features} features, data has {train_set.n_features}"
        )
    streams = np.random.SeedSequence(cfg.seed).spawn(3)
    batch_rng = np.random.default_rng(streams[0])
    is_rng = np.random.default_rng(streams[1])
    eval_seed = streams[2]

    model = model.copy()
    arrays = _model_arrays(model)
    state = AdamState(arrays)
    history = TrainHistory()
    n = len(train_set)
    n_eval = cfg.validation_samples

    best = model.copy()
    history.initial_valid_ll = history.best_valid_ll = validation_loglik(model, valid_set, n_eval, eval_seed)
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = batch_rng.permutation(n)
        nll = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss = minibatch_loss(
                model, train_set.subset(idx), n, cfg.n_samples, is_rng, train=True, compute_grad=True
            )
            if not np.isfinite(loss.value) or not np.all(np.isfinite(loss.grad)):
                raise DivergenceError(epoch, loss.value)
            grads = _grad_arrays(model, loss.grads)
            if cfg.clip_norm is not None:
                norm = float(np.sqrt(sum((g * g).sum() for g in grads)))
                if norm > cfg.clip_norm:
                    grads = [g * (cfg.clip_norm / norm) for g in grads]
            adaptive_update(arrays, grads, state, cfg.learning_rate, cfg.weight_decay)
            for p in model.parameter_sets():
                p.touch()
            nll += loss.value * len(idx) / n
        vll = validation_loglik(model, valid_set, n_eval, eval_seed)
        if not np.isfinite(vll):
            raise DivergenceError(epoch, vll)
        history.train_nll.append(nll)
        history.valid_ll.append(vll)
        history.seconds.append(time.perf_counter() - t0)
        if vll > history.best_valid_ll:
            history.best_valid_ll = vll
            history.best_epoch = epoch
            best = model.copy()
            stale = 0
        else:
            stale += 1
        if callback is not None:
            callback(epoch, history)
        if stale >= cfg.patience:
            log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
            break
    return best, history
