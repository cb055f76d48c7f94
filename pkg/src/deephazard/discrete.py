"""Discrete-time survival baseline: a softmax over equal-width time bins.

Used for the bin-count sensitivity study. Bin ``k`` (0-based) covers
``(edges[k], edges[k+1]]``; survival is linear between edges.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import SurvivalDataset
from .metrics import brier_ipcw, c_index_ipcw, event_quantile_horizons, km_censoring
from .nn import NetworkSpec, ParameterSet
from .trainer import AdamState, TrainConfig, adaptive_update

log = logging.getLogger(__name__)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class DiscreteModel:
    edges: np.ndarray
    params: ParameterSet

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        if self.edges.ndim != 1 or self.edges.size < 3 or np.any(np.diff(self.edges) <= 0):
            raise ValueError("need at least two bins with strictly increasing edges")
        if self.params.spec.output_dim != self.n_bins:
            raise ValueError("network output width must equal the bin count")

    @classmethod
    def initialize(cls, n_features: int, n_bins: int, t_max: float, seed, hidden=(32, 32), **spec_kw):
        spec = NetworkSpec(n_features, tuple(hidden), output_dim=n_bins, **spec_kw)
        return cls(np.linspace(0.0, t_max, n_bins + 1), nn.init_parameters(spec, seed))

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def t_max(self) -> float:
        return float(self.edges[-1])

    def bin_index(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t > self.t_max * (1 + 1e-12)) or np.any(t < 0):
            raise ValueError("time outside (0, t_max]")
        return np.clip(np.searchsorted(self.edges, t, side="left") - 1, 0, self.n_bins - 1)

    def probabilities(self, x, rng=None) -> np.ndarray:
        z = nn.apply(self.params, np.atleast_2d(np.asarray(x, dtype=float)), rng)
        return softmax(np.atleast_2d(z))


def _nll_terms(p: np.ndarray, k: np.ndarray, event: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-record NLL and the mask of bins whose mass enters the likelihood.

    Censored records in the last bin cannot survive past it, so they fall back
    to the mass of their own bin.
    """
    n, b = p.shape
    cols = np.arange(b)[None, :]
    last = k == b - 1
    mask = np.where(
        (event | last)[:, None],
        cols == k[:, None],
        cols > k[:, None],
    )
    mass = (p * mask).sum(axis=1)
    return -np.log(np.maximum(mass, 1e-300)), mask


def discrete_nll(model: DiscreteModel, x, t, event, rng=None):
    """-log p_k for an event in bin k; -log sum_{j>k} p_j for a censoring in bin k.

    Returns the per-record values (a float for a single record).
    """
    single = np.ndim(t) == 0
    k = model.bin_index(np.atleast_1d(t))
    ev = np.atleast_1d(np.asarray(event, dtype=bool))
    p = model.probabilities(x, rng)
    out, _ = _nll_terms(p, k, ev)
    return float(out[0]) if single else out


def discrete_survival(model: DiscreteModel, x, t):
    """S(t | x), piecewise linear between bin edges; S(0) = 1 and S(t_max) = 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t > model.t_max * (1 + 1e-12)):
        raise ValueError("time beyond the last bin edge")
    p = model.probabilities(x)
    s_edges = np.concatenate([np.ones((p.shape[0], 1)), 1.0 - np.cumsum(p, axis=1)], axis=1)
    s_edges = np.clip(s_edges, 0.0, 1.0)
    out = np.stack([np.interp(t, model.edges, row) for row in s_edges])
    if np.ndim(x) == 1:
        out = out[0]
        return float(out) if t.ndim == 0 else out
    return out


def _loss_and_grad(model: DiscreteModel, x, k, ev, rng):
    out, tape = nn.forward(model.params, x, rng)
    p = softmax(out)
    nll, mask = _nll_terms(p, k, ev)
    # d(-log sum_mask p)/dz = p - p * mask / sum_mask p
    mass = (p * mask).sum(axis=1, keepdims=True)
    dz = (p - p * mask / np.maximum(mass, 1e-300)) / x.shape[0]
    grad = nn.backward(tape, dz)
    return float(nll.mean()), grad


def train_discrete(
    model: DiscreteModel, train_set: SurvivalDataset, valid_set: SurvivalDataset, cfg: TrainConfig
) -> tuple[DiscreteModel, list[float]]:
    """Adam on the mean categorical NLL with validation early stopping."""
    params = model.params.copy()
    model = DiscreteModel(model.edges, params)
    streams = np.random.SeedSequence(cfg.seed).spawn(2)
    batch_rng = np.random.default_rng(streams[0])
    drop_rng = np.random.default_rng(streams[1])
    arrays = list(params.arrays())
    state = AdamState(arrays)
    xt, et = train_set.covariates, train_set.event
    kt = model.bin_index(np.minimum(train_set.time, model.t_max))
    kv = model.bin_index(np.minimum(valid_set.time, model.t_max))

    def valid_nll() -> float:
        p = model.probabilities(valid_set.covariates)
        return float(_nll_terms(p, kv, valid_set.event)[0].mean())

    best_params, best = params.copy(), valid_nll()
    history = [best]
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = batch_rng.permutation(len(train_set))
        for lo in range(0, order.size, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            _, grad = _loss_and_grad(model, xt[idx], kt[idx], et[idx], drop_rng)
            adaptive_update(arrays, list(grad.arrays()), state, cfg.learning_rate, cfg.weight_decay)
            params.touch()
        v = valid_nll()
        history.append(v)
        if v < best:
            best, best_params, stale = v, params.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return DiscreteModel(model.edges, best_params), history


@dataclass(frozen=True)
class SweepRow:
    n_bins: int
    fold: int
    metric: str
    value: float


def _sweep_cell(args):
    ds, n_bins, fold, train_idx, valid_idx, test_idx, cfg, hidden, quantiles = args
    train, valid, test = ds.subset(train_idx), ds.subset(valid_idx), ds.subset(test_idx)
    t_max = float(ds.time.max())
    model = DiscreteModel.initialize(ds.n_features, n_bins, t_max, [cfg.seed, n_bins, fold], hidden=hidden)
    model, _ = train_discrete(model, train, valid, cfg)
    G = km_censoring(train)
    horizons = event_quantile_horizons(train, quantiles)
    surv = discrete_survival(model, test.covariates, horizons)
    cidx = [c_index_ipcw(surv[:, j], test, tau, G) for j, tau in enumerate(horizons)]
    bs = [brier_ipcw(surv[:, j], test, tau, G) for j, tau in enumerate(horizons)]
    return [
        SweepRow(n_bins, fold, "c_index", float(np.mean(cidx))),
        SweepRow(n_bins, fold, "brier", float(np.mean(bs))),
    ]


def bin_sweep(
    ds: SurvivalDataset,
    bin_counts,
    folds,
    cfg: TrainConfig,
    hidden=(32, 32),
    quantiles=(0.25, 0.5, 0.75),
    jobs: int = 1,
) -> list[SweepRow]:
    """Train the discrete model for every bin count on every fold.

    ``folds`` yields ``(train_idx, valid_idx, test_idx)``. Each row holds the
    test-fold metric averaged over the event-quantile horizons.
    """
    if any(b < 2 for b in bin_counts):
        raise ValueError("bin counts must be at least 2")
    folds = list(folds)
    cells = [
        (ds, int(b), f, tr, va, te, cfg, tuple(hidden), tuple(quantiles))
        for b in bin_counts
        for f, (tr, va, te) in enumerate(folds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    return [row for rows in results for row in rows]


def summarize_sweep(rows: list[SweepRow]) -> dict[str, dict[int, tuple[float, float]]]:
    """metric -> bin count -> (mean, std across folds)."""
    out: dict[str, dict[int, list[float]]] = {}
    for r in rows:
        out.setdefault(r.metric, {}).setdefault(r.n_bins, []).append(r.value)
    return {
        m: {b: (float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0) for b, v in sorted(d.items())}
        for m, d in out.items()
    }


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["B", "fold", "metric", "value"])
        for r in rows:
            w.writerow([r.n_bins, r.fold, r.metric, repr(r.value)])
