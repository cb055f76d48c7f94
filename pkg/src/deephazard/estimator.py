"""Importance-sampling estimates of the cumulative hazard, the log-likelihood and survival.

The integral of the hazard over (0, t] is estimated as ``t * mean(lambda(x, s_j))``
with ``s_j ~ U(0, t]``. The same estimator yields the training loss and the
survival predictions ``S = exp(-Lambda)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset
from .hazard import (
    HazardModel,
    dlog_softplus,
    flatten_grads,
    log_softplus,
    phi,
    phi_backward,
    phi_forward,
    sigmoid,
    softplus,
)

# rows per network call when predicting; bounds peak memory
CHUNK_ROWS = 1 << 18


@dataclass(frozen=True)
class ImportanceSampleSet:
    """``samples[i]`` holds the M draws from U(0, times[i]]."""

    times: np.ndarray
    samples: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.samples.shape[-1]


def sample_times(t, n_samples: int, rng: np.random.Generator) -> ImportanceSampleSet:
    """Draw ``n_samples`` uniforms on (0, t] for every entry of ``t``.

    Sampled as ``t * (1 - u)`` with ``u ~ U[0, 1)`` so zero is excluded.
    """
    if n_samples < 1:
        raise ValueError("need at least one importance sample")
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("times must be positive")
    u = rng.random((*t.shape, n_samples))
    return ImportanceSampleSet(t, t[..., None] * (1.0 - u))


def _hazard_rows(model: HazardModel, x, t, rng=None) -> np.ndarray:
    out = np.empty(t.shape[0])
    for lo in range(0, t.shape[0], CHUNK_ROWS):
        hi = lo + CHUNK_ROWS
        out[lo:hi] = softplus(phi(model, x[lo:hi] if x.shape[0] > 1 else x, t[lo:hi], rng))
    return out


def cumulative_hazard_estimate(model: HazardModel, x, samples: ImportanceSampleSet, rng=None):
    """(t / M) * sum_j lambda(x, s_j) for one instance or a batch of instances."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and samples.samples.ndim == 1
    s = np.atleast_2d(samples.samples)
    t = np.atleast_1d(samples.times)
    x2 = np.atleast_2d(x)
    n, m = s.shape
    if x2.shape[0] not in (1, n):
        raise ValueError("covariate rows do not match the sample set")
    xr = np.repeat(np.broadcast_to(x2, (n, x2.shape[1])), m, axis=0)
    lam = _hazard_rows(model, xr, s.ravel(), rng).reshape(n, m)
    est = t * lam.mean(axis=1)
    return float(est[0]) if single else est


@dataclass
class LossValue:
    """Negative IS log-likelihood of a mini-batch, scaled by N / L.

    ``grad`` holds the flat parameter gradient when it was requested.
    """

    value: float
    scale: float
    batch_indices: np.ndarray | None = None
    grad: np.ndarray | None = None
    grads: dict | None = None


def minibatch_loss(
    model: HazardModel,
    batch: SurvivalDataset,
    n_total: int,
    n_samples: int,
    rng: np.random.Generator,
    train: bool = True,
    compute_grad: bool = False,
    batch_indices=None,
    samples: ImportanceSampleSet | None = None,
) -> LossValue:
    """-(N/L) * sum_i [delta_i log lambda(x_i, t_i) - (t_i/M) sum_j lambda(x_i, s_ij)].

    Fresh importance samples are drawn from ``rng`` unless ``samples`` is given;
    in train mode the same generator then supplies dropout masks.
    """
    n_batch = len(batch)
    if n_batch == 0:
        raise ValueError("empty batch")
    if n_total < n_batch:
        raise ValueError("n_total must be at least the batch size")
    t, x, ev = batch.time, batch.covariates, batch.event
    if samples is None:
        samples = sample_times(t, n_samples, rng)
    m = samples.n_samples
    ev_idx = np.flatnonzero(ev)
    rows_x = np.concatenate([x[ev_idx], np.repeat(x, m, axis=0)])
    rows_t = np.concatenate([t[ev_idx], samples.samples.ravel()])
    dropout_rng = rng if train else None
    z, tape = phi_forward(model, rows_x, rows_t, dropout_rng, keep_tape=compute_grad)
    z_ev, z_s = z[: ev_idx.size], z[ev_idx.size :].reshape(n_batch, m)
    scale = n_total / n_batch
    weight = t / m
    ll = log_softplus(z_ev).sum() - (weight[:, None] * softplus(z_s)).sum()
    out = LossValue(float(-scale * ll), scale, None if batch_indices is None else np.asarray(batch_indices))
    if compute_grad:
        upstream = np.concatenate(
            [-scale * dlog_softplus(z_ev), (scale * weight[:, None] * sigmoid(z_s)).ravel()]
        )
        out.grads = phi_backward(tape, upstream)
        out.grad = flatten_grads(model, out.grads)
    return out


def loglik_estimate(model: HazardModel, ds: SurvivalDataset, n_samples: int, rng: np.random.Generator) -> float:
    """Eval-mode IS estimate of the full-data log-likelihood (larger is better)."""
    total = 0.0
    per_chunk = max(1, CHUNK_ROWS // (n_samples + 1))
    for lo in range(0, len(ds), per_chunk):
        part = ds.subset(np.arange(lo, min(lo + per_chunk, len(ds))))
        total -= minibatch_loss(model, part, len(part), n_samples, rng, train=False).value
    return total


def survival_predict(model: HazardModel, x, t, n_samples: int, rng: np.random.Generator):
    """exp(-Lambda_hat(x, t)) with fresh U(0, t] samples per instance."""
    x = np.asarray(x, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    single = x.ndim == 1 and t_arr.ndim == 0
    x2 = np.atleast_2d(x)
    t2 = np.broadcast_to(np.atleast_1d(t_arr), (max(x2.shape[0], t_arr.size),))
    x2 = np.broadcast_to(x2, (t2.shape[0], x2.shape[1]))
    per_chunk = max(1, CHUNK_ROWS // n_samples)
    out = np.empty(t2.shape[0])
    for lo in range(0, t2.shape[0], per_chunk):
        hi = lo + per_chunk
        s = sample_times(t2[lo:hi], n_samples, rng)
        out[lo:hi] = np.exp(-cumulative_hazard_estimate(model, x2[lo:hi], s))
    return float(out[0]) if single else out


def _segment_counts(edges: np.ndarray, n_samples: int) -> np.ndarray:
    """Samples per grid interval, proportional to its length, at least one each."""
    widths = np.diff(edges)
    return np.maximum(1, np.rint(n_samples * widths / edges[-1])).astype(int)


def survival_curve(model: HazardModel, x, grid, n_samples: int, rng: np.random.Generator):
    """Monotone survival curves on an increasing ``grid`` of times.

    The importance samples are stratified over the grid intervals
    ``(t_{k-1}, t_k]`` (with ``t_0 = 0``): about ``n_samples`` draws in total,
    spread in proportion to interval length. Each interval contributes an
    unbiased, non-negative estimate of its hazard integral, so the running
    sum is an unbiased cumulative hazard that never decreases along the grid.
    A one-point grid reduces to ``survival_predict``.
    Returns shape (len(grid),) for one instance or (n, len(grid)).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0):
        raise ValueError("grid must be a non-empty vector of positive times")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if n_samples < 1:
        raise ValueError("need at least one importance sample")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    n = x2.shape[0]
    edges = np.concatenate([[0.0], grid])
    counts = _segment_counts(edges, n_samples)
    seg = np.repeat(np.arange(grid.size), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    lower, width = edges[:-1][seg], np.diff(edges)[seg]
    weight = np.diff(edges) / counts
    m_total = seg.size
    per_chunk = max(1, CHUNK_ROWS // m_total)
    out = np.empty((n, grid.size))
    for lo in range(0, n, per_chunk):
        xs = x2[lo : lo + per_chunk]
        k = xs.shape[0]
        s = lower + width * (1.0 - rng.random((k, m_total)))
        lam = _hazard_rows(model, np.repeat(xs, m_total, axis=0), s.ravel()).reshape(k, m_total)
        cum = np.cumsum(np.add.reduceat(lam, starts, axis=1) * weight, axis=1)
        out[lo : lo + k] = np.exp(-cum)
    return out[0] if single else out
