"""Censoring-adjusted survival metrics at fixed horizons.

All ranking metrics take survival probabilities ``S(tau | x_i)``: a lower
survival probability means a higher predicted risk. Inverse-probability-of-
censoring weights come from a Kaplan-Meier estimate of the censoring
distribution, evaluated at the left limit ``G(t-)`` for event times.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .data import SurvivalDataset


@dataclass(frozen=True)
class CensoringEstimator:
    """Right-continuous step function G(t) = P(C > t).

    ``times`` are the jump locations (ascending) and ``values[k]`` is G on
    ``[times[k], times[k+1])``; G is 1 before the first jump.
    """

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        out = np.concatenate([[1.0], self.values])[idx]
        return float(out) if out.ndim == 0 else out

    def left_limit(self, t):
        """G(t-) = P(C >= t)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left")
        out = np.concatenate([[1.0], self.values])[idx]
        return float(out) if out.ndim == 0 else out


def km_censoring(ds: SurvivalDataset) -> CensoringEstimator:
    """Product-limit estimate of the censoring survival function.

    Censored records (event = 0) are the "events" of this estimator; observed
    events act as censorings. Records tied at a time are all at risk there.
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    t = ds.time
    cens = ~ds.event
    uniq, inverse = np.unique(t, return_inverse=True)
    n_cens = np.bincount(inverse, weights=cens.astype(float), minlength=uniq.size)
    n_at = np.bincount(inverse, minlength=uniq.size)
    at_risk = n_at[::-1].cumsum()[::-1].astype(float)
    jumps = n_cens > 0
    factors = 1.0 - n_cens[jumps] / at_risk[jumps]
    return CensoringEstimator(uniq[jumps], np.cumprod(factors))


def _aligned(pred, ds: SurvivalDataset) -> np.ndarray:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    if pred.shape[0] != len(ds):
        raise ValueError(f"{pred.shape[0]} predictions for {len(ds)} records")
    return pred


def c_index_ipcw(pred, ds: SurvivalDataset, tau: float, G: CensoringEstimator) -> float:
    """Uno-style concordance of ``S(tau | x)`` truncated at ``tau``.

    Comparable pairs: ``t_i < t_j``, ``t_i < tau``, ``delta_i = 1``, weighted by
    ``G(t_i-)^-2``; concordant when ``S_i < S_j``; prediction ties count 1/2.
    """
    pred = _aligned(pred, ds)
    if not tau > 0:
        raise ValueError("horizon must be positive")
    t, ev = ds.time, ds.event
    order = np.argsort(t, kind="stable")
    t_s, p_s = t[order], pred[order]
    anchors = np.flatnonzero(ev[order] & (t_s < tau))
    num = den = 0.0
    for i in anchors:
        g = G.left_limit(t_s[i])
        if g <= 0:
            continue
        start = np.searchsorted(t_s, t_s[i], side="right")
        others = p_s[start:]
        if others.size == 0:
            continue
        w = 1.0 / (g * g)
        num += w * (np.count_nonzero(p_s[i] < others) + 0.5 * np.count_nonzero(p_s[i] == others))
        den += w * others.size
    if den == 0:
        raise ValueError("no comparable pairs before the horizon")
    return num / den


def brier_ipcw(pred, ds: SurvivalDataset, tau: float, G: CensoringEstimator) -> float:
    """Graf et al. IPCW Brier score at ``tau``."""
    pred = _aligned(pred, ds)
    g_tau = G(tau)
    if g_tau <= 0:
        raise ValueError("censoring survival is zero at the horizon")
    t, ev = ds.time, ds.event
    died = (t <= tau) & ev
    alive = t > tau
    g_t = np.where(died, G.left_limit(t), 1.0)
    if np.any(g_t[died] <= 0):
        raise ValueError("censoring survival is zero at an event time")
    terms = np.where(died, pred**2 / g_t, 0.0) + np.where(alive, (1.0 - pred) ** 2 / g_tau, 0.0)
    return float(terms.mean())


def roc_auc_ipcw(pred, ds: SurvivalDataset, tau: float, G: CensoringEstimator) -> float:
    """Cumulative/dynamic AUC at ``tau`` with IPCW weights on the cases.

    Cases: ``t_i <= tau, delta_i = 1`` weighted ``1 / G(t_i-)``; controls:
    ``t_j > tau`` weighted ``1 / G(tau)``. Score is P(S_i < S_j), ties 1/2.
    """
    pred = _aligned(pred, ds)
    t, ev = ds.time, ds.event
    cases = np.flatnonzero((t <= tau) & ev)
    controls = np.flatnonzero(t > tau)
    if cases.size == 0 or controls.size == 0:
        raise ValueError("need at least one case and one control at the horizon")
    g_tau = G(tau)
    if g_tau <= 0:
        raise ValueError("censoring survival is zero at the horizon")
    w_case = 1.0 / G.left_limit(t[cases])
    ctrl = np.sort(pred[controls])
    p_case = pred[cases]
    n_gt = ctrl.size - np.searchsorted(ctrl, p_case, side="right")
    n_eq = np.searchsorted(ctrl, p_case, side="right") - np.searchsorted(ctrl, p_case, side="left")
    # control weights are all 1 / G(tau) and cancel in the ratio
    score = (w_case * (n_gt + 0.5 * n_eq)).sum()
    return float(score / (w_case.sum() * ctrl.size))


def event_quantile_horizons(ds: SurvivalDataset, quantiles=(0.25, 0.5, 0.75)) -> np.ndarray:
    """Linearly interpolated quantiles of the observed event times."""
    ev_times = ds.time[ds.event]
    if ev_times.size == 0:
        raise ValueError("no observed events")
    return np.quantile(ev_times, np.asarray(quantiles, dtype=float))


@dataclass(frozen=True)
class MetricReport:
    model: str
    fold: int
    run: int
    quantile: float
    horizon: float
    c_index: float
    brier: float
    roc_auc: float

    def to_dict(self) -> dict:
        return asdict(self)


REPORT_COLUMNS = ("model", "fold", "run", "quantile", "horizon", "c_index", "brier", "roc_auc")


def evaluate_at_horizons(
    pred_at_horizons,
    ds: SurvivalDataset,
    horizons,
    G: CensoringEstimator,
    quantiles=(0.25, 0.5, 0.75),
    model: str = "model",
    fold: int = 0,
    run: int = 0,
) -> list[MetricReport]:
    """One report per horizon; ``pred_at_horizons`` is (n, len(horizons))."""
    pred = np.asarray(pred_at_horizons, dtype=float)
    out = []
    for k, (q, tau) in enumerate(zip(quantiles, horizons)):
        p = pred[:, k]
        out.append(
            MetricReport(
                model,
                fold,
                run,
                float(q),
                float(tau),
                c_index_ipcw(p, ds, tau, G),
                brier_ipcw(p, ds, tau, G),
                roc_auc_ipcw(p, ds, tau, G),
            )
        )
    return out


def write_reports(reports, csv_path=None, json_path=None) -> None:
    rows = [r.to_dict() for r in reports]
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


# ---------------------------------------------------------------- model comparison


@dataclass(frozen=True)
class PairedResults:
    """Per-(fold, run) metric differences between two models.

    ``differences`` has shape (k, r).
    """

    differences: np.ndarray
    n_train: int
    n_test: int

    def __post_init__(self):
        d = np.asarray(self.differences, dtype=float)
        if d.ndim != 2:
            raise ValueError("differences must be a (k, r) array")
        object.__setattr__(self, "differences", d)

    @property
    def k(self) -> int:
        return self.differences.shape[0]

    @property
    def r(self) -> int:
        return self.differences.shape[1]


def corrected_ttest(paired: PairedResults) -> tuple[float, int]:
    """Corrected repeated k-fold t statistic and its degrees of freedom (kr - 1).

    t = mean / (sd * sqrt(1/(kr) + n_test/n_train)). A zero-variance input is
    degenerate: +-inf with the sign of the mean, or 0 when the mean is 0.
    """
    y = paired.differences.ravel()
    kr = y.size
    if kr < 2:
        raise ValueError("need at least two paired results")
    mu = float(y.mean())
    if np.all(y == y[0]):
        return (0.0 if mu == 0 else float(np.copysign(np.inf, mu))), kr - 1
    var = float(((y - mu) ** 2).sum() / (kr - 1))
    t = mu / np.sqrt(var * (1.0 / kr + paired.n_test / paired.n_train))
    return float(t), kr - 1


def corrected_ttest_pvalue(paired: PairedResults) -> float:
    """Two-sided p-value of the corrected statistic under Student's t."""
    t, dof = corrected_ttest(paired)
    return float(2.0 * stats.t.sf(abs(t), dof))
