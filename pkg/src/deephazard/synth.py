"""Synthetic survival data with known ground-truth survival and density.

Three event-time models are available:

* ``trimodal``: one scalar covariate ``x ~ N(0, covariate_sd^2)`` and
  ``t ~ (1/3) sum_j N(10 j + x, component_sd^2)``, rescaled into (0, 1] by the
  realised maximum event time.
* ``constant``: exponential times with rate ``baseline * exp(beta . x)``.
* ``weibull``: ``S(t|x) = exp(-(t / eta(x))^shape)``, ``eta(x) = scale * exp(-beta . x)``.

Censoring is ``none``, ``uniform`` on (0, c_max] or ``exponential`` with rate gamma.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .data import SurvivalDataset, save_csv
from .metrics import CensoringEstimator, c_index_ipcw, km_censoring

VARIANTS = ("trimodal", "constant", "weibull")
CENSORING = ("none", "uniform", "exponential")


@dataclass(frozen=True)
class GeneratorSpec:
    variant: str = "trimodal"
    n: int = 1000
    seed: int = 0
    # trimodal
    component_means: tuple[float, ...] = (10.0, 20.0, 30.0)
    component_sd: float = 1.0
    covariate_sd: float = 0.1
    # constant / weibull
    beta: tuple[float, ...] = (1.0,)
    baseline: float = 1.0
    shape: float = 1.5
    scale: float = 1.0
    # censoring
    censoring: str = "none"
    c_max: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "component_means", tuple(float(v) for v in self.component_means))
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown generator variant {self.variant!r}")
        if self.censoring not in CENSORING:
            raise ValueError(f"unknown censoring scheme {self.censoring!r}")
        if self.n < 1:
            raise ValueError("n must be positive")
        positive = ("component_sd", "baseline", "shape", "scale", "c_max", "gamma")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.covariate_sd < 0:
            raise ValueError("covariate_sd must be non-negative")
        if self.variant != "trimodal" and not self.beta:
            raise ValueError("beta needs at least one coefficient")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["component_means"] = list(self.component_means)
        d["beta"] = list(self.beta)
        return d


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Exact survival/density/hazard of the generating process, in dataset time units.

    ``time_scale`` converts dataset time to the generator's raw time (trimodal
    only). ``event_times`` and ``censor_times`` are the latent draws.
    """

    spec: GeneratorSpec
    time_scale: float = 1.0
    censored_fraction: float = 0.0
    event_times: np.ndarray | None = field(default=None, repr=False)
    censor_times: np.ndarray | None = field(default=None, repr=False)

    def _curves(self, x: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Survival and density for rows ``x`` (n, d) against times ``t`` (n, K) or (1, K)."""
        sp = self.spec
        if sp.variant == "trimodal":
            shift = x[:, :1]
            raw = t * self.time_scale
            w = 1.0 / len(sp.component_means)
            cdf = pdf = p0 = 0.0
            for m in sp.component_means:
                cdf = cdf + w * stats.norm.cdf(raw, m + shift, sp.component_sd)
                pdf = pdf + w * stats.norm.pdf(raw, m + shift, sp.component_sd)
                p0 = p0 + w * stats.norm.cdf(0.0, m + shift, sp.component_sd)
            # conditioned on T > 0 since negative draws are redrawn
            return (1.0 - cdf) / (1.0 - p0), pdf / (1.0 - p0) * self.time_scale
        lin = (x @ np.asarray(sp.beta))[:, None]
        if sp.variant == "constant":
            rate = sp.baseline * np.exp(lin)
            surv = np.exp(-rate * t)
            return surv, rate * surv
        eta = sp.scale * np.exp(-lin)
        k = sp.shape
        surv = np.exp(-((t / eta) ** k))
        return surv, k / eta * (t / eta) ** (k - 1) * surv

    def _paired(self, x, t, which: int):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        x2 = np.atleast_2d(x)
        t1 = np.atleast_1d(t)
        n = max(x2.shape[0], t1.shape[0])
        x2 = np.broadcast_to(x2, (n, x2.shape[1]))
        out = self._curves(x2, np.broadcast_to(t1, (n,))[:, None])[which][:, 0]
        return float(out[0]) if x.ndim == 1 and t.ndim == 0 else out

    def survival(self, x, t):
        """S*(t | x) with covariate rows and times broadcast pairwise."""
        return self._paired(x, t, 0)

    def density(self, x, t):
        return self._paired(x, t, 1)

    def hazard(self, x, t):
        return self.density(x, t) / self.survival(x, t)

    def survival_curve(self, x, grid):
        """S*(grid | x): shape (len(grid),) for one instance, else (n, len(grid))."""
        x = np.asarray(x, dtype=float)
        out = self._curves(np.atleast_2d(x), np.asarray(grid, dtype=float)[None, :])[0]
        return out[0] if x.ndim == 1 else out

    def density_curve(self, x, grid):
        x = np.asarray(x, dtype=float)
        out = self._curves(np.atleast_2d(x), np.asarray(grid, dtype=float)[None, :])[1]
        return out[0] if x.ndim == 1 else out

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "time_scale": self.time_scale,
            "censored_fraction": self.censored_fraction,
        }


def _censor(spec: GeneratorSpec, t: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if spec.censoring == "none":
        c = np.full_like(t, np.inf)
    elif spec.censoring == "uniform":
        c = spec.c_max * (1.0 - rng.random(t.shape))
    else:
        c = rng.exponential(1.0 / spec.gamma, size=t.shape)
        c = np.where(c > 0, c, np.finfo(float).tiny)
    event = t <= c
    return np.where(event, t, c), event, c


def generate(spec: GeneratorSpec) -> tuple[SurvivalDataset, GroundTruth]:
    """Draw ``spec.n`` records; returns the dataset and the exact ground truth."""
    rng = np.random.default_rng([spec.seed, 0x5EED])
    n = spec.n
    if spec.variant == "trimodal":
        x = rng.normal(0.0, spec.covariate_sd, size=(n, 1))
        mus = np.asarray(spec.component_means)
        raw = np.empty(n)
        todo = np.arange(n)
        while todo.size:
            comp = rng.integers(0, mus.size, size=todo.size)
            draw = rng.normal(mus[comp] + x[todo, 0], spec.component_sd)
            ok = draw > 0
            raw[todo[ok]] = draw[ok]
            todo = todo[~ok]
        scale = float(raw.max())
        t_event = raw / scale
        names = ("x",)
    else:
        d = len(spec.beta)
        x = rng.normal(size=(n, d))
        u = 1.0 - rng.random(n)
        scale = 1.0
        if spec.variant == "constant":
            rate = spec.baseline * np.exp(x @ np.asarray(spec.beta))
            t_event = -np.log(u) / rate
        else:
            eta = spec.scale * np.exp(-(x @ np.asarray(spec.beta)))
            t_event = eta * (-np.log(u)) ** (1.0 / spec.shape)
        t_event = np.maximum(t_event, np.finfo(float).tiny)
        names = tuple(f"x{j}" for j in range(d))
    observed, event, censor_times = _censor(spec, t_event, rng)
    ds = SurvivalDataset(x, observed, event, names)
    gt = GroundTruth(spec, scale, float(1.0 - event.mean()), t_event, censor_times)
    return ds, gt


def ground_truth_c_index(gt: GroundTruth, ds: SurvivalDataset, tau: float, G: CensoringEstimator | None = None) -> float:
    """IPCW C-index of the exact survival probabilities S*(tau | x)."""
    G = G if G is not None else km_censoring(ds)
    pred = gt.survival(ds.covariates, np.full(len(ds), tau))
    return c_index_ipcw(pred, ds, tau, G)


def save_generated(ds: SurvivalDataset, gt: GroundTruth, csv_path, sidecar_path=None) -> None:
    """Write the dataset CSV and a JSON sidecar with the generator settings and time scale."""
    save_csv(ds, csv_path)
    sidecar_path = sidecar_path or str(csv_path) + ".json"
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(gt.to_dict(), fh, indent=2, sort_keys=True)
