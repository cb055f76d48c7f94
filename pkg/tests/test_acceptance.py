"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 2, 4, 5, 6 and 8 train or sample at desk scale and take minutes;
they carry the ``slow`` marker. Run everything with::

    pytest tests/test_acceptance.py -v

The summary section at the end of the run repeats the criterion lines.
"""

import time
from functools import lru_cache

import numpy as np
import pytest
from scipy import integrate
from scipy.ndimage import uniform_filter1d

import oracles
from deephazard import (
    GeneratorSpec,
    HazardModel,
    SurvivalDataset,
    TrainConfig,
    c_index_ipcw,
    event_quantile_horizons,
    generate,
    ground_truth_c_index,
    hazard,
    km_censoring,
    make_architecture,
    make_splits,
    minibatch_loss,
    sample_times,
    survival_curve,
    survival_predict,
    train,
    validation_loglik,
)
from deephazard.discrete import bin_sweep, summarize_sweep
from deephazard.hazard import dlog_softplus, flatten_grads, log_softplus, phi_backward, phi_forward, sigmoid, softplus
from deephazard.metrics import brier_ipcw, roc_auc_ipcw
from helpers import random_model, report

slow = pytest.mark.slow


def _rel(a, b):
    return abs(a - b) / abs(b)


# ---------------------------------------------------------------- criterion 1


def test_criterion_1_gradient_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(25):
        rng = np.random.default_rng(100 + k)
        name = "A1" if k % 2 == 0 else "A2"
        d = int(rng.integers(1, 4))
        arch = make_architecture(
            name,
            d,
            hidden=int(rng.integers(3, 7)),
            layers=int(rng.integers(1, 3)),
            activation=("selu", "relu", "tanh")[k % 3],
            dropout=0.3 if k % 5 == 0 else 0.0,
            layer_norm=k % 4 >= 2,
            embed_dim=4 if name == "A2" else None,
        )
        model = HazardModel.initialize(arch, k, time_scale=2.0)
        # jitter lifts ReLU pre-activations off the kink at exactly zero
        model = model.with_flat(model.flatten() + 0.2 * rng.normal(size=model.n_params))
        ds = SurvivalDataset(rng.normal(size=(4, d)), rng.uniform(0.1, 2.0, 4), rng.random(4) < 0.6)
        samples = sample_times(ds.time, 3, np.random.default_rng(k))

        def loss(m, grad=False):
            # a fresh generator per call keeps dropout masks identical across evaluations
            return minibatch_loss(m, ds, 10, 3, np.random.default_rng(7), train=True, compute_grad=grad, samples=samples)

        g = loss(model, True).grad
        theta, h = model.flatten(), 1e-5
        fd = np.array(
            [(loss(model.with_flat(theta + h * e)).value - loss(model.with_flat(theta - h * e)).value) / (2 * h) for e in np.eye(theta.size)]
        )
        rel = np.abs(fd - g) / np.maximum(np.maximum(np.abs(fd), np.abs(g)), 1e-6)
        worst = max(worst, float(rel.max()))
    seconds = time.perf_counter() - t0
    ok = worst < 1e-4 and seconds < 60
    report(1, ok, f"max relative error {worst:.2e} over 25 models, {seconds:.1f}s")
    assert ok


# ---------------------------------------------------------------- criterion 2


@slow
def test_criterion_2_estimator_unbiased():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    arch = make_architecture("A1", 2, hidden=8, layers=2, activation="tanh", dropout=0.0, layer_norm=False)
    model = HazardModel.initialize(arch, 3, time_scale=2.0)
    model = model.with_flat(model.flatten() + 0.2 * rng.normal(size=model.n_params))
    n = 8
    ds = SurvivalDataset(rng.normal(size=(n, 2)), rng.uniform(0.2, 2.0, n), np.arange(n) % 3 != 0)

    def grad_of(x, s, outer):
        z, tape = phi_forward(model, x[None], np.atleast_1d(s))
        return flatten_grads(model, phi_backward(tape, outer(z)))

    # quadrature oracle: NLL = sum_i [int_0^t lambda - delta log lambda(t)], same for its gradient
    nll, grad = 0.0, np.zeros(model.n_params)
    for x, t, e in zip(ds.covariates, ds.time, ds.event):
        lam = lambda s: softplus(phi_forward(model, x, s, keep_tape=False)[0])
        nll += integrate.quad(lam, 0, t, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        grad += integrate.quad_vec(lambda s: grad_of(x, s, sigmoid), 0, t, epsabs=1e-13, epsrel=1e-12)[0]
        if e:
            nll -= float(log_softplus(phi_forward(model, x, t, keep_tape=False)[0]))
            grad -= grad_of(x, t, dlog_softplus)

    draws, M = 10_000, 4096
    r = np.random.default_rng(5)
    values, gsum = np.empty(draws), np.zeros(model.n_params)
    for k in range(draws):
        out = minibatch_loss(model, ds, n, M, r, train=False, compute_grad=True)
        values[k] = out.value
        gsum += out.grad
    gmean = gsum / draws
    big = np.abs(grad) > 1e-6
    loss_err = _rel(values.mean(), nll)
    grad_err = float((np.abs(gmean - grad)[big] / np.abs(grad[big])).max())
    seconds = time.perf_counter() - t0
    ok = loss_err < 2e-3 and grad_err < 1e-2 and seconds < 300
    report(2, ok, f"loss rel err {loss_err:.2e}, max grad rel err {grad_err:.2e} ({big.sum()} coords), M={M}, {seconds:.0f}s")
    assert ok


# ---------------------------------------------------------------- criterion 3


def test_criterion_3_variance_scaling():
    model = random_model("A1", 2, seed=11, hidden=8, activation="tanh", time_scale=2.0)
    rng = np.random.default_rng(0)
    ds = SurvivalDataset(rng.normal(size=(4, 2)), np.array([0.4, 0.9, 1.3, 1.8]), np.array([1, 0, 1, 1], bool))
    sizes, reps = [100, 1_000, 10_000, 100_000], 200
    r = np.random.default_rng(1)
    loss_var, surv_std = [], []
    for M in sizes:
        loss_var.append(np.var([minibatch_loss(model, ds, 4, M, r, train=False).value for _ in range(reps)], ddof=1))
        surv_std.append(np.std([survival_predict(model, ds.covariates[1], 1.3, M, r) for _ in range(reps)], ddof=1))
    logm = np.log10(sizes)
    slope_var = np.polyfit(logm, np.log10(loss_var), 1)[0]
    slope_std = np.polyfit(logm, np.log10(surv_std), 1)[0]
    ok = abs(slope_var + 1) <= 0.15 and abs(slope_std + 0.5) <= 0.1
    report(3, ok, f"loss variance slope {slope_var:.3f}, survival std slope {slope_std:.3f}")
    assert ok


# ------------------------------------------------------------ criteria 4 and 6

CONSTANT_SPEC = GeneratorSpec(
    "constant", n=5000, seed=2024, beta=(0.8, -0.5), baseline=1.0, censoring="exponential", gamma=0.37
)


@lru_cache(maxsize=None)
def _constant_data():
    ds, gt = generate(CONSTANT_SPEC)
    _, _, tr, va, te = next(make_splits(ds, k=5, r=1, seed=0, validation_fraction=0.2).folds())
    return ds, gt, ds.subset(tr), ds.subset(va), ds.subset(te)


@lru_cache(maxsize=None)
def _constant_fit(n_samples: int):
    """Train on criterion-4 data; returns model, test C-indices, common-M validation LL, seconds."""
    ds, gt, trs, vas, tes = _constant_data()
    arch = make_architecture("A1", 2, hidden=32, layers=2, dropout=0.0, layer_norm=False)
    model = HazardModel.initialize(arch, 0, float(trs.time.max()))
    cfg = TrainConfig(learning_rate=2e-3, batch_size=256, n_samples=n_samples, max_epochs=100, patience=100, seed=1)
    t0 = time.perf_counter()
    best, _ = train(model, trs, vas, cfg)
    seconds = time.perf_counter() - t0
    G, hz = km_censoring(trs), event_quantile_horizons(trs)
    pred = survival_curve(best, tes.covariates, hz, 1024, np.random.default_rng(1))
    cidx = np.array([c_index_ipcw(pred[:, j], tes, tau, G) for j, tau in enumerate(hz)])
    vll = validation_loglik(best, vas, 1024, 7)
    return best, cidx, vll, seconds


@slow
def test_criterion_4_closed_form_recovery():
    ds, gt, trs, _, tes = _constant_data()
    best, cidx, _, seconds = _constant_fit(64)
    G, hz = km_censoring(trs), event_quantile_horizons(trs)
    x_med = np.median(ds.covariates, axis=0)
    grid = np.linspace(hz[2] / 200, hz[2], 200)
    fitted = survival_curve(best, x_med, grid, 20_000, np.random.default_rng(0))
    mae = float(np.abs(fitted - gt.survival_curve(x_med, grid)).mean())
    oracle = np.array([ground_truth_c_index(gt, tes, tau, G) for tau in hz])
    gap = float(np.abs(cidx - oracle).max())
    ok = mae < 0.03 and gap < 0.02 and seconds < 600
    report(4, ok, f"censored {gt.censored_fraction:.3f}, MAE {mae:.4f}, max C-index gap to oracle {gap:.4f}, {seconds:.0f}s")
    assert ok


@slow
def test_criterion_6_is_size_robustness():
    fits = {M: _constant_fit(M) for M in (64, 256, 512)}
    vll = {M: f[2] for M, f in fits.items()}
    cidx = {M: f[1] for M, f in fits.items()}
    pairs = [(a, b) for a in fits for b in fits if a < b]
    ll_diff = max(_rel(vll[a], vll[b]) for a, b in pairs)
    c_diff = max(float(np.abs(cidx[a] - cidx[b]).max()) for a, b in pairs)
    ok = ll_diff < 0.02 and c_diff < 0.01
    lls = ", ".join(f"M={M} {v:.2f}" for M, v in vll.items())
    report(6, ok, f"validation LL {lls}; max pairwise rel diff {ll_diff:.2e}, max C-index diff {c_diff:.4f}")
    assert ok


# ---------------------------------------------------------------- criterion 5

GRID = np.linspace(1 / 512, 1.0, 512)


@lru_cache(maxsize=None)
def _trimodal_fit(seed: int):
    ds, gt = generate(GeneratorSpec("trimodal", n=5000, seed=seed))
    _, _, tr, va, te = next(make_splits(ds, k=5, r=1, seed=seed, validation_fraction=0.2).folds())
    trs, vas = ds.subset(np.concatenate([tr, te])), ds.subset(va)
    arch = make_architecture("A1", 1, hidden=32, layers=2, dropout=0.0, layer_norm=False)
    model = HazardModel.initialize(arch, seed, time_scale=float(trs.time.max()))
    cfg = TrainConfig(learning_rate=5e-3, batch_size=256, n_samples=64, max_epochs=300, patience=300, seed=seed)
    best, _ = train(model, trs, vas, cfg)
    return ds, gt, best


def _interior_maxima(f):
    return np.array([i for i in range(1, f.size - 1) if f[i] > f[i - 1] and f[i] >= f[i + 1]], dtype=int)


@slow
def test_criterion_5_trimodal_density():
    t0 = time.perf_counter()
    passed, details = 0, []
    for seed in range(4):
        ds, gt, model = _trimodal_fit(seed)
        x = ds.covariates[np.random.default_rng(seed).integers(len(ds))]
        surv = survival_curve(model, x, GRID, 100_000, np.random.default_rng(0))
        f = hazard(model, np.repeat(x[None], GRID.size, 0), GRID) * surv
        # 5-point moving average; edge values are replicated rather than zero padded
        peaks = GRID[_interior_maxima(uniform_filter1d(f, 5, mode="nearest"))]
        true = GRID[_interior_maxima(gt.density_curve(x, GRID))]
        good = peaks.size == 3 and true.size == 3 and np.all(np.abs(peaks - true) <= 0.05)
        passed += bool(good)
        details.append(f"seed {seed}: {np.round(peaks, 3).tolist()}")
    seconds = time.perf_counter() - t0
    ok = passed == 4 and seconds < 1200
    report(5, ok, f"{passed}/4 seeds with 3 modes within 0.05; " + "; ".join(details) + f"; {seconds:.0f}s")
    assert ok


@slow
def test_trained_model_is_not_proportional():
    ds, _, model = _trimodal_fit(0)
    lo, hi = np.quantile(ds.covariates[:, 0], [0.1, 0.9])
    ratio = hazard(model, np.full((GRID.size, 1), lo), GRID) / hazard(model, np.full((GRID.size, 1), hi), GRID)
    assert ratio.max() / ratio.min() > 1.5


# ---------------------------------------------------------------- criterion 7

FIXTURES = [
    (
        [1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        [1, 0, 1, 1, 0, 1, 1, 0, 1, 0],
        [0.2, 0.5, 0.3, 0.3, 0.6, 0.4, 0.55, 0.7, 0.3, 0.9],
        [2.5, 4.0, 6.5],
    ),
    (
        [0.5, 1.1, 1.1, 1.9, 2.4, 3.3, 3.3, 4.0],
        [1, 1, 0, 1, 0, 1, 1, 1],
        [0.1, 0.35, 0.35, 0.6, 0.2, 0.7, 0.45, 0.9],
        [1.1, 2.0, 3.5],
    ),
    (
        [0.3, 0.8, 1.2, 1.5, 2.2, 2.9, 3.1, 3.6, 4.4, 5.0, 5.5, 6.1],
        [0, 1, 1, 0, 1, 1, 0, 1, 0, 1, 1, 1],
        [0.15, 0.22, 0.4, 0.3, 0.38, 0.5, 0.61, 0.58, 0.77, 0.7, 0.85, 0.95],
        [1.0, 2.9, 4.8],
    ),
]


def test_criterion_7_metric_oracles():
    worst = 0.0
    for t, e, s, horizons in FIXTURES:
        ds = SurvivalDataset(np.zeros((len(t), 1)), np.array(t), np.array(e, bool))
        G = km_censoring(ds)
        for tau in horizons:
            worst = max(
                worst,
                abs(c_index_ipcw(s, ds, tau, G) - oracles.c_index(s, t, e, tau)),
                abs(brier_ipcw(s, ds, tau, G) - oracles.brier(s, t, e, tau)),
                abs(roc_auc_ipcw(s, ds, tau, G) - oracles.roc_auc(s, t, e, tau)),
            )
    G = km_censoring(SurvivalDataset(np.zeros((5, 1)), np.arange(1.0, 6.0), np.array([1, 0, 1, 0, 1], bool)))
    hand = {1.5: 1.0, 2.0: 0.75, 3.5: 0.75, 4.0: 0.375, 10.0: 0.375}
    km_err = max(abs(G(t) - v) for t, v in hand.items())
    ok = worst <= 1e-12 and km_err <= 1e-12
    report(7, ok, f"max metric deviation {worst:.1e} over {len(FIXTURES)} fixtures, KM deviation {km_err:.1e}")
    assert ok


# ---------------------------------------------------------------- criterion 8


@slow
def test_criterion_8_bin_sensitivity():
    ds, gt = generate(GeneratorSpec("trimodal", n=3000, seed=0, censoring="uniform", c_max=1.5))
    folds = [(tr, va, te) for _, _, tr, va, te in make_splits(ds, k=5, r=1, seed=0).folds()]
    cfg = TrainConfig(learning_rate=2e-3, batch_size=256, max_epochs=300, patience=20, seed=0, weight_decay=1e-5)
    bins = [2, 4, 8, 16, 32, 64, 128, 256]
    summary = summarize_sweep(bin_sweep(ds, bins, folds, cfg, hidden=(32, 32)))
    cidx, brier = summary["c_index"], summary["brier"]
    best_c = max(cidx, key=lambda b: cidx[b][0])
    best_b = min(brier, key=lambda b: brier[b][0])
    worse = {b: cidx[best_c][0] - cidx[b][0] > cidx[best_c][1] for b in (2, 256)}
    ok = all(worse.values())
    report(
        8,
        ok,
        f"censored {gt.censored_fraction:.3f}; best B for C-index {best_c} ({cidx[best_c][0]:.4f} +/- {cidx[best_c][1]:.4f}), "
        f"B=2 {cidx[2][0]:.4f}, B=256 {cidx[256][0]:.4f}; best B for Brier {best_b}",
    )
    assert ok


# ---------------------------------------------------------------- criterion 9


def test_criterion_9_prediction_cost_linear():
    model = random_model("A1", 2, seed=11, hidden=8, activation="tanh", time_scale=2.0)
    rng = np.random.default_rng(3)
    x, t = rng.normal(size=(2000, 2)), rng.uniform(0.1, 2.0, 2000)
    survival_predict(model, x, t, 64, rng)  # warm-up
    sizes, walls = [64, 512, 4096], []
    for M in sizes:
        runs = []
        for _ in range(5):
            t0 = time.perf_counter()
            survival_predict(model, x, t, M, rng)
            runs.append(time.perf_counter() - t0)
        walls.append(np.median(runs))
    walls = np.array(walls)
    fitted = np.polyval(np.polyfit(sizes, walls, 1), sizes)
    r2 = 1 - ((walls - fitted) ** 2).sum() / ((walls - walls.mean()) ** 2).sum()
    ok = r2 > 0.95
    report(9, ok, f"R^2 {r2:.5f}; median seconds " + ", ".join(f"M={M} {w:.3f}" for M, w in zip(sizes, walls)))
    assert ok
