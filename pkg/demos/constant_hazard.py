"""
Recovering a constant hazard
============================

Data with hazard c(x) = exp(beta . x) have exponential survival curves, so a
trained model can be checked against exp(-c(x) t) directly.
"""

import numpy as np

from deephazard import (
    GeneratorSpec,
    HazardModel,
    TrainConfig,
    generate,
    make_architecture,
    make_splits,
    survival_curve,
    train,
)

ds, truth = generate(GeneratorSpec("constant", n=2000, seed=0, beta=(0.8, -0.5), censoring="exponential", gamma=0.37))
print(f"{len(ds)} records, {truth.censored_fraction:.0%} censored")

_, _, tr, va, te = next(make_splits(ds, k=5, r=1, seed=0).folds())
train_set, valid_set = ds.subset(tr), ds.subset(va)

arch = make_architecture("A1", 2, hidden=32, layers=2, dropout=0.0, layer_norm=False)
model = HazardModel.initialize(arch, seed=0, time_scale=float(train_set.time.max()))
cfg = TrainConfig(learning_rate=2e-3, batch_size=256, n_samples=64, max_epochs=40, patience=10, seed=1)
best, history = train(model, train_set, valid_set, cfg)
print(f"best epoch {history.best_epoch}, validation log-likelihood {history.best_valid_ll:.2f}")

###############################################################################
# Compare the fitted and exact survival curves at the median covariate

x = np.median(ds.covariates, axis=0)
grid = np.linspace(0.05, np.quantile(ds.time, 0.75), 8)
fitted = survival_curve(best, x, grid, 10_000, np.random.default_rng(0))
exact = truth.survival_curve(x, grid)
for t, a, b in zip(grid, fitted, exact):
    print(f"t={t:.3f}  fitted {a:.4f}  exact {b:.4f}")
print(f"mean absolute error {np.abs(fitted - exact).mean():.4f}")
