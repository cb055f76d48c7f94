"""
Evaluating survival predictions
===============================

Censoring-weighted metrics at the 25/50/75% event-time quantiles, and a
corrected paired t-test for comparing two models across folds.
"""

import numpy as np

from deephazard import GeneratorSpec, PairedResults, corrected_ttest, event_quantile_horizons, generate, km_censoring
from deephazard.metrics import corrected_ttest_pvalue, evaluate_at_horizons

ds, truth = generate(GeneratorSpec("weibull", n=1000, seed=0, censoring="uniform", c_max=3.0))
G = km_censoring(ds)
horizons = event_quantile_horizons(ds)

# the generator's exact survival probabilities are the best possible predictions
exact = truth.survival(np.repeat(ds.covariates, 3, axis=0), np.tile(horizons, len(ds))).reshape(len(ds), 3)
noisy = np.clip(exact + np.random.default_rng(0).normal(0, 0.15, exact.shape), 0, 1)

for name, pred in (("exact", exact), ("noisy", noisy)):
    for rep in evaluate_at_horizons(pred, ds, horizons, G, model=name):
        print(rep)

###############################################################################
# Per-fold C-index differences between two models, 5 folds x 2 repeats

diffs = np.array([[0.012, 0.015], [-0.003, 0.006], [0.020, -0.002], [0.008, 0.011], [0.001, 0.009]])
paired = PairedResults(diffs, n_train=800, n_test=200)
t, dof = corrected_ttest(paired)
print(f"t = {t:.3f} on {dof} dof, p = {corrected_ttest_pvalue(paired):.3f}")
