"""
How many bins for a discrete-time model?
========================================

A discrete-time baseline predicts a softmax over equal-width time bins. The
bin count is a tuning choice. This script sweeps it with cross-validation
and prints the mean and spread of the C-index and Brier score per bin count.
"""

from deephazard import GeneratorSpec, TrainConfig, generate, make_splits
from deephazard.discrete import bin_sweep, summarize_sweep

ds, truth = generate(GeneratorSpec("trimodal", n=1500, seed=0, censoring="uniform", c_max=1.5))
folds = [(tr, va, te) for _, _, tr, va, te in make_splits(ds, k=3, r=1, seed=0).folds()]
cfg = TrainConfig(learning_rate=2e-3, batch_size=256, max_epochs=100, patience=10, seed=0)

summary = summarize_sweep(bin_sweep(ds, [2, 8, 32, 128], folds, cfg, hidden=(32, 32)))
for metric, table in summary.items():
    print(metric)
    for bins, (mean, std) in table.items():
        print(f"  B={bins:4d}  {mean:.4f} +/- {std:.4f}")
