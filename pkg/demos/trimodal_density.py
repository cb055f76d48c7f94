"""
A multi-modal survival density
==============================

Event times drawn from a mixture of three Gaussians have a density with
three bumps. A proportional-hazards model cannot follow that shape; the
network hazard can. We fit it, then locate the maxima of the fitted density
f(t) = lambda(t) S(t).

Training takes a few minutes.
"""

import numpy as np
from scipy.ndimage import uniform_filter1d

from deephazard import GeneratorSpec, HazardModel, TrainConfig, generate, hazard, make_architecture, survival_curve, train

ds, truth = generate(GeneratorSpec("trimodal", n=5000, seed=0))
perm = np.random.default_rng(0).permutation(len(ds))
train_set, valid_set = ds.subset(perm[1000:]), ds.subset(perm[:1000])

arch = make_architecture("A1", 1, hidden=32, layers=2, dropout=0.0, layer_norm=False)
model = HazardModel.initialize(arch, seed=0, time_scale=1.0)
cfg = TrainConfig(learning_rate=5e-3, batch_size=256, n_samples=64, max_epochs=300, patience=300, seed=0)
best, history = train(model, train_set, valid_set, cfg)

###############################################################################
# Density on a fine grid, lightly smoothed before looking for peaks

grid = np.linspace(1 / 512, 1.0, 512)
x = ds.covariates[0]
f = hazard(best, np.repeat(x[None], grid.size, 0), grid) * survival_curve(best, x, grid, 100_000, np.random.default_rng(0))
smooth = uniform_filter1d(f, 5, mode="nearest")


def maxima(v):
    return grid[[i for i in range(1, v.size - 1) if v[i] > v[i - 1] and v[i] >= v[i + 1]]]


print("fitted modes:", np.round(maxima(smooth), 3))
print("true modes:  ", np.round(maxima(truth.density_curve(x, grid)), 3))
