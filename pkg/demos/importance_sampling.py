"""
Importance-sampled likelihood
=============================

The log-likelihood of a continuous-time hazard model needs the integral of
the hazard from 0 to each observed time. Here we compare the Monte Carlo
estimate against adaptive quadrature for a small random network, and watch
its spread shrink as the number of samples M grows.
"""

import numpy as np
from scipy import integrate

from deephazard import HazardModel, SurvivalDataset, make_architecture, minibatch_loss
from deephazard.hazard import hazard

# a small randomly initialised network and four records
arch = make_architecture("A1", 2, hidden=8, layers=2, activation="tanh", dropout=0.0, layer_norm=False)
model = HazardModel.initialize(arch, seed=0, time_scale=2.0)
rng = np.random.default_rng(1)
ds = SurvivalDataset(rng.normal(size=(4, 2)), np.array([0.4, 0.9, 1.3, 1.8]), np.array([1, 0, 1, 1], bool))

###############################################################################
# Exact negative log-likelihood by quadrature

nll = 0.0
for x, t, e in zip(ds.covariates, ds.time, ds.event):
    nll += integrate.quad(lambda s: hazard(model, x, s), 0, t)[0]
    if e:
        nll -= np.log(hazard(model, x, t))
print(f"quadrature NLL: {nll:.6f}")

###############################################################################
# The estimate is unbiased at every M; only its variance depends on M

r = np.random.default_rng(2)
for M in (1, 10, 100, 1000):
    draws = np.array([minibatch_loss(model, ds, len(ds), M, r, train=False).value for _ in range(500)])
    print(f"M={M:5d}  mean {draws.mean():.5f}  std {draws.std():.5f}")
