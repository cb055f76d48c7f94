"""Model builders shared by the test modules."""

import numpy as np

from deephazard.hazard import HazardModel, make_architecture


def constant_model(c: float, n_features: int = 2, name: str = "A1", time_scale: float = 1.0) -> HazardModel:
    """All weights zero and head bias softplus^-1(c): lambda(x, t) = c everywhere."""
    arch = make_architecture(name, n_features, hidden=4, layers=2, dropout=0.0, layer_norm=False)
    model = HazardModel.initialize(arch, 0, time_scale)
    flat = np.zeros(model.n_params)
    model = model.with_flat(flat)
    model.params["shared"].layers[-1]["bias"][:] = np.log(np.expm1(c))
    return model


def linear_time_model(slope: float, n_features: int = 1, time_scale: float = 1.0) -> HazardModel:
    """phi = slope * t / time_scale through identity activations, ignoring covariates."""
    arch = make_architecture("A1", n_features, hidden=1, layers=1, activation="identity", dropout=0.0, layer_norm=False)
    model = HazardModel.initialize(arch, 0, time_scale)
    model = model.with_flat(np.zeros(model.n_params))
    layers = model.params["shared"].layers
    layers[0]["weight"][0, -1] = slope
    layers[1]["weight"][0, 0] = 1.0
    return model


def random_model(name="A1", n_features=2, seed=0, jitter=0.2, time_scale=1.0, **kw) -> HazardModel:
    kw = {"hidden": 6, "layers": 2, "dropout": 0.0, "layer_norm": False, **kw}
    model = HazardModel.initialize(make_architecture(name, n_features, **kw), seed, time_scale)
    rng = np.random.default_rng(seed + 1000)
    return model.with_flat(model.flatten() + jitter * rng.normal(size=model.n_params))


ACCEPTANCE_LINES: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    """Record and print one acceptance line; pytest echoes them again in its summary."""
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
