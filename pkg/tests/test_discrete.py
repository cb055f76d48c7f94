import itertools

import numpy as np
import pytest

from deephazard.data import SurvivalDataset, make_splits
from deephazard.discrete import (
    DiscreteModel,
    bin_sweep,
    discrete_nll,
    discrete_survival,
    softmax,
    summarize_sweep,
    train_discrete,
    write_sweep_csv,
)
from deephazard.nn import ParameterSet
from deephazard.synth import GeneratorSpec, generate
from deephazard.trainer import TrainConfig


def _fixed_model(logits, t_max=1.0, n_features=1):
    """A model whose output ignores x and equals ``logits``."""
    b = len(logits)
    m = DiscreteModel.initialize(n_features, b, t_max, 0, hidden=(2,))
    flat = np.zeros(m.params.size)
    m = DiscreteModel(m.edges, ParameterSet.unflatten(m.params.spec, flat))
    m.params.layers[-1]["bias"][:] = logits
    return m


def test_uniform_two_bins_ln2():
    m = _fixed_model([0.0, 0.0])
    assert discrete_nll(m, np.zeros(1), 0.25, 1) == pytest.approx(np.log(2.0))
    assert discrete_nll(m, np.zeros(1), 0.25, 0) == pytest.approx(np.log(2.0))


def test_nll_matches_enumeration():
    logits = np.array([0.3, -1.0, 0.8, 0.1])
    m = _fixed_model(logits, t_max=4.0)
    p = np.exp(logits) / np.exp(logits).sum()
    total = expected = 0.0
    for t, e in itertools.product([0.5, 1.0, 1.7, 2.2, 3.0, 3.9, 4.0], [0, 1]):
        k = int(np.ceil(t) - 1)
        total += discrete_nll(m, np.zeros(1), t, e)
        if e:
            expected -= np.log(p[k])
        elif k == 3:
            expected -= np.log(p[3])
        else:
            expected -= np.log(p[k + 1 :].sum())
    assert total == pytest.approx(expected, rel=1e-12)


def test_survival_edges_and_interpolation():
    logits = np.array([0.5, 0.0, -0.5])
    m = _fixed_model(logits, t_max=3.0)
    p = np.exp(logits) / np.exp(logits).sum()
    steps = np.concatenate([[1.0], 1 - np.cumsum(p)])
    np.testing.assert_allclose(discrete_survival(m, np.zeros(1), m.edges), steps, atol=1e-12)
    assert discrete_survival(m, np.zeros(1), 0.0) == 1.0
    assert discrete_survival(m, np.zeros(1), 3.0) >= 0.0
    assert discrete_survival(m, np.zeros(1), 0.5) == pytest.approx((steps[0] + steps[1]) / 2)


def test_softmax_and_monotone_survival():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(20, 7)) * 10
    np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-12)
    m = DiscreteModel.initialize(2, 9, 2.0, 1)
    s = discrete_survival(m, rng.normal(size=(5, 2)), np.linspace(0, 2, 40))
    assert np.all(np.diff(s, axis=1) <= 1e-15)


def test_bins_are_equal_width():
    m = DiscreteModel.initialize(1, 4, 2.0, 0)
    np.testing.assert_allclose(m.edges, [0.0, 0.5, 1.0, 1.5, 2.0])
    np.testing.assert_array_equal(m.bin_index([0.1, 0.5, 0.51, 2.0]), [0, 0, 1, 3])


def test_gradient_matches_finite_differences():
    from deephazard.discrete import _loss_and_grad

    m = DiscreteModel.initialize(2, 4, 1.0, 3, hidden=(5,))
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 2))
    k = np.array([0, 1, 3, 2, 3, 0])
    ev = np.array([1, 0, 0, 1, 1, 0], dtype=bool)
    _, g = _loss_and_grad(m, x, k, ev, None)
    theta = m.params.flatten()
    h = 1e-6

    def f(th):
        mm = DiscreteModel(m.edges, ParameterSet.unflatten(m.params.spec, th))
        return _loss_and_grad(mm, x, k, ev, None)[0]

    fd = np.array([(f(theta + h * e) - f(theta - h * e)) / (2 * h) for e in np.eye(theta.size)])
    np.testing.assert_allclose(g.flatten(), fd, rtol=1e-5, atol=1e-9)


def test_training_reduces_nll():
    ds, _ = generate(GeneratorSpec("trimodal", n=400, seed=0, censoring="uniform", c_max=1.2))
    m = DiscreteModel.initialize(1, 8, 1.0, 0)
    before = discrete_nll(m, ds.covariates, ds.time, ds.event).mean()
    trained, hist = train_discrete(m, ds, ds, TrainConfig(learning_rate=0.01, batch_size=64, max_epochs=20, patience=20))
    after = discrete_nll(trained, ds.covariates, ds.time, ds.event).mean()
    assert after < before and min(hist) == pytest.approx(after)


def test_sweep_shape(tmp_path):
    ds, _ = generate(GeneratorSpec("trimodal", n=300, seed=1, censoring="uniform", c_max=1.2))
    plan = make_splits(ds, k=3, r=1, seed=0)
    folds = [(tr, va, te) for _, _, tr, va, te in plan.folds()]
    cfg = TrainConfig(learning_rate=0.01, batch_size=64, max_epochs=3, patience=3)
    rows = bin_sweep(ds, [2, 8, 32, 128], folds, cfg)
    for metric in ("c_index", "brier"):
        assert sorted({r.n_bins for r in rows if r.metric == metric}) == [2, 8, 32, 128]
    summary = summarize_sweep(rows)
    assert set(summary["brier"]) == {2, 8, 32, 128}
    write_sweep_csv(rows, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "B,fold,metric,value"
    with pytest.raises(ValueError):
        bin_sweep(ds, [1], folds, cfg)


def test_sweep_parallel_matches_serial():
    ds, _ = generate(GeneratorSpec("trimodal", n=200, seed=2, censoring="uniform", c_max=1.2))
    folds = [(tr, va, te) for _, _, tr, va, te in make_splits(ds, k=2, r=1, seed=0).folds()]
    cfg = TrainConfig(learning_rate=0.01, batch_size=64, max_epochs=2, patience=2)
    assert bin_sweep(ds, [2, 4], folds, cfg, jobs=2) == bin_sweep(ds, [2, 4], folds, cfg, jobs=1)


def test_time_beyond_last_edge_rejected():
    m = DiscreteModel.initialize(1, 4, 1.0, 0)
    with pytest.raises(ValueError):
        discrete_survival(m, np.zeros(1), 1.5)
