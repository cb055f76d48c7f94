"""Command-line entry point: ``python -m deephazard <command> --config cfg.json``.

Commands: train, evaluate, predict, simulate, sweep-bins, density. Every command
reads a strict JSON config; ``--seed`` and ``--out`` override the config keys.
Exit codes: 0 success, 2 config error, 3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
import zlib
from pathlib import Path

import jsonschema
import numpy as np

from .data import DataError, Standardization, SurvivalDataset, load_csv, make_splits, standardize
from .discrete import bin_sweep, summarize_sweep, write_sweep_csv
from .estimator import survival_curve
from .hazard import HazardModel, hazard, make_architecture
from .metrics import event_quantile_horizons, evaluate_at_horizons, km_censoring, write_reports
from .synth import GeneratorSpec, generate, save_generated
from .trainer import DivergenceError, TrainConfig, train

log = logging.getLogger("deephazard")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- schemas


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer"}
_POSINT = {"type": "integer", "minimum": 1}
_STR = {"type": "string"}

DATA = _obj(
    {
        "path": _STR,
        "duration_column": _STR,
        "event_column": _STR,
        "standardize": {"type": "boolean"},
    },
    required=["path"],
)
MODEL = _obj(
    {
        "architecture": {"enum": ["A1", "A2"]},
        "hidden": _POSINT,
        "layers": _POSINT,
        "activation": {"enum": ["selu", "relu", "tanh"]},
        "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "layer_norm": {"type": "boolean"},
        "embed_dim": {"type": ["integer", "null"], "minimum": 1},
    }
)
TRAIN = _obj(
    {
        "learning_rate": {"type": "number", "minimum": 0},
        "batch_size": _POSINT,
        "n_samples": _POSINT,
        "max_epochs": _POSINT,
        "patience": _POSINT,
        "weight_decay": {"type": "number", "minimum": 0},
        "eval_samples": {"type": ["integer", "null"], "minimum": 1},
        "clip_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
    }
)
GENERATOR = _obj(
    {
        "variant": {"enum": ["trimodal", "constant", "weibull"]},
        "n": _POSINT,
        "component_means": {"type": "array", "items": _NUM, "minItems": 1},
        "component_sd": _POS,
        "covariate_sd": {"type": "number", "minimum": 0},
        "beta": {"type": "array", "items": _NUM, "minItems": 1},
        "baseline": _POS,
        "shape": _POS,
        "scale": _POS,
        "censoring": {"enum": ["none", "uniform", "exponential"]},
        "c_max": _POS,
        "gamma": _POS,
    }
)
QUANTILES = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, "minItems": 1}
GRID = {
    "oneOf": [
        {"type": "array", "items": _POS, "minItems": 1},
        _obj({"start": _POS, "stop": _POS, "num": _POSINT}, required=["stop", "num"]),
    ]
}
COMMON = {"seed": _INT, "out": _STR, "jobs": _POSINT}

SCHEMAS = {
    "train": _obj(
        {**COMMON, "data": DATA, "model": MODEL, "train": TRAIN, "validation_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        required=["data"],
    ),
    "evaluate": _obj(
        {**COMMON, "checkpoint": _STR, "data": DATA, "censoring_data": DATA, "quantiles": QUANTILES, "n_samples": _POSINT, "model_name": _STR},
        required=["checkpoint", "data"],
    ),
    "predict": _obj(
        {**COMMON, "checkpoint": _STR, "data": DATA, "times": GRID, "n_samples": _POSINT},
        required=["checkpoint", "data", "times"],
    ),
    "simulate": _obj({**COMMON, "generator": GENERATOR, "name": _STR}, required=["generator"]),
    "sweep-bins": _obj(
        {
            **COMMON,
            "data": DATA,
            "generator": GENERATOR,
            "bin_counts": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
            "k": {"type": "integer", "minimum": 2},
            "r": _POSINT,
            "validation_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "hidden": {"type": "array", "items": _POSINT, "minItems": 1},
            "train": TRAIN,
            "quantiles": QUANTILES,
        },
        required=["bin_counts"],
    ),
    "density": _obj(
        {
            **COMMON,
            "checkpoint": _STR,
            "data": DATA,
            "instance": {"type": "integer", "minimum": 0},
            "covariates": {"type": "array", "items": _NUM},
            "grid": GRID,
            "n_samples": _POSINT,
        },
        required=["checkpoint", "grid"],
    ),
}


def validate_config(command: str, cfg: dict) -> None:
    """Raise ConfigError naming the offending key on any schema violation."""
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    if command == "sweep-bins" and ("data" in cfg) == ("generator" in cfg):
        raise ConfigError("config error at <root>: give exactly one of 'data' or 'generator'")
    if command == "density" and ("instance" in cfg) == ("covariates" in cfg):
        raise ConfigError("config error at <root>: give exactly one of 'instance' or 'covariates'")
    if command == "density" and "instance" in cfg and "data" not in cfg:
        raise ConfigError("config error at instance: selecting an instance needs 'data'")


# ---------------------------------------------------------------- helpers


def named_seed(root: int, name: str) -> int:
    """Independent child seed for a named random stream."""
    return int(np.random.SeedSequence([root, zlib.crc32(name.encode())]).generate_state(1)[0])


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config_hash(cfg: dict) -> str:
    # output location and worker count do not change results
    relevant = {k: v for k, v in cfg.items() if k not in ("out", "jobs")}
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()


def _build(cls, section: str, values: dict):
    """Instantiate a config dataclass, reporting bad values as config errors."""
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config error at {section}: {exc}") from None


def _load_data(spec: dict) -> SurvivalDataset:
    return load_csv(spec["path"], spec.get("duration_column", "time"), spec.get("event_column", "event"))


def _grid(spec) -> np.ndarray:
    if isinstance(spec, list):
        g = np.asarray(spec, dtype=float)
    else:
        stop = spec["stop"]
        start = spec.get("start", stop / spec["num"])
        g = np.linspace(start, stop, spec["num"])
    if np.any(np.diff(g) <= 0):
        raise ConfigError("config error at grid: times must be strictly increasing")
    return g


def _load_checkpoint(path) -> tuple[HazardModel, Standardization | None, dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        model = HazardModel.from_dict(doc)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    std = doc.get("standardization")
    stats = Standardization(np.asarray(std["mean"]), np.asarray(std["std"])) if std else None
    return model, stats, doc


def _prepare(ds: SurvivalDataset, model: HazardModel, stats: Standardization | None) -> SurvivalDataset:
    if ds.n_features != model.n_features:
        raise DataError(f"dataset has {ds.n_features} features, checkpoint expects {model.n_features}")
    return standardize(ds, stats) if stats is not None else ds


def _write_manifest(out: Path, command: str, cfg: dict, inputs: list, started: float, extra=None) -> None:
    manifest = {
        "command": command,
        "seed": cfg.get("seed", 0),
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "seconds": time.perf_counter() - started,
        **(extra or {}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_train(cfg: dict, out: Path) -> dict:
    started = time.perf_counter()
    seed = cfg.get("seed", 0)
    dspec = cfg["data"]
    ds = _load_data(dspec)
    ds.validate_for_training()
    perm = np.random.default_rng(named_seed(seed, "split")).permutation(len(ds))
    n_valid = max(1, int(round(cfg.get("validation_fraction", 0.2) * len(ds))))
    if n_valid >= len(ds):
        raise DataError("dataset too small for a validation split")
    train_raw, valid_raw = ds.subset(np.sort(perm[n_valid:])), ds.subset(np.sort(perm[:n_valid]))
    stats = None
    if dspec.get("standardize", True):
        train_set = standardize(train_raw)
        stats = train_set.standardization
        valid_set = standardize(valid_raw, stats)
    else:
        train_set, valid_set = train_raw, valid_raw
    m = cfg.get("model", {})
    arch = make_architecture(
        m.get("architecture", "A1"),
        ds.n_features,
        hidden=m.get("hidden", 400),
        layers=m.get("layers", 2),
        activation=m.get("activation", "selu"),
        dropout=m.get("dropout", 0.4),
        layer_norm=m.get("layer_norm", True),
        embed_dim=m.get("embed_dim"),
    )
    model = HazardModel.initialize(arch, named_seed(seed, "init"), time_scale=float(train_set.time.max()))
    tcfg = _build(TrainConfig, "train", {**cfg.get("train", {}), "seed": named_seed(seed, "train")})
    best, history = train(model, train_set, valid_set, tcfg)
    doc = best.to_dict()
    doc["feature_names"] = list(ds.feature_names)
    doc["standardization"] = (
        {"mean": stats.mean.tolist(), "std": stats.std.tolist()} if stats is not None else None
    )
    (out / "checkpoint.json").write_text(json.dumps(doc), encoding="utf-8")
    history.to_csv(out / "history.csv")
    _write_manifest(
        out,
        "train",
        cfg,
        [dspec["path"]],
        started,
        {"best_epoch": history.best_epoch, "epochs": history.n_epochs, "best_valid_ll": history.best_valid_ll},
    )
    return {"checkpoint": str(out / "checkpoint.json"), "epochs": history.n_epochs}


def cmd_evaluate(cfg: dict, out: Path) -> dict:
    started = time.perf_counter()
    model, stats, _ = _load_checkpoint(cfg["checkpoint"])
    ds = _prepare(_load_data(cfg["data"]), model, stats)
    ref = _prepare(_load_data(cfg["censoring_data"]), model, stats) if "censoring_data" in cfg else ds
    quantiles = cfg.get("quantiles", [0.25, 0.5, 0.75])
    horizons = event_quantile_horizons(ref, quantiles)
    G = km_censoring(ref)
    rng = np.random.default_rng(named_seed(cfg.get("seed", 0), "is-eval"))
    pred = survival_curve(model, ds.covariates, horizons, cfg.get("n_samples", 1024), rng)
    try:
        reports = evaluate_at_horizons(pred, ds, horizons, G, quantiles, cfg.get("model_name", "dha"))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    write_reports(reports, out / "metrics.csv", out / "metrics.json")
    inputs = [cfg["checkpoint"], cfg["data"]["path"]] + ([cfg["censoring_data"]["path"]] if "censoring_data" in cfg else [])
    _write_manifest(out, "evaluate", cfg, inputs, started)
    return {"metrics": str(out / "metrics.csv"), "rows": len(reports)}


def cmd_predict(cfg: dict, out: Path) -> dict:
    started = time.perf_counter()
    model, stats, _ = _load_checkpoint(cfg["checkpoint"])
    ds = _prepare(_load_data(cfg["data"]), model, stats)
    grid = _grid(cfg["times"])
    rng = np.random.default_rng(named_seed(cfg.get("seed", 0), "is-eval"))
    surv = survival_curve(model, ds.covariates, grid, cfg.get("n_samples", 1024), rng)
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", *(f"S@{t!r}" for t in grid.tolist())])
        for i, row in enumerate(surv):
            w.writerow([i, *(repr(float(v)) for v in row)])
    _write_manifest(out, "predict", cfg, [cfg["checkpoint"], cfg["data"]["path"]], started)
    return {"predictions": str(out / "predictions.csv")}


def cmd_simulate(cfg: dict, out: Path) -> dict:
    started = time.perf_counter()
    gcfg = {**cfg["generator"], "seed": named_seed(cfg.get("seed", 0), "generator")}
    ds, gt = generate(_build(GeneratorSpec, "generator", gcfg))
    name = cfg.get("name", "dataset")
    save_generated(ds, gt, out / f"{name}.csv", out / f"{name}.json")
    _write_manifest(out, "simulate", cfg, [], started)
    return {"dataset": str(out / f"{name}.csv"), "n": len(ds), "censored_fraction": gt.censored_fraction}


def cmd_sweep_bins(cfg: dict, out: Path) -> dict:
    started = time.perf_counter()
    seed = cfg.get("seed", 0)
    if "generator" in cfg:
        ds, _ = generate(_build(GeneratorSpec, "generator", {**cfg["generator"], "seed": named_seed(seed, "generator")}))
        inputs = []
    else:
        ds = _load_data(cfg["data"])
        if cfg["data"].get("standardize", True):
            ds = standardize(ds)
        inputs = [cfg["data"]["path"]]
    ds.validate_for_training()
    plan = make_splits(
        ds, k=cfg.get("k", 5), r=cfg.get("r", 1), seed=named_seed(seed, "split"),
        validation_fraction=cfg.get("validation_fraction", 0.2),
    )
    folds = [(tr, va, te) for _, _, tr, va, te in plan.folds()]
    tcfg = _build(TrainConfig, "train", {"max_epochs": 200, "patience": 20, **cfg.get("train", {}), "seed": named_seed(seed, "train")})
    rows = bin_sweep(
        ds, cfg["bin_counts"], folds, tcfg, hidden=tuple(cfg.get("hidden", [32, 32])),
        quantiles=tuple(cfg.get("quantiles", [0.25, 0.5, 0.75])), jobs=cfg.get("jobs", 1),
    )
    write_sweep_csv(rows, out / "sweep.csv")
    summary = summarize_sweep(rows)
    best = {
        "c_index": max(summary["c_index"], key=lambda b: summary["c_index"][b][0]),
        "brier": min(summary["brier"], key=lambda b: summary["brier"][b][0]),
    }
    (out / "sweep_summary.json").write_text(
        json.dumps({"summary": {m: {str(b): v for b, v in d.items()} for m, d in summary.items()}, "best_bins": best}, indent=2),
        encoding="utf-8",
    )
    _write_manifest(out, "sweep-bins", cfg, inputs, started)
    return {"sweep": str(out / "sweep.csv"), "best_bins": best}


def cmd_density(cfg: dict, out: Path) -> dict:
    started = time.perf_counter()
    model, stats, _ = _load_checkpoint(cfg["checkpoint"])
    if "instance" in cfg:
        ds = _prepare(_load_data(cfg["data"]), model, stats)
        if cfg["instance"] >= len(ds):
            raise DataError(f"instance {cfg['instance']} out of range for {len(ds)} records")
        x = ds.covariates[cfg["instance"]]
    else:
        x = np.asarray(cfg["covariates"], dtype=float)
        if x.size != model.n_features:
            raise DataError(f"{x.size} covariates given, checkpoint expects {model.n_features}")
        if stats is not None:
            x = stats.transform(x)
    grid = _grid(cfg["grid"])
    if grid[0] <= 0 or grid[-1] > model.time_scale * (1 + 1e-12):
        raise DataError(f"grid must lie in (0, {model.time_scale}]")
    rng = np.random.default_rng(named_seed(cfg.get("seed", 0), "is-eval"))
    surv = survival_curve(model, x, grid, cfg.get("n_samples", 4096), rng)
    lam = hazard(model, np.broadcast_to(x, (grid.size, x.size)), grid)
    with open(out / "density.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "hazard", "survival", "density"])
        for row in zip(grid, lam, surv, lam * surv):
            w.writerow([repr(float(v)) for v in row])
    inputs = [cfg["checkpoint"]] + ([cfg["data"]["path"]] if "data" in cfg else [])
    _write_manifest(out, "density", cfg, inputs, started)
    return {"density": str(out / "density.csv")}


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "sweep-bins": cmd_sweep_bins,
    "density": cmd_density,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deephazard", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, help="root seed (overrides config)")
        p.add_argument("--jobs", type=int, help="worker processes for fold/sweep parallelism")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        for key in ("seed", "jobs", "out"):
            if getattr(args, key) is not None:
                cfg[key] = getattr(args, key)
        validate_config(args.command, cfg)
        out = Path(cfg.get("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (DataError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGENCE, "divergence", str(exc))
    print(json.dumps(result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
