"""Neural hazard model: lambda(x, t) = softplus(phi(x, t)).

Two parameterisations of phi are supported:

* ``A1``: a single network on the concatenation ``[x, t / time_scale]``.
* ``A2``: separate covariate and time embedding networks whose outputs are
  concatenated and fed to a shared head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import NetworkSpec, ParameterSet

SOFTPLUS_SWITCH = 30.0


# ---------------------------------------------------------------- scalar maps


def softplus(z):
    """log(1 + e^z) without overflow or loss of precision in the tails."""
    z = np.asarray(z, dtype=float)
    big = z > SOFTPLUS_SWITCH
    zc = np.where(big, 0.0, z)
    return np.where(big, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(zc)))


def log_softplus(z):
    """log(softplus(z)), accurate where softplus underflows."""
    z = np.asarray(z, dtype=float)
    small = z < -SOFTPLUS_SWITCH
    zs = np.where(small, z, -SOFTPLUS_SWITCH)
    # softplus(z) = e^z (1 - e^z / 2 + ...) for z << 0
    tail = zs + np.log1p(-0.5 * np.exp(zs))
    return np.where(small, tail, np.log(softplus(np.where(small, 0.0, z))))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def dlog_softplus(z):
    """d/dz log(softplus(z)) = sigmoid(z) / softplus(z), computed in log space."""
    z = np.asarray(z, dtype=float)
    log_sig = -softplus(-z)
    return np.exp(log_sig - log_softplus(z))


# ---------------------------------------------------------------- model


@dataclass(frozen=True)
class ArchitectureVariant:
    """Network layout for phi. ``nets`` maps sub-network name to its spec.

    A1 uses ``{"shared"}``; A2 uses ``{"cov", "time", "shared"}``.
    """

    name: str
    nets: dict[str, NetworkSpec] = field(hash=False)

    def __post_init__(self):
        if self.name == "A1":
            if set(self.nets) != {"shared"}:
                raise ValueError("A1 needs exactly a 'shared' network")
            if self.nets["shared"].output_dim != 1:
                raise ValueError("phi head must have output width 1")
        elif self.name == "A2":
            if set(self.nets) != {"cov", "time", "shared"}:
                raise ValueError("A2 needs 'cov', 'time' and 'shared' networks")
            cov, tim, shared = self.nets["cov"], self.nets["time"], self.nets["shared"]
            if tim.input_dim != 1:
                raise ValueError("time network takes a single input")
            if shared.input_dim != cov.out_width + tim.out_width:
                raise ValueError(
                    f"shared input {shared.input_dim} != cov {cov.out_width} + time {tim.out_width}"
                )
            if shared.output_dim != 1:
                raise ValueError("phi head must have output width 1")
        else:
            raise ValueError(f"unknown architecture {self.name!r}")

    @property
    def order(self) -> tuple[str, ...]:
        return ("shared",) if self.name == "A1" else ("cov", "time", "shared")

    @property
    def n_features(self) -> int:
        if self.name == "A1":
            return self.nets["shared"].input_dim - 1
        return self.nets["cov"].input_dim

    def to_dict(self) -> dict:
        return {"name": self.name, "nets": {k: v.to_dict() for k, v in self.nets.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureVariant":
        return cls(d["name"], {k: NetworkSpec.from_dict(v) for k, v in d["nets"].items()})


def make_architecture(
    name: str,
    n_features: int,
    hidden: int = 400,
    layers: int = 2,
    activation: str = "selu",
    dropout: float = 0.4,
    layer_norm: bool = True,
    embed_dim: int | None = None,
) -> ArchitectureVariant:
    """Build A1 or A2 from the global width/depth settings.

    A2 spends one hidden layer on each embedding branch (width ``embed_dim``,
    default ``hidden``) and ``max(layers - 1, 1)`` on the shared head.
    """
    common = dict(activation=activation, dropout_rate=dropout, layer_norm=layer_norm)
    if name == "A1":
        shared = NetworkSpec(n_features + 1, (hidden,) * layers, **common)
        return ArchitectureVariant("A1", {"shared": shared})
    embed = embed_dim or hidden
    cov = NetworkSpec(n_features, (embed,), output_dim=None, **common)
    tim = NetworkSpec(1, (embed,), output_dim=None, **common)
    shared = NetworkSpec(2 * embed, (hidden,) * max(layers - 1, 1), **common)
    return ArchitectureVariant("A2", {"cov": cov, "time": tim, "shared": shared})


class HazardModel:
    """phi network(s) plus the time scale used to normalise the time input.

    Network inputs see ``t / time_scale``; likelihood terms always use raw time.
    """

    def __init__(self, variant: ArchitectureVariant, params: dict[str, ParameterSet], time_scale: float = 1.0):
        if not time_scale > 0:
            raise ValueError("time_scale must be positive")
        if set(params) != set(variant.nets):
            raise ValueError("parameter sets do not match the architecture")
        for name, p in params.items():
            if p.spec != variant.nets[name]:
                raise ValueError(f"parameters for {name!r} do not match its spec")
        self.variant = variant
        self.params = params
        self.time_scale = float(time_scale)

    @classmethod
    def initialize(cls, variant: ArchitectureVariant, seed, time_scale: float = 1.0) -> "HazardModel":
        ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
        children = ss.spawn(len(variant.order))
        params = {
            name: nn.init_parameters(variant.nets[name], np.random.default_rng(child))
            for name, child in zip(variant.order, children)
        }
        return cls(variant, params, time_scale)

    @property
    def n_features(self) -> int:
        return self.variant.n_features

    def parameter_sets(self) -> list[ParameterSet]:
        return [self.params[name] for name in self.variant.order]

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.flatten() for p in self.parameter_sets()])

    def with_flat(self, flat) -> "HazardModel":
        flat = np.asarray(flat, dtype=float)
        params, pos = {}, 0
        for name in self.variant.order:
            n = self.params[name].size
            params[name] = ParameterSet.unflatten(self.variant.nets[name], flat[pos : pos + n])
            pos += n
        if pos != flat.size:
            raise ValueError("flat parameter vector has the wrong length")
        return HazardModel(self.variant, params, self.time_scale)

    def copy(self) -> "HazardModel":
        return HazardModel(self.variant, {k: p.copy() for k, p in self.params.items()}, self.time_scale)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def to_dict(self) -> dict:
        return {
            "kind": "hazard-model",
            "variant": self.variant.to_dict(),
            "time_scale": self.time_scale,
            "params": {k: self.params[k].flatten().tolist() for k in self.variant.order},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HazardModel":
        if d.get("kind") != "hazard-model":
            raise ValueError("not a hazard-model checkpoint")
        variant = ArchitectureVariant.from_dict(d["variant"])
        params = {
            k: ParameterSet.unflatten(variant.nets[k], np.asarray(d["params"][k], dtype=float))
            for k in variant.order
        }
        return cls(variant, params, d["time_scale"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "HazardModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------- phi and friends


class PhiTape:
    __slots__ = ("variant", "tapes", "single", "split")

    def __init__(self, variant, tapes, single, split=None):
        self.variant = variant
        self.tapes = tapes
        self.single = single
        self.split = split


def _broadcast_inputs(model: HazardModel, x, t):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    single = x.ndim == 1 and t.ndim == 0
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ValueError(f"covariates have shape {x.shape}, model expects {model.n_features} features")
    t = np.atleast_1d(t)
    n = max(x.shape[0], t.shape[0])
    if x.shape[0] not in (1, n) or t.shape[0] not in (1, n):
        raise ValueError("covariate rows and times do not broadcast")
    x = np.broadcast_to(x, (n, x.shape[1]))
    t = np.broadcast_to(t, (n,))
    return x, t, single


def phi_forward(model: HazardModel, x, t, rng: np.random.Generator | None = None, keep_tape: bool = True):
    """phi for rows of covariates ``x`` at times ``t`` (broadcast together).

    ``rng=None`` is eval mode. Returns ``(phi, tape)``.
    """
    x, t, single = _broadcast_inputs(model, x, t)
    ts = (t / model.time_scale)[:, None]
    v = model.variant
    p = model.params
    if v.name == "A1":
        out, tape = nn.forward(p["shared"], np.hstack([x, ts]), rng, keep_tape)
        tapes = {"shared": tape}
        split = None
    else:
        ec, tc = nn.forward(p["cov"], x, rng, keep_tape)
        et, tt = nn.forward(p["time"], ts, rng, keep_tape)
        out, tape = nn.forward(p["shared"], np.hstack([ec, et]), rng, keep_tape)
        tapes = {"cov": tc, "time": tt, "shared": tape}
        split = ec.shape[1]
    if single:
        out = float(out[0])
    return out, (PhiTape(v, tapes, single, split) if keep_tape else None)


def phi_backward(tape: PhiTape, upstream) -> dict[str, nn.Gradient]:
    """Gradient of ``sum(upstream * phi)`` for every sub-network."""
    grads = {"shared": nn.backward(tape.tapes["shared"], upstream)}
    if tape.variant.name == "A2":
        g_in = grads["shared"].input
        grads["cov"] = nn.backward(tape.tapes["cov"], g_in[:, : tape.split])
        grads["time"] = nn.backward(tape.tapes["time"], g_in[:, tape.split :])
    return grads


def flatten_grads(model: HazardModel, grads: dict[str, nn.Gradient]) -> np.ndarray:
    return np.concatenate([grads[name].flatten() for name in model.variant.order])


def phi(model: HazardModel, x, t, rng: np.random.Generator | None = None):
    return phi_forward(model, x, t, rng, keep_tape=False)[0]


def hazard(model: HazardModel, x, t, rng: np.random.Generator | None = None):
    """lambda(x, t) = softplus(phi(x, t)) >= 0."""
    out = softplus(phi(model, x, t, rng))
    return float(out) if out.ndim == 0 else out


def log_hazard(model: HazardModel, x, t, rng: np.random.Generator | None = None):
    out = log_softplus(phi(model, x, t, rng))
    return float(out) if out.ndim == 0 else out


def density(model: HazardModel, x, t, survival_estimate, rng: np.random.Generator | None = None):
    """Event-time density f = lambda(x, t) * S for a supplied survival estimate."""
    out = np.asarray(hazard(model, x, t, rng)) * np.asarray(survival_estimate, dtype=float)
    return float(out) if out.ndim == 0 else out
