"""Dense feed-forward networks with hand-written reverse-mode gradients.

A network is a stack of hidden blocks ``linear -> [layer norm] -> activation
-> [dropout]`` followed by an optional linear output head. Everything is
batched over rows; a single input vector is treated as a one-row batch.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946
LN_EPS = 1e-5
ACTIVATIONS = ("selu", "relu", "tanh", "identity")


class StaleTapeError(RuntimeError):
    """Backward was called on a consumed tape or after parameters changed."""


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of one dense network.

    ``layer_widths`` are the hidden widths; an empty tuple gives a purely
    linear map. ``output_dim=None`` drops the
    linear head, so the network emits its last hidden representation (used
    for the covariate/time embeddings of the two-branch architecture).
    """

    input_dim: int
    layer_widths: tuple[int, ...]
    activation: str = "selu"
    dropout_rate: float = 0.0
    layer_norm: bool = False
    output_dim: int | None = 1

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("hidden widths must be positive")
        if not self.layer_widths and self.output_dim is None:
            raise ValueError("a network without hidden layers needs an output head")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.output_dim is not None and self.output_dim < 1:
            raise ValueError("output_dim must be positive or None")

    @property
    def out_width(self) -> int:
        return self.output_dim if self.output_dim is not None else self.layer_widths[-1]

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out, in) shape of every linear map, output head last."""
        dims = [self.input_dim, *self.layer_widths]
        shapes = [(dims[i + 1], dims[i]) for i in range(len(self.layer_widths))]
        if self.output_dim is not None:
            shapes.append((self.output_dim, dims[-1]))
        return shapes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**{**d, "layer_widths": tuple(d["layer_widths"])})


class ParameterSet:
    """Weights of one network as a list of per-layer dicts.

    Each layer holds ``weight`` (out, in) and ``bias`` (out,); hidden layers of
    a layer-normalised network also hold ``gain`` and ``shift``. ``arrays()``
    fixes the flat ordering used by ``flatten``/``unflatten``.
    """

    def __init__(self, spec: NetworkSpec, layers: list[dict[str, np.ndarray]]):
        self.spec = spec
        self.layers = layers
        self.version = 0
        self._check()

    def _check(self):
        shapes = self.spec.layer_shapes()
        if len(shapes) != len(self.layers):
            raise ValueError("layer count does not match spec")
        n_hidden = len(self.spec.layer_widths)
        for i, ((out, inp), layer) in enumerate(zip(shapes, self.layers)):
            if layer["weight"].shape != (out, inp) or layer["bias"].shape != (out,):
                raise ValueError(f"layer {i}: shape mismatch with spec")
            if self.spec.layer_norm and i < n_hidden:
                if layer["gain"].shape != (out,) or layer["shift"].shape != (out,):
                    raise ValueError(f"layer {i}: layer-norm shape mismatch")

    @staticmethod
    def _keys(spec: NetworkSpec, i: int) -> tuple[str, ...]:
        if spec.layer_norm and i < len(spec.layer_widths):
            return ("weight", "bias", "gain", "shift")
        return ("weight", "bias")

    def arrays(self) -> Iterator[np.ndarray]:
        for i, layer in enumerate(self.layers):
            for key in self._keys(self.spec, i):
                yield layer[key]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def unflatten(cls, spec: NetworkSpec, flat: np.ndarray):
        flat = np.asarray(flat, dtype=float)
        layers, pos = [], 0
        for i, (out, inp) in enumerate(spec.layer_shapes()):
            layer = {}
            for key in cls._keys(spec, i):
                shape = (out, inp) if key == "weight" else (out,)
                n = int(np.prod(shape))
                if pos + n > flat.size:
                    raise ValueError("flat vector too short for spec")
                layer[key] = flat[pos : pos + n].reshape(shape).copy()
                pos += n
            layers.append(layer)
        if pos != flat.size:
            raise ValueError(f"flat vector has {flat.size} values, spec needs {pos}")
        return cls(spec, layers)

    def copy(self):
        return type(self)(self.spec, [{k: v.copy() for k, v in layer.items()} for layer in self.layers])

    def zeros_like(self) -> "Gradient":
        return Gradient(
            self.spec, [{k: np.zeros_like(v) for k, v in layer.items()} for layer in self.layers]
        )

    def touch(self) -> None:
        """Mark an in-place modification so that outstanding tapes become stale."""
        self.version += 1

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


class Gradient(ParameterSet):
    """Per-parameter derivatives laid out like a ParameterSet.

    ``input`` carries the derivative with respect to the network inputs.
    """

    input: np.ndarray | None = None


def init_parameters(spec: NetworkSpec, seed: int | np.random.Generator) -> ParameterSet:
    """LeCun-normal weights (He-normal for relu), zero biases, unit layer-norm gain."""
    rng = np.random.default_rng(seed)
    gain = 2.0 if spec.activation == "relu" else 1.0
    layers = []
    n_hidden = len(spec.layer_widths)
    for i, (out, inp) in enumerate(spec.layer_shapes()):
        layer = {
            "weight": rng.normal(0.0, np.sqrt(gain / inp), size=(out, inp)),
            "bias": np.zeros(out),
        }
        if spec.layer_norm and i < n_hidden:
            layer["gain"] = np.ones(out)
            layer["shift"] = np.zeros(out)
        layers.append(layer)
    return ParameterSet(spec, layers)


# ---------------------------------------------------------------- primitives


def selu(z):
    z = np.asarray(z, dtype=float)
    return SELU_SCALE * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def _activate(name: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Activation value and its elementwise derivative."""
    if name == "selu":
        sa = SELU_SCALE * SELU_ALPHA
        e = np.minimum(z, 0.0)
        np.exp(e, out=e)
        e *= sa  # derivative on the negative side
        a = np.maximum(z, 0.0)
        a *= SELU_SCALE
        a += e
        a -= sa
        return a, np.where(z > 0, SELU_SCALE, e)
    if name == "relu":
        pos = z > 0
        return np.where(pos, z, 0.0), pos.astype(float)
    if name == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    return z, np.ones_like(z)


def layer_norm(v, gain=None, shift=None, eps: float = LN_EPS):
    """Normalise each row of ``v`` to zero mean and unit variance, then scale and shift."""
    v = np.asarray(v, dtype=float)
    mu = v.mean(axis=-1, keepdims=True)
    var = v.var(axis=-1, keepdims=True)
    out = (v - mu) / np.sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if shift is not None:
        out = out + shift
    return out


def dropout(v, rate: float, rng: np.random.Generator | None = None, train: bool = True):
    """Inverted dropout; identity in eval mode or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    v = np.asarray(v, dtype=float)
    if not train or rate == 0.0:
        return v
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = rng.random(v.shape) >= rate
    return v * keep / (1.0 - rate)


# ---------------------------------------------------------------- forward / backward


class Tape:
    """Intermediate values of one forward pass; consumed by a single backward."""

    __slots__ = ("params", "version", "inputs", "cache", "single", "used")

    def __init__(self, params, inputs, single):
        self.params = params
        self.version = params.version
        self.inputs = inputs
        self.cache = []
        self.single = single
        self.used = False


def _as_batch(params: ParameterSet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ValueError(
            f"input has shape {x.shape}, network expects {params.spec.input_dim} features"
        )
    return x, single


def forward(params: ParameterSet, x, rng: np.random.Generator | None = None, keep_tape: bool = True):
    """Run the network on ``x`` of shape (d,) or (n, d).

    ``rng=None`` is eval mode (no dropout). With a generator, dropout masks are
    drawn from it (train mode). Returns ``(output, tape)``. A single-output head
    is squeezed to shape (n,), or to a float for a vector input.
    """
    spec = params.spec
    h, single = _as_batch(params, x)
    tape = Tape(params, h, single) if keep_tape else None
    train = rng is not None and spec.dropout_rate > 0
    n_hidden = len(spec.layer_widths)
    for i in range(n_hidden):
        layer = params.layers[i]
        z = h @ layer["weight"].T + layer["bias"]
        rec = {"h_in": h}
        if spec.layer_norm:
            zn = z - z.mean(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(np.einsum("ij,ij->i", zn, zn)[:, None] / zn.shape[1] + LN_EPS)
            zn *= inv
            z = zn * layer["gain"]
            z += layer["shift"]
            rec["zn"], rec["inv"] = zn, inv
        h, rec["da"] = _activate(spec.activation, z)
        if train:
            mask = (rng.random(h.shape) >= spec.dropout_rate) / (1.0 - spec.dropout_rate)
            h *= mask
            rec["da"] = rec["da"] * mask
        if tape is not None:
            tape.cache.append(rec)
    if spec.output_dim is not None:
        if tape is not None:
            tape.cache.append({"h_in": h})
        head = params.layers[n_hidden]
        h = h @ head["weight"].T + head["bias"]
    return _shape_output(spec, h, single), tape


def _shape_output(spec: NetworkSpec, out: np.ndarray, single: bool):
    if spec.output_dim == 1:
        out = out[:, 0]
        return float(out[0]) if single else out
    return out[0] if single else out


def apply(params: ParameterSet, x, rng: np.random.Generator | None = None):
    """Forward pass without recording a tape."""
    return forward(params, x, rng, keep_tape=False)[0]


def backward(tape: Tape, upstream) -> Gradient:
    """Gradient of ``sum(upstream * output)`` with respect to parameters and inputs.

    ``upstream`` broadcasts against the network output: a scalar, a per-row
    vector for single-output heads, or a full (n, out) array.
    """
    if tape is None or tape.used:
        raise StaleTapeError("tape already consumed")
    if tape.version != tape.params.version:
        raise StaleTapeError("parameters were modified after the forward pass")
    tape.used = True
    params = tape.params
    spec = params.spec
    n = tape.inputs.shape[0]
    g = np.asarray(upstream, dtype=float)
    if spec.output_dim == 1 and g.ndim == 1:
        g = g[:, None]
    g = np.broadcast_to(g, (n, spec.out_width))
    grad = params.zeros_like()
    n_hidden = len(spec.layer_widths)
    if spec.output_dim is not None:
        head = params.layers[n_hidden]
        h_in = tape.cache[n_hidden]["h_in"]
        grad.layers[n_hidden]["weight"] = g.T @ h_in
        grad.layers[n_hidden]["bias"] = g.sum(axis=0)
        g = g @ head["weight"]
    for i in reversed(range(n_hidden)):
        rec = tape.cache[i]
        layer = params.layers[i]
        gl = grad.layers[i]
        g = g * rec["da"]
        if spec.layer_norm:
            zn = rec["zn"]
            gl["gain"] = (g * zn).sum(axis=0)
            gl["shift"] = g.sum(axis=0)
            gz = g * layer["gain"]
            proj = np.einsum("ij,ij->i", gz, zn)[:, None] / zn.shape[1]
            gz -= gz.mean(axis=1, keepdims=True)
            gz -= zn * proj
            gz *= rec["inv"]
            g = gz
        gl["weight"] = g.T @ rec["h_in"]
        gl["bias"] = g.sum(axis=0)
        g = g @ layer["weight"]
    grad.input = g[0] if tape.single else g
    tape.cache = []
    return grad


# ---------------------------------------------------------------- checkpoints


def params_to_dict(params: ParameterSet) -> dict:
    return {"spec": params.spec.to_dict(), "params": params.flatten().tolist()}


def params_from_dict(d: dict) -> ParameterSet:
    spec = NetworkSpec.from_dict(d["spec"])
    return ParameterSet.unflatten(spec, np.asarray(d["params"], dtype=float))


def save_parameters(params: ParameterSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params), fh)


def load_parameters(path) -> ParameterSet:
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))
