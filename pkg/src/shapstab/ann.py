"""Feed-forward network: weights, inference, gradient-descent training, text persistence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DataTable

ACTIVATIONS = ("relu", "sigmoid", "identity")
DEFAULT_HIDDEN = (128, 64)
FORMAT_TAG = "shapstab-mlp v1"

# Rows per slab in forward_batch; bounds the (rows, out, in) product buffer.
_SLAB = 256


class ModelError(ValueError):
    """Invalid model structure, malformed model file, or input dimension mismatch."""


def sigmoid(z):
    # Split by sign so that exp never overflows.
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(name: str, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "identity":
        return z
    raise ModelError(f"unknown activation {name!r}")


def activation_derivative(name: str, z):
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    if name == "identity":
        return np.ones_like(z)
    raise ModelError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


class ModelWeights:
    """An MLP as an ordered list of dense layers. Validated on construction."""

    def __init__(self, layers: Sequence[Layer]):
        layers = [
            Layer(
                np.array(l.weight, dtype=np.float64, copy=True),
                np.array(l.bias, dtype=np.float64, copy=True),
                l.activation,
            )
            for l in layers
        ]
        if not layers:
            raise ModelError("a model needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ModelError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.weight.shape[0],):
                raise ModelError(
                    f"layer {k}: weight {layer.weight.shape} and bias {layer.bias.shape} do not match"
                )
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ModelError(f"layer {k}: non-finite parameters")
            if k > 0 and layer.n_in != layers[k - 1].n_out:
                raise ModelError(
                    f"layer {k} expects {layer.n_in} inputs but layer {k - 1} has {layers[k - 1].n_out} outputs"
                )
            layer.weight.setflags(write=False)
            layer.bias.setflags(write=False)
        if layers[-1].n_out != 1:
            raise ModelError(f"final layer must have one output, has {layers[-1].n_out}")
        self.layers = tuple(layers)

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_in

    @property
    def dims(self) -> list[int]:
        return [self.n_inputs] + [l.n_out for l in self.layers]

    def __eq__(self, other):
        if not isinstance(other, ModelWeights) or len(self.layers) != len(other.layers):
            return NotImplemented
        return all(
            a.activation == b.activation
            and np.array_equal(a.weight, b.weight)
            and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )

    def __repr__(self):
        acts = ",".join(l.activation for l in self.layers)
        return f"ModelWeights(dims={self.dims}, activations={acts})"


def init_model(
    n_inputs: int,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    seed: int = 0,
    hidden_activation: str = "relu",
    output_activation: str = "sigmoid",
) -> ModelWeights:
    """Glorot-uniform weights, zero biases."""
    if n_inputs < 1 or any(h < 1 for h in hidden):
        raise ModelError(f"layer sizes must be >= 1, got {n_inputs} and {list(hidden)}")
    rng = np.random.default_rng(seed)
    dims = [n_inputs, *hidden, 1]
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        act = output_activation if k == len(dims) - 2 else hidden_activation
        layers.append(
            Layer(rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out), act)
        )
    return ModelWeights(layers)


def _check_width(model: ModelWeights, width: int):
    if width != model.n_inputs:
        raise ModelError(f"model expects {model.n_inputs} variables, input has {width}")


def _dense_rowwise(x: np.ndarray, layer: Layer) -> np.ndarray:
    # Each output is a reduction over one contiguous row of (x * W), so the
    # result for a row does not depend on which other rows share the batch.
    return (x[:, None, :] * layer.weight[None, :, :]).sum(axis=-1) + layer.bias


def forward_batch(model: ModelWeights, table) -> np.ndarray:
    """Model output for every row of ``table`` (a DataTable or an N x V array).

    Bit-identical to calling :func:`forward` on each row.
    """
    x = table.rows if isinstance(table, DataTable) else np.asarray(table, dtype=np.float64)
    if x.ndim != 2:
        raise ModelError(f"expected a 2-D batch, got shape {x.shape}")
    _check_width(model, x.shape[1])
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], _SLAB):
        h = x[start:start + _SLAB]
        for layer in model.layers:
            h = activate(layer.activation, _dense_rowwise(h, layer))
        out[start:start + _SLAB] = h[:, 0]
    return out


def forward(model: ModelWeights, instance) -> float:
    x = np.asarray(instance, dtype=np.float64)
    if x.ndim != 1:
        raise ModelError(f"expected a single instance vector, got shape {x.shape}")
    return float(forward_batch(model, x[None, :])[0])


def predict_fast(model: ModelWeights, x: np.ndarray) -> np.ndarray:
    """Matmul-based forward pass. Same values as forward_batch up to rounding."""
    h = np.asarray(x, dtype=np.float64)
    _check_width(model, h.shape[1])
    for layer in model.layers:
        h = activate(layer.activation, h @ layer.weight.T + layer.bias)
    return h[:, 0]


def _clipped(p: np.ndarray) -> np.ndarray:
    eps = 1e-15
    return np.clip(p, eps, 1.0 - eps)


def log_loss(model: ModelWeights, x: np.ndarray, y: np.ndarray) -> float:
    p = _clipped(predict_fast(model, x))
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def loss_and_gradients(model: ModelWeights, x: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy and its gradients.

    Returns ``(loss, grads)`` with ``grads`` a list of ``(dW, db)`` per layer.
    The output layer must be sigmoid.
    """
    if model.layers[-1].activation != "sigmoid":
        raise ModelError("log-loss training requires a sigmoid output layer")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    pre, post = [], [x]
    h = x
    for layer in model.layers:
        z = h @ layer.weight.T + layer.bias
        h = activate(layer.activation, z)
        pre.append(z)
        post.append(h)

    z_out = pre[-1][:, 0]
    # log(1 + exp(-z)) and log(1 + exp(z)) in overflow-safe form.
    loss = float(np.mean(y * np.logaddexp(0.0, -z_out) + (1 - y) * np.logaddexp(0.0, z_out)))

    grads = [None] * len(model.layers)
    delta = ((post[-1][:, 0] - y) / n)[:, None]  # d loss / d z_out
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        grads[k] = (delta.T @ post[k], delta.sum(axis=0))
        if k > 0:
            prev = model.layers[k - 1]
            delta = (delta @ layer.weight) * activation_derivative(prev.activation, pre[k - 1])
    return loss, grads


def train(
    table: DataTable,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    epochs: int = 20,
    learning_rate: float = 0.05,
    seed: int = 0,
    batch_size: int = 64,
) -> ModelWeights:
    """Minibatch gradient descent on log loss from a seeded Glorot initialization."""
    if table.labels is None:
        raise ModelError("training requires a labelled table")
    if epochs < 0 or batch_size < 1:
        raise ValueError("epochs must be >= 0 and batch_size >= 1")
    model = init_model(table.n_vars, hidden, seed)
    if epochs == 0:
        return model

    rng = np.random.default_rng([seed, 1])
    x, y = table.rows, table.labels.astype(np.float64)
    weights = [np.array(l.weight) for l in model.layers]
    biases = [np.array(l.bias) for l in model.layers]
    acts = [l.activation for l in model.layers]
    for _ in range(epochs):
        order = rng.permutation(table.n_rows)
        for start in range(0, table.n_rows, batch_size):
            idx = order[start:start + batch_size]
            current = ModelWeights([Layer(w, b, a) for w, b, a in zip(weights, biases, acts)])
            _, grads = loss_and_gradients(current, x[idx], y[idx])
            for k, (dw, db) in enumerate(grads):
                weights[k] -= learning_rate * dw
                biases[k] -= learning_rate * db
    return ModelWeights([Layer(w, b, a) for w, b, a in zip(weights, biases, acts)])


def save_model(model: ModelWeights, path) -> None:
    """Text format: a header line, one ``layer`` line per layer, then row-major parameters."""
    lines = [FORMAT_TAG, f"layers {len(model.layers)}"]
    for layer in model.layers:
        lines.append(f"layer {layer.n_in} {layer.n_out} {layer.activation}")
    for k, layer in enumerate(model.layers):
        lines.append(f"weight {k}")
        lines.extend(" ".join(format(v, ".17g") for v in row) for row in layer.weight)
        lines.append(f"bias {k}")
        lines.append(" ".join(format(v, ".17g") for v in layer.bias))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> ModelWeights:
    text = Path(path).read_text().splitlines()
    lines = iter(enumerate(text, start=1))

    def take(expect=None):
        try:
            num, line = next(lines)
        except StopIteration:
            raise ModelError(f"{path}: unexpected end of file") from None
        if expect is not None and not line.startswith(expect):
            raise ModelError(f"{path}:{num}: expected {expect!r}, got {line!r}")
        return num, line

    def numbers(num, line, count):
        try:
            vals = [float(t) for t in line.split()]
        except ValueError:
            raise ModelError(f"{path}:{num}: non-numeric parameter") from None
        if len(vals) != count:
            raise ModelError(f"{path}:{num}: expected {count} values, got {len(vals)}")
        return vals

    num, line = take()
    if line.strip() != FORMAT_TAG:
        raise ModelError(f"{path}: not a model file (header {line!r})")
    num, line = take("layers")
    try:
        n_layers = int(line.split()[1])
    except (IndexError, ValueError):
        raise ModelError(f"{path}:{num}: malformed layer count") from None
    if n_layers < 1:
        raise ModelError(f"{path}: empty layer list")
    shapes = []
    for _ in range(n_layers):
        num, line = take("layer ")
        parts = line.split()
        if len(parts) != 4:
            raise ModelError(f"{path}:{num}: malformed layer line {line!r}")
        try:
            n_in, n_out = int(parts[1]), int(parts[2])
        except ValueError:
            raise ModelError(f"{path}:{num}: malformed layer dims") from None
        if n_in < 1 or n_out < 1:
            raise ModelError(f"{path}:{num}: layer dims must be positive")
        shapes.append((n_in, n_out, parts[3]))
    for k in range(1, n_layers):
        if shapes[k][0] != shapes[k - 1][1]:
            raise ModelError(
                f"{path}: dimension chain broken between layer {k - 1} ({shapes[k - 1][1]} out) "
                f"and layer {k} ({shapes[k][0]} in)"
            )

    layers = []
    for k, (n_in, n_out, act) in enumerate(shapes):
        take(f"weight {k}")
        w = [numbers(*take(), n_in) for _ in range(n_out)]
        take(f"bias {k}")
        b = numbers(*take(), n_out)
        layers.append(Layer(np.array(w), np.array(b), act))
    return ModelWeights(layers)
