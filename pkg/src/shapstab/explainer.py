"""SHAP attributions against a background sample.

``explain_deep`` applies the rescale rule layer by layer for every
(instance, reference) pair and averages over references. ``explain_exact``
enumerates every coalition of an interventional value function and is only
meant as a verification oracle for small inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .ann import ModelError, ModelWeights, activate, activation_derivative, forward_batch
from .data import DataTable

MAX_EXACT_VARS = 12

# Below this pre-activation gap the rescale ratio is replaced by the derivative.
RESCALE_EPS = 1e-7

# Target element count of one (instances x references x width) work buffer.
_BLOCK_ELEMS = 1 << 21


class ExplainError(ValueError):
    pass


@dataclass(frozen=True)
class BackgroundDataset:
    rows: np.ndarray
    source_indices: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        idx = np.asarray(self.source_indices, dtype=np.int64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ExplainError("background needs at least one row")
        if idx.shape != (rows.shape[0],):
            raise ExplainError("one source index per background row is required")
        if len(np.unique(idx)) != len(idx):
            raise ExplainError("background source indices must be unique")
        if not np.all(np.isfinite(rows)):
            raise ExplainError("background rows must be finite")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "source_indices", idx)

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def from_rows(cls, rows) -> BackgroundDataset:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        return cls(rows, np.arange(rows.shape[0]))


@dataclass
class AttributionResult:
    shap: np.ndarray  # (N, V)
    background_expectation: float
    predictions: np.ndarray  # (N,)

    def completeness_gap(self) -> np.ndarray:
        """|sum_j shap[i, j] - (prediction_i - expectation)| per instance."""
        return np.abs(self.shap.sum(axis=1) - (self.predictions - self.background_expectation))

    def write_csv(self, path, column_names=None) -> None:
        n_vars = self.shap.shape[1]
        names = list(column_names) if column_names is not None else [f"var_{j}" for j in range(n_vars)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names + ["prediction", "expectation"])
            e = format(self.background_expectation, ".17g")
            for row, p in zip(self.shap, self.predictions):
                writer.writerow([format(v, ".17g") for v in row] + [format(p, ".17g"), e])

    @classmethod
    def read_csv(cls, path) -> tuple[AttributionResult, list[str]]:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][-2:] != ["prediction", "expectation"]:
            raise ExplainError(f"{path}: not an attribution file")
        body = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=np.float64)
        body = body.reshape(-1, len(rows[0]))
        expectation = float(body[0, -1]) if len(body) else math.nan
        return cls(body[:, :-2], expectation, body[:, -2]), rows[0][:-2]


def sample_background(train: DataTable, m: int, seed: int) -> BackgroundDataset:
    """Uniform sample of ``m`` training rows without replacement, in ascending row order."""
    n = train.n_rows
    if not 1 <= m <= n:
        raise ExplainError(f"background size {m} must lie in [1, {n}] (training rows)")
    idx = np.sort(np.random.default_rng(seed).choice(n, size=m, replace=False))
    return BackgroundDataset(train.rows[idx], idx, seed)


def _as_matrix(instances) -> np.ndarray:
    x = instances.rows if isinstance(instances, DataTable) else np.asarray(instances, dtype=np.float64)
    return np.atleast_2d(x)


def _pre_activations(model: ModelWeights, x: np.ndarray):
    pre, post = [], []
    h = x
    for layer in model.layers:
        z = h @ layer.weight.T + layer.bias
        h = activate(layer.activation, z)
        pre.append(z)
        post.append(h)
    return pre, post


def _rescale(name, zx, zb, hx, hb):
    """Per-pair multipliers for an elementwise nonlinearity; shapes broadcast to (N, k, d)."""
    if name == "identity":
        return None
    dz = zx[:, None, :] - zb[None, :, :]
    dh = hx[:, None, :] - hb[None, :, :]
    small = np.abs(dz) <= RESCALE_EPS
    ratio = dh / np.where(small, 1.0, dz)
    if small.any():
        deriv = np.broadcast_to(activation_derivative(name, zx)[:, None, :], dz.shape)
        ratio = np.where(small, deriv, ratio)
    return ratio


def explain_deep(model: ModelWeights, instances, bg: BackgroundDataset) -> AttributionResult:
    """Rescale-rule attributions averaged over the background references.

    For each pair (x, b) the multiplier of each nonlinearity is
    ``(f(z_x) - f(z_b)) / (z_x - z_b)`` and multipliers are chained through
    the transposed weights, so ``sum_j m_j (x_j - b_j) = F(x) - F(b)`` holds
    for every pair. References are reduced in ascending order.
    """
    x = _as_matrix(instances)
    if x.shape[1] != model.n_inputs or bg.rows.shape[1] != model.n_inputs:
        raise ExplainError(
            f"model expects {model.n_inputs} variables; instances have {x.shape[1]}, "
            f"background has {bg.rows.shape[1]}"
        )
    n, v = x.shape
    refs = bg.rows
    predictions = forward_batch(model, x)
    expectation = float(np.mean(forward_batch(model, refs)))

    zx, hx = _pre_activations(model, x)
    width = max(model.dims)
    block = max(1, _BLOCK_ELEMS // max(1, n * width))
    total = np.zeros((n, v))
    layers = model.layers
    for start in range(0, refs.shape[0], block):
        b = refs[start:start + block]
        zb, hb = _pre_activations(model, b)
        k = b.shape[0]
        grad = None  # d output / d (pre-activation of layer l), shape (n, k, d_l)
        for l in range(len(layers) - 1, -1, -1):
            mult = _rescale(layers[l].activation, zx[l], zb[l], hx[l], hb[l])
            if grad is None:
                grad = np.ones((n, k, 1)) if mult is None else mult
            elif mult is not None:
                grad = grad * mult
            grad = grad @ layers[l].weight  # now w.r.t. this layer's input
        attr = grad * (x[:, None, :] - b[None, :, :])
        if not np.all(np.isfinite(attr)):
            raise ExplainError("non-finite attribution; the model is numerically pathological")
        for r in range(k):
            total += attr[:, r, :]
    shap = total / refs.shape[0]
    return AttributionResult(shap, expectation, predictions)


def shapley_weights(n_vars: int) -> np.ndarray:
    """w[s] = s! (V - s - 1)! / V! for coalition sizes s = 0 .. V-1."""
    f = math.factorial
    return np.array([f(s) * f(n_vars - s - 1) / f(n_vars) for s in range(n_vars)])


def coalition_values(model: ModelWeights, instance, bg: BackgroundDataset) -> np.ndarray:
    """v[mask] = mean_b F(x on mask, b elsewhere) for every bitmask over the variables."""
    x = np.asarray(instance, dtype=np.float64)
    v = x.shape[0]
    masks = ((np.arange(1 << v)[:, None] >> np.arange(v)[None, :]) & 1).astype(bool)
    values = np.empty(1 << v)
    # Chunk by coalitions so the hybrid batch stays bounded.
    per = max(1, (1 << 16) // bg.size)
    for start in range(0, 1 << v, per):
        mk = masks[start:start + per]
        hybrid = np.where(mk[:, None, :], x[None, None, :], bg.rows[None, :, :])
        out = forward_batch(model, hybrid.reshape(-1, v)).reshape(mk.shape[0], bg.size)
        values[start:start + per] = out.mean(axis=1)
    return values


def explain_exact(model: ModelWeights, instance, bg: BackgroundDataset) -> np.ndarray:
    """Exact interventional Shapley values by enumerating all 2^V coalitions."""
    x = np.asarray(instance, dtype=np.float64)
    if x.ndim != 1:
        raise ExplainError("explain_exact takes a single instance vector")
    v = x.shape[0]
    if v > MAX_EXACT_VARS:
        raise ExplainError(f"exact enumeration supports at most {MAX_EXACT_VARS} variables, got {v}")
    if v != model.n_inputs or bg.rows.shape[1] != v:
        raise ModelError(f"model expects {model.n_inputs} variables, got {v}")
    values = coalition_values(model, x, bg)
    weights = shapley_weights(v)
    masks = np.arange(1 << v)
    sizes = np.array([bin(s).count("1") for s in range(1 << v)])
    phi = np.zeros(v)
    for j in range(v):
        bit = 1 << j
        without = masks[(masks & bit) == 0]
        phi[j] = np.sum(weights[sizes[without]] * (values[without | bit] - values[without]))
    return phi
