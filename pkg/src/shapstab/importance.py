"""Model-level variable importance and rankings from instance-level attributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Ranking:
    order: np.ndarray  # variable indices, most important first
    importance: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(len(order))):
            raise ValueError(f"order is not a permutation: {order.tolist()}")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "importance", np.asarray(self.importance, dtype=np.float64))

    def names(self, column_names) -> list[str]:
        return [column_names[j] for j in self.order]

    def positions(self) -> np.ndarray:
        """positions[j] = rank position of variable j (0 = most important)."""
        pos = np.empty_like(self.order)
        pos[self.order] = np.arange(len(self.order))
        return pos


def variable_importance(attr) -> np.ndarray:
    """I_j = sum over instances of |shap[i, j]|.

    Accepts an ``AttributionResult`` or a bare N x V matrix.
    """
    shap = np.asarray(getattr(attr, "shap", attr), dtype=np.float64)
    if shap.ndim != 2 or shap.size == 0:
        raise ValueError(f"empty attribution matrix (shape {shap.shape})")
    return np.abs(shap).sum(axis=0)


def rank_variables(importance) -> Ranking:
    """Descending importance; ties keep ascending variable index."""
    imp = np.asarray(importance, dtype=np.float64)
    if imp.ndim != 1 or imp.size == 0:
        raise ValueError("importance must be a non-empty vector")
    if not np.all(np.isfinite(imp)):
        raise ValueError("importance contains non-finite entries")
    # + 0.0 folds -0.0 into 0.0 so negation cannot reorder ties.
    order = np.argsort(-(imp + 0.0), kind="stable")
    return Ranking(order, imp)
