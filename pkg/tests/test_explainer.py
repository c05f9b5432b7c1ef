import math
from collections import Counter
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_model, small_relu_model
from shapstab.ann import Layer, ModelError, ModelWeights, forward, forward_batch, init_model
from shapstab.data import DataTable
from shapstab.explainer import (
    AttributionResult,
    BackgroundDataset,
    ExplainError,
    explain_deep,
    explain_exact,
    sample_background,
)


def permutation_shapley(model, x, bg_rows):
    """Shapley values as the average marginal contribution over all V! orderings."""
    v = len(x)
    phi = np.zeros(v)

    def value(present):
        hybrid = np.where(np.array(present)[None, :], x[None, :], bg_rows)
        return np.mean([forward(model, row) for row in hybrid])

    orders = list(permutations(range(v)))
    for order in orders:
        present = [False] * v
        prev = value(present)
        for j in order:
            present[j] = True
            cur = value(present)
            phi[j] += cur - prev
            prev = cur
    return phi / len(orders)


def table(rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    return DataTable([f"v{j}" for j in range(rows.shape[1])], rows)


class TestSampleBackground:
    def test_full_training_set(self):
        t = table(np.arange(20.0).reshape(10, 2))
        bg = sample_background(t, 10, 3)
        assert bg.source_indices.tolist() == list(range(10))
        assert np.array_equal(bg.rows, t.rows)

    def test_deterministic(self):
        t = table(np.zeros((31442, 1)))
        a = sample_background(t, 100, 42)
        b = sample_background(t, 100, 42)
        assert np.array_equal(a.source_indices, b.source_indices)
        assert len(set(a.source_indices.tolist())) == 100

    def test_uniform_frequency(self):
        t = table(np.arange(10.0)[:, None])
        counts = Counter(int(sample_background(t, 1, s).source_indices[0]) for s in range(1000))
        assert set(counts) == set(range(10))
        assert all(60 <= c <= 140 for c in counts.values())

    @pytest.mark.parametrize("m", [0, 11])
    def test_size_bounds(self, m):
        with pytest.raises(ExplainError):
            sample_background(table(np.zeros((10, 1))), m, 0)

    def test_background_invariants(self):
        with pytest.raises(ExplainError):
            BackgroundDataset(np.zeros((2, 1)), [0, 0])
        with pytest.raises(ExplainError):
            BackgroundDataset(np.zeros((0, 1)), [])


class TestExplainDeep:
    def test_linear_analytic(self, rng):
        w = rng.normal(size=6)
        m = linear_model(w, 0.7)
        x = rng.normal(size=(15, 6))
        bg = BackgroundDataset.from_rows(rng.normal(size=(20, 6)))
        res = explain_deep(m, x, bg)
        expected = w[None, :] * (x - bg.rows.mean(axis=0)[None, :])
        np.testing.assert_allclose(res.shap, expected, rtol=0, atol=1e-12)

    def test_background_equals_instance(self):
        m, rng = small_relu_model(5, 6, seed=2)
        x = rng.normal(size=5)
        res = explain_deep(m, x[None, :], BackgroundDataset.from_rows(x))
        assert np.all(res.shap == 0.0)
        assert res.background_expectation == forward(m, x)

    def test_completeness_small_relu(self):
        m, rng = small_relu_model(3, 4, seed=1)
        x = rng.normal(size=(10, 3))
        bg = BackgroundDataset.from_rows(rng.normal(size=(5, 3)))
        res = explain_deep(m, x, bg)
        fx = np.array([forward(m, row) for row in x])
        fb = np.mean([forward(m, row) for row in bg.rows])
        np.testing.assert_allclose(res.shap.sum(axis=1), fx - fb, rtol=0, atol=1e-9)
        np.testing.assert_array_equal(res.predictions, fx)

    def test_identity_network_matches_exact(self, rng):
        layers = [
            Layer(rng.normal(size=(5, 4)), rng.normal(size=5), "identity"),
            Layer(rng.normal(size=(3, 5)), rng.normal(size=3), "identity"),
            Layer(rng.normal(size=(1, 3)), rng.normal(size=1), "identity"),
        ]
        m = ModelWeights(layers)
        x = rng.normal(size=(4, 4))
        bg = BackgroundDataset.from_rows(rng.normal(size=(7, 4)))
        deep = explain_deep(m, x, bg).shap
        for i in range(4):
            np.testing.assert_allclose(deep[i], explain_exact(m, x[i], bg), rtol=0, atol=1e-9)

    def test_background_permutation_invariance(self):
        m, rng = small_relu_model(6, 8, seed=3)
        x = rng.normal(size=(12, 6))
        rows = rng.normal(size=(30, 6))
        a = explain_deep(m, x, BackgroundDataset.from_rows(rows))
        b = explain_deep(m, x, BackgroundDataset.from_rows(rows[rng.permutation(30)]))
        np.testing.assert_allclose(a.shap, b.shap, rtol=0, atol=1e-14)
        assert a.background_expectation == pytest.approx(b.background_expectation, abs=1e-15)

    def test_block_boundaries_do_not_matter(self, monkeypatch):
        import shapstab.explainer as ex

        m, rng = small_relu_model(4, 5, seed=4)
        x = rng.normal(size=(9, 4))
        bg = BackgroundDataset.from_rows(rng.normal(size=(23, 4)))
        ref = explain_deep(m, x, bg).shap
        monkeypatch.setattr(ex, "_BLOCK_ELEMS", 9 * 5 * 3)  # three references per block
        np.testing.assert_allclose(explain_deep(m, x, bg).shap, ref, rtol=0, atol=1e-15)

    def test_dimension_mismatch(self):
        m = init_model(3, (2,), 0)
        with pytest.raises(ExplainError):
            explain_deep(m, np.zeros((1, 4)), BackgroundDataset.from_rows(np.zeros((1, 3))))

    def test_sign_agreement_rate(self):
        # The rescale rule only approximates Shapley values; most, not all,
        # instances agree in sign on the attributions that matter.
        agree = total = 0
        for seed in range(60):
            m, rng = small_relu_model(6, 4, seed=seed)
            bg = BackgroundDataset.from_rows(rng.normal(size=(20, 6)))
            x = rng.normal(size=(3, 6))
            deep = explain_deep(m, x, bg).shap
            for i in range(3):
                exact = explain_exact(m, x[i], bg)
                big = np.abs(exact) > 0.1 * np.abs(exact).max()
                agree += bool(np.all(np.sign(exact[big]) == np.sign(deep[i][big])))
                total += 1
        assert agree / total >= 0.9

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 12), hidden=st.integers(1, 9))
    def test_completeness_property(self, seed, m, hidden):
        model, rng = small_relu_model(5, hidden, seed=seed, bias_scale=1.0)
        x = rng.normal(scale=2.0, size=(6, 5))
        res = explain_deep(model, x, BackgroundDataset.from_rows(rng.normal(size=(m, 5))))
        target = res.predictions - res.background_expectation
        assert np.all(res.completeness_gap() <= 1e-6 * np.maximum(1.0, np.abs(target)))


class TestExplainExact:
    def test_linear(self, rng):
        w = rng.normal(size=5)
        m = linear_model(w, -0.2)
        x = rng.normal(size=5)
        bg = BackgroundDataset.from_rows(rng.normal(size=(9, 5)))
        np.testing.assert_allclose(explain_exact(m, x, bg), w * (x - bg.rows.mean(axis=0)), atol=1e-12)

    def test_symmetry(self):
        m = ModelWeights([Layer(np.array([[1.0, 1.0]]), np.zeros(1), "sigmoid")])
        bg = BackgroundDataset.from_rows([[0.2, -0.5], [-0.5, 0.2], [1.0, 1.0]])
        phi = explain_exact(m, np.array([0.8, 0.8]), bg)
        assert phi[0] == pytest.approx(phi[1], abs=1e-15)

    def test_single_player(self):
        m = ModelWeights([
            Layer(np.array([[1.5], [-2.0]]), np.array([0.1, 0.3]), "relu"),
            Layer(np.array([[1.0, 0.5]]), np.zeros(1), "sigmoid"),
        ])
        bg = BackgroundDataset.from_rows([[0.0], [1.0], [-2.0]])
        phi = explain_exact(m, np.array([0.7]), bg)
        expected = forward(m, [0.7]) - np.mean(forward_batch(m, bg.rows))
        assert phi[0] == pytest.approx(expected, abs=1e-15)

    def test_matches_permutation_oracle(self):
        m, rng = small_relu_model(4, 5, seed=6)
        x = rng.normal(size=4)
        bg_rows = rng.normal(size=(6, 4))
        phi = explain_exact(m, x, BackgroundDataset.from_rows(bg_rows))
        np.testing.assert_allclose(phi, permutation_shapley(m, x, bg_rows), rtol=0, atol=1e-13)

    def test_too_many_variables(self):
        m = init_model(13, (2,), 0)
        with pytest.raises(ExplainError):
            explain_exact(m, np.zeros(13), BackgroundDataset.from_rows(np.zeros((1, 13))))

    def test_dimension_mismatch(self):
        with pytest.raises(ModelError):
            explain_exact(init_model(3, (2,), 0), np.zeros(2), BackgroundDataset.from_rows(np.zeros((1, 2))))


def test_attribution_csv_round_trip(tmp_path):
    res = AttributionResult(np.array([[0.1, -0.2], [1 / 3, 0.0]]), 0.25, np.array([0.15, 0.5833]))
    res.write_csv(tmp_path / "a.csv", ["x", "y"])
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "x,y,prediction,expectation"
    back, names = AttributionResult.read_csv(tmp_path / "a.csv")
    assert names == ["x", "y"]
    assert back.shap.tobytes() == res.shap.tobytes()
    assert back.background_expectation == 0.25
    assert math.isclose(back.predictions[1], 0.5833)
