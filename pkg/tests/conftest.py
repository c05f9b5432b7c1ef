import time

import numpy as np
import pytest

from shapstab.ann import Layer, ModelWeights, init_model, train
from shapstab.data import SplitSpec, generate_synthetic, split
from shapstab.explainer import BackgroundDataset

# Desk-scale study setup shared by the acceptance and simulation tests.
DESK = dict(n_train=5000, n_explain=1000, n_vars=21, data_seed=1, split_seed=2,
            model_seed=3, epochs=20, lr=0.05, sizes=(50, 100, 200, 400), sims=20, master_seed=11)


def small_relu_model(n_vars=6, hidden=4, seed=0, bias_scale=0.5):
    """Glorot ReLU/sigmoid net with random biases drawn from default_rng(seed)."""
    rng = np.random.default_rng(seed)
    base = init_model(n_vars, (hidden,), seed)
    return ModelWeights(
        [Layer(l.weight, rng.normal(0.0, bias_scale, l.n_out), l.activation) for l in base.layers]
    ), rng


def linear_model(w, b=0.0):
    w = np.asarray(w, dtype=float)
    return ModelWeights([Layer(w[None, :], np.array([b]), "identity")])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_tables():
    n = DESK["n_train"] + DESK["n_explain"]
    table = generate_synthetic(n, DESK["n_vars"], DESK["data_seed"])
    return split(table, SplitSpec(DESK["n_train"] / n, DESK["split_seed"]))


@pytest.fixture(scope="session")
def desk_model(desk_tables):
    train_table, _ = desk_tables
    return train(train_table, epochs=DESK["epochs"], learning_rate=DESK["lr"], seed=DESK["model_seed"])


@pytest.fixture(scope="session")
def desk_study(desk_tables, desk_model):
    """(report, wall-clock seconds) for the desk-scale study."""
    from shapstab.simulation import StudyConfig, run_study

    train_table, explain_table = desk_tables
    config = StudyConfig(desk_model, train_table, explain_table, DESK["sizes"], DESK["sims"], DESK["master_seed"])
    start = time.perf_counter()
    report = run_study(config)
    return report, time.perf_counter() - start


@pytest.fixture(scope="session")
def desk_report(desk_study):
    return desk_study[0]


# One line per acceptance criterion, filled by tests/test_acceptance.py.
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k.split()[0])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def background_from():
    return BackgroundDataset.from_rows
