import numpy as np
import pytest

from latentconn.nnet import DenseLayer, Network
from latentconn.vae import TrainConfig, VaeModel, build_model, set_cohort_stats

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_inputs(rng, n_subjects=12, n_nodes=5):
    n_edges = n_nodes * (n_nodes - 1) // 2
    edges = rng.uniform(0.05, 0.95, size=(n_subjects, n_edges))
    ages = rng.uniform(6, 40, size=n_subjects) / 100.0
    return np.column_stack([edges, ages])


@pytest.fixture
def small_model(rng):
    """Randomly initialized 5-node (10-edge) model with cohort stats attached."""
    model = build_model(10, TrainConfig(hidden=(6, 6), seed=3))
    for p in model.parameters():
        if p.ndim == 1:
            p[:] = rng.uniform(-0.3, 0.3, p.shape)
    set_cohort_stats(model, toy_inputs(rng, 20))
    return model


@pytest.fixture
def linear_model(rng):
    """Decoder with identity activations everywhere, so outputs are affine in z."""
    n_edges, hidden = 10, 4

    def layer(n_out, n_in, act="identity"):
        return DenseLayer(rng.normal(0, 0.3, (n_out, n_in)), rng.normal(0, 0.1, n_out), act)

    model = VaeModel(
        encoder=Network([layer(hidden, n_edges + 1, "rectifier")]),
        mu_head=Network([layer(2, hidden)]),
        logvar_head=Network([layer(2, hidden)]),
        decoder=Network([layer(hidden, 3), layer(n_edges, hidden)]),
        config=TrainConfig(hidden=(hidden,)),
    )
    model.cohort_mean = np.array([0.3, -0.2])
    model.cohort_sd = np.array([0.8, 1.1])
    model.mean_age = 16.5
    return model
