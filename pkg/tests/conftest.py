"""Test fixtures for spectral-adv."""

from pathlib import Path

import numpy as np
import pytest

from spectral_adv.autodiff import Graph, LabelArray, Tensor
from spectral_adv.data import Dataset, synth_blobs
from spectral_adv.models import Architecture, Model, Objective

TINY_CNN = "input=1x8x8;range=0.0,1.0;layers=conv4x3,pool,conv4x3,pool,fc8,fc3"
TINY_MLP = "input=1x1x6;range=0.0,1.0;layers=fc8,fc3"


# --- Shared Test Models ---


class LinearScore:
    """Classifier whose loss is the mean score w . x over the batch.

    Logits are (w . x, -w . x), so class 0 wins whenever the score is positive.
    Its input gradient is ``w / N`` everywhere.
    """

    def __init__(self, weight: Tensor) -> None:
        self.weight = np.asarray(weight, dtype=np.float64)

    def objective(self, graph: Graph, x: int, labels: LabelArray) -> Objective:
        value = graph.value(x)
        n = value.shape[0]
        tiled = np.broadcast_to(self.weight, value.shape).copy()
        loss = graph.scale(graph.sum(graph.mul(x, graph.constant(tiled))), 1.0 / n)
        flat = graph.reshape(x, (n, -1))
        w = self.weight.reshape(-1)
        logits = graph.matmul(flat, graph.constant(np.stack([w, -w], axis=1)))
        return Objective(loss, logits)


# --- Model Fixtures ---


@pytest.fixture
def linear_weight() -> Tensor:
    """A fixed 1x8x8 weight pattern with both signs."""
    rng = np.random.default_rng(7)
    return rng.normal(size=(1, 8, 8))


@pytest.fixture
def linear_model(linear_weight: Tensor) -> LinearScore:
    """Linear score classifier over 1x8x8 inputs."""
    return LinearScore(linear_weight)


@pytest.fixture
def tiny_cnn() -> Model:
    """Two conv + pool blocks and two FC layers on 8x8 inputs, 3 classes."""
    return Model.initialize(Architecture.parse(TINY_CNN), seed=3)


@pytest.fixture
def tiny_mlp() -> Model:
    """Two-layer perceptron on 1x1x6 inputs, 3 classes."""
    return Model.initialize(Architecture.parse(TINY_MLP), seed=5)


# --- Data Fixtures ---


@pytest.fixture
def images() -> Tensor:
    """Four random 1x8x8 images in [0, 1]."""
    return np.random.default_rng(11).uniform(0.0, 1.0, size=(4, 1, 8, 8))


@pytest.fixture
def labels() -> LabelArray:
    """Labels for :func:`images`."""
    return np.array([0, 1, 2, 1], dtype=np.int64)


@pytest.fixture
def image_dataset(images: Tensor, labels: LabelArray) -> Dataset:
    """Small 8x8 dataset matching :func:`tiny_cnn`."""
    rng = np.random.default_rng(13)
    more = rng.uniform(0.0, 1.0, size=(8, 1, 8, 8))
    return Dataset(
        np.concatenate([images, more]),
        np.concatenate([labels, rng.integers(0, 3, size=8)]),
        (0.0, 1.0),
        "random-8x8",
        3,
    )


@pytest.fixture
def blobs() -> Dataset:
    """Three well-separated 6-dimensional Gaussian blobs, 30 points each."""
    return synth_blobs(classes=3, n_per_class=30, dims=6, separation=4.0, seed=0)


# --- Config Fixtures ---


@pytest.fixture
def blobs_config(tmp_path: Path) -> Path:
    """TOML run config for a fast synthetic run writing into ``tmp_path``."""
    path = tmp_path / "run.toml"
    path.write_text(
        f"""
seed = 1

[dataset]
source = "blobs"
blob_classes = 3
blob_per_class = 20
blob_dims = 6
blob_separation = 4.0

[model]
layers = "fc8,fc3"

[train]
epochs = 2
batch_size = 10
learning_rate = 0.05

[attacks.pgd]
method = "PGD"
epsilon = 0.1
step_size = 0.02
steps = 3

[attacks.spgd]
method = "SPGD"
epsilon = 0.1
step_size = 1.0
steps = 3
momentum = 0.75

[report]
output_dir = "{(tmp_path / 'out').as_posix()}"
eval_attacks = ["pgd", "spgd"]
step_table = ["pgd", "spgd"]
security_curve = ["pgd"]
epsilons = [0.0, 0.05, 0.1]
histograms = ["pgd", "spgd"]
histogram_bins = 11
histogram_samples = 6
heatmaps = 1

[verify]
samples = 3
fd_coordinates = 6
""",
        encoding="utf-8",
    )
    return path
