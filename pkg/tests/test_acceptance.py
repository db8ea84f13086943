"""Desk-scale MNIST runs.

These train real CNNs and take tens of minutes, so they only run when
SPECTRAL_ADV_MNIST_DIR points at the four IDX files::

    SPECTRAL_ADV_MNIST_DIR=~/data/mnist pytest -m slow
"""

import os
from pathlib import Path

import numpy as np
import pytest

from spectral_adv import reports
from spectral_adv.analysis import (
    SECURITY_EPSILONS,
    attack_step_table,
    band_energy,
    component_histograms,
    equivalence_table,
    gradient_heatmaps,
    security_curve,
    small_component_fraction,
)
from spectral_adv.attacks import run_attack
from spectral_adv.autodiff import finite_diff_gradient, max_relative_error
from spectral_adv.data import Dataset, load_mnist, subset
from spectral_adv.evaluation import evaluate
from spectral_adv.models import Architecture, Model, input_gradient
from spectral_adv.schemas import AttackConfig, AttackMethod, TrainConfig
from spectral_adv.spectral import verify_gradient_transport
from spectral_adv.training import train_adversarial, train_standard

MNIST_DIR = os.environ.get("SPECTRAL_ADV_MNIST_DIR")
SEED = 2024

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(MNIST_DIR is None, reason="SPECTRAL_ADV_MNIST_DIR not set"),
]

PGD_TRAIN = AttackConfig(method=AttackMethod.PGD, epsilon=0.3, step_size=0.01, steps=20)
SPGD_TRAIN = AttackConfig(
    method=AttackMethod.SPGD, epsilon=0.3, step_size=100.0, steps=20, momentum=0.75
)
PGD_100 = AttackConfig(method=AttackMethod.PGD, epsilon=0.3, step_size=0.01, steps=100)


# --- Fixtures ---


@pytest.fixture(scope="module")
def mnist() -> tuple[Dataset, Dataset]:
    """10k training and 1k test images, stratified."""
    assert MNIST_DIR is not None
    train = subset(load_mnist(MNIST_DIR, "train"), 10_000, SEED)
    test = subset(load_mnist(MNIST_DIR, "test"), 1_000, SEED)
    return train, test


def _train(train: Dataset, attack: AttackConfig | None) -> Model:
    model = Model.initialize(Architecture.mnist(), seed=SEED)
    cfg = TrainConfig(epochs=10, batch_size=50, seed=SEED, attack=attack)
    if attack is None:
        return train_standard(model, train, cfg).model
    return train_adversarial(model, train, cfg).model


@pytest.fixture(scope="module")
def standard_model(mnist) -> Model:
    """Ten epochs of plain SGD."""
    return _train(mnist[0], None)


@pytest.fixture(scope="module")
def pgd_model(mnist) -> Model:
    """Adversarially trained against PGD-0.01-20."""
    return _train(mnist[0], PGD_TRAIN)


@pytest.fixture(scope="module")
def spgd_model(mnist) -> Model:
    """Adversarially trained against SPGD-100-20."""
    return _train(mnist[0], SPGD_TRAIN)


# --- Numerical identities ---


def test_gradient_transport_on_trained_model(pgd_model: Model, mnist) -> None:
    """Spectral and pixel gradients agree to 1e-8 on 100 test images."""
    test = mnist[1]
    rng = np.random.default_rng(SEED)
    picked = test.take(np.sort(rng.choice(len(test), size=100, replace=False)))
    report = verify_gradient_transport(pgd_model, picked.images, picked.labels)
    assert report.max_rel_error < 1e-8
    assert report.scaled_max_rel_error < 1e-6


def test_finite_differences_on_mnist_cnn(mnist) -> None:
    """The full MNIST CNN matches central differences away from kinks."""
    model = Model.initialize(Architecture.mnist(), seed=SEED)
    sample = mnist[1].take(np.arange(2))
    picked = np.random.default_rng(SEED).choice(sample.images.size, 50, replace=False)
    estimate = finite_diff_gradient(
        model, sample.images, sample.labels, 1e-5, coordinates=picked
    )
    exact = input_gradient(model, sample.images, sample.labels).grad.reshape(-1)[picked]
    assert max_relative_error(exact, estimate) < 1e-4


# --- Attacks ---


def test_spgd_matches_nosign_pgd(pgd_model: Model, mnist, tmp_path: Path) -> None:
    """The two attacks track each other step by step on 1000 images, reproducibly."""
    cfg = SPGD_TRAIN.model_copy(update={"seed": SEED})
    report = equivalence_table(pgd_model, mnist[1], cfg)
    assert report.max_accuracy_gap <= 0.005
    assert report.max_loss_gap <= 0.005

    again = equivalence_table(pgd_model, mnist[1], cfg)
    first = reports.write_step_table(tmp_path / "a.csv", report.rows)
    second = reports.write_step_table(tmp_path / "b.csv", again.rows)
    assert first.read_bytes() == second.read_bytes()


def test_early_step_advantage(pgd_model: Model, mnist, tmp_path: Path) -> None:
    """SPGD's first step hurts more than PGD with alpha = eps/4, reproducibly."""
    cfgs = [
        SPGD_TRAIN.model_copy(update={"seed": SEED}),
        PGD_TRAIN.model_copy(update={"step_size": 0.075, "seed": SEED}),
    ]
    rows = attack_step_table(pgd_model, mnist[1], cfgs)
    spgd_first = next(r for r in rows if r.method == cfgs[0].label and r.step == 1)
    pgd_first = next(r for r in rows if r.method == cfgs[1].label and r.step == 1)
    assert spgd_first.adversarial_loss > pgd_first.adversarial_loss
    assert spgd_first.adversarial_accuracy < pgd_first.adversarial_accuracy

    for cfg in cfgs:
        accuracies = [r.adversarial_accuracy for r in rows if r.method == cfg.label]
        pairs = zip(accuracies, accuracies[1:], strict=False)
        assert all(b <= a + 0.005 for a, b in pairs)

    again = attack_step_table(pgd_model, mnist[1], cfgs)
    first = reports.write_step_table(tmp_path / "a.csv", rows)
    second = reports.write_step_table(tmp_path / "b.csv", again)
    assert first.read_bytes() == second.read_bytes()


def test_first_step_component_histograms(
    pgd_model: Model, mnist, tmp_path: Path
) -> None:
    """SPGD leaves more small components than PGD(alpha = eps); PGD is quantized."""
    sample = mnist[1].take(np.arange(100))
    spgd_trace = run_attack(pgd_model, sample.images, sample.labels, SPGD_TRAIN)
    pgd_full = PGD_TRAIN.model_copy(update={"step_size": 0.3, "steps": 1})
    pgd_trace = run_attack(pgd_model, sample.images, sample.labels, pgd_full)
    spgd_small = small_component_fraction(spgd_trace, 1)
    assert spgd_small > small_component_fraction(pgd_trace, 1)

    rerun = run_attack(pgd_model, sample.images, sample.labels, SPGD_TRAIN)
    for name, attacked in (("a", spgd_trace), ("b", rerun)):
        reports.write_histograms(
            tmp_path / f"{name}.csv",
            component_histograms(attacked) + component_histograms(pgd_trace),
        )
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    quantized = PGD_TRAIN.model_copy(
        update={"step_size": 0.1, "steps": 1, "random_init": False}
    )
    trace = run_attack(pgd_model, sample.images, sample.labels, quantized)
    delta = trace.components(1)
    nonzero = np.abs(delta[delta != 0.0])
    at_step = np.isclose(nonzero, 0.1, atol=1e-12)
    # the value range can cut a step short at 0 and 1
    clipped = np.isin(trace.final.reshape(-1)[delta != 0.0], (0.0, 1.0))
    assert np.all(at_step | clipped)
    assert sum(h.total for h in component_histograms(trace)) == delta.size


def test_gradient_energy_in_both_bands(pgd_model: Model, mnist) -> None:
    """Loss sensitivity is spread over low and high DCT frequencies."""
    test = mnist[1]
    heatmaps = gradient_heatmaps(pgd_model, test.images[0], int(test.labels[0]))
    energy = band_energy(heatmaps.freq_grad)
    assert energy.low >= 0.05
    assert energy.high >= 0.05


# --- Training ---


def test_adversarial_training_beats_standard(
    standard_model: Model, pgd_model: Model, mnist
) -> None:
    """PGD training buys robustness a standard model lacks."""
    test = mnist[1]
    assert evaluate(standard_model, test).accuracy >= 0.97
    robust = evaluate(pgd_model, test, PGD_100).accuracy
    assert robust > evaluate(standard_model, test, PGD_100).accuracy


def test_spgd_training_at_least_as_robust(
    pgd_model: Model, spgd_model: Model, mnist
) -> None:
    """Twenty SPGD steps train a model at least as robust as twenty PGD steps."""
    test = mnist[1]
    assert evaluate(pgd_model, test).accuracy >= 0.97
    assert evaluate(spgd_model, test).accuracy >= 0.97
    spgd_robust = evaluate(spgd_model, test, PGD_100).accuracy
    assert spgd_robust >= evaluate(pgd_model, test, PGD_100).accuracy


def test_security_curve_monotone(pgd_model: Model, mnist) -> None:
    """Accuracy falls with epsilon and starts at natural accuracy."""
    test = mnist[1]
    curve = security_curve(pgd_model, test, PGD_TRAIN, SECURITY_EPSILONS)
    assert curve.accuracies[0] == evaluate(pgd_model, test).accuracy
    pairs = zip(curve.accuracies, curve.accuracies[1:], strict=False)
    assert all(b <= a + 0.01 for a, b in pairs)
