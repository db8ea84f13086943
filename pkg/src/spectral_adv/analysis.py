"""Histograms, gradient heatmaps, attack-step tables and security curves."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from spectral_adv.attacks import PerturbationTrace, run_attack, spectral_gradient
from spectral_adv.autodiff import Tensor, as_tensor
from spectral_adv.evaluation import EVAL_BATCH_SIZE, evaluate
from spectral_adv.exceptions import ShapeError
from spectral_adv.models import input_gradient
from spectral_adv.schemas import (
    AttackConfig,
    AttackMethod,
    BandEnergy,
    EquivalenceReport,
    Histogram,
    SecurityCurve,
    StepTableRow,
)
from spectral_adv.spectral import SpectralPlan, dct2

if TYPE_CHECKING:
    from spectral_adv.data import Dataset
    from spectral_adv.models import Classifier

log = logging.getLogger(__name__)

DEFAULT_BINS = 101
HISTOGRAM_SPAN = 1.25
SECURITY_EPSILONS = (0.0, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)


# --- Perturbation histograms ---


def component_histograms(
    trace: PerturbationTrace, bins: int = DEFAULT_BINS
) -> list[Histogram]:
    """One histogram of flattened perturbation components per attack step.

    Bins cover [-1.25 eps, 1.25 eps] so mass sitting at +-eps is interior.
    """
    if bins < 2:
        raise ValueError(f"need at least two bins, got {bins}")
    if len(trace) == 0:
        raise ValueError("cannot histogram an empty trace")
    half_width = HISTOGRAM_SPAN * trace.epsilon if trace.epsilon > 0 else 1.0
    edges = np.linspace(-half_width, half_width, bins + 1)
    histograms = []
    for step in range(1, len(trace) + 1):
        values = np.clip(trace.components(step), -half_width, half_width)
        counts, _ = np.histogram(values, bins=edges)
        histograms.append(
            Histogram(
                bin_edges=edges.tolist(),
                counts=counts.tolist(),
                step=step,
                method=trace.method,
                epsilon=trace.epsilon,
            )
        )
    return histograms


def small_component_fraction(
    trace: PerturbationTrace, step: int, ratio: float = 0.5
) -> float:
    """Fraction of components with |delta| < ratio * eps at 1-based ``step``."""
    components = trace.components(step)
    return float(np.mean(np.abs(components) < ratio * trace.epsilon))


def value_mapping(
    gradients: Tensor, alpha: float, epsilon: float
) -> tuple[Tensor, Tensor]:
    """First-step perturbation per gradient value, from x_nat without random start.

    Returns (sign then projection, projection only).
    """
    gradients = as_tensor(gradients)
    signed = np.clip(alpha * np.sign(gradients), -epsilon, epsilon)
    unsigned = np.clip(alpha * gradients, -epsilon, epsilon)
    return signed, unsigned


# --- Gradient heatmaps ---


@dataclass(frozen=True)
class GradientHeatmaps:
    """Raw channel-summed gradients of one image in pixel and frequency domains."""

    pixel_grad: Tensor
    freq_grad: Tensor


def gradient_heatmaps(
    model: Classifier,
    x: Tensor,
    label: int,
    plan: SpectralPlan | None = None,
) -> GradientHeatmaps:
    """Pixel gradient and DCT-coefficient gradient of the loss at one image."""
    x = as_tensor(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] != 1:
        raise ShapeError(f"expected a single image, got shape {x.shape}")
    plan = plan or SpectralPlan.for_input(x)
    labels = np.array([label], dtype=np.int64)
    pixel = input_gradient(model, x, labels).grad
    freq = spectral_gradient(model, dct2(plan, x), labels, plan).grad
    return GradientHeatmaps(
        pixel_grad=pixel[0].sum(axis=0), freq_grad=freq[0].sum(axis=0)
    )


def band_energy(freq_grad: Tensor) -> BandEnergy:
    """Energy share in the lowest and highest quartiles of the index sum k1 + k2."""
    freq_grad = as_tensor(freq_grad)
    if freq_grad.ndim != 2:
        raise ShapeError(f"expected an HxW coefficient grid, got {freq_grad.shape}")
    k1, k2 = np.indices(freq_grad.shape)
    order = k1 + k2
    energy = freq_grad**2
    total = float(energy.sum())
    if total == 0.0:
        return BandEnergy(low=0.0, high=0.0, total=0.0)
    low = energy[order <= np.quantile(order, 0.25)].sum() / total
    high = energy[order >= np.quantile(order, 0.75)].sum() / total
    return BandEnergy(low=float(low), high=float(high), total=total)


# --- Attack-step tables ---


def attack_step_table(
    model: Classifier,
    dataset: Dataset,
    cfgs: Sequence[AttackConfig],
    *,
    batch_size: int = EVAL_BATCH_SIZE,
) -> list[StepTableRow]:
    """Per-step adversarial accuracy and mean loss for every attack on the same data."""
    if not cfgs:
        return []
    if len({(c.epsilon, c.value_range) for c in cfgs}) != 1:
        raise ValueError(
            "attack_step_table needs configs sharing epsilon and value_range"
        )
    plan = SpectralPlan.for_shape(*dataset.image_shape[1:])
    rows: list[StepTableRow] = []
    for cfg in cfgs:
        hits = np.zeros(cfg.steps)
        loss_sums = np.zeros(cfg.steps)
        for index, (images, labels) in enumerate(dataset.batches(batch_size)):
            trace = run_attack(model, images, labels, cfg, plan, batch_index=index)
            hits += [c.sum() for c in trace.correct]
            loss_sums += np.asarray(trace.losses) * len(labels)
        n = len(dataset)
        rows.extend(
            StepTableRow(
                method=cfg.label,
                step=step + 1,
                adversarial_accuracy=float(hits[step] / n),
                adversarial_loss=float(loss_sums[step] / n),
            )
            for step in range(cfg.steps)
        )
        log.info(
            "%s: step-1 acc %.4f, step-%d acc %.4f",
            cfg.label,
            hits[0] / n,
            cfg.steps,
            hits[-1] / n,
        )
    return rows


def equivalence_table(
    model: Classifier,
    dataset: Dataset,
    spgd_cfg: AttackConfig,
    *,
    batch_size: int = EVAL_BATCH_SIZE,
) -> EquivalenceReport:
    """Run SPGD and its sign-free pixel-domain twin with one seed and compare steps."""
    if spgd_cfg.method is not AttackMethod.SPGD:
        raise ValueError(f"expected an SPGD config, got {spgd_cfg.method.value}")
    twin = AttackConfig.model_validate(
        {**spgd_cfg.model_dump(), "method": AttackMethod.NOSIGN_PGD, "name": None}
    )
    rows = attack_step_table(model, dataset, [spgd_cfg, twin], batch_size=batch_size)
    spectral_rows, pixel_rows = rows[: spgd_cfg.steps], rows[spgd_cfg.steps :]
    pairs = list(zip(spectral_rows, pixel_rows, strict=True))
    return EquivalenceReport(
        rows=rows,
        max_accuracy_gap=max(
            abs(a.adversarial_accuracy - b.adversarial_accuracy) for a, b in pairs
        ),
        max_loss_gap=max(
            abs(a.adversarial_loss - b.adversarial_loss) for a, b in pairs
        ),
    )


# --- Security curves ---


def security_curve(
    model: Classifier,
    dataset: Dataset,
    attack_template: AttackConfig,
    epsilons: Sequence[float],
    *,
    model_label: str = "model",
    batch_size: int = EVAL_BATCH_SIZE,
) -> SecurityCurve:
    """Adversarial accuracy per epsilon; the epsilon = 0 point is natural accuracy."""
    epsilons = list(epsilons)
    if not epsilons or epsilons[0] != 0.0:
        raise ValueError("epsilons must start at 0")
    accuracies = []
    for epsilon in epsilons:
        if epsilon == 0.0:
            accuracies.append(evaluate(model, dataset, batch_size=batch_size).accuracy)
            continue
        cfg = AttackConfig.model_validate(
            {**attack_template.model_dump(), "epsilon": epsilon}
        )
        accuracies.append(evaluate(model, dataset, cfg, batch_size=batch_size).accuracy)
    curve = SecurityCurve(
        epsilons=epsilons,
        accuracies=accuracies,
        attack=attack_template.label,
        defense_model=model_label,
    )
    log.info("Security curve %s vs %s: %s", curve.attack, model_label, accuracies)
    return curve


def security_matrix(
    models: Mapping[str, Classifier],
    dataset: Dataset,
    attacks: Sequence[AttackConfig],
    epsilons: Sequence[float] = SECURITY_EPSILONS,
    *,
    batch_size: int = EVAL_BATCH_SIZE,
) -> list[SecurityCurve]:
    """Every (attack, defense model) pair over the epsilon grid, attack-major."""
    return [
        security_curve(
            model,
            dataset,
            attack,
            epsilons,
            model_label=label,
            batch_size=batch_size,
        )
        for attack in attacks
        for label, model in models.items()
    ]
