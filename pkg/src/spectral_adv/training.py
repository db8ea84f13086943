"""Standard and adversarial training by mini-batch SGD with momentum."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from spectral_adv.attacks import run_attack
from spectral_adv.checkpoint import save_checkpoint
from spectral_adv.data import Dataset
from spectral_adv.evaluation import evaluate
from spectral_adv.exceptions import NonFiniteError, TrainingDivergedError
from spectral_adv.models import Model, parameter_gradients
from spectral_adv.schemas import AttackConfig, EpochMetrics, TrainConfig
from spectral_adv.spectral import SpectralPlan

log = logging.getLogger(__name__)


@dataclass
class TrainingResult:
    model: Model
    history: list[EpochMetrics] = field(default_factory=list)


def train_standard(
    model: Model,
    dataset: Dataset,
    cfg: TrainConfig,
    *,
    test: Dataset | None = None,
) -> TrainingResult:
    """Minimize mean cross-entropy on natural batches."""
    return _fit(model, dataset, cfg, None, test)


def train_adversarial(
    model: Model,
    dataset: Dataset,
    cfg: TrainConfig,
    *,
    test: Dataset | None = None,
) -> TrainingResult:
    """Minimize the loss on adversarial batches generated on the fly by ``cfg.attack``.

    The loss uses adversarial examples only. Batch ``b`` (counted across
    epochs) seeds its attack start with ``(attack.seed, b)``.
    """
    if cfg.attack is None:
        raise ValueError("adversarial training needs cfg.attack")
    return _fit(model, dataset, cfg, cfg.attack, test)


def _fit(
    model: Model,
    dataset: Dataset,
    cfg: TrainConfig,
    attack: AttackConfig | None,
    test: Dataset | None,
) -> TrainingResult:
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.image_shape != model.input_shape:
        raise ValueError(
            f"dataset images {dataset.image_shape} "
            f"do not fit model input {model.input_shape}"
        )
    model = model.copy()
    plan = SpectralPlan.for_shape(*dataset.image_shape[1:])
    rng = np.random.default_rng(cfg.seed)
    velocity = {name: np.zeros_like(value) for name, value in model.params.items()}
    result = TrainingResult(model)
    batch_counter = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        loss_sum = 0.0
        hits = 0
        for start in range(0, len(dataset), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            images, labels = dataset.images[idx], dataset.labels[idx]
            try:
                if attack is not None:
                    images = run_attack(
                        model, images, labels, attack, plan, batch_index=batch_counter
                    ).final
                loss, grads, correct = parameter_gradients(model, images, labels)
            except NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"non-finite value at epoch {epoch}, "
                    f"batch {start // cfg.batch_size}: {exc}"
                ) from exc
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss {loss} at epoch {epoch}")

            with np.errstate(over="ignore", invalid="ignore"):
                for name, grad in grads.items():
                    velocity[name] = cfg.momentum * velocity[name] + grad
                    step = cfg.learning_rate * velocity[name]
                    model.params[name] = model.params[name] - step
            overflowed = [
                name for name, p in model.params.items() if not np.all(np.isfinite(p))
            ]
            if overflowed:
                raise TrainingDivergedError(
                    f"parameters {overflowed} overflowed at epoch {epoch}, "
                    f"batch {start // cfg.batch_size}"
                )
            loss_sum += loss * len(labels)
            hits += int(correct.sum())
            batch_counter += 1

        metrics = EpochMetrics(
            epoch=epoch,
            train_loss=loss_sum / len(dataset),
            train_accuracy=hits / len(dataset),
        )
        if test is not None:
            natural = evaluate(model, test)
            metrics.test_loss = natural.mean_loss
            metrics.test_accuracy = natural.accuracy
            if attack is not None:
                metrics.adversarial_accuracy = evaluate(model, test, attack).accuracy
        result.history.append(metrics)
        log.info(
            "Epoch %d/%d: train loss %.4f, train acc %.4f, test acc %s, adv acc %s",
            epoch,
            cfg.epochs,
            metrics.train_loss,
            metrics.train_accuracy,
            metrics.test_accuracy,
            metrics.adversarial_accuracy,
        )
        if cfg.checkpoint_path is not None:
            save_checkpoint(model, cfg.checkpoint_path)

    return result
