"""Natural and adversarial evaluation, and the attack hyperparameter searches."""

from __future__ import annotations

import logging
from collections.abc import Iterable
from typing import TYPE_CHECKING

import numpy as np

from spectral_adv.attacks import run_attack
from spectral_adv.autodiff import Graph
from spectral_adv.models import correctness
from spectral_adv.schemas import AttackConfig, EvaluationResult
from spectral_adv.spectral import SpectralPlan

if TYPE_CHECKING:
    from spectral_adv.data import Dataset
    from spectral_adv.models import Classifier

log = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 200


def evaluate(
    model: Classifier,
    dataset: Dataset,
    attack: AttackConfig | None = None,
    *,
    batch_size: int = EVAL_BATCH_SIZE,
) -> EvaluationResult:
    """Accuracy and mean loss, natural or after the final attack step.

    Batch ``i`` of an attacked evaluation draws its random start from
    ``(attack.seed, i)``, so equal seeds give equal starts across methods.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    plan = SpectralPlan.for_shape(*dataset.image_shape[1:])
    hits = 0
    loss_sum = 0.0
    for index, (images, labels) in enumerate(dataset.batches(batch_size)):
        if attack is None:
            graph = Graph()
            objective = model.objective(graph, graph.constant(images), labels)
            loss = float(graph.value(objective.loss))
            hits += int(correctness(graph, objective, labels).sum())
        else:
            trace = run_attack(model, images, labels, attack, plan, batch_index=index)
            loss = trace.losses[-1]
            hits += int(trace.correct[-1].sum())
        loss_sum += loss * len(labels)
    n = len(dataset)
    result = EvaluationResult(accuracy=hits / n, mean_loss=loss_sum / n)
    log.debug(
        "Evaluated %s under %s: %s",
        dataset.name,
        attack.label if attack else "no attack",
        result,
    )
    return result


def _search(
    model: Classifier,
    dataset: Dataset,
    cfg: AttackConfig,
    field: str,
    candidates: Iterable[float],
) -> float:
    values = sorted(set(candidates))
    if not values:
        raise ValueError(f"no candidate values for {field}")
    best_value = values[0]
    best_accuracy = np.inf
    for value in values:
        trial = AttackConfig.model_validate({**cfg.model_dump(), field: value})
        accuracy = evaluate(model, dataset, trial).accuracy
        log.info("%s=%g -> adversarial accuracy %.4f", field, value, accuracy)
        # strict improvement only, so ties stay with the smaller value
        if accuracy < best_accuracy:
            best_value, best_accuracy = value, accuracy
        elif accuracy == best_accuracy:
            log.warning(
                "%s=%g ties %s=%g at %.4f; keeping %g",
                field,
                value,
                field,
                best_value,
                accuracy,
                best_value,
            )
    return best_value


def search_step_size(
    model: Classifier,
    dataset: Dataset,
    candidate_alphas: Iterable[float],
    cfg: AttackConfig,
) -> float:
    """Step size minimizing adversarial accuracy; ties go to the smaller one."""
    alphas = list(candidate_alphas)
    if any(a < 0 for a in alphas):
        raise ValueError(f"step sizes must be non-negative, got {alphas}")
    return _search(model, dataset, cfg, "step_size", alphas)


def search_momentum(
    model: Classifier,
    dataset: Dataset,
    candidate_mus: Iterable[float],
    cfg: AttackConfig,
) -> float:
    """Momentum factor minimizing adversarial accuracy; ties go to the smaller."""
    mus = list(candidate_mus)
    if any(not 0.0 <= m <= 1.0 for m in mus):
        raise ValueError(f"momentum factors must lie in [0, 1], got {mus}")
    return _search(model, dataset, cfg, "momentum", mus)
