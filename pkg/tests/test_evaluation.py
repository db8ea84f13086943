"""Tests for natural/adversarial evaluation and the hyperparameter searches."""

from unittest.mock import patch

import numpy as np
import pytest

from spectral_adv import evaluation
from spectral_adv.data import Dataset
from spectral_adv.evaluation import evaluate, search_momentum, search_step_size
from spectral_adv.models import Model
from spectral_adv.schemas import AttackConfig, AttackMethod, EvaluationResult


def test_natural_accuracy_matches_predictions(
    tiny_cnn: Model, image_dataset: Dataset
) -> None:
    """Natural accuracy is the fraction of argmax hits."""
    result = evaluate(tiny_cnn, image_dataset, batch_size=5)
    expected = np.mean(tiny_cnn.predict(image_dataset.images) == image_dataset.labels)
    assert result.accuracy == pytest.approx(expected)
    assert result.mean_loss > 0


def test_batch_size_does_not_change_natural_result(
    tiny_cnn: Model, image_dataset
) -> None:
    """Batching only regroups the mean."""
    a = evaluate(tiny_cnn, image_dataset, batch_size=3)
    b = evaluate(tiny_cnn, image_dataset, batch_size=12)
    assert a.accuracy == b.accuracy
    assert a.mean_loss == pytest.approx(b.mean_loss)


def test_attack_does_not_help(tiny_cnn: Model, image_dataset) -> None:
    """Adversarial loss is at least the natural loss for a strong PGD."""
    cfg = AttackConfig(method=AttackMethod.PGD, epsilon=0.2, step_size=0.05, steps=5)
    natural = evaluate(tiny_cnn, image_dataset)
    attacked = evaluate(tiny_cnn, image_dataset, cfg)
    assert attacked.mean_loss >= natural.mean_loss


def test_zero_epsilon_equals_natural(tiny_cnn: Model, image_dataset) -> None:
    """eps=0 attacks leave accuracy and loss unchanged."""
    cfg = AttackConfig(method=AttackMethod.PGD, epsilon=0.0, steps=2)
    natural = evaluate(tiny_cnn, image_dataset)
    attacked = evaluate(tiny_cnn, image_dataset, cfg)
    assert attacked.accuracy == natural.accuracy
    assert attacked.mean_loss == pytest.approx(natural.mean_loss)


def test_empty_dataset(tiny_cnn: Model) -> None:
    """Evaluating nothing is an error."""
    empty = Dataset(
        np.zeros((0, 1, 8, 8)), np.zeros(0, dtype=np.int64), (0.0, 1.0), "e", 3
    )
    with pytest.raises(ValueError, match="empty"):
        evaluate(tiny_cnn, empty)


def _fake_evaluate(accuracy_by_value: dict[float, float], field: str):
    def fake(model, dataset, attack=None, **kwargs):
        accuracy = accuracy_by_value[getattr(attack, field)]
        return EvaluationResult(accuracy=accuracy, mean_loss=0.0)

    return fake


def test_step_size_search_picks_minimum(tiny_cnn: Model, image_dataset) -> None:
    """The step size with the lowest adversarial accuracy wins."""
    table = {1.0: 0.5, 10.0: 0.3, 100.0: 0.1, 1000.0: 0.2}
    cfg = AttackConfig(method=AttackMethod.SPGD, momentum=0.75)
    with patch.object(evaluation, "evaluate", _fake_evaluate(table, "step_size")):
        assert search_step_size(tiny_cnn, image_dataset, table, cfg) == 100.0


def test_step_size_search_tie_goes_to_smaller(tiny_cnn: Model, image_dataset) -> None:
    """Equal accuracies resolve toward the smaller step size."""
    table = {10.0: 0.2, 1.0: 0.2}
    cfg = AttackConfig(method=AttackMethod.SPGD)
    with patch.object(evaluation, "evaluate", _fake_evaluate(table, "step_size")):
        assert search_step_size(tiny_cnn, image_dataset, [10.0, 1.0], cfg) == 1.0


def test_momentum_search(tiny_cnn: Model, image_dataset) -> None:
    """The momentum sweep returns the argmin."""
    table = {0.0: 0.4, 0.25: 0.3, 0.5: 0.3, 0.75: 0.1, 1.0: 0.2}
    cfg = AttackConfig(method=AttackMethod.SPGD, step_size=100.0)
    with patch.object(evaluation, "evaluate", _fake_evaluate(table, "momentum")):
        assert search_momentum(tiny_cnn, image_dataset, table, cfg) == 0.75


def test_search_rejects_bad_candidates(tiny_cnn: Model, image_dataset) -> None:
    """Empty or out-of-range candidate lists fail fast."""
    cfg = AttackConfig(method=AttackMethod.SPGD)
    with pytest.raises(ValueError):
        search_step_size(tiny_cnn, image_dataset, [], cfg)
    with pytest.raises(ValueError):
        search_momentum(tiny_cnn, image_dataset, [1.5], cfg)


def test_search_on_real_model(tiny_cnn: Model, image_dataset) -> None:
    """A real search returns one of the candidates."""
    cfg = AttackConfig(method=AttackMethod.PGD, epsilon=0.1, steps=2)
    assert search_step_size(tiny_cnn, image_dataset, [0.01, 0.05], cfg) in {0.01, 0.05}
