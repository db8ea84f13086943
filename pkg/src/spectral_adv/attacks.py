"""The l-infinity attack family: FGSM, PGD, momentum PGD, SPGD, and NoSignPGD.

All attacks share :func:`project` and :func:`random_init`. SPGD ascends on the
DCT coefficients of the input; NoSignPGD ascends on the pixels with the raw
gradient. For an orthonormal DCT the two produce the same trajectory.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from spectral_adv.autodiff import Graph, LabelArray, Tensor, as_tensor
from spectral_adv.exceptions import ShapeError
from spectral_adv.models import Classifier, Evaluation, correctness, input_gradient
from spectral_adv.schemas import AttackConfig, AttackMethod
from spectral_adv.spectral import SpectralPlan, dct2, idct2, idct2_node

log = logging.getLogger(__name__)

Seed = int | Sequence[int]


@dataclass(frozen=True)
class PerturbationTrace:
    """Per-step adversarial batches x'_1..x'_R with their losses and correctness."""

    x_nat: Tensor
    adversarial: list[Tensor]
    losses: list[float]
    correct: list[npt.NDArray[np.bool_]]
    method: str
    epsilon: float

    def __len__(self) -> int:
        return len(self.adversarial)

    @property
    def final(self) -> Tensor:
        return self.adversarial[-1]

    def perturbation(self, step: int) -> Tensor:
        """delta_k = x'_k - x for 1-based ``step``."""
        return self.adversarial[step - 1] - self.x_nat

    def components(self, step: int) -> Tensor:
        """Flattened perturbation components at 1-based ``step``."""
        return self.perturbation(step).reshape(-1)

    def accuracy(self, step: int) -> float:
        return float(np.mean(self.correct[step - 1]))


def project(
    x_nat: Tensor,
    x_candidate: Tensor,
    epsilon: float,
    value_range: tuple[float, float],
) -> Tensor:
    """Clip the perturbation to [-epsilon, epsilon], then the pixels to the value range.

    Candidates already inside both sets come back unchanged.
    """
    if x_nat.shape != x_candidate.shape:
        raise ShapeError(
            f"project: shapes {x_nat.shape} and {x_candidate.shape} differ"
        )
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    lo, hi = value_range
    delta = x_candidate - x_nat
    inside = np.abs(delta) <= epsilon
    projected = np.where(inside, x_candidate, x_nat + np.clip(delta, -epsilon, epsilon))
    return np.clip(projected, lo, hi)


def random_init(
    x_nat: Tensor,
    epsilon: float,
    seed: Seed,
    value_range: tuple[float, float] = (-np.inf, np.inf),
) -> Tensor:
    """x_nat plus i.i.d. U(-epsilon, epsilon) noise, clipped to the value range."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-epsilon, epsilon, size=x_nat.shape)
    lo, hi = value_range
    return np.clip(x_nat + noise, lo, hi)


def spectral_gradient(
    model: Classifier, z: Tensor, labels: LabelArray, plan: SpectralPlan
) -> Evaluation:
    """Loss at IDCT(z) and its gradient with respect to the DCT coefficients z."""
    graph = Graph()
    node = graph.leaf(z)
    objective = model.objective(graph, idct2_node(graph, plan, node), labels)
    grad = graph.backward(objective.loss)[node]
    return Evaluation(
        float(graph.value(objective.loss)), grad, correctness(graph, objective, labels)
    )


def _ascend(
    model: Classifier,
    x: Tensor,
    labels: LabelArray,
    cfg: AttackConfig,
    *,
    signed: bool,
    blend: bool,
    plan: SpectralPlan | None = None,
    batch_index: int = 0,
) -> PerturbationTrace:
    """Shared ascent loop; ``plan`` switches the ascent to DCT coefficients."""
    x = as_tensor(x)
    labels = np.asarray(labels, dtype=np.int64)
    epsilon, alpha, mu = cfg.epsilon, cfg.step_size, cfg.momentum

    start = (
        random_init(x, epsilon, [cfg.seed, batch_index], cfg.value_range)
        if cfg.random_init
        else x.copy()
    )
    evaluate: Callable[[Tensor], Evaluation]
    if plan is None:
        point = start

        def evaluate(p: Tensor) -> Evaluation:
            return input_gradient(model, p, labels)

    else:
        point = dct2(plan, start)

        def evaluate(p: Tensor) -> Evaluation:
            return spectral_gradient(model, p, labels, plan)

    current = evaluate(point)
    # delta_0; the first in-loop gradient is taken at the same point
    buffer = current.grad if cfg.seed_momentum else np.zeros_like(current.grad)

    adversarial: list[Tensor] = []
    losses: list[float] = []
    correct: list[npt.NDArray[np.bool_]] = []
    for step in range(1, cfg.steps + 1):
        direction = current.grad
        if blend:
            direction = buffer * mu + direction * (1.0 - mu)
            buffer = direction
        update = np.sign(direction) if signed else direction
        candidate = point + alpha * update
        pixels = candidate if plan is None else idct2(plan, candidate)
        x_step = project(x, pixels, epsilon, cfg.value_range)
        point = x_step if plan is None else dct2(plan, x_step)
        current = evaluate(point)

        adversarial.append(x_step)
        losses.append(current.loss)
        correct.append(current.correct)
        log.debug("%s step %d: loss %.6f", cfg.label, step, current.loss)

    return PerturbationTrace(x, adversarial, losses, correct, cfg.label, epsilon)


def _expect(cfg: AttackConfig, method: AttackMethod) -> None:
    if cfg.method is not method:
        raise ValueError(f"expected a {method.value} config, got {cfg.method.value}")


def fgsm(
    model: Classifier,
    x: Tensor,
    labels: LabelArray,
    cfg: AttackConfig,
    *,
    batch_index: int = 0,
) -> Tensor:
    """Single signed step x + alpha * sign(grad), projected."""
    _expect(cfg, AttackMethod.FGSM)
    trace = _ascend(
        model, x, labels, cfg, signed=True, blend=False, batch_index=batch_index
    )
    return trace.final


def pgd(
    model: Classifier,
    x: Tensor,
    labels: LabelArray,
    cfg: AttackConfig,
    *,
    batch_index: int = 0,
) -> PerturbationTrace:
    """Signed projected gradient ascent from a random start."""
    _expect(cfg, AttackMethod.PGD)
    if cfg.momentum != 0:
        raise ValueError("PGD takes no momentum; use MomentumPGD")
    return _ascend(
        model, x, labels, cfg, signed=True, blend=False, batch_index=batch_index
    )


def momentum_pgd(
    model: Classifier,
    x: Tensor,
    labels: LabelArray,
    cfg: AttackConfig,
    *,
    batch_index: int = 0,
) -> PerturbationTrace:
    """PGD with the exponential blend applied to raw gradients before the sign."""
    _expect(cfg, AttackMethod.MOMENTUM_PGD)
    return _ascend(
        model, x, labels, cfg, signed=True, blend=True, batch_index=batch_index
    )


def spgd(
    model: Classifier,
    x: Tensor,
    labels: LabelArray,
    cfg: AttackConfig,
    plan: SpectralPlan | None = None,
    *,
    batch_index: int = 0,
) -> PerturbationTrace:
    """Gradient ascent with momentum on DCT coefficients, projected in pixel space."""
    _expect(cfg, AttackMethod.SPGD)
    x = as_tensor(x)
    plan = plan or SpectralPlan.for_input(x)
    return _ascend(
        model,
        x,
        labels,
        cfg,
        signed=False,
        blend=True,
        plan=plan,
        batch_index=batch_index,
    )


def nosign_pgd(
    model: Classifier,
    x: Tensor,
    labels: LabelArray,
    cfg: AttackConfig,
    *,
    batch_index: int = 0,
) -> PerturbationTrace:
    """Pixel-domain ascent on the raw gradient, with the same momentum blend."""
    _expect(cfg, AttackMethod.NOSIGN_PGD)
    return _ascend(
        model, x, labels, cfg, signed=False, blend=True, batch_index=batch_index
    )


def run_attack(
    model: Classifier,
    x: Tensor,
    labels: LabelArray,
    cfg: AttackConfig,
    plan: SpectralPlan | None = None,
    *,
    batch_index: int = 0,
) -> PerturbationTrace:
    """Dispatch on ``cfg.method``; FGSM yields a one-step trace."""
    match cfg.method:
        case AttackMethod.FGSM:
            return _ascend(
                model, x, labels, cfg, signed=True, blend=False, batch_index=batch_index
            )
        case AttackMethod.PGD:
            return pgd(model, x, labels, cfg, batch_index=batch_index)
        case AttackMethod.MOMENTUM_PGD:
            return momentum_pgd(model, x, labels, cfg, batch_index=batch_index)
        case AttackMethod.SPGD:
            return spgd(model, x, labels, cfg, plan, batch_index=batch_index)
        case AttackMethod.NOSIGN_PGD:
            return nosign_pgd(model, x, labels, cfg, batch_index=batch_index)
    raise ValueError(f"unknown attack method {cfg.method!r}")
