"""Pydantic schemas for attack, training, and report values."""

from enum import StrEnum
from typing import Self

from pydantic import BaseModel, ConfigDict, Field, model_validator


class AttackMethod(StrEnum):
    FGSM = "FGSM"
    PGD = "PGD"
    MOMENTUM_PGD = "MomentumPGD"
    SPGD = "SPGD"
    NOSIGN_PGD = "NoSignPGD"


class AttackConfig(BaseModel):
    """Threat model and optimizer parameters of one attack.

    Defaults follow the MNIST setting: l-infinity radius 0.3 on [0, 1] data,
    PGD step 0.01 and 20 steps.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    method: AttackMethod = AttackMethod.PGD
    epsilon: float = Field(default=0.3, ge=0.0)
    """Radius of the l-infinity ball, in value-range units."""

    step_size: float = Field(default=0.01, ge=0.0)
    """alpha. 0.01 for PGD and 100 for SPGD on [0, 1] data; 75e6 on [0, 255] data."""

    steps: int = Field(default=20, ge=1)
    """R, the number of attack steps."""

    momentum: float = Field(default=0.0, ge=0.0, le=1.0)
    """mu of the exponential gradient blend; 0.75 was best for SPGD, 0 for PGD."""

    random_init: bool = True
    value_range: tuple[float, float] = (0.0, 1.0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    seed_momentum: bool = True
    """Let the initial gradient seed the momentum buffer; False starts it at zero."""

    name: str | None = None
    """Display label; defaults to ``<METHOD>-<alpha>-<R>``."""

    @model_validator(mode="after")
    def _check_invariants(self) -> Self:
        lo, hi = self.value_range
        if not lo < hi:
            raise ValueError(
                f"value_range must satisfy lo < hi, got {self.value_range}"
            )
        if self.method is AttackMethod.FGSM and self.steps != 1:
            raise ValueError(f"FGSM requires steps == 1, got {self.steps}")
        return self

    @property
    def label(self) -> str:
        return self.name or f"{self.method.value}-{self.step_size:g}-{self.steps}"


class TrainConfig(BaseModel):
    """Mini-batch SGD settings; an attack turns standard into adversarial training."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(default=10, ge=0)
    batch_size: int = Field(default=50, ge=1)
    learning_rate: float = Field(default=0.01, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    attack: AttackConfig | None = None
    seed: int = Field(default=0, ge=0)
    checkpoint_path: str | None = None


class EpochMetrics(BaseModel):
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float | None = None
    test_accuracy: float | None = None
    adversarial_accuracy: float | None = None


class EvaluationResult(BaseModel):
    accuracy: float
    mean_loss: float


class StepTableRow(BaseModel):
    method: str
    step: int
    adversarial_accuracy: float
    adversarial_loss: float


class Histogram(BaseModel):
    """Counts of perturbation components at one attack step."""

    bin_edges: list[float]
    counts: list[int]
    step: int
    method: str
    epsilon: float

    @model_validator(mode="after")
    def _check_bins(self) -> Self:
        if len(self.bin_edges) != len(self.counts) + 1:
            raise ValueError("bin_edges must have one more entry than counts")
        edges = self.bin_edges
        if any(b <= a for a, b in zip(edges, edges[1:], strict=False)):
            raise ValueError("bin_edges must be strictly ascending")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")
        return self

    @property
    def total(self) -> int:
        return sum(self.counts)


class SecurityCurve(BaseModel):
    """Adversarial accuracy as a function of attack strength."""

    epsilons: list[float]
    accuracies: list[float]
    attack: str
    defense_model: str

    @model_validator(mode="after")
    def _check_curve(self) -> Self:
        if len(self.epsilons) != len(self.accuracies):
            raise ValueError("epsilons and accuracies must have equal length")
        if any(b <= a for a, b in zip(self.epsilons, self.epsilons[1:], strict=False)):
            raise ValueError("epsilons must be strictly ascending")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")
        return self


class BandEnergy(BaseModel):
    """Share of squared gradient magnitude in the lowest/highest frequency quartiles."""

    low: float
    high: float
    total: float


class TransportReport(BaseModel):
    max_rel_error: float
    scaled_max_rel_error: float
    scale: float


class CheckResult(BaseModel):
    check: str
    max_error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold


class VerificationReport(BaseModel):
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


class EquivalenceReport(BaseModel):
    """Per-step SPGD vs NoSignPGD comparison under a shared seed."""

    rows: list[StepTableRow]
    max_accuracy_gap: float
    max_loss_gap: float
