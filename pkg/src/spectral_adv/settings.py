"""Run configuration for the spectral-adv command line."""

from __future__ import annotations

import logging
import re
import tomllib
from pathlib import Path
from typing import Any, Literal, Self

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
)

from spectral_adv.analysis import DEFAULT_BINS, SECURITY_EPSILONS
from spectral_adv.data import Dataset, load_mnist, rescale, subset, synth_blobs
from spectral_adv.exceptions import ConfigError
from spectral_adv.models import MNIST_LAYERS, Architecture
from spectral_adv.schemas import AttackConfig, AttackMethod, TrainConfig

log = logging.getLogger(__name__)


def default_attacks() -> dict[str, AttackConfig]:
    """The MNIST attack settings: PGD-0.01-20, SPGD-100-20 with mu 0.75, and friends."""
    return {
        "fgsm": AttackConfig(
            method=AttackMethod.FGSM, step_size=0.3, steps=1, random_init=False
        ),
        "pgd": AttackConfig(method=AttackMethod.PGD, step_size=0.01, steps=20),
        "spgd": AttackConfig(
            method=AttackMethod.SPGD, step_size=100.0, steps=20, momentum=0.75
        ),
        "nosign": AttackConfig(
            method=AttackMethod.NOSIGN_PGD, step_size=100.0, steps=20, momentum=0.75
        ),
    }


class DatasetSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    source: Literal["mnist", "blobs"] = "blobs"
    mnist_dir: str | None = None
    """Directory holding the four MNIST IDX files (plain or gzipped)."""

    value_range: tuple[float, float] = (0.0, 1.0)
    """Pixel range; MNIST uses [0, 1], the CIFAR-10 setting [0, 255]."""

    train_size: int | None = Field(default=10_000, ge=1)
    """Stratified training subset; None keeps every training image."""

    test_size: int | None = Field(default=1_000, ge=1)

    # synthetic blobs
    blob_classes: int = Field(default=3, ge=2)
    blob_per_class: int = Field(default=100, ge=1)
    blob_dims: int = Field(default=16, ge=1)
    blob_separation: float = Field(default=3.0, gt=0.0)

    @model_validator(mode="after")
    def _check_source(self) -> Self:
        lo, hi = self.value_range
        if not lo < hi:
            raise ValueError(
                f"value_range must satisfy lo < hi, got {self.value_range}"
            )
        if self.source == "mnist" and self.mnist_dir is None:
            raise ValueError("mnist_dir is required when source = 'mnist'")
        return self


class ModelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    layers: str = "auto"
    """Layer tokens, e.g. ``conv16x5,pool,conv32x5,pool,fc128,fc10``.

    ``auto`` picks the MNIST network for 1x28x28 inputs and a small MLP otherwise.
    """

    def architecture(self, dataset: Dataset) -> Architecture:
        c, h, w = dataset.image_shape
        layers = self.layers
        if layers == "auto":
            mnist_shaped = (c, h, w) == (1, 28, 28)
            layers = MNIST_LAYERS if mnist_shaped else f"fc32,fc{dataset.num_classes}"
        lo, hi = dataset.value_range
        try:
            architecture = Architecture.parse(
                f"input={c}x{h}x{w};range={lo!r},{hi!r};layers={layers}"
            )
            num_classes = architecture.num_classes
            architecture.parameter_shapes()
        except ValueError as exc:
            raise ConfigError(f"model.layers: {exc}") from exc
        if num_classes != dataset.num_classes:
            raise ConfigError(
                f"model has {num_classes} outputs, dataset has "
                f"{dataset.num_classes} classes"
            )
        return architecture


class TrainSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=10, ge=0)
    batch_size: int = Field(default=50, ge=1)
    learning_rate: float = Field(default=0.01, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    attack: str | None = None
    """Attack used for adversarial training; unset means standard training."""


class ReportSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    output_dir: str = "reports"
    eval_size: int | None = Field(default=None, ge=1)
    """Test images used by attack/eval/report; None uses the whole test subset."""

    eval_attacks: list[str] = Field(default_factory=lambda: ["fgsm", "pgd", "spgd"])
    step_table: list[str] = Field(default_factory=lambda: ["pgd", "spgd"])
    security_curve: list[str] = Field(default_factory=lambda: ["pgd", "spgd"])
    epsilons: list[float] = Field(default_factory=lambda: list(SECURITY_EPSILONS))
    histograms: list[str] = Field(default_factory=lambda: ["pgd", "spgd"])
    histogram_bins: int = Field(default=DEFAULT_BINS, ge=2)
    histogram_samples: int = Field(default=10, ge=1)
    """Images sampled for the component histograms."""

    heatmaps: int = Field(default=1, ge=0)
    """Number of test images whose gradient heatmaps are drawn."""

    value_mapping: bool = True
    equivalence: bool = False
    """Also run the configured SPGD attack against its NoSignPGD twin."""

    @model_validator(mode="after")
    def _check_epsilons(self) -> Self:
        eps = self.epsilons
        if not eps or eps[0] != 0.0:
            raise ValueError("report.epsilons must start at 0")
        if any(b <= a for a, b in zip(eps, eps[1:], strict=False)):
            raise ValueError("report.epsilons must be strictly ascending")
        return self


class VerifyThresholds(BaseModel):
    model_config = ConfigDict(extra="forbid")

    orthogonality: float = 1e-12
    round_trip: float = 1e-10
    parseval: float = 1e-10
    transport: float = 1e-8
    transport_scaled: float = 1e-6
    trajectory: float = 1e-6
    finite_difference: float = 1e-4


class VerifySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples: int = Field(default=4, ge=1)
    fd_coordinates: int = Field(default=50, ge=1)
    """Random input coordinates probed by the finite-difference check."""

    fd_step: float = Field(default=1e-5, gt=0.0)
    corrupt_basis: bool = False
    """Perturb the DCT basis so the orthogonality check must fail (negative control)."""

    trajectory_attack: str = "spgd"
    thresholds: VerifyThresholds = Field(default_factory=VerifyThresholds)


class RunConfig(BaseSettings):
    """Everything one ``spectral-adv`` invocation needs.

    Loaded from a TOML file, with environment overrides using the
    SPECTRAL_ADV_ prefix and ``__`` for nesting.
    Example: SPECTRAL_ADV_TRAIN__EPOCHS=2
    """

    model_config = SettingsConfigDict(
        env_prefix="SPECTRAL_ADV_",
        env_nested_delimiter="__",
        env_file=".env",
        extra="forbid",
        pyproject_toml_table_header=("tool", "spectral-adv"),
    )

    seed: int = Field(default=0, ge=0, lt=2**64)
    threads: int | None = Field(default=None, ge=1)

    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    model: ModelSpec = Field(default_factory=ModelSpec)
    train: TrainSpec = Field(default_factory=TrainSpec)
    attacks: dict[str, AttackConfig] = Field(default_factory=default_attacks)
    report: ReportSpec = Field(default_factory=ReportSpec)
    verify: VerifySpec = Field(default_factory=VerifySpec)

    @field_validator("attacks", mode="before")
    @classmethod
    def _merge_default_attacks(cls, value: Any) -> Any:
        """Configured attacks extend the built-in set, field by field for known names.

        Defaults are dumped without their seed, so an attack only carries a
        seed of its own when the configuration gives one.
        """
        if not isinstance(value, dict):
            return value
        merged: dict[str, Any] = {
            k: v.model_dump(exclude_unset=True) for k, v in default_attacks().items()
        }
        for name, entry in value.items():
            base = merged.get(name)
            if isinstance(base, dict) and isinstance(entry, dict):
                merged[name] = {**base, **entry}
            else:
                merged[name] = entry
        return merged

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,  # noqa: ARG003
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        """Priority (highest first): config file, env vars, dotenv, pyproject.toml."""
        from pydantic_settings import PyprojectTomlConfigSettingsSource  # noqa: PLC0415

        return (
            init_settings,
            env_settings,
            dotenv_settings,
            PyprojectTomlConfigSettingsSource(settings_cls),
        )

    @model_validator(mode="after")
    def _check_references(self) -> Self:
        referenced = {
            "train.attack": [self.train.attack] if self.train.attack else [],
            "report.eval_attacks": self.report.eval_attacks,
            "report.step_table": self.report.step_table,
            "report.security_curve": self.report.security_curve,
            "report.histograms": self.report.histograms,
            "verify.trajectory_attack": [self.verify.trajectory_attack],
        }
        for where, names in referenced.items():
            missing = [n for n in names if n not in self.attacks]
            if missing:
                raise ValueError(f"{where} names unknown attack(s) {missing}")
        trajectory = self.attacks[self.verify.trajectory_attack]
        if trajectory.method is not AttackMethod.SPGD:
            raise ValueError("verify.trajectory_attack must name an SPGD attack")
        used = {n for names in referenced.values() for n in names}
        for name in sorted(used):
            if self.attacks[name].value_range != self.dataset.value_range:
                raise ValueError(
                    f"attack {name!r} value_range "
                    f"{self.attacks[name].value_range} differs "
                    f"from dataset value_range {self.dataset.value_range}"
                )
        return self

    # --- Resolved objects ---

    def attack(self, name: str) -> AttackConfig:
        """Named attack, labelled by its config key and seeded by the run seed.

        An explicit ``name`` or ``seed`` in the attack table wins.
        """
        cfg = self.attacks[name]
        update: dict[str, Any] = {}
        if cfg.name is None:
            update["name"] = name
        if "seed" not in cfg.model_fields_set:
            update["seed"] = self.seed
        return cfg.model_copy(update=update) if update else cfg

    def train_config(self, checkpoint_path: str | None = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.train.epochs,
            batch_size=self.train.batch_size,
            learning_rate=self.train.learning_rate,
            momentum=self.train.momentum,
            attack=self.attack(self.train.attack) if self.train.attack else None,
            seed=self.seed,
            checkpoint_path=checkpoint_path,
        )

    def load_datasets(self) -> tuple[Dataset, Dataset]:
        """Training and test sets as configured, rescaled to the value range."""
        spec = self.dataset
        if spec.source == "blobs":
            full = synth_blobs(
                spec.blob_classes,
                spec.blob_per_class,
                spec.blob_dims,
                spec.blob_separation,
                self.seed,
                value_range=spec.value_range,
            )
            order = np.random.default_rng(self.seed).permutation(len(full))
            cut = len(full) * 4 // 5
            train, test = full.take(np.sort(order[:cut]), "blobs-train"), full.take(
                np.sort(order[cut:]), "blobs-test"
            )
        else:
            directory = spec.mnist_dir or "."
            train = load_mnist(directory, "train")
            test = load_mnist(directory, "test")
        if spec.train_size is not None and spec.train_size < len(train):
            train = subset(train, spec.train_size, self.seed)
        if spec.test_size is not None and spec.test_size < len(test):
            test = subset(test, spec.test_size, self.seed)
        return rescale(train, spec.value_range), rescale(test, spec.value_range)

    def eval_set(self, test: Dataset) -> Dataset:
        size = self.report.eval_size
        if size is None or size >= len(test):
            return test
        return subset(test, size, self.seed)


_KEY_LINE = "^\\s*(?:\\[[^\\]]*\\b{key}\\b[^\\]]*\\]|\"?{key}\"?\\s*=)"


def _locate(text: str, loc: tuple[int | str, ...]) -> int | None:
    """1-based line of the deepest named key in ``loc``, if it appears in ``text``."""
    for part in reversed(loc):
        if not isinstance(part, str):
            continue
        pattern = re.compile(_KEY_LINE.format(key=re.escape(part)))
        for number, line in enumerate(text.splitlines(), start=1):
            if pattern.search(line):
                return number
    return None


def _describe(path: Path, text: str, exc: ValidationError) -> str:
    lines = []
    for error in exc.errors():
        loc = tuple(error["loc"])
        field = ".".join(str(p) for p in loc) or "<root>"
        where = _locate(text, loc)
        prefix = f"{path}:{where}" if where else str(path)
        lines.append(f"{prefix}: {field}: {error['msg']}")
    return "\n".join(lines)


def load_run_config(
    path: str | Path | None,
    *,
    seed: int | None = None,
    threads: int | None = None,
) -> RunConfig:
    """Parse and validate a TOML run configuration.

    ``seed`` and ``threads`` override the file. Syntax errors carry the
    TOML line and column, validation errors the dotted field path; both are
    raised as :class:`ConfigError`.
    """
    data: dict[str, Any] = {}
    text = ""
    source = Path(path) if path is not None else Path("<defaults>")
    if path is not None:
        try:
            text = source.read_text(encoding="utf-8")
            data = tomllib.loads(text)
        except OSError as exc:
            raise ConfigError(f"{source}: cannot read config: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from exc
    if seed is not None:
        data["seed"] = seed
    if threads is not None:
        data["threads"] = threads
    try:
        config = RunConfig(**data)
    except ValidationError as exc:
        raise ConfigError(_describe(source, text, exc)) from exc
    log.debug("Loaded run config from %s: %s", source, config)
    return config
