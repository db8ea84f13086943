"""spectral-adv - frequency-domain adversarial examples and adversarial training.

Example usage:
    from spectral_adv import (
        AttackConfig,
        AttackMethod,
        Architecture,
        Model,
        evaluate,
        load_mnist,
    )

    test = load_mnist("data/mnist", "test")
    model = Model.initialize(Architecture.mnist(), seed=0)
    spgd = AttackConfig(method=AttackMethod.SPGD, step_size=100.0, momentum=0.75)
    print(evaluate(model, test, spgd).accuracy)
"""

from importlib import import_module
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from spectral_adv.analysis import (
        GradientHeatmaps,
        attack_step_table,
        band_energy,
        component_histograms,
        equivalence_table,
        gradient_heatmaps,
        security_curve,
        security_matrix,
        small_component_fraction,
        value_mapping,
    )
    from spectral_adv.attacks import (
        PerturbationTrace,
        fgsm,
        momentum_pgd,
        nosign_pgd,
        pgd,
        project,
        random_init,
        run_attack,
        spectral_gradient,
        spgd,
    )
    from spectral_adv.autodiff import (
        Graph,
        finite_diff_gradient,
        gradient_check,
        max_relative_error,
    )
    from spectral_adv.checkpoint import load_checkpoint, save_checkpoint
    from spectral_adv.data import (
        Dataset,
        load_idx,
        load_mnist,
        rescale,
        subset,
        synth_blobs,
        write_idx,
    )
    from spectral_adv.evaluation import evaluate, search_momentum, search_step_size
    from spectral_adv.exceptions import (
        CheckpointError,
        ConfigError,
        GraphError,
        IDXFormatError,
        NonFiniteError,
        ShapeError,
        SpectralAdvError,
        TrainingDivergedError,
    )
    from spectral_adv.models import Architecture, Classifier, Model
    from spectral_adv.schemas import (
        AttackConfig,
        AttackMethod,
        EpochMetrics,
        EvaluationResult,
        Histogram,
        SecurityCurve,
        StepTableRow,
        TrainConfig,
    )
    from spectral_adv.settings import RunConfig, load_run_config
    from spectral_adv.spectral import (
        SpectralPlan,
        dct2,
        idct2,
        verify_gradient_transport,
    )
    from spectral_adv.training import TrainingResult, train_adversarial, train_standard

__all__ = [
    # Autodiff
    "Graph",
    "finite_diff_gradient",
    "gradient_check",
    "max_relative_error",
    # Spectral transform
    "SpectralPlan",
    "dct2",
    "idct2",
    "verify_gradient_transport",
    # Models and checkpoints
    "Architecture",
    "Classifier",
    "Model",
    "load_checkpoint",
    "save_checkpoint",
    # Data
    "Dataset",
    "load_idx",
    "load_mnist",
    "rescale",
    "subset",
    "synth_blobs",
    "write_idx",
    # Schemas
    "AttackConfig",
    "AttackMethod",
    "EpochMetrics",
    "EvaluationResult",
    "Histogram",
    "SecurityCurve",
    "StepTableRow",
    "TrainConfig",
    # Attacks
    "PerturbationTrace",
    "fgsm",
    "momentum_pgd",
    "nosign_pgd",
    "pgd",
    "project",
    "random_init",
    "run_attack",
    "spectral_gradient",
    "spgd",
    # Evaluation and training
    "evaluate",
    "search_momentum",
    "search_step_size",
    "TrainingResult",
    "train_adversarial",
    "train_standard",
    # Analysis
    "GradientHeatmaps",
    "attack_step_table",
    "band_energy",
    "component_histograms",
    "equivalence_table",
    "gradient_heatmaps",
    "security_curve",
    "security_matrix",
    "small_component_fraction",
    "value_mapping",
    # Configuration
    "RunConfig",
    "load_run_config",
    # Errors
    "SpectralAdvError",
    "CheckpointError",
    "ConfigError",
    "GraphError",
    "IDXFormatError",
    "NonFiniteError",
    "ShapeError",
    "TrainingDivergedError",
]

_MODULES = {
    "analysis": (
        "GradientHeatmaps",
        "attack_step_table",
        "band_energy",
        "component_histograms",
        "equivalence_table",
        "gradient_heatmaps",
        "security_curve",
        "security_matrix",
        "small_component_fraction",
        "value_mapping",
    ),
    "attacks": (
        "PerturbationTrace",
        "fgsm",
        "momentum_pgd",
        "nosign_pgd",
        "pgd",
        "project",
        "random_init",
        "run_attack",
        "spectral_gradient",
        "spgd",
    ),
    "autodiff": (
        "Graph",
        "finite_diff_gradient",
        "gradient_check",
        "max_relative_error",
    ),
    "checkpoint": ("load_checkpoint", "save_checkpoint"),
    "data": (
        "Dataset",
        "load_idx",
        "load_mnist",
        "rescale",
        "subset",
        "synth_blobs",
        "write_idx",
    ),
    "evaluation": ("evaluate", "search_momentum", "search_step_size"),
    "exceptions": (
        "CheckpointError",
        "ConfigError",
        "GraphError",
        "IDXFormatError",
        "NonFiniteError",
        "ShapeError",
        "SpectralAdvError",
        "TrainingDivergedError",
    ),
    "models": ("Architecture", "Classifier", "Model"),
    "schemas": (
        "AttackConfig",
        "AttackMethod",
        "EpochMetrics",
        "EvaluationResult",
        "Histogram",
        "SecurityCurve",
        "StepTableRow",
        "TrainConfig",
    ),
    "settings": ("RunConfig", "load_run_config"),
    "spectral": ("SpectralPlan", "dct2", "idct2", "verify_gradient_transport"),
    "training": ("TrainingResult", "train_adversarial", "train_standard"),
}
_OWNER = {name: module for module, names in _MODULES.items() for name in names}


def __getattr__(name: str) -> Any:
    # numpy is imported on first use, so the CLI can size BLAS thread pools first
    module = _OWNER.get(name)
    if module is None:
        raise AttributeError(f"module 'spectral_adv' has no attribute {name!r}")
    return getattr(import_module(f"spectral_adv.{module}"), name)
