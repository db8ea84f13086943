"""Implementations behind the ``spectral-adv`` subcommands.

Each command takes a validated :class:`RunConfig` and an output directory,
writes its artifacts there, and returns what it computed. Exit codes are
the CLI's concern.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from spectral_adv import analysis, reports
from spectral_adv.attacks import run_attack
from spectral_adv.autodiff import finite_diff_gradient, max_relative_error
from spectral_adv.checkpoint import load_checkpoint, save_checkpoint
from spectral_adv.data import Dataset, subset
from spectral_adv.evaluation import evaluate
from spectral_adv.exceptions import ConfigError
from spectral_adv.models import Model, input_gradient
from spectral_adv.schemas import (
    AttackConfig,
    AttackMethod,
    CheckResult,
    StepTableRow,
    VerificationReport,
)
from spectral_adv.settings import RunConfig
from spectral_adv.spectral import (
    SpectralPlan,
    parseval_error,
    round_trip_error,
    verify_gradient_transport,
)
from spectral_adv.training import TrainingResult, train_adversarial, train_standard

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.sadv"
VALUE_MAPPING_POINTS = 401


def _load_model(checkpoint: str | Path, dataset: Dataset) -> Model:
    model = load_checkpoint(checkpoint)
    if model.input_shape != dataset.image_shape:
        raise ConfigError(
            f"checkpoint expects inputs {model.input_shape}, "
            f"dataset provides {dataset.image_shape}"
        )
    return model


def _first(dataset: Dataset, n: int) -> Dataset:
    return dataset.take(np.arange(min(n, len(dataset))))


def cmd_train(
    config: RunConfig,
    out: Path,
    *,
    checkpoint: str | Path | None = None,
) -> TrainingResult:
    """Train the configured model and write the checkpoint and ``metrics.csv``."""
    train, test = config.load_datasets()
    checkpoint_path = Path(checkpoint) if checkpoint else out / CHECKPOINT_NAME
    model = Model.initialize(config.model.architecture(train), seed=config.seed)
    cfg = config.train_config(str(checkpoint_path))
    log.info(
        "Training %s on %d images (%s)",
        model.descriptor,
        len(train),
        f"adversarial, {cfg.attack.label}" if cfg.attack else "standard",
    )
    if cfg.attack is None:
        result = train_standard(model, train, cfg, test=config.eval_set(test))
    else:
        result = train_adversarial(model, train, cfg, test=config.eval_set(test))
    save_checkpoint(result.model, checkpoint_path)
    reports.write_metrics(out / "metrics.csv", result.history)
    return result


def cmd_attack(
    config: RunConfig, out: Path, *, checkpoint: str | Path
) -> list[StepTableRow]:
    """Write ``step_table.csv`` and one ``trace_<name>.csv`` histogram per attack."""
    _, test = config.load_datasets()
    dataset = config.eval_set(test)
    model = _load_model(checkpoint, dataset)
    cfgs = [config.attack(name) for name in config.report.step_table]
    rows = analysis.attack_step_table(model, dataset, cfgs)
    reports.write_step_table(out / "step_table.csv", rows)

    sample = _first(dataset, config.report.histogram_samples)
    plan = SpectralPlan.for_shape(*dataset.image_shape[1:])
    for name, cfg in zip(config.report.step_table, cfgs, strict=True):
        trace = run_attack(model, sample.images, sample.labels, cfg, plan)
        reports.write_histograms(
            out / f"trace_{name}.csv",
            analysis.component_histograms(trace, config.report.histogram_bins),
        )
    return rows


def cmd_eval(
    config: RunConfig, out: Path, *, checkpoint: str | Path
) -> list[tuple[str, float, float]]:
    """Natural accuracy and accuracy under every ``report.eval_attacks`` entry."""
    _, test = config.load_datasets()
    dataset = config.eval_set(test)
    model = _load_model(checkpoint, dataset)
    natural = evaluate(model, dataset)
    results = [("natural", natural.accuracy, natural.mean_loss)]
    for name in config.report.eval_attacks:
        cfg = config.attack(name)
        result = evaluate(model, dataset, cfg)
        results.append((cfg.label, result.accuracy, result.mean_loss))
        log.info(
            "%s: accuracy %.4f, mean loss %.4f",
            cfg.label,
            result.accuracy,
            result.mean_loss,
        )
    reports.write_evaluations(out / "evaluations.csv", results)
    return results


def _trajectory_gap(
    model: Model,
    dataset: Dataset,
    spgd_cfg: AttackConfig,
    plan: SpectralPlan,
) -> float:
    """Largest SPGD vs NoSignPGD pixel gap, relative to the value span."""
    twin = AttackConfig.model_validate(
        {**spgd_cfg.model_dump(), "method": AttackMethod.NOSIGN_PGD, "name": None}
    )
    spectral = run_attack(model, dataset.images, dataset.labels, spgd_cfg, plan)
    pixel = run_attack(model, dataset.images, dataset.labels, twin, plan)
    lo, hi = spgd_cfg.value_range
    return max(
        float(np.max(np.abs(a - b))) / (hi - lo)
        for a, b in zip(spectral.adversarial, pixel.adversarial, strict=True)
    )


def _finite_difference_error(
    model: Model, dataset: Dataset, coordinates: int, step: float, seed: int
) -> float:
    x, labels = dataset.images, dataset.labels
    rng = np.random.default_rng(seed)
    picked = rng.choice(x.size, size=min(coordinates, x.size), replace=False)
    estimate = finite_diff_gradient(model, x, labels, step, coordinates=picked)
    exact = input_gradient(model, x, labels).grad.reshape(-1)[picked]
    usable = ~np.isnan(estimate)
    excluded = int((~usable).sum())
    if excluded:
        log.warning(
            "Finite differences: %d coordinate(s) straddle a kink, excluded", excluded
        )
    if not usable.any():
        return 0.0
    return max_relative_error(estimate[usable], exact[usable])


def cmd_verify(
    config: RunConfig,
    out: Path,
    *,
    checkpoint: str | Path | None = None,
) -> VerificationReport:
    """Check the DCT and gradient-transport identities; write ``verify.csv``.

    Without a checkpoint a freshly initialized model is used; the identities
    do not depend on the weights.
    """
    _, test = config.load_datasets()
    samples = _first(test, config.verify.samples)
    if checkpoint is not None:
        model = _load_model(checkpoint, samples)
    else:
        model = Model.initialize(config.model.architecture(samples), seed=config.seed)
    plan = SpectralPlan.for_shape(*samples.image_shape[1:])
    if config.verify.corrupt_basis:
        log.warning("Verifying against a deliberately corrupted DCT basis")
        plan = plan.corrupted()

    thresholds = config.verify.thresholds
    transport = verify_gradient_transport(model, samples.images, samples.labels, plan)
    checks = [
        CheckResult(
            check="dct_orthogonality",
            max_error=plan.orthogonality_error(),
            threshold=thresholds.orthogonality,
        ),
        CheckResult(
            check="dct_round_trip",
            max_error=round_trip_error(plan, samples.images),
            threshold=thresholds.round_trip,
        ),
        CheckResult(
            check="parseval",
            max_error=parseval_error(plan, samples.images),
            threshold=thresholds.parseval,
        ),
        CheckResult(
            check="gradient_transport",
            max_error=transport.max_rel_error,
            threshold=thresholds.transport,
        ),
        CheckResult(
            check="gradient_transport_scaled",
            max_error=transport.scaled_max_rel_error,
            threshold=thresholds.transport_scaled,
        ),
        CheckResult(
            check="spgd_nosign_trajectory",
            max_error=_trajectory_gap(
                model, samples, config.attack(config.verify.trajectory_attack), plan
            ),
            threshold=thresholds.trajectory,
        ),
        CheckResult(
            check="finite_difference",
            max_error=_finite_difference_error(
                model,
                samples,
                config.verify.fd_coordinates,
                config.verify.fd_step,
                config.seed,
            ),
            threshold=thresholds.finite_difference,
        ),
    ]
    report = VerificationReport(checks=checks)
    for check in checks:
        log.info(
            "%-26s max error %.3e (threshold %.1e) %s",
            check.check,
            check.max_error,
            check.threshold,
            "ok" if check.passed else "FAILED",
        )
    reports.write_verification(out / "verify.csv", checks)
    return report


def cmd_report(config: RunConfig, out: Path, *, checkpoint: str | Path) -> list[Path]:
    """Step table, security curves, histograms, heatmaps, and value mapping."""
    _, test = config.load_datasets()
    dataset = config.eval_set(test)
    model = _load_model(checkpoint, dataset)
    spec = config.report
    written: list[Path] = []

    if spec.step_table:
        rows = analysis.attack_step_table(
            model, dataset, [config.attack(n) for n in spec.step_table]
        )
        written.append(reports.write_step_table(out / "step_table.csv", rows))

    if spec.security_curve:
        curves = analysis.security_matrix(
            {Path(checkpoint).stem: model},
            dataset,
            [config.attack(n) for n in spec.security_curve],
            spec.epsilons,
        )
        written.append(
            reports.write_security_curves(out / "security_curve.csv", curves)
        )
        written.append(reports.plot_security_curves(out / "security_curve.svg", curves))

    if spec.histograms:
        sample = (
            subset(dataset, spec.histogram_samples, config.seed)
            if spec.histogram_samples < len(dataset)
            else dataset
        )
        plan = SpectralPlan.for_shape(*dataset.image_shape[1:])
        histograms = []
        for name in spec.histograms:
            cfg = config.attack(name)
            trace = run_attack(model, sample.images, sample.labels, cfg, plan)
            per_step = analysis.component_histograms(trace, spec.histogram_bins)
            histograms.extend(per_step)
            written.append(
                reports.plot_histograms(out / f"histogram_{name}.svg", per_step)
            )
            log.info(
                "%s: %.1f%% of step-1 components below eps/2",
                name,
                100 * analysis.small_component_fraction(trace, 1),
            )
        written.append(reports.write_histograms(out / "histograms.csv", histograms))

    energies = []
    for index in range(min(spec.heatmaps, len(dataset))):
        heatmaps = analysis.gradient_heatmaps(
            model, dataset.images[index], int(dataset.labels[index])
        )
        energy = analysis.band_energy(heatmaps.freq_grad)
        energies.append((index, energy.low, energy.high, energy.total))
        written.append(
            reports.plot_heatmaps(
                out / f"heatmap_{index}.svg",
                heatmaps,
                title=f"image {index}, label {int(dataset.labels[index])}",
            )
        )
    if energies:
        written.append(reports.write_band_energy(out / "band_energy.csv", energies))

    if spec.value_mapping:
        epsilon = config.attack(spec.histograms[0]).epsilon if spec.histograms else 0.3
        gradients = np.linspace(-2.0 * epsilon, 2.0 * epsilon, VALUE_MAPPING_POINTS)
        signed, unsigned = analysis.value_mapping(gradients, 1.0, epsilon)
        written.append(
            reports.write_value_mapping(
                out / "value_mapping.csv", gradients, signed, unsigned
            )
        )
        written.append(
            reports.plot_value_mapping(
                out / "value_mapping.svg", gradients, signed, unsigned, epsilon=epsilon
            )
        )

    if spec.equivalence:
        equivalence = analysis.equivalence_table(
            model, dataset, config.attack(config.verify.trajectory_attack)
        )
        log.info(
            "SPGD vs NoSignPGD: max accuracy gap %.2e, max loss gap %.2e",
            equivalence.max_accuracy_gap,
            equivalence.max_loss_gap,
        )
        written.append(
            reports.write_step_table(out / "equivalence.csv", equivalence.rows)
        )

    log.info("Report: %d files in %s", len(written), out)
    return written
