"""CSV tables and SVG figures.

CSV files are comma separated with a header row and LF line endings; floats
are printed with 17 significant digits so they parse back to the same value.
Figures are drawn on a bare :class:`matplotlib.figure.Figure` (no pyplot
state) and written with a fixed hash salt and no date, so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Any

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure

from spectral_adv.schemas import (
    CheckResult,
    EpochMetrics,
    Histogram,
    SecurityCurve,
    StepTableRow,
)

if TYPE_CHECKING:
    from spectral_adv.analysis import GradientHeatmaps
    from spectral_adv.autodiff import Tensor

log = logging.getLogger(__name__)

STEP_TABLE_HEADER = ("method", "step", "adversarial_accuracy", "adversarial_loss")
SECURITY_CURVE_HEADER = ("attack", "defense_model", "epsilon", "adversarial_accuracy")
HISTOGRAM_HEADER = ("method", "step", "bin_left", "bin_right", "count")
EVALUATION_HEADER = ("attack", "accuracy", "mean_loss")
METRICS_HEADER = (
    "epoch",
    "train_loss",
    "train_accuracy",
    "test_loss",
    "test_accuracy",
    "adversarial_accuracy",
)
VERIFY_HEADER = ("check", "max_error", "threshold", "passed")
VALUE_MAPPING_HEADER = ("gradient", "signed_perturbation", "unsigned_perturbation")
BAND_ENERGY_HEADER = ("image", "low", "high", "total")

SVG_HASH_SALT = "spectral-adv"


def fmt(value: Any) -> str:
    """Render one CSV cell; floats use 17 significant digits, None is empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float | np.floating):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(
    path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]
) -> Path:
    """Overwrite ``path`` with ``header`` and ``rows``; parents are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([fmt(v) for v in row])
            count += 1
    log.info("Wrote %s (%d rows)", path, count)
    return path


def _read_rows(path: str | Path, header: Sequence[str]) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise ValueError(f"{path}: expected header {','.join(header)}")
        return list(reader)


# --- Tables ---


def write_step_table(path: str | Path, rows: Iterable[StepTableRow]) -> Path:
    return write_csv(
        path,
        STEP_TABLE_HEADER,
        (
            (r.method, r.step, r.adversarial_accuracy, r.adversarial_loss)
            for r in rows
        ),
    )


def read_step_table(path: str | Path) -> list[StepTableRow]:
    return [
        StepTableRow(
            method=row["method"],
            step=int(row["step"]),
            adversarial_accuracy=float(row["adversarial_accuracy"]),
            adversarial_loss=float(row["adversarial_loss"]),
        )
        for row in _read_rows(path, STEP_TABLE_HEADER)
    ]


def write_security_curves(path: str | Path, curves: Iterable[SecurityCurve]) -> Path:
    return write_csv(
        path,
        SECURITY_CURVE_HEADER,
        (
            (curve.attack, curve.defense_model, eps, acc)
            for curve in curves
            for eps, acc in zip(curve.epsilons, curve.accuracies, strict=True)
        ),
    )


def read_security_curves(path: str | Path) -> list[SecurityCurve]:
    """Parse a security-curve CSV back into curves, in order of first appearance."""
    grouped: dict[tuple[str, str], tuple[list[float], list[float]]] = {}
    for row in _read_rows(path, SECURITY_CURVE_HEADER):
        key = (row["attack"], row["defense_model"])
        epsilons, accuracies = grouped.setdefault(key, ([], []))
        epsilons.append(float(row["epsilon"]))
        accuracies.append(float(row["adversarial_accuracy"]))
    return [
        SecurityCurve(
            epsilons=eps, accuracies=acc, attack=attack, defense_model=defense
        )
        for (attack, defense), (eps, acc) in grouped.items()
    ]


def write_histograms(path: str | Path, histograms: Iterable[Histogram]) -> Path:
    return write_csv(
        path,
        HISTOGRAM_HEADER,
        (
            (h.method, h.step, h.bin_edges[i], h.bin_edges[i + 1], count)
            for h in histograms
            for i, count in enumerate(h.counts)
        ),
    )


def write_evaluations(
    path: str | Path, results: Iterable[tuple[str, float, float]]
) -> Path:
    return write_csv(path, EVALUATION_HEADER, results)


def write_metrics(path: str | Path, history: Iterable[EpochMetrics]) -> Path:
    return write_csv(
        path,
        METRICS_HEADER,
        (
            (
                m.epoch,
                m.train_loss,
                m.train_accuracy,
                m.test_loss,
                m.test_accuracy,
                m.adversarial_accuracy,
            )
            for m in history
        ),
    )


def write_verification(path: str | Path, checks: Iterable[CheckResult]) -> Path:
    return write_csv(
        path,
        VERIFY_HEADER,
        ((c.check, c.max_error, c.threshold, c.passed) for c in checks),
    )


def write_band_energy(
    path: str | Path, energies: Iterable[tuple[int, float, float, float]]
) -> Path:
    return write_csv(path, BAND_ENERGY_HEADER, energies)


def write_value_mapping(
    path: str | Path, gradients: Tensor, signed: Tensor, unsigned: Tensor
) -> Path:
    return write_csv(
        path,
        VALUE_MAPPING_HEADER,
        zip(gradients.tolist(), signed.tolist(), unsigned.tolist(), strict=True),
    )


# --- Figures ---


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with mpl.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    log.info("Wrote %s", path)
    return path


def _heatmap(ax: Any, values: Tensor, title: str) -> None:
    limit = float(np.max(np.abs(values))) or 1.0
    mesh = ax.pcolormesh(values, cmap="RdBu_r", vmin=-limit, vmax=limit)
    ax.invert_yaxis()
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.figure.colorbar(mesh, ax=ax, fraction=0.046, pad=0.04)


def plot_heatmaps(
    path: str | Path, heatmaps: GradientHeatmaps, *, title: str = ""
) -> Path:
    """Pixel and frequency gradients side by side on a diverging scale centred at 0."""
    fig = Figure(figsize=(8, 4))
    pixel_ax, freq_ax = fig.subplots(1, 2)
    _heatmap(pixel_ax, heatmaps.pixel_grad, "pixel gradient")
    _heatmap(freq_ax, heatmaps.freq_grad, "DCT coefficient gradient")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_histograms(path: str | Path, histograms: Sequence[Histogram]) -> Path:
    """Step-by-step component histograms of one trace, one panel per step."""
    if not histograms:
        raise ValueError("no histograms to plot")
    fig = Figure(figsize=(3 * len(histograms), 3))
    axes = np.atleast_1d(fig.subplots(1, len(histograms), sharey=True))
    for ax, hist in zip(axes, histograms, strict=True):
        edges = np.asarray(hist.bin_edges)
        ax.stairs(hist.counts, edges, fill=True)
        for bound in (-hist.epsilon, hist.epsilon):
            ax.axvline(bound, color="black", linewidth=0.5, linestyle="--")
        ax.set_title(f"{hist.method} step {hist.step}")
        ax.set_xlabel("perturbation component")
    axes[0].set_ylabel("count")
    return _save(fig, path)


def plot_value_mapping(
    path: str | Path,
    gradients: Tensor,
    signed: Tensor,
    unsigned: Tensor,
    *,
    epsilon: float,
) -> Path:
    fig = Figure(figsize=(5, 4))
    ax = fig.subplots()
    ax.plot(gradients, signed, label="sign + projection")
    ax.plot(gradients, unsigned, label="projection only")
    ax.axhline(epsilon, color="grey", linewidth=0.5, linestyle=":")
    ax.axhline(-epsilon, color="grey", linewidth=0.5, linestyle=":")
    ax.set_xlabel("gradient value")
    ax.set_ylabel("first-step perturbation")
    ax.legend()
    return _save(fig, path)


def plot_security_curves(path: str | Path, curves: Sequence[SecurityCurve]) -> Path:
    fig = Figure(figsize=(5, 4))
    ax = fig.subplots()
    for curve in curves:
        ax.plot(
            curve.epsilons,
            curve.accuracies,
            marker="o",
            label=f"{curve.attack} vs {curve.defense_model}",
        )
    ax.set_xlabel("epsilon")
    ax.set_ylabel("adversarial accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize="small")
    return _save(fig, path)
