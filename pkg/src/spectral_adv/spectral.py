"""Orthonormal whole-image 2-D DCT and the gradient-transport checks built on it."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np

from spectral_adv.autodiff import Graph, Tensor, as_tensor, max_relative_error
from spectral_adv.exceptions import ShapeError
from spectral_adv.schemas import TransportReport

if TYPE_CHECKING:
    from spectral_adv.autodiff import LabelArray
    from spectral_adv.models import Classifier

log = logging.getLogger(__name__)

LARGE_STEP_SIZE = 75_000_000.0
"""Step size at which the scaled gradient routes are compared."""


@lru_cache(maxsize=64)
def _cached_basis(n: int) -> Tensor:
    k = np.arange(n, dtype=np.float64)[:, None]
    j = np.arange(n, dtype=np.float64)[None, :]
    basis = np.cos(np.pi * (2.0 * j + 1.0) * k / (2.0 * n))
    basis[0, :] *= np.sqrt(1.0 / n)
    basis[1:, :] *= np.sqrt(2.0 / n)
    basis.setflags(write=False)
    return basis


def dct_basis(n: int) -> Tensor:
    """Orthonormal DCT-II matrix: entry (k, j) = s_k cos(pi (2j+1) k / 2n)."""
    if n < 1:
        raise ShapeError(f"DCT size must be positive, got {n}")
    return _cached_basis(n)


@dataclass(frozen=True)
class SpectralPlan:
    """Precomputed row and column bases for images of one spatial size."""

    height: int
    width: int
    basis_row: Tensor
    basis_col: Tensor

    @classmethod
    def for_shape(cls, height: int, width: int) -> SpectralPlan:
        return cls(height, width, dct_basis(height), dct_basis(width))

    @classmethod
    def for_input(cls, x: Tensor) -> SpectralPlan:
        """Plan matching the last two axes of ``x``."""
        if x.ndim < 2:
            raise ShapeError(f"need at least two spatial axes, got shape {x.shape}")
        return cls.for_shape(x.shape[-2], x.shape[-1])

    def corrupted(self, amount: float = 1e-3) -> SpectralPlan:
        """Copy with one row-basis entry perturbed; a negative control for checks."""
        broken = self.basis_row.copy()
        broken[0, 0] += amount
        broken.setflags(write=False)
        return SpectralPlan(self.height, self.width, broken, self.basis_col)

    def check(self, x: Tensor) -> None:
        if x.ndim < 2 or x.shape[-2:] != (self.height, self.width):
            raise ShapeError(
                f"plan is {self.height}x{self.width}, input has shape {x.shape}"
            )

    def orthogonality_error(self) -> float:
        """Max-abs deviation of B^T B from identity over both bases."""
        return max(
            float(np.abs(b.T @ b - np.eye(b.shape[0])).max())
            for b in (self.basis_row, self.basis_col)
        )


def dct2(plan: SpectralPlan, image: Tensor) -> Tensor:
    """Per-channel 2-D DCT over the last two axes: z = B_H x B_W^T."""
    image = as_tensor(image)
    plan.check(image)
    return plan.basis_row @ image @ plan.basis_col.T


def idct2(plan: SpectralPlan, coeffs: Tensor) -> Tensor:
    """Inverse of :func:`dct2`: x = B_H^T z B_W."""
    coeffs = as_tensor(coeffs)
    plan.check(coeffs)
    return plan.basis_row.T @ coeffs @ plan.basis_col


def dct2_node(graph: Graph, plan: SpectralPlan, node: int) -> int:
    """Graph version of :func:`dct2`."""
    return graph.basis_transform(node, plan.basis_row, plan.basis_col)


def idct2_node(graph: Graph, plan: SpectralPlan, node: int) -> int:
    """Graph version of :func:`idct2`."""
    return graph.basis_transform(node, plan.basis_row.T, plan.basis_col.T)


# --- Verification ---


def round_trip_error(plan: SpectralPlan, x: Tensor) -> float:
    """Max-abs error of idct2(dct2(x)) against x."""
    return float(np.abs(idct2(plan, dct2(plan, x)) - x).max())


def parseval_error(plan: SpectralPlan, x: Tensor) -> float:
    """Relative 2-norm change under dct2."""
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        return float(np.linalg.norm(dct2(plan, x)))
    return abs(float(np.linalg.norm(dct2(plan, x))) - norm) / norm


def verify_gradient_transport(
    model: Classifier,
    x: Tensor,
    labels: LabelArray,
    plan: SpectralPlan | None = None,
    *,
    scale: float = LARGE_STEP_SIZE,
) -> TransportReport:
    """Compare two routes to the frequency-domain gradient.

    Route (a) differentiates J(IDCT(z)) with respect to z through the graph;
    route (b) applies dct2 to the pixel-domain gradient. For an orthonormal
    transform the two agree exactly, up to floating point.
    """
    x = as_tensor(x)
    plan = plan or SpectralPlan.for_input(x)
    labels = np.asarray(labels, dtype=np.int64)

    graph = Graph()
    z = graph.leaf(dct2(plan, x))
    loss = model.objective(graph, idct2_node(graph, plan, z), labels).loss
    through_graph = graph.backward(loss)[z]

    pixel_graph = Graph()
    pixels = pixel_graph.leaf(x)
    pixel_loss = model.objective(pixel_graph, pixels, labels).loss
    transported = dct2(plan, pixel_graph.backward(pixel_loss)[pixels])

    report = TransportReport(
        max_rel_error=max_relative_error(through_graph, transported),
        scaled_max_rel_error=max_relative_error(
            scale * through_graph, scale * transported
        ),
        scale=scale,
    )
    log.debug("Gradient transport: %s", report)
    return report
