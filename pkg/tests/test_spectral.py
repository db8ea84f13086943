"""Tests for the orthonormal DCT and gradient transport."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectral_adv.exceptions import ShapeError
from spectral_adv.models import Model, input_gradient
from spectral_adv.spectral import (
    LARGE_STEP_SIZE,
    SpectralPlan,
    dct2,
    dct_basis,
    idct2,
    parseval_error,
    round_trip_error,
    verify_gradient_transport,
)

# millesimal grid keeps squared norms clear of underflow
finite = st.integers(min_value=-1_000_000, max_value=1_000_000).map(
    lambda v: v / 1000.0
)
sizes = st.integers(min_value=1, max_value=12)


@st.composite
def image_stacks(draw: st.DrawFn) -> np.ndarray:
    h, w = draw(sizes), draw(sizes)
    channels = draw(st.integers(min_value=1, max_value=3))
    return draw(arrays(np.float64, (channels, h, w), elements=finite))


def test_basis_single_element() -> None:
    """The 1-point DCT is the identity."""
    np.testing.assert_allclose(dct_basis(1), [[1.0]])


def test_constant_image_concentrates_in_dc() -> None:
    """A constant 2x2 image of ones has DC coefficient 2 and nothing else."""
    plan = SpectralPlan.for_shape(2, 2)
    z = dct2(plan, np.ones((1, 2, 2)))
    np.testing.assert_allclose(z, [[[2.0, 0.0], [0.0, 0.0]]], atol=1e-15)


def test_basis_rows_orthonormal() -> None:
    """B B^T is the identity for several sizes."""
    for n in (2, 7, 28, 32):
        basis = dct_basis(n)
        np.testing.assert_allclose(basis @ basis.T, np.eye(n), atol=1e-13)


def test_orthogonality_error_small() -> None:
    """A 28x28 plan deviates from orthonormal by less than 1e-12."""
    assert SpectralPlan.for_shape(28, 28).orthogonality_error() < 1e-12


def test_corrupted_plan_fails_orthogonality() -> None:
    """The negative-control plan is detectably non-orthogonal."""
    assert SpectralPlan.for_shape(8, 8).corrupted().orthogonality_error() > 1e-6


def test_basis_is_read_only() -> None:
    """Cached bases cannot be mutated by callers."""
    with pytest.raises(ValueError):
        dct_basis(4)[0, 0] = 1.0


def test_shape_mismatch() -> None:
    """A plan rejects inputs of another spatial size."""
    plan = SpectralPlan.for_shape(4, 4)
    with pytest.raises(ShapeError):
        dct2(plan, np.zeros((1, 4, 5)))


def test_bad_size() -> None:
    """DCT size must be positive."""
    with pytest.raises(ShapeError):
        dct_basis(0)


@given(image_stacks())
@settings(max_examples=50, deadline=None)
def test_round_trip(x: np.ndarray) -> None:
    """idct2(dct2(x)) reproduces x."""
    plan = SpectralPlan.for_input(x)
    scale = max(1.0, float(np.abs(x).max()))
    assert round_trip_error(plan, x) <= 1e-12 * scale
    np.testing.assert_allclose(dct2(plan, idct2(plan, x)), x, atol=1e-12 * scale)


@given(image_stacks())
@settings(max_examples=50, deadline=None)
def test_parseval(x: np.ndarray) -> None:
    """The DCT preserves the Euclidean norm."""
    plan = SpectralPlan.for_input(x)
    assert parseval_error(plan, x) <= 1e-12


@given(image_stacks(), st.floats(min_value=-10, max_value=10))
@settings(max_examples=30, deadline=None)
def test_linearity(x: np.ndarray, a: float) -> None:
    """dct2 is linear."""
    plan = SpectralPlan.for_input(x)
    y = np.roll(x, 1)
    scale = max(1.0, float(np.abs(x).max())) * max(1.0, abs(a))
    np.testing.assert_allclose(
        dct2(plan, a * x + y), a * dct2(plan, x) + dct2(plan, y), atol=1e-10 * scale
    )


def test_transport_linear_model(linear_model, linear_weight) -> None:
    """For J = w . x the frequency gradient is dct2(w)."""
    from spectral_adv.attacks import spectral_gradient

    x = np.full((1, 1, 8, 8), 0.5)
    plan = SpectralPlan.for_input(x)
    freq = spectral_gradient(linear_model, dct2(plan, x), np.array([0]), plan).grad
    np.testing.assert_allclose(freq[0], dct2(plan, linear_weight), atol=1e-12)


def test_transport_cnn(tiny_cnn: Model, images: np.ndarray, labels) -> None:
    """Graph and transported frequency gradients agree on a random CNN."""
    report = verify_gradient_transport(tiny_cnn, images, labels)
    assert report.max_rel_error < 1e-10
    assert report.scaled_max_rel_error < 1e-10
    assert report.scale == LARGE_STEP_SIZE


def test_transport_equals_dct_of_pixel_gradient(
    tiny_cnn: Model, images, labels
) -> None:
    """dct2 of the pixel gradient is the coefficient gradient."""
    from spectral_adv.attacks import spectral_gradient

    plan = SpectralPlan.for_input(images)
    pixel = input_gradient(tiny_cnn, images, labels).grad
    freq = spectral_gradient(tiny_cnn, dct2(plan, images), labels, plan).grad
    np.testing.assert_allclose(freq, dct2(plan, pixel), atol=1e-12)
