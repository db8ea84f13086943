"""Define-by-run reverse-mode differentiation over dense float64 tensors.

A :class:`Graph` records primitive operations as they are evaluated. Every
primitive computes its value immediately (the forward pass) and stores one
vector-Jacobian product per input, so :meth:`Graph.backward` can compose exact
derivatives by the chain rule.

Example usage:
    graph = Graph()
    x = graph.leaf(np.array([1.0, 2.0, 3.0]))
    loss = graph.sum(graph.mul(x, x))
    graph.backward(loss)[x]  # array([2., 4., 6.])

Conventions:
- batch dimension leads; the loss reduces by mean over the batch
- convolution uses cross-correlation orientation (no kernel flip)
- 2x2 max-pool ties break toward the lowest flat index
- no broadcasting except :meth:`Graph.bias_add` along the channel axis
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from spectral_adv.exceptions import GraphError, NonFiniteError, ShapeError

if TYPE_CHECKING:
    from spectral_adv.models import Classifier

log = logging.getLogger(__name__)

Tensor = npt.NDArray[np.float64]
"""Row-major float64 array; the universal value and gradient carrier."""

LabelArray = npt.NDArray[np.int64]

VJP = Callable[[Tensor], Tensor]


def as_tensor(data: Any) -> Tensor:
    """Convert ``data`` to a float64 tensor, rejecting NaN and infinity."""
    array = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise NonFiniteError("tensor contains NaN or infinity")
    return array


@dataclass(frozen=True, slots=True)
class Node:
    """One evaluated primitive.

    ``kink`` holds the piecewise-linear activation pattern (ReLU sign mask or
    max-pool argmax) so finite-difference checks can detect kink crossings.
    """

    op: str
    inputs: tuple[int, ...]
    value: Tensor
    vjps: tuple[VJP, ...]
    requires_grad: bool
    kink: npt.NDArray[Any] | None = None


class Adjoints:
    """Result of :meth:`Graph.backward`; unreached nodes read as zeros."""

    def __init__(self, graph: Graph, grads: dict[int, Tensor]) -> None:
        self._graph = graph
        self._grads = grads

    def __getitem__(self, node: int) -> Tensor:
        grad = self._grads.get(node)
        if grad is None:
            return np.zeros_like(self._graph.value(node))
        return grad

    def __contains__(self, node: object) -> bool:
        return node in self._grads


class Graph:
    """Topologically ordered tape of primitive operations.

    Nodes are appended as primitives are called, so every node's inputs
    precede it. A graph is single-writer; distinct graphs share no state.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def value(self, node: int) -> Tensor:
        """Forward value of ``node``."""
        return self._node(node).value

    def kink_pattern(self) -> list[npt.NDArray[Any]]:
        """Activation patterns of every ReLU and max-pool node, in order."""
        return [node.kink for node in self.nodes if node.kink is not None]

    # --- Construction ---

    def _node(self, node: int) -> Node:
        if not 0 <= node < len(self.nodes):
            raise GraphError(f"unknown node {node} (graph has {len(self.nodes)})")
        return self.nodes[node]

    def _push(
        self,
        op: str,
        inputs: tuple[int, ...],
        value: Tensor,
        vjps: tuple[VJP, ...],
        kink: npt.NDArray[Any] | None = None,
    ) -> int:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{op} produced a non-finite value")
        requires_grad = any(self.nodes[i].requires_grad for i in inputs)
        self.nodes.append(
            Node(op, inputs, np.asarray(value), vjps, requires_grad, kink)
        )
        return len(self.nodes) - 1

    def leaf(self, value: Any, *, requires_grad: bool = True) -> int:
        """Add an input tensor."""
        tensor = as_tensor(value)
        self.nodes.append(Node("leaf", (), tensor, (), requires_grad))
        return len(self.nodes) - 1

    def constant(self, value: Any) -> int:
        """Add an input tensor that never receives an adjoint."""
        return self.leaf(value, requires_grad=False)

    # --- Primitives ---

    def add(self, a: int, b: int) -> int:
        av, bv = self.value(a), self.value(b)
        if av.shape != bv.shape:
            raise ShapeError(f"add: shapes {av.shape} and {bv.shape} differ")
        return self._push("add", (a, b), av + bv, (_identity, _identity))

    def scale(self, a: int, factor: float) -> int:
        av = self.value(a)
        return self._push("scale", (a,), av * factor, (lambda g: g * factor,))

    def mul(self, a: int, b: int) -> int:
        av, bv = self.value(a), self.value(b)
        if av.shape != bv.shape:
            raise ShapeError(f"mul: shapes {av.shape} and {bv.shape} differ")
        return self._push("mul", (a, b), av * bv, (lambda g: g * bv, lambda g: g * av))

    def matmul(self, a: int, b: int) -> int:
        av, bv = self.value(a), self.value(b)
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
        return self._push(
            "matmul",
            (a, b),
            av @ bv,
            (lambda g: g @ bv.T, lambda g: av.T @ g),
        )

    def bias_add(self, x: int, bias: int) -> int:
        """Add a per-channel bias along axis 1."""
        xv, bv = self.value(x), self.value(bias)
        if xv.ndim < 2 or bv.shape != (xv.shape[1],):
            raise ShapeError(f"bias_add: bias {bv.shape} does not fit input {xv.shape}")
        shape = (1, bv.shape[0]) + (1,) * (xv.ndim - 2)
        reduce_axes = tuple(i for i in range(xv.ndim) if i != 1)
        return self._push(
            "bias_add",
            (x, bias),
            xv + bv.reshape(shape),
            (_identity, lambda g: g.sum(axis=reduce_axes)),
        )

    def conv2d(self, x: int, weight: int, padding: int = 0) -> int:
        """Stride-1 cross-correlation of [N,C,H,W] with [F,C,kh,kw], zero padding."""
        xv, wv = self.value(x), self.value(weight)
        if xv.ndim != 4 or wv.ndim != 4 or xv.shape[1] != wv.shape[1]:
            raise ShapeError(f"conv2d: input {xv.shape} and kernel {wv.shape} mismatch")
        if padding < 0:
            raise ShapeError(f"conv2d: negative padding {padding}")
        _, _, height, width = xv.shape
        kh, kw = wv.shape[2:]
        if height + 2 * padding < kh or width + 2 * padding < kw:
            raise ShapeError(f"conv2d: kernel {wv.shape} larger than input {xv.shape}")

        pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
        windows = sliding_window_view(np.pad(xv, pad), (kh, kw), axis=(2, 3))
        out = np.tensordot(windows, wv, axes=([1, 4, 5], [1, 2, 3]))
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

        def grad_input(g: Tensor) -> Tensor:
            full = ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1))
            g_windows = sliding_window_view(np.pad(g, full), (kh, kw), axis=(2, 3))
            flipped = wv[:, :, ::-1, ::-1]
            dxp = np.tensordot(g_windows, flipped, axes=([1, 4, 5], [0, 2, 3]))
            dxp = dxp.transpose(0, 3, 1, 2)
            return np.ascontiguousarray(
                dxp[:, :, padding : padding + height, padding : padding + width]
            )

        def grad_weight(g: Tensor) -> Tensor:
            return np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))

        return self._push("conv2d", (x, weight), out, (grad_input, grad_weight))

    def maxpool2x2(self, x: int) -> int:
        """2x2 max-pool with stride 2; ties go to the lowest flat index."""
        xv = self.value(x)
        if xv.ndim != 4 or xv.shape[2] % 2 or xv.shape[3] % 2:
            raise ShapeError(f"maxpool2x2: needs [N,C,even,even], got {xv.shape}")
        n, c, h, w = xv.shape
        windows = (
            xv.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4)
        )
        # argmax returns the first maximum, i.e. the lowest flat index
        winner = windows.argmax(axis=-1)[..., None]
        out = np.take_along_axis(windows, winner, axis=-1)[..., 0]

        def grad_input(g: Tensor) -> Tensor:
            scattered = np.zeros_like(windows)
            np.put_along_axis(scattered, winner, g[..., None], axis=-1)
            return (
                scattered.reshape(n, c, h // 2, w // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w)
            )

        return self._push("maxpool2x2", (x,), out, (grad_input,), kink=winner[..., 0])

    def relu(self, x: int) -> int:
        xv = self.value(x)
        active = xv > 0
        return self._push(
            "relu",
            (x,),
            np.where(active, xv, 0.0),
            (lambda g: g * active,),
            kink=active,
        )

    def reshape(self, x: int, shape: Sequence[int]) -> int:
        xv = self.value(x)
        try:
            out = xv.reshape(tuple(shape))
        except ValueError as exc:
            raise ShapeError(
                f"reshape: cannot view {xv.shape} as {tuple(shape)}"
            ) from exc
        original = xv.shape
        return self._push("reshape", (x,), out, (lambda g: g.reshape(original),))

    def sum(self, x: int) -> int:
        """Sum of all components, as a scalar."""
        xv = self.value(x)
        shape = xv.shape
        return self._push(
            "sum",
            (x,),
            np.asarray(xv.sum()),
            (lambda g: np.broadcast_to(g, shape).copy(),),
        )

    def basis_transform(self, x: int, left: Tensor, right: Tensor) -> int:
        """Fixed-matrix product ``left @ x @ right.T`` over the last two axes."""
        xv = self.value(x)
        if xv.ndim < 2 or xv.shape[-2:] != (left.shape[1], right.shape[1]):
            raise ShapeError(
                f"basis_transform: bases {left.shape}, {right.shape} "
                f"do not fit {xv.shape}"
            )
        return self._push(
            "basis_transform",
            (x,),
            left @ xv @ right.T,
            (lambda g: left.T @ g @ right,),
        )

    def softmax_cross_entropy(self, logits: int, labels: LabelArray) -> int:
        """Mean softmax cross-entropy of [N,K] logits against integer labels."""
        zv = self.value(logits)
        labels = np.asarray(labels, dtype=np.int64)
        if zv.ndim != 2 or labels.shape != (zv.shape[0],):
            raise ShapeError(
                f"softmax_cross_entropy: logits {zv.shape} vs labels {labels.shape}"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= zv.shape[1]):
            raise ShapeError(f"softmax_cross_entropy: label outside [0, {zv.shape[1]})")
        n = zv.shape[0]
        rows = np.arange(n)
        shifted = zv - zv.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        loss = np.asarray(np.mean(log_norm - shifted[rows, labels]))
        probs = np.exp(shifted - log_norm[:, None])

        def grad_logits(g: Tensor) -> Tensor:
            delta = probs.copy()
            delta[rows, labels] -= 1.0
            return delta * (g / n)

        return self._push("softmax_cross_entropy", (logits,), loss, (grad_logits,))

    # --- Reverse pass ---

    def backward(self, output: int) -> Adjoints:
        """Propagate adjoints from the scalar ``output`` to every reachable node."""
        out = self._node(output)
        if out.value.size != 1:
            raise GraphError(
                f"backward needs a scalar output, got shape {out.value.shape}"
            )
        grads: dict[int, Tensor] = {output: np.ones_like(out.value)}
        for index in range(output, -1, -1):
            g = grads.get(index)
            if g is None:
                continue
            node = self.nodes[index]
            for parent, vjp in zip(node.inputs, node.vjps, strict=True):
                if not self.nodes[parent].requires_grad:
                    continue
                contribution = vjp(g)
                previous = grads.get(parent)
                grads[parent] = (
                    contribution if previous is None else previous + contribution
                )
        return Adjoints(self, grads)


def _identity(g: Tensor) -> Tensor:
    return g


# --- Finite-difference oracle ---


def max_relative_error(
    actual: Tensor, reference: Tensor, *, floor: float = 1e-12
) -> float:
    """Largest component deviation, relative to the reference's max magnitude.

    NaN entries of ``reference`` (kink-excluded coordinates) are ignored.
    """
    actual = np.asarray(actual, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if actual.shape != reference.shape:
        raise ShapeError(f"cannot compare {actual.shape} with {reference.shape}")
    keep = np.isfinite(reference)
    if not keep.any():
        return 0.0
    scale = max(float(np.abs(reference[keep]).max()), floor)
    return float(np.abs(actual[keep] - reference[keep]).max() / scale)


def _same_pattern(a: list[npt.NDArray[Any]], b: list[npt.NDArray[Any]]) -> bool:
    return len(a) == len(b) and all(
        np.array_equal(p, q) for p, q in zip(a, b, strict=True)
    )


Probe = Callable[[Tensor], tuple[Graph, int]]


def central_differences(
    evaluate: Probe,
    x: Tensor,
    step: float,
    *,
    coordinates: npt.ArrayLike | None = None,
    exclude_kinks: bool = True,
) -> Tensor:
    """Central differences of a scalar at flat coordinates of ``x``.

    ``evaluate`` builds a fresh graph at a point and returns it with the
    scalar node. Coordinates whose +h or -h evaluation changes a ReLU or
    max-pool pattern are returned as NaN when ``exclude_kinks`` is set.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x = as_tensor(x)
    flat = x.reshape(-1)
    coords = np.arange(flat.size) if coordinates is None else np.asarray(coordinates)
    base = evaluate(x)[0].kink_pattern() if exclude_kinks else []
    estimates = np.empty(coords.size, dtype=np.float64)
    excluded = 0
    for out, index in enumerate(coords):
        probe = flat.copy()
        probe[index] = flat[index] + step
        plus, plus_node = evaluate(probe.reshape(x.shape))
        probe[index] = flat[index] - step
        minus, minus_node = evaluate(probe.reshape(x.shape))
        if exclude_kinks and not (
            _same_pattern(base, plus.kink_pattern())
            and _same_pattern(base, minus.kink_pattern())
        ):
            estimates[out] = np.nan
            excluded += 1
            continue
        upper = float(plus.value(plus_node))
        lower = float(minus.value(minus_node))
        estimates[out] = (upper - lower) / (2.0 * step)
    if excluded:
        log.warning("Excluded %d of %d coordinates near a kink", excluded, coords.size)
    if coordinates is None:
        return estimates.reshape(x.shape)
    return estimates


def finite_diff_gradient(
    model: Classifier,
    x: Tensor,
    labels: LabelArray,
    step: float = 1e-5,
    *,
    coordinates: npt.ArrayLike | None = None,
    exclude_kinks: bool = True,
) -> Tensor:
    """Central-difference estimate of the input gradient of ``model``'s loss.

    Returns the full gradient shaped like ``x``, or a 1-D array of estimates
    when ``coordinates`` (flat indices) are given.
    """
    labels = np.asarray(labels, dtype=np.int64)

    def evaluate(point: Tensor) -> tuple[Graph, int]:
        graph = Graph()
        objective = model.objective(graph, graph.constant(point), labels)
        return graph, objective.loss

    return central_differences(
        evaluate,
        x,
        step,
        coordinates=coordinates,
        exclude_kinks=exclude_kinks,
    )


def gradient_check(
    build: Callable[[Graph, list[int]], int],
    inputs: Sequence[Tensor],
    *,
    step: float = 1e-5,
) -> float:
    """Compare backward adjoints of ``build`` with central differences.

    ``build`` receives a graph and one leaf per input and returns a scalar
    node. Returns the max relative error over all inputs.
    """
    tensors = [as_tensor(t) for t in inputs]
    graph = Graph()
    leaves = [graph.leaf(t) for t in tensors]
    loss = build(graph, leaves)
    adjoints = graph.backward(loss)

    worst = 0.0
    for position, tensor in enumerate(tensors):

        def evaluate(point: Tensor, position: int = position) -> tuple[Graph, int]:
            probe = Graph()
            ids = [
                probe.constant(point if i == position else t)
                for i, t in enumerate(tensors)
            ]
            return probe, build(probe, ids)

        numeric = central_differences(evaluate, tensor, step)
        worst = max(worst, max_relative_error(adjoints[leaves[position]], numeric))
    return worst
