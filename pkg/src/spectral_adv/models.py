"""Differentiable classifiers described by a compact architecture string.

An architecture descriptor reads, for the MNIST network:

    input=1x28x28;range=0.0,1.0;layers=conv16x5,pool,conv32x5,pool,fc128,fc10

Layer tokens:
- ``conv<F>x<K>`` convolution with F filters of size KxK, same padding
  (``conv<F>x<K>p<P>`` sets the padding explicitly), followed by ReLU
- ``pool`` 2x2 max-pool
- ``fc<N>`` fully connected layer with N outputs, followed by ReLU unless last
"""

from __future__ import annotations

import logging
import re
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Literal, NamedTuple, Protocol

import numpy as np
import numpy.typing as npt

from spectral_adv.autodiff import Graph, LabelArray, Tensor, as_tensor
from spectral_adv.exceptions import ShapeError

log = logging.getLogger(__name__)

MNIST_LAYERS = "conv16x5,pool,conv32x5,pool,fc128,fc10"

_TOKEN = re.compile(r"^(?:conv(\d+)x(\d+)(?:p(\d+))?|pool|fc(\d+))$")


class Objective(NamedTuple):
    """Node ids of the scalar loss and the [N, K] logits."""

    loss: int
    logits: int


class Classifier(Protocol):
    """Anything that can add its loss J(f(x), y) to a graph."""

    def objective(self, graph: Graph, x: int, labels: LabelArray) -> Objective: ...


@dataclass(frozen=True)
class Layer:
    kind: Literal["conv", "pool", "fc"]
    size: int = 0
    kernel: int = 0
    padding: int = 0

    @classmethod
    def parse(cls, token: str) -> Layer:
        match = _TOKEN.match(token.strip())
        if match is None:
            raise ValueError(f"unknown layer token {token!r}")
        filters, kernel, padding, units = match.groups()
        if filters is not None:
            k = int(kernel)
            pad = k // 2 if padding is None else int(padding)
            return cls("conv", int(filters), k, pad)
        if units is not None:
            return cls("fc", int(units))
        return cls("pool")

    @property
    def token(self) -> str:
        if self.kind == "conv":
            suffix = "" if self.padding == self.kernel // 2 else f"p{self.padding}"
            return f"conv{self.size}x{self.kernel}{suffix}"
        if self.kind == "fc":
            return f"fc{self.size}"
        return "pool"


@dataclass(frozen=True)
class Architecture:
    input_shape: tuple[int, int, int]
    layers: tuple[Layer, ...]
    value_range: tuple[float, float] = (0.0, 1.0)

    @classmethod
    def parse(cls, descriptor: str) -> Architecture:
        """Inverse of :attr:`descriptor`."""
        try:
            fields = dict(part.split("=", 1) for part in descriptor.strip().split(";"))
            shape = tuple(int(v) for v in fields["input"].split("x"))
            lo, hi = (float(v) for v in fields.get("range", "0.0,1.0").split(","))
            layers = tuple(Layer.parse(t) for t in fields["layers"].split(","))
        except (KeyError, ValueError) as exc:
            raise ValueError(
                f"malformed architecture descriptor {descriptor!r}"
            ) from exc
        if len(shape) != 3:
            raise ValueError(f"input shape must be CxHxW, got {fields['input']!r}")
        return cls((shape[0], shape[1], shape[2]), layers, (lo, hi))

    @classmethod
    def mnist(cls) -> Architecture:
        """Two conv + two FC layers, each conv followed by 2x2 max-pooling."""
        return cls.parse(f"input=1x28x28;range=0.0,1.0;layers={MNIST_LAYERS}")

    @property
    def descriptor(self) -> str:
        c, h, w = self.input_shape
        lo, hi = self.value_range
        layers = ",".join(layer.token for layer in self.layers)
        return f"input={c}x{h}x{w};range={lo!r},{hi!r};layers={layers}"

    @property
    def num_classes(self) -> int:
        if not self.layers or self.layers[-1].kind != "fc":
            raise ValueError("the last layer must be fully connected")
        return self.layers[-1].size

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        """Named parameter shapes in architecture order."""
        shapes: dict[str, tuple[int, ...]] = {}
        channels, height, width = self.input_shape
        flat: int | None = None
        conv_count = fc_count = 0
        for layer in self.layers:
            if layer.kind == "conv":
                if flat is not None:
                    raise ValueError("conv layer after a fully connected layer")
                conv_count += 1
                shapes[f"conv{conv_count}.weight"] = (
                    layer.size,
                    channels,
                    layer.kernel,
                    layer.kernel,
                )
                shapes[f"conv{conv_count}.bias"] = (layer.size,)
                channels = layer.size
                height = height + 2 * layer.padding - layer.kernel + 1
                width = width + 2 * layer.padding - layer.kernel + 1
            elif layer.kind == "pool":
                if flat is not None or height % 2 or width % 2:
                    raise ValueError(f"cannot pool a {height}x{width} feature map")
                height, width = height // 2, width // 2
            else:
                fc_count += 1
                fan_in = channels * height * width if flat is None else flat
                shapes[f"fc{fc_count}.weight"] = (fan_in, layer.size)
                shapes[f"fc{fc_count}.bias"] = (layer.size,)
                flat = layer.size
            if height < 1 or width < 1:
                raise ValueError(f"feature map vanished at layer {layer.token}")
        return shapes


class Model:
    """Parameterized classifier f_theta with metadata.

    Parameters are float64 arrays keyed by name in architecture order.
    """

    def __init__(
        self, architecture: Architecture, params: Mapping[str, Tensor]
    ) -> None:
        expected = architecture.parameter_shapes()
        if list(params) != list(expected):
            raise ShapeError(f"parameters {list(params)} do not match {list(expected)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {params[name].shape}")
        self.architecture = architecture
        self.params: dict[str, Tensor] = {
            k: as_tensor(v).copy() for k, v in params.items()
        }

    @classmethod
    def initialize(cls, architecture: Architecture, seed: int = 0) -> Model:
        """He-normal weights and zero biases from a seeded generator."""
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        for name, shape in architecture.parameter_shapes().items():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
                params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        return cls(architecture, params)

    def copy(self) -> Model:
        return Model(self.architecture, self.params)

    @property
    def descriptor(self) -> str:
        return self.architecture.descriptor

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.architecture.input_shape

    @property
    def num_classes(self) -> int:
        return self.architecture.num_classes

    @property
    def value_range(self) -> tuple[float, float]:
        return self.architecture.value_range

    # --- Graph construction ---

    def attach(self, graph: Graph) -> dict[str, int]:
        """Add every parameter as a differentiable leaf."""
        return {name: graph.leaf(value) for name, value in self.params.items()}

    def objective(
        self,
        graph: Graph,
        x: int,
        labels: LabelArray,
        *,
        params: Mapping[str, int] | None = None,
    ) -> Objective:
        """Add logits and mean cross-entropy for input node ``x``.

        Parameters enter as constants unless ``params`` (from :meth:`attach`)
        is given.
        """
        if params is None:
            params = {k: graph.constant(v) for k, v in self.params.items()}
        if graph.value(x).shape[1:] != self.input_shape:
            raise ShapeError(
                f"model expects [N, {self.input_shape}], got {graph.value(x).shape}"
            )
        h = x
        conv_count = fc_count = 0
        for position, layer in enumerate(self.architecture.layers):
            last = position == len(self.architecture.layers) - 1
            if layer.kind == "conv":
                conv_count += 1
                prefix = f"conv{conv_count}"
                h = graph.conv2d(h, params[f"{prefix}.weight"], padding=layer.padding)
                h = graph.relu(graph.bias_add(h, params[f"{prefix}.bias"]))
            elif layer.kind == "pool":
                h = graph.maxpool2x2(h)
            else:
                fc_count += 1
                prefix = f"fc{fc_count}"
                if graph.value(h).ndim != 2:
                    h = graph.reshape(h, (graph.value(h).shape[0], -1))
                h = graph.matmul(h, params[f"{prefix}.weight"])
                h = graph.bias_add(h, params[f"{prefix}.bias"])
                if not last:
                    h = graph.relu(h)
        return Objective(graph.softmax_cross_entropy(h, labels), h)

    # --- Convenience ---

    def logits(self, x: Tensor) -> Tensor:
        graph = Graph()
        labels = np.zeros(np.shape(x)[0], dtype=np.int64)
        return graph.value(self.objective(graph, graph.constant(x), labels).logits)

    def predict(self, x: Tensor) -> LabelArray:
        return np.asarray(self.logits(x).argmax(axis=1), dtype=np.int64)


@dataclass(frozen=True)
class Evaluation:
    """Loss, gradient, and per-sample correctness at one point."""

    loss: float
    grad: Tensor
    correct: npt.NDArray[np.bool_]


def correctness(
    graph: Graph, objective: Objective, labels: LabelArray
) -> npt.NDArray[np.bool_]:
    logits = graph.value(objective.logits)
    return np.asarray(logits.argmax(axis=1) == labels)


def input_gradient(model: Classifier, x: Tensor, labels: LabelArray) -> Evaluation:
    """Loss and its gradient with respect to the input batch."""
    graph = Graph()
    node = graph.leaf(x)
    objective = model.objective(graph, node, labels)
    grad = graph.backward(objective.loss)[node]
    return Evaluation(
        float(graph.value(objective.loss)), grad, correctness(graph, objective, labels)
    )


def parameter_gradients(
    model: Model, x: Tensor, labels: LabelArray
) -> tuple[float, dict[str, Tensor], npt.NDArray[np.bool_]]:
    """Loss, per-parameter gradients, and correctness for one batch."""
    graph = Graph()
    leaves = model.attach(graph)
    objective = model.objective(graph, graph.constant(x), labels, params=leaves)
    adjoints = graph.backward(objective.loss)
    grads = {name: adjoints[node] for name, node in leaves.items()}
    return (
        float(graph.value(objective.loss)),
        grads,
        correctness(graph, objective, labels),
    )
