"""Trainable function family, reverse-mode gradient tape and Adam.

A :class:`ParametricFunction` is a multilayer perceptron over
``[features(t), x(, y)]`` whose parameters live in one flat vector. Losses are
recorded on a :class:`Tape`; calling :meth:`Tape.gradient` replays the tape in
reverse. Brownian increments and other sampled quantities enter a tape as
constants, so losses over unrolled trajectories get pathwise gradients.
"""
import configparser
import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit
from tqdm import tqdm

from .config import Defaults
from .exceptions import (
    ArchitectureError,
    OptimizerError,
    TapeError,
    TrainingError,
)
from .version import __version__

logger = logging.getLogger(__name__)

Array = np.ndarray
Operand = Union["Node", Array, float]


def _unbroadcast(grad: Array, shape: Tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    """A value recorded on a tape, together with how to push a cotangent back
    to the nodes it was computed from."""

    __slots__ = ("tape", "value", "parents", "vjps", "index")
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", value, parents=(), vjps=()):
        self.tape = tape
        self.value = np.asarray(value, dtype=float)
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of the recorded value."""
        return self.value.shape

    def __add__(self, other: Operand) -> "Node":
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Operand) -> "Node":
        return self.tape.sub(self, other)

    def __rsub__(self, other: Operand) -> "Node":
        return self.tape.sub(other, self)

    def __mul__(self, other: Operand) -> "Node":
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Node":
        if isinstance(other, Node):
            raise TapeError("division by a recorded node is not supported")
        return self.tape.mul(self, 1.0 / np.asarray(other, dtype=float))

    def __matmul__(self, other: Operand) -> "Node":
        return self.tape.matmul(self, other)

    def __neg__(self) -> "Node":
        return self.tape.neg(self)

    def __repr__(self) -> str:
        return f"Node(index={self.index}, shape={self.shape})"


class Tape:
    """Records one loss evaluation; nodes are appended in evaluation order,
    which is a topological order of the graph."""

    def __init__(self):
        self.nodes: List[Node] = []

    def lift(self, value: Operand) -> Node:
        """Returns ``value`` as a node of this tape."""
        if isinstance(value, Node):
            if value.tape is not self:
                raise TapeError("node belongs to a different tape")
            return value
        return Node(self, value)

    def constant(self, value) -> Node:
        """A leaf whose value is fixed, e.g. recorded noise."""
        return Node(self, value)

    def variable(self, value) -> Node:
        """A leaf to differentiate with respect to."""
        return Node(self, np.array(value, dtype=float))

    def add(self, a: Operand, b: Operand) -> Node:
        a, b = self.lift(a), self.lift(b)
        return Node(
            self,
            a.value + b.value,
            (a, b),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
        )

    def sub(self, a: Operand, b: Operand) -> Node:
        a, b = self.lift(a), self.lift(b)
        return Node(
            self,
            a.value - b.value,
            (a, b),
            (lambda g: _unbroadcast(g, a.shape), lambda g: -_unbroadcast(g, b.shape)),
        )

    def mul(self, a: Operand, b: Operand) -> Node:
        a, b = self.lift(a), self.lift(b)
        return Node(
            self,
            a.value * b.value,
            (a, b),
            (
                lambda g: _unbroadcast(g * b.value, a.shape),
                lambda g: _unbroadcast(g * a.value, b.shape),
            ),
        )

    def matmul(self, a: Operand, b: Operand) -> Node:
        """Product of two 2-d operands."""
        a, b = self.lift(a), self.lift(b)
        if a.value.ndim != 2 or b.value.ndim != 2:
            raise TapeError(
                f"matmul needs 2-d operands, got {a.value.shape} and {b.value.shape}"
            )
        return Node(
            self,
            a.value @ b.value,
            (a, b),
            (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
        )

    def neg(self, a: Operand) -> Node:
        a = self.lift(a)
        return Node(self, -a.value, (a,), (lambda g: -g,))

    def square(self, a: Operand) -> Node:
        a = self.lift(a)
        return Node(self, a.value**2, (a,), (lambda g: 2.0 * g * a.value,))

    def silu(self, a: Operand) -> Node:
        """``x * sigmoid(x)``."""
        a = self.lift(a)
        sigmoid = expit(a.value)
        slope = sigmoid * (1.0 + a.value * (1.0 - sigmoid))
        return Node(self, a.value * sigmoid, (a,), (lambda g: g * slope,))

    def sum(self, a: Operand, axis: Optional[int] = None) -> Node:
        a = self.lift(a)

        def vjp(g: Array) -> Array:
            if axis is not None:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, a.shape).copy()

        return Node(self, a.value.sum(axis=axis), (a,), (vjp,))

    def mean(self, a: Operand, axis: Optional[int] = None) -> Node:
        a = self.lift(a)
        count = a.value.size if axis is None else a.shape[axis]
        return self.mul(self.sum(a, axis), 1.0 / count)

    def concat(self, parts: Sequence[Operand], axis: int = -1) -> Node:
        nodes = [self.lift(part) for part in parts]
        bounds = np.cumsum([0] + [node.shape[axis] for node in nodes])

        def take(start: int, stop: int) -> Callable[[Array], Array]:
            return lambda g: np.take(g, np.arange(start, stop), axis=axis)

        return Node(
            self,
            np.concatenate([node.value for node in nodes], axis=axis),
            nodes,
            [take(bounds[i], bounds[i + 1]) for i in range(len(nodes))],
        )

    def slice(self, a: Node, start: int, stop: int, shape: Tuple[int, ...]) -> Node:
        """Reshaped view ``a[start:stop]`` of a flat node."""

        def vjp(g: Array) -> Array:
            full = np.zeros(a.shape)
            full[start:stop] = g.ravel()
            return full

        return Node(self, a.value[start:stop].reshape(shape), (a,), (vjp,))

    def custom(
        self,
        value,
        parents: Sequence[Operand],
        vjps: Sequence[Callable[[Array], Array]],
    ) -> Node:
        """A node with a user supplied value and vector-Jacobian products,
        e.g. a target log-density with its analytic gradient."""
        return Node(self, value, [self.lift(p) for p in parents], vjps)

    def gradient(self, root: Node, wrt: Sequence[Node]) -> List[Array]:
        """Reverse-mode gradient of the scalar ``root`` with respect to each
        node of ``wrt``; nodes the root does not depend on get zeros."""
        if root.tape is not self:
            raise TapeError("root belongs to a different tape")
        if root.value.size != 1:
            raise TapeError(f"gradient root must be a scalar, got shape {root.shape}")
        grads: Dict[int, Array] = {root.index: np.ones(root.shape)}
        wanted = {node.index for node in wrt}
        kept: Dict[int, Array] = {}
        for node in reversed(self.nodes[: root.index + 1]):
            g = grads.pop(node.index, None)
            if g is None:
                continue
            if node.index in wanted:
                kept[node.index] = g
            for parent, vjp in zip(node.parents, node.vjps):
                contribution = vjp(g)
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + contribution
                else:
                    grads[parent.index] = contribution
        return [
            np.array(kept.get(node.index, np.zeros(node.shape)), dtype=float)
            for node in wrt
        ]


@dataclass(frozen=True)
class NetworkConfig:
    """Hyperparameters of the perceptron family."""

    hidden: Tuple[int, ...] = (64, 64)
    time_features: int = 16
    min_frequency: float = 1.0
    max_frequency: float = 32.0
    output_scale: float = 1e-2

    @classmethod
    def from_defaults(cls, **overrides) -> "NetworkConfig":
        """Reads ``[network]`` from Defaults; keyword arguments win."""
        values = dict(
            hidden=Defaults.get_ints("network", "hidden"),
            time_features=Defaults.get_int("network", "time_features"),
            min_frequency=Defaults.get_float("network", "min_frequency"),
            max_frequency=Defaults.get_float("network", "max_frequency"),
            output_scale=Defaults.get_float("network", "output_scale"),
        )
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class Architecture:
    """Input/output dimensions plus the network hyperparameters."""

    dimension: int
    cond_dim: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if self.dimension < 1 or self.cond_dim < 0:
            raise ArchitectureError(
                f"invalid dimensions d={self.dimension}, p={self.cond_dim}"
            )
        if self.network.time_features % 2:
            raise ArchitectureError("time_features must be even")

    @property
    def input_dim(self) -> int:
        """Width of ``[features(t), x, y]``."""
        return self.network.time_features + self.dimension + self.cond_dim

    @property
    def widths(self) -> Tuple[int, ...]:
        """Layer widths from input to output."""
        return (self.input_dim,) + tuple(self.network.hidden) + (self.dimension,)

    @property
    def layer_shapes(self) -> List[Tuple[Tuple[int, int], Tuple[int]]]:
        """(weight shape, bias shape) per layer."""
        widths = self.widths
        return [((widths[i], widths[i + 1]), (widths[i + 1],)) for i in range(len(widths) - 1)]

    @property
    def size(self) -> int:
        """Number of scalar parameters."""
        return sum(w[0] * w[1] + b[0] for w, b in self.layer_shapes)

    @property
    def frequencies(self) -> Array:
        """Geometric ladder of time-feature frequencies."""
        count = self.network.time_features // 2
        if count == 0:
            return np.zeros(0)
        return np.geomspace(self.network.min_frequency, self.network.max_frequency, count)

    def describe(self) -> Dict[str, object]:
        """JSON-able descriptor."""
        return {
            "dimension": self.dimension,
            "cond_dim": self.cond_dim,
            "hidden": list(self.network.hidden),
            "time_features": self.network.time_features,
            "min_frequency": self.network.min_frequency,
            "max_frequency": self.network.max_frequency,
            "output_scale": self.network.output_scale,
        }

    @classmethod
    def from_description(cls, description: Dict[str, object]) -> "Architecture":
        return cls(
            dimension=int(description["dimension"]),
            cond_dim=int(description["cond_dim"]),
            network=NetworkConfig(
                hidden=tuple(int(h) for h in description["hidden"]),
                time_features=int(description["time_features"]),
                min_frequency=float(description["min_frequency"]),
                max_frequency=float(description["max_frequency"]),
                output_scale=float(description["output_scale"]),
            ),
        )


def time_features(architecture: Architecture, t, n: int) -> Array:
    """Sinusoidal features ``[sin(w t), cos(w t)]`` of shape (n, F)."""
    times = np.asarray(t, dtype=float)
    times = np.full(n, float(times)) if times.ndim == 0 else times.reshape(n)
    angles = times[:, None] * architecture.frequencies[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class BoundFunction:
    """A ParametricFunction whose parameters are recorded on a tape.

    Every call reuses the same parameter nodes, so a trajectory that calls the
    network at each step accumulates one gradient for ``theta``."""

    def __init__(self, function: "ParametricFunction", tape: Tape, trainable: bool):
        self.function = function
        self.tape = tape
        self.theta = (
            tape.variable(function.theta) if trainable else tape.constant(function.theta)
        )
        self.layers = []
        offset = 0
        for wShape, bShape in function.architecture.layer_shapes:
            wSize = wShape[0] * wShape[1]
            weight = tape.slice(self.theta, offset, offset + wSize, wShape)
            offset += wSize
            bias = tape.slice(self.theta, offset, offset + bShape[0], bShape)
            offset += bShape[0]
            self.layers.append((weight, bias))

    def __call__(self, t, x: Operand, y: Optional[Operand] = None) -> Node:
        """Evaluates the network on the tape; ``x`` is (n, d)."""
        tape = self.tape
        x = tape.lift(x)
        if x.value.ndim != 2:
            raise ArchitectureError("tape evaluation needs (n, d) inputs")
        n = x.shape[0]
        self.function.check_inputs(x.shape[1], None if y is None else np.shape(
            y.value if isinstance(y, Node) else y
        )[-1])
        parts = [tape.constant(time_features(self.function.architecture, t, n)), x]
        if y is not None:
            yValue = y if isinstance(y, Node) else np.broadcast_to(
                np.asarray(y, dtype=float), (n, self.function.architecture.cond_dim)
            )
            parts.append(yValue)
        hidden = tape.concat(parts, axis=1)
        for i, (weight, bias) in enumerate(self.layers):
            hidden = hidden @ weight + bias
            if i < len(self.layers) - 1:
                hidden = tape.silu(hidden)
        return hidden


@dataclass
class ParametricFunction:
    """Perceptron ``(t, x[, y]) -> R^d`` with a flat parameter vector."""

    architecture: Architecture
    theta: Array

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        if self.theta.size != self.architecture.size:
            raise ArchitectureError(
                f"expected {self.architecture.size} parameters, got {self.theta.size}"
            )

    @classmethod
    def initialize(
        cls, architecture: Architecture, rng: np.random.Generator
    ) -> "ParametricFunction":
        """Uniform Glorot weights, zero biases, last layer scaled by
        ``output_scale``."""
        chunks = []
        shapes = architecture.layer_shapes
        for i, (wShape, bShape) in enumerate(shapes):
            limit = np.sqrt(6.0 / (wShape[0] + wShape[1]))
            weight = rng.uniform(-limit, limit, size=wShape)
            if i == len(shapes) - 1:
                weight *= architecture.network.output_scale
            chunks.extend([weight.ravel(), np.zeros(bShape)])
        return cls(architecture, np.concatenate(chunks))

    @classmethod
    def zeros(cls, architecture: Architecture) -> "ParametricFunction":
        """All weights and biases zero; evaluates to zero everywhere."""
        return cls(architecture, np.zeros(architecture.size))

    @property
    def num_parameters(self) -> int:
        return self.theta.size

    def layers(self, theta: Optional[Array] = None) -> List[Tuple[Array, Array]]:
        """(weight, bias) views into ``theta``."""
        theta = self.theta if theta is None else theta
        views = []
        offset = 0
        for wShape, bShape in self.architecture.layer_shapes:
            wSize = wShape[0] * wShape[1]
            weight = theta[offset : offset + wSize].reshape(wShape)
            offset += wSize
            views.append((weight, theta[offset : offset + bShape[0]]))
            offset += bShape[0]
        return views

    def with_parameters(self, theta: Array) -> "ParametricFunction":
        """A copy carrying ``theta``."""
        return ParametricFunction(self.architecture, np.array(theta, dtype=float))

    def copy(self) -> "ParametricFunction":
        return self.with_parameters(self.theta)

    def check_inputs(self, dimension: int, cond_dim: Optional[int]) -> None:
        """Raises ArchitectureError unless the input widths match."""
        if dimension != self.architecture.dimension:
            raise ArchitectureError(
                f"expected x of dimension {self.architecture.dimension}, got {dimension}"
            )
        expected = self.architecture.cond_dim
        if (cond_dim or 0) != expected or (expected and cond_dim is None):
            raise ArchitectureError(
                f"expected y of dimension {expected}, got {cond_dim}"
            )

    def evaluate(self, t, x: Array, y: Optional[Array] = None) -> Array:
        """Forward pass on (d,) or (n, d) inputs without a tape."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        batch = x.reshape(1, -1) if single else x
        n = batch.shape[0]
        self.check_inputs(batch.shape[1], None if y is None else np.shape(y)[-1])
        parts = [time_features(self.architecture, t, n), batch]
        if y is not None:
            parts.append(
                np.broadcast_to(np.asarray(y, dtype=float), (n, self.architecture.cond_dim))
            )
        hidden = np.concatenate(parts, axis=1)
        views = self.layers()
        for i, (weight, bias) in enumerate(views):
            hidden = hidden @ weight + bias
            if i < len(views) - 1:
                hidden = hidden * expit(hidden)
        return hidden[0] if single else hidden

    __call__ = evaluate

    def bind(self, tape: Tape, trainable: bool = True) -> BoundFunction:
        """Records the parameters on ``tape``; frozen when not trainable."""
        return BoundFunction(self, tape, trainable)


def value_and_gradient(
    function: ParametricFunction,
    build_loss: Callable[[Tape, BoundFunction], Node],
    theta: Optional[Array] = None,
) -> Tuple[float, Array]:
    """Records ``build_loss`` on a fresh tape at ``theta`` and returns the loss
    value and its gradient with respect to the parameters."""
    current = function if theta is None else function.with_parameters(theta)
    tape = Tape()
    bound = current.bind(tape)
    loss = build_loss(tape, bound)
    (grad,) = tape.gradient(loss, [bound.theta])
    return float(loss.value), grad


@dataclass(frozen=True)
class AdamConfig:
    """Adam hyperparameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def from_defaults(cls, **overrides) -> "AdamConfig":
        """Reads ``[optimizer]`` from Defaults; keyword arguments win."""
        values = dict(
            learning_rate=Defaults.get_float("optimizer", "learning_rate"),
            beta1=Defaults.get_float("optimizer", "beta1"),
            beta2=Defaults.get_float("optimizer", "beta2"),
            epsilon=Defaults.get_float("optimizer", "epsilon"),
        )
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class AdamState:
    """Step count and moment estimates."""

    step: int
    first: Array
    second: Array
    config: AdamConfig = field(default_factory=AdamConfig)

    @classmethod
    def create(cls, size: int, config: Optional[AdamConfig] = None) -> "AdamState":
        return cls(0, np.zeros(size), np.zeros(size), config or AdamConfig())


def adam_step(state: AdamState, theta: Array, gradient: Array) -> Tuple[Array, AdamState]:
    """One bias-corrected Adam update.

    Parameters:
    state: optimizer state, moments of the same length as ``theta``.
    theta: current parameters.
    gradient: gradient of the loss at ``theta``.

    Returns the updated parameters and state.
    """
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != theta.shape or state.first.shape != theta.shape:
        raise OptimizerError(
            f"shape mismatch: theta {theta.shape}, gradient {gradient.shape}, "
            f"moments {state.first.shape}"
        )
    if not np.all(np.isfinite(gradient)):
        raise OptimizerError(f"non-finite gradient at optimizer step {state.step + 1}")
    config = state.config
    step = state.step + 1
    first = config.beta1 * state.first + (1.0 - config.beta1) * gradient
    second = config.beta2 * state.second + (1.0 - config.beta2) * gradient**2
    firstHat = first / (1.0 - config.beta1**step)
    secondHat = second / (1.0 - config.beta2**step)
    update = config.learning_rate * firstHat / (np.sqrt(secondHat) + config.epsilon)
    return theta - update, replace(state, step=step, first=first, second=second)


def fit(
    function: ParametricFunction,
    loss_and_gradient: Callable[[Array, int], Tuple[float, Array]],
    iterations: int,
    optimizer: Optional[AdamConfig] = None,
    progress: Optional[bool] = None,
    description: str = "training",
) -> Tuple[ParametricFunction, List[float]]:
    """Runs Adam on ``loss_and_gradient(theta, iteration)``.

    Parameters:
    function: initial network.
    loss_and_gradient: returns the minibatch loss and its parameter gradient.
    iterations: number of optimizer steps.
    optimizer: Adam hyperparameters; Defaults when omitted.
    progress: show a tqdm bar; ``[logging] progress`` when omitted.
    description: label for logs and the progress bar.

    Returns the trained network and the loss history.
    """
    optimizer = optimizer or AdamConfig.from_defaults()
    if progress is None:
        progress = Defaults.get_bool("logging", "progress")
    logEvery = max(1, Defaults.get_int("logging", "log_every"))
    theta = function.theta.copy()
    state = AdamState.create(theta.size, optimizer)
    history: List[float] = []
    bar = tqdm(range(iterations), desc=description, disable=not progress, leave=False)
    for iteration in bar:
        loss, grad = loss_and_gradient(theta, iteration)
        if not np.isfinite(loss):
            raise TrainingError(
                f"{description}: non-finite loss at iteration {iteration}", iteration
            )
        try:
            theta, state = adam_step(state, theta, grad)
        except OptimizerError as error:
            raise TrainingError(
                f"{description}: {error} (iteration {iteration})", iteration
            ) from error
        history.append(loss)
        if iteration % logEvery == 0 or iteration == iterations - 1:
            logger.info("%s iteration %d loss %.6g", description, iteration, loss)
            bar.set_postfix(loss=f"{loss:.4g}")
    return function.with_parameters(theta), history


def check_gradient(
    loss_and_gradient: Callable[[Array], Tuple[float, Array]],
    theta: Array,
    rng: np.random.Generator,
    coordinates: int = 50,
    relative_step: float = 1e-6,
    floor: float = 1e-7,
) -> float:
    """Compares the recorded gradient against central finite differences on
    randomly chosen coordinates.

    Returns the largest relative error
    ``|fd - g| / max(|fd|, |g|, floor)``.
    """
    theta = np.asarray(theta, dtype=float)
    _, grad = loss_and_gradient(theta)
    chosen = rng.choice(theta.size, size=min(coordinates, theta.size), replace=False)
    worst = 0.0
    for i in chosen:
        h = relative_step * (1.0 + abs(theta[i]))
        plus = theta.copy()
        plus[i] += h
        minus = theta.copy()
        minus[i] -= h
        estimate = (loss_and_gradient(plus)[0] - loss_and_gradient(minus)[0]) / (2.0 * h)
        scale = max(abs(estimate), abs(grad[i]), floor)
        worst = max(worst, abs(estimate - grad[i]) / scale)
    return worst


_MAGIC = b"PDBNET"
_FORMAT_VERSION = 1


def save_parameters(function: ParametricFunction, path: Union[str, Path]) -> Path:
    """Writes ``theta`` as little-endian float64 after a header holding the
    architecture descriptor, plus an INI manifest next to it.

    Returns the manifest path."""
    path = Path(path)
    descriptor = json.dumps(function.architecture.describe(), sort_keys=True).encode()
    with open(path, "wb") as stream:
        stream.write(_MAGIC)
        stream.write(struct.pack("<II", _FORMAT_VERSION, len(descriptor)))
        stream.write(descriptor)
        stream.write(function.theta.astype("<f8").tobytes())

    manifest = configparser.ConfigParser()
    manifest.optionxform = lambda optionstr: optionstr
    manifest["parameters"] = {
        "file": path.name,
        "format_version": str(_FORMAT_VERSION),
        "count": str(function.num_parameters),
        "package_version": __version__,
    }
    manifest["architecture"] = {
        key: ",".join(str(v) for v in value) if isinstance(value, list) else str(value)
        for key, value in function.architecture.describe().items()
    }
    manifestPath = path.with_suffix(path.suffix + ".ini")
    with open(manifestPath, "w", encoding="utf-8") as stream:
        manifest.write(stream)
    return manifestPath


def load_parameters(path: Union[str, Path]) -> ParametricFunction:
    """Reads a file written by :func:`save_parameters`."""
    with open(path, "rb") as stream:
        magic = stream.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ArchitectureError(f"{path}: not a parameter file")
        version, length = struct.unpack("<II", stream.read(8))
        if version != _FORMAT_VERSION:
            raise ArchitectureError(f"{path}: unsupported format version {version}")
        architecture = Architecture.from_description(json.loads(stream.read(length)))
        theta = np.frombuffer(stream.read(), dtype="<f8").astype(float)
    return ParametricFunction(architecture, theta)
