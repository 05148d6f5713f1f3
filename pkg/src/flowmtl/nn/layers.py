"""Network layers with hand-derived backward passes.

Activations are (batch, length, channels) float64 until Flatten, then
(batch, features).  Each layer owns its parameters and accumulates gradients
into `grads` during backward().  Shape propagation is checked up front via
output_shape(), which raises ShapeError before any compute happens.
"""

from __future__ import annotations

import numpy as np

from flowmtl.errors import ShapeError
from flowmtl.nn import backend


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Scaled uniform init, limit sqrt(6 / fan_in); the standard choice for ReLU stacks."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base layer: stateless unless it declares params."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape):
        return shape


class Conv1D(Layer):
    """Valid convolution, stride 1, weights (filters, kernel, in_channels)."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, rng: np.random.Generator | None = None):
        super().__init__()
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        rng = rng or np.random.default_rng()
        self.params = {
            "w": he_uniform(rng, (c_out, kernel, c_in), fan_in=kernel * c_in),
            "b": np.zeros(c_out),
        }
        self._x = None

    def output_shape(self, shape):
        length, c = shape
        if c != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} input channels, got {c}")
        if length < self.kernel:
            raise ShapeError(
                f"conv kernel {self.kernel} over length {length} yields a "
                f"zero-dimensional output")
        return (length - self.kernel + 1, self.c_out)

    def forward(self, x):
        if x.shape[1] < self.kernel:
            raise ShapeError(
                f"conv kernel {self.kernel} over length {x.shape[1]} yields a "
                f"zero-dimensional output")
        self._x = x
        return backend.get_backend().conv1d_forward(x, self.params["w"], self.params["b"])

    def backward(self, dy):
        dx, dw, db = backend.get_backend().conv1d_backward(self._x, self.params["w"], dy)
        self.grads["w"] = dw
        self.grads["b"] = db
        return dx


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x):
        self._mask = x > 0  # subgradient 0 at the kink
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class MaxPool1D(Layer):
    """Non-overlapping max over pairs; trailing odd element dropped (floor semantics)."""

    def __init__(self):
        super().__init__()
        self._idx = None
        self._length = None

    def output_shape(self, shape):
        length, c = shape
        if length < 2:
            raise ShapeError(f"max pool over length {length} yields a zero-dimensional output")
        return (length // 2, c)

    def forward(self, x):
        if x.shape[1] < 2:
            raise ShapeError(f"max pool over length {x.shape[1]} yields a zero-dimensional output")
        self._length = x.shape[1]
        out, self._idx = backend.get_backend().maxpool2_forward(x)
        return out

    def backward(self, dy):
        return backend.get_backend().maxpool2_backward(dy, self._idx, self._length)


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._shape = None

    def output_shape(self, shape):
        length, c = shape
        return (length * c,)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng or np.random.default_rng()
        self.params = {
            "w": he_uniform(rng, (n_in, n_out), fan_in=n_in),
            "b": np.zeros(n_out),
        }
        self._x = None

    def output_shape(self, shape):
        (n,) = shape
        if n != self.n_in:
            raise ShapeError(f"dense expects {self.n_in} inputs, got {n}")
        return (self.n_out,)

    def forward(self, x):
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy):
        self.grads["w"] = self._x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["w"].T


class Sequential:
    """Plain layer chain with named parameters ("<index>.<name>")."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def validate_shape(self, in_shape):
        """Propagate a sample shape through every layer; ShapeError on collapse."""
        shape = in_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                out[f"{i}.{name}"] = arr
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.grads.items():
                out[f"{i}.{name}"] = arr
        return out
