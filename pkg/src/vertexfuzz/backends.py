"""Score-producing classifiers and the ``.dsmodel`` text format.

File layout (UTF-8)::

    DSMODEL 1
    input <n> output <m> post <logits|logsoftmax>
    layer <rows> <cols> <relu|identity>
    <rows lines of cols weights>
    <one line of rows biases>
    ... further layers ...

A model whose only layer is an identity layer loads as a LinearModel.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from vertexfuzz.core import DimensionMismatch, InputVector

ACTIVATIONS = ("relu", "identity")
POSTS = ("logits", "logsoftmax")


class ModelError(ValueError):
    pass


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _as_batch(xs, n: int) -> np.ndarray:
    if isinstance(xs, InputVector):
        xs = [xs.data]
    elif isinstance(xs, np.ndarray) and xs.ndim == 2:
        pass
    else:
        xs = [x.data if isinstance(x, InputVector) else x for x in xs]
    batch = np.asarray(xs, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != n:
        raise DimensionMismatch(f"model expects {n} inputs, got shape {batch.shape}")
    return batch


def _affine(h: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # einsum reduces every row with the same loop whatever the batch size, so
    # a point scores bit-identically alone or in a batch (BLAS matmul does not)
    return np.einsum("ij,kj->ik", h, w) + b


def _finish(z: np.ndarray, post: str) -> np.ndarray:
    with np.errstate(over="raise", invalid="raise"):
        try:
            out = _log_softmax(z) if post == "logsoftmax" else z
        except FloatingPointError as exc:
            raise ModelError(f"numeric overflow while scoring: {exc}") from None
    if not np.all(np.isfinite(out)):
        raise ModelError("numeric overflow while scoring: non-finite score")
    return out


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # rows x cols
    bias: np.ndarray  # rows
    activation: str = "identity"

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, ndmin=2)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or b.size != w.shape[0]:
            raise ModelError(f"bias of length {b.size} does not match {w.shape[0]} rows")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ModelError("non-finite weight")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class LinearModel:
    """Scores W x + b, optionally passed through log-softmax."""

    weights: np.ndarray  # m x n
    bias: np.ndarray
    post: str = "logits"

    def __post_init__(self):
        layer = Layer(self.weights, self.bias)
        if self.post not in POSTS:
            raise ModelError(f"unknown post-processing {self.post!r}")
        if self.post == "logsoftmax" and layer.rows < 2:
            raise ModelError("log-softmax needs at least two outputs")
        object.__setattr__(self, "weights", layer.weights)
        object.__setattr__(self, "bias", layer.bias)

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights.shape[0]

    @property
    def layers(self) -> tuple[Layer, ...]:
        return (Layer(self.weights, self.bias, "identity"),)

    def evaluate_batch(self, xs) -> np.ndarray:
        batch = _as_batch(xs, self.n_inputs)
        with np.errstate(over="raise", invalid="raise"):
            try:
                z = _affine(batch, self.weights, self.bias)
            except FloatingPointError as exc:
                raise ModelError(f"numeric overflow while scoring: {exc}") from None
        return _finish(z, self.post)

    def evaluate(self, x) -> np.ndarray:
        return self.evaluate_batch([x])[0]


@dataclass(frozen=True)
class FeedForwardModel:
    layers: tuple[Layer, ...]
    post: str = "logsoftmax"

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ModelError("a model needs at least one layer")
        for j in range(1, len(layers)):
            if layers[j].cols != layers[j - 1].rows:
                raise ModelError(
                    f"dimension mismatch: layer {j + 1} takes {layers[j].cols} inputs "
                    f"but layer {j} produces {layers[j - 1].rows}"
                )
        if self.post not in POSTS:
            raise ModelError(f"unknown post-processing {self.post!r}")
        if self.post == "logsoftmax" and layers[-1].rows < 2:
            raise ModelError("log-softmax needs at least two outputs")
        object.__setattr__(self, "layers", layers)

    @property
    def n_inputs(self) -> int:
        return self.layers[0].cols

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].rows

    def evaluate_batch(self, xs) -> np.ndarray:
        h = _as_batch(xs, self.n_inputs)
        with np.errstate(over="raise", invalid="raise"):
            try:
                for layer in self.layers:
                    h = _affine(h, layer.weights, layer.bias)
                    if layer.activation == "relu":
                        h = np.maximum(h, 0.0)
            except FloatingPointError as exc:
                raise ModelError(f"numeric overflow while scoring: {exc}") from None
        return _finish(h, self.post)

    def evaluate(self, x) -> np.ndarray:
        return self.evaluate_batch([x])[0]


Model = Union[LinearModel, FeedForwardModel]


def evaluate(model, x) -> np.ndarray:
    return model.evaluate(x)


def evaluate_batch(model, xs: Sequence) -> np.ndarray:
    return model.evaluate_batch(xs)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_model(model: Model) -> str:
    layers = model.layers
    lines = [
        "DSMODEL 1",
        f"input {model.n_inputs} output {model.n_outputs} post {model.post}",
    ]
    for layer in layers:
        lines.append(f"layer {layer.rows} {layer.cols} {layer.activation}")
        lines.extend(" ".join(_fmt(v) for v in row) for row in layer.weights)
        lines.append(" ".join(_fmt(v) for v in layer.bias))
    return "\n".join(lines) + "\n"


def save_model(model: Model, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def _numbers(line: str, count: int, lineno: int) -> list[float]:
    parts = line.split()
    if len(parts) != count:
        raise ModelError(f"line {lineno}: expected {count} numbers, found {len(parts)}")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise ModelError(f"line {lineno}: not a decimal number") from None
    if not all(np.isfinite(values)):
        raise ModelError(f"line {lineno}: non-finite weight")
    return values


def loads_model(text: str) -> Model:
    lines = [ln.strip() for ln in text.splitlines()]
    pos = 0

    def take() -> tuple[str, int]:
        nonlocal pos
        while pos < len(lines) and not lines[pos]:
            pos += 1
        if pos >= len(lines):
            raise ModelError("unexpected end of model file")
        pos += 1
        return lines[pos - 1], pos

    magic, _ = take()
    if magic != "DSMODEL 1":
        raise ModelError("missing 'DSMODEL 1' header")
    header, lineno = take()
    parts = header.split()
    if len(parts) != 6 or parts[0] != "input" or parts[2] != "output" or parts[4] != "post":
        raise ModelError(f"line {lineno}: malformed header {header!r}")
    try:
        n, m = int(parts[1]), int(parts[3])
    except ValueError:
        raise ModelError(f"line {lineno}: malformed header {header!r}") from None
    post = parts[5]
    if post not in POSTS:
        raise ModelError(f"line {lineno}: unknown post-processing {post!r}")

    layers = []
    while True:
        while pos < len(lines) and not lines[pos]:
            pos += 1
        if pos >= len(lines):
            break
        header, lineno = take()
        fields = header.split()
        if len(fields) != 4 or fields[0] != "layer":
            raise ModelError(f"line {lineno}: expected 'layer <rows> <cols> <activation>'")
        try:
            rows, cols = int(fields[1]), int(fields[2])
        except ValueError:
            raise ModelError(f"line {lineno}: malformed layer dimensions") from None
        if rows <= 0 or cols <= 0:
            raise ModelError(f"line {lineno}: layer dimensions must be positive")
        weights = []
        for _ in range(rows):
            row, ln = take()
            weights.append(_numbers(row, cols, ln))
        bias_line, ln = take()
        bias = _numbers(bias_line, rows, ln)
        layers.append(Layer(np.array(weights), np.array(bias), fields[3]))

    if not layers:
        raise ModelError("model file has no layers")
    if layers[0].cols != n:
        raise ModelError(f"dimension mismatch: header says {n} inputs, first layer takes {layers[0].cols}")
    if layers[-1].rows != m:
        raise ModelError(f"dimension mismatch: header says {m} outputs, last layer gives {layers[-1].rows}")
    if len(layers) == 1 and layers[0].activation == "identity":
        return LinearModel(layers[0].weights, layers[0].bias, post)
    return FeedForwardModel(tuple(layers), post)


def load_model(path) -> Model:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"model file not found: {path}") from None
    return loads_model(text)


def model_digest(model: Model) -> str:
    """sha256 of the canonical text serialisation; stable model identifier."""
    return hashlib.sha256(dumps_model(model).encode("utf-8")).hexdigest()
