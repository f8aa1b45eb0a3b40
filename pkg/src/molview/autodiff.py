"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` (entered with a
``with`` block) whenever one of their inputs requires a gradient. Outside a
tape nothing is recorded, which doubles as no-grad evaluation.
"""

from __future__ import annotations

import contextvars
import math
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from loguru import logger

from molview.errors import DomainError, GradientError, NonFiniteError, ShapeError

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "molview_active_tape", default=None
)

ELEMENTWISE_KINDS = ("add", "mul", "sub", "relu", "sigmoid", "exp", "log", "softplus", "square")
REDUCE_KINDS = ("sum", "mean", "logsumexp")


class Tensor:
    """A dense row-major float64 array that may take part in differentiation."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Any) -> "Tensor":
        return add(self, as_tensor(other))

    def __radd__(self, other: Any) -> "Tensor":
        return add(as_tensor(other), self)

    def __sub__(self, other: Any) -> "Tensor":
        return sub(self, as_tensor(other))

    def __rsub__(self, other: Any) -> "Tensor":
        return sub(as_tensor(other), self)

    def __mul__(self, other: Any) -> "Tensor":
        return mul(self, as_tensor(other))

    def __rmul__(self, other: Any) -> "Tensor":
        return mul(as_tensor(other), self)

    def __neg__(self) -> "Tensor":
        return mul(self, as_tensor(-1.0))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def as_tensor(value: Any) -> Tensor:
    """Wrap a constant as a non-differentiable tensor; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


@dataclass
class Node:
    """One recorded operation: inputs, output and the local backward rule."""
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of operations for one forward pass.

    A tape belongs to exactly one forward pass; it is never shared between
    threads. Entering it as a context manager makes it the active tape for
    the current context.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._token: contextvars.Token | None = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def _emit(
    op: str,
    inputs: tuple[Tensor, ...],
    out: np.ndarray,
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")
    tape = _ACTIVE_TAPE.get()
    track = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=track)
    if track:
        tape.record(Node(op, inputs, result, backward))
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    """Result shape of a binary op.

    Shapes align from the right. An operand may lack leading axes or carry a
    size-1 last axis that stretches; a size-1 axis anywhere else must match.
    """
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"op '{op}': shapes {a.shape} and {b.shape} do not broadcast") from None
    for shape in (a.shape, b.shape):
        offset = len(out) - len(shape)
        for axis, size in enumerate(shape[:-1]):
            if size != out[offset + axis]:
                raise ShapeError(
                    f"op '{op}': shapes {a.shape} and {b.shape} broadcast along axis {axis}; "
                    "only a trailing size-1 axis may stretch"
                )
    return out


# Elementwise operations


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    return _emit(
        "add", (a, b), a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    return _emit(
        "sub", (a, b), a.data - b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    return _emit(
        "mul", (a, b), a.data * b.data,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _emit("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive value (min {a.data.min():.6g})")
    return _emit("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    return _emit(
        "softplus", (a,), np.logaddexp(0.0, a.data), lambda g: (g * _sigmoid(a.data),)
    )


def square(a: Tensor) -> Tensor:
    return _emit("square", (a,), a.data * a.data, lambda g: (2.0 * g * a.data,))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "exp": exp, "log": log, "softplus": softplus, "square": square}
_BINARY = {"add": add, "mul": mul, "sub": sub}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Apply one of the elementwise primitives by name."""
    if kind in _BINARY:
        if b is None:
            raise ShapeError(f"elementwise '{kind}' needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        if b is not None:
            raise ShapeError(f"elementwise '{kind}' takes one operand")
        return _UNARY[kind](a)
    raise ValueError(f"unknown elementwise kind {kind!r}; expected one of {ELEMENTWISE_KINDS}")


# Linear algebra and indexing


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return _emit(
        "matmul", (a, b), a.data @ b.data,
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")
    return _emit("transpose", (a,), a.data.T, lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    return _emit("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def _check_index(op: str, idx: np.ndarray, n: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise ShapeError(f"{op}: index {int(bad)} out of range [0, {n})")
    return idx


def gather_rows(src: Tensor, idx: Sequence[int] | np.ndarray) -> Tensor:
    """Copy rows ``src[idx]`` into a new tensor."""
    if src.data.ndim < 1:
        raise ShapeError("gather_rows needs at least a 1-D source")
    idx = _check_index("gather_rows", idx, src.shape[0])

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros_like(src.data)
        np.add.at(out, idx, g)
        return (out,)

    return _emit("gather_rows", (src,), src.data[idx], backward)


def scatter_add_rows(values: Tensor, idx: Sequence[int] | np.ndarray, n: int) -> Tensor:
    """Sum rows of ``values`` into ``n`` slots; rows sharing a target add up."""
    idx = _check_index("scatter_add_rows", idx, n)
    if values.data.ndim < 1 or values.shape[0] != idx.size:
        raise ShapeError(
            f"scatter_add_rows: {idx.size} indices for values of shape {values.shape}"
        )
    out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
    np.add.at(out, idx, values.data)
    return _emit("scatter_add_rows", (values,), out, lambda g: (g[idx],))


class PinnedConstants:
    """Outputs of ``stop_gradient`` recorded on one evaluation and replayed on later ones.

    While recording, every stop_gradient call stores its value in call
    order. While replaying, the n-th call returns the n-th stored value, so
    a function re-evaluated at a perturbed point sees the same constants as
    at the base point.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.replaying = False
        self._cursor = 0
        self._token: contextvars.Token | None = None

    def __enter__(self) -> "PinnedConstants":
        self._token = _PINNED.set(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        if self._token is not None:
            _PINNED.reset(self._token)
            self._token = None

    def replay(self) -> None:
        """Serve the recorded values from the start on subsequent calls."""
        self.replaying = True
        self._cursor = 0

    def resolve(self, a: Tensor) -> np.ndarray:
        if not self.replaying:
            self.values.append(a.data.copy())
            return a.data
        if self._cursor >= len(self.values):
            raise GradientError("stop_gradient called more often than on the recorded evaluation")
        value = self.values[self._cursor]
        self._cursor += 1
        if value.shape != a.shape:
            raise GradientError(f"stop_gradient shape {a.shape} differs from the recorded {value.shape}")
        return value


_PINNED: contextvars.ContextVar["PinnedConstants | None"] = contextvars.ContextVar(
    "molview_pinned_constants", default=None
)


def stop_gradient(a: Tensor) -> Tensor:
    """Treat ``a`` as a constant for differentiation."""
    pinned = _PINNED.get()
    data = a.data if pinned is None else pinned.resolve(a)
    return Tensor(data, requires_grad=False, name=a.name)


# Reductions


def _normalize_axis(op: str, a: Tensor, axis: int | None) -> int | None:
    if axis is None:
        if a.size == 0:
            raise DomainError(f"{op} over an empty tensor")
        return None
    ndim = a.data.ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} invalid for shape {a.shape}")
    axis %= ndim
    if a.shape[axis] == 0:
        raise DomainError(f"{op} over an empty axis")
    return axis


def reduce(kind: str, a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Reduce ``a`` along ``axis`` (all axes when None) by sum, mean or logsumexp."""
    if kind not in REDUCE_KINDS:
        raise ValueError(f"unknown reduction {kind!r}; expected one of {REDUCE_KINDS}")
    axis = _normalize_axis(kind, a, axis)

    def expand(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g.reshape((1,) * a.data.ndim), a.shape)
        return np.broadcast_to(g if keepdims else np.expand_dims(g, axis), a.shape)

    if kind == "sum":
        out = a.data.sum(axis=axis, keepdims=keepdims)
        return _emit("sum", (a,), out, lambda g: (np.array(expand(g)),))

    if kind == "mean":
        count = a.size if axis is None else a.shape[axis]
        out = a.data.mean(axis=axis, keepdims=keepdims)
        return _emit("mean", (a,), out, lambda g: (expand(g) / count,))

    # max-shifted so exp never overflows
    peak = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out_keep = peak + np.log(total)
    softmax = shifted / total
    if keepdims:
        out = out_keep
    elif axis is None:
        out = out_keep.reshape(())
    else:
        out = np.squeeze(out_keep, axis=axis)
    return _emit("logsumexp", (a,), out, lambda g: (expand(g) * softmax,))


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return reduce("sum", a, axis, keepdims)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return reduce("mean", a, axis, keepdims)


def logsumexp(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return reduce("logsumexp", a, axis, keepdims)


def one_hot(indices: Sequence[int] | np.ndarray, num_classes: int) -> Tensor:
    idx = _check_index("one_hot", indices, num_classes)
    out = np.zeros((idx.size, num_classes))
    out[np.arange(idx.size), idx] = 1.0
    return Tensor(out)


# Parameters and randomness


class ParamStore:
    """Named trainable tensors, iterated in lexicographic name order."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self._tensors: dict[str, Tensor] = {}
        for name, tensor in (tensors or {}).items():
            self._insert(name, tensor)

    def _insert(self, name: str, tensor: Tensor) -> None:
        if name in self._tensors:
            raise ShapeError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self._tensors[name] = tensor

    def add(self, name: str, data: Any) -> Tensor:
        tensor = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self._insert(name, tensor)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self, prefix: str = "") -> list[str]:
        return sorted(n for n in self._tensors if n.startswith(prefix))

    def items(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [(n, self._tensors[n]) for n in self.names(prefix)]

    def subset(self, prefix: str) -> "ParamStore":
        """A store sharing the tensors whose names start with ``prefix``."""
        view = ParamStore()
        view._tensors = {n: self._tensors[n] for n in self.names(prefix)}
        return view

    def merged(self, other: "ParamStore") -> "ParamStore":
        """A store sharing the tensors of both stores."""
        view = ParamStore()
        view._tensors = dict(self._tensors)
        for name, tensor in other._tensors.items():
            if name in view._tensors:
                raise ShapeError(f"duplicate parameter name {name!r}")
            view._tensors[name] = tensor
        return view

    def assign(self, name: str, data: np.ndarray) -> None:
        tensor = self[name]
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.shape != tensor.shape:
            raise ShapeError(f"assign {name!r}: shape {data.shape} != {tensor.shape}")
        tensor.data = data

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def copy(self) -> "ParamStore":
        return ParamStore({n: Tensor(a) for n, a in self.snapshot().items()})

    def num_entries(self) -> int:
        return sum(t.size for t in self._tensors.values())


class Rng:
    """Seeded Philox (counter-based) random stream.

    ``derive`` opens an independent child stream keyed by integers, so
    per-step and per-epoch streams can be recreated from the seed alone.
    """

    ALGORITHM = "philox4x64"

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(sequence))

    def derive(self, *key: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(key))

    def normal(self, shape: tuple[int, ...] | int) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape: tuple[int, ...] | int) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, size: int | None = None) -> Any:
        return self._gen.integers(low, high, size=size)

    def random(self) -> float:
        return float(self._gen.random())

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False, p: np.ndarray | None = None) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace, p=p)

    def get_state(self) -> dict:
        """JSON-compatible snapshot of the full generator state."""
        return {
            "algorithm": self.ALGORITHM,
            "seed": self.seed,
            "key": list(self.key),
            "bit_generator": _jsonable(self._gen.bit_generator.state),
        }

    def set_state(self, state: dict) -> None:
        if state.get("algorithm") != self.ALGORITHM:
            raise DomainError(f"rng state is for {state.get('algorithm')!r}, not {self.ALGORITHM}")
        self._gen.bit_generator.state = _restore_arrays(state["bit_generator"])

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"], tuple(state["key"]))
        rng.set_state(state)
        return rng


_UINT64_ARRAYS = ("counter", "key", "buffer")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [int(x) for x in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    return value


def _restore_arrays(value: Any) -> Any:
    if isinstance(value, dict):
        return {
            k: np.array(v, dtype=np.uint64) if k in _UINT64_ARRAYS and isinstance(v, list)
            else _restore_arrays(v)
            for k, v in value.items()
        }
    return value


def uniform_fan_in(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, shape)


# Differentiation


def backward(loss: Tensor, tape: Tape, params: ParamStore) -> dict[str, Tensor]:
    """Propagate d(loss)/d(param) through ``tape``.

    Args:
        loss: scalar tensor computed on ``tape``
        tape: tape the forward pass was recorded on; cleared afterwards
        params: parameters to report gradients for

    Returns:
        Gradient tensor per parameter name; parameters the loss does not
        depend on get exact zeros.
    """
    try:
        if loss.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.requires_grad and not any(node.output is loss for node in tape.nodes):
            if not any(t is loss for _, t in params.items()):
                raise GradientError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {}
        if loss.requires_grad:
            grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if not np.all(np.isfinite(gi)):
                    raise GradientError(f"non-finite gradient from op '{node.op}'")
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi

        result = {}
        for name, tensor in params.items():
            g = grads.get(id(tensor))
            result[name] = Tensor(np.zeros_like(tensor.data) if g is None else np.array(g))
        logger.debug("backward through {} ops for {} parameters", len(tape), len(result))
        return result
    finally:
        tape.clear()


def grad_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must be deterministic given ``params``: any randomness it uses has
    to come from an Rng it recreates with a pinned state on every call.
    Values passed through ``stop_gradient`` stay at their base-point values
    while parameters are perturbed, matching the analytic gradient that
    treats them as constants.

    Args:
        f: builds a scalar loss from ``params``
        params: parameters to perturb in place (restored afterwards)
        eps: finite-difference step
        max_entries: optional cap on checked entries per parameter, sampled
            with ``rng`` (defaults to a seed-0 stream)

    Returns:
        Max over checked entries of |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    with PinnedConstants() as pinned:
        with Tape() as tape:
            loss = f(params)
        analytic = backward(loss, tape, params)
        return _compare_differences(f, params, analytic, eps, max_entries, rng or Rng(0), pinned)


def _compare_differences(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    analytic: dict[str, Tensor],
    eps: float,
    max_entries: int | None,
    sampler: Rng,
    pinned: PinnedConstants,
) -> float:
    def value() -> float:
        pinned.replay()
        try:
            out = f(params).item()
        except NonFiniteError as e:
            raise NonFiniteError(f"grad_check: f is non-finite at a perturbed point ({e})") from e
        if not math.isfinite(out):
            raise NonFiniteError("grad_check: f is non-finite at a perturbed point")
        return out

    worst = 0.0
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        grad = analytic[name].data.reshape(-1)
        entries = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = sorted(sampler.choice(flat.size, max_entries).tolist())
        for i in entries:
            original = flat[i]
            flat[i] = original + eps
            plus = value()
            flat[i] = original - eps
            minus = value()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            err = abs(grad[i] - numeric) / max(1.0, abs(grad[i]), abs(numeric))
            if err > worst:
                worst = err
                logger.debug("grad_check worst so far {:.3e} at {}[{}]", err, name, i)
    return worst
