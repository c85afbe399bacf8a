"""Dense reverse-mode differentiation over 2-D float64 matrices, plus Adam.

Operations executed inside an active :class:`Tape` context are recorded with
their backward rules; outside any tape they are plain numpy evaluations::

    with Tape() as tape:
        loss = mean_all(hadamard(a, b))
        tape.backward(loss)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class DetachedError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


class Tensor:
    """A 2-D float64 matrix that may take part in differentiation.

    Leaf tensors created with ``requires_grad=True`` own a zero-initialised
    ``grad`` buffer; gradients accumulate into it across backward passes until
    :meth:`zero_grad` is called.
    """

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(arr) if requires_grad else None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.name = None
        t.grad = None
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class _Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Backward


_active: list["Tape"] = []


class Tape:
    """Ordered record of operations; replayed in reverse by :meth:`backward`."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every leaf that requires it, then clear the tape."""
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
        produced = {id(node.out) for node in self.nodes}
        if not loss.requires_grad or id(loss) not in produced:
            raise DetachedError("loss was not produced on this tape from any parameter")

        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in produced:
                    prev = grads.get(key)
                    grads[key] = pg if prev is None else prev + pg
                else:
                    parent.grad += pg
        self.nodes.clear()


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def record(value: np.ndarray, parents: Sequence[Tensor], backward_fn: Backward) -> Tensor:
    """Wrap ``value`` as the output of an operation on ``parents``.

    Custom operations use this to register their own backward rule. The rule
    receives the upstream gradient and returns one gradient (or None) per parent.
    """
    needs = bool(_active) and any(p.requires_grad for p in parents)
    out = Tensor._wrap(value, needs)
    if needs:
        _active[-1].nodes.append(_Node(out, tuple(parents), backward_fn))
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    ad, bd = a.data, b.data
    return record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def spmm(s: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times a dense tensor; no gradient flows to ``s``."""
    if s.shape[1] != x.rows:
        raise ShapeError(f"spmm: shapes {s.shape} and {x.shape} are incompatible")
    st = s.T.tocsr()
    return record(np.asarray(s @ x.data), (x,), lambda g: (np.asarray(st @ g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1 x cols row broadcast over ``a``."""
    if a.shape == b.shape:
        return record(a.data + b.data, (a, b), lambda g: (g, g))
    if b.rows == 1 and b.cols == a.cols:
        return record(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} are incompatible")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("hadamard", a, b)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return record(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GeLU, tanh approximation."""
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return record(out, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return record(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = sigmoid_np(a.data)
    return record(y, (a,), lambda g: (g * y * (1.0 - y),))


def rms_norm(a: Tensor, eps: float = 1e-8) -> Tensor:
    """Divide each row by its root-mean-square (floored at ``eps``)."""
    x = a.data
    rms = np.sqrt(np.mean(x * x, axis=1, keepdims=True))
    big = rms > eps
    denom = np.where(big, rms, eps)
    y = x / denom

    def bw(g):
        proj = np.mean(g * y, axis=1, keepdims=True)
        return (np.where(big, (g - y * proj) / denom, g / eps),)

    return record(y, (a,), bw)


def log_softmax_rows(a: Tensor) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse

    def bw(g):
        p = np.exp(y)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return record(y, (a,), bw)


def permute_rows(a: Tensor, perm: np.ndarray) -> Tensor:
    """Row ``t`` of the result is row ``perm[t]`` of ``a``."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (a.rows,):
        raise ShapeError(f"permute_rows: permutation of length {perm.shape} for shape {a.shape}")

    def bw(g):
        out = np.empty_like(g)
        out[perm] = g
        return (out,)

    return record(a.data[perm], (a,), bw)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = {p.cols for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts {sorted(cols)} differ")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def bw(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return record(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bw)


def slice_row(a: Tensor, i: int) -> Tensor:
    if not 0 <= i < a.rows:
        raise ShapeError(f"slice_row: row {i} outside shape {a.shape}")

    def bw(g):
        out = np.zeros_like(a.data)
        out[i] = g[0]
        return (out,)

    return record(a.data[i:i + 1].copy(), (a,), bw)


def take(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Gather ``a[rows[k], cols[k]]`` into an m x 1 column."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape or rows.ndim != 1:
        raise ShapeError(f"take: index shapes {rows.shape} and {cols.shape} differ")

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (rows, cols), g[:, 0])
        return (out,)

    return record(a.data[rows, cols].reshape(-1, 1), (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return record(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return record(np.array([[a.data.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] / n),))


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

def _as_list(params: Mapping[str, Tensor] | Iterable[Tensor]) -> list[Tensor]:
    return list(params.values()) if isinstance(params, Mapping) else list(params)


def finite_difference_check(
    model_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Iterable[Tensor],
    h: float = 1e-5,
) -> float:
    """Largest disagreement between taped gradients and central differences.

    Each parameter entry contributes ``|a - n| / max(1, |a|, |n|)`` where ``a``
    is the analytic and ``n`` the numeric derivative. Gradients are left zeroed.
    """
    plist = _as_list(params)
    if not plist:
        return 0.0
    for p in plist:
        p.zero_grad()
    with Tape() as tape:
        loss = model_fn()
        tape.backward(loss)
    analytic = [p.grad.copy() for p in plist]
    for p in plist:
        p.zero_grad()

    worst = 0.0
    for p, a in zip(plist, analytic):
        for idx in np.ndindex(p.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            f_plus = model_fn().item()
            p.data[idx] = orig - h
            f_minus = model_fn().item()
            p.data[idx] = orig
            num = (f_plus - f_minus) / (2 * h)
            err = abs(a[idx] - num) / max(1.0, abs(a[idx]), abs(num))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------

def is_weight_name(name: str) -> bool:
    """Weight matrices (``*.W*``, ``*.U*``) decay; biases and initial states do not."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf[:1] in ("W", "U")


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Decay shrinks ``theta <- theta - lr * wd * theta`` before the moment
    update, only for parameters selected by ``decay`` (weights by default).
    """

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 5e-4,
        decay: Callable[[str], bool] = is_weight_name,
    ):
        self.params = dict(params)
        self.state = AdamState(lr, betas[0], betas[1], eps, weight_decay)
        self.decay = {name: decay(name) for name in self.params}
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        st = self.state
        for name, p in self.params.items():
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient in parameter {name!r}")
        st.step += 1
        bc1 = 1.0 - st.beta1**st.step
        bc2 = 1.0 - st.beta2**st.step
        for name, p in self.params.items():
            g = p.grad
            if st.weight_decay and self.decay[name]:
                p.data -= st.lr * st.weight_decay * p.data
            m, v = st.m[name], st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            p.data -= st.lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps)
        self.zero_grad()


def adam_step(params: Mapping[str, Tensor], optimizer: Adam) -> None:
    """Functional alias for ``optimizer.step()``; kept for symmetry with ``backward``."""
    if set(params) != set(optimizer.params):
        raise KeyError("parameter set differs from the one the optimizer was built with")
    optimizer.step()
