"""Linear, GRU and message-passing layers over the autodiff tensors."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, sigmoid_np
from .graph import AttributedGraph, mean_aggregation_adjacency, normalized_adjacency


class Aggregation(str, enum.Enum):
    GCN = "gcn"
    MEAN = "mean"


def glorot_uniform(shape: tuple[int, int], rng: np.random.Generator | int) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out))."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(shape: tuple[int, int], seed: int | np.random.Generator, scheme: str = "glorot_uniform") -> np.ndarray:
    if scheme != "glorot_uniform":
        raise ValueError(f"unsupported init scheme {scheme!r}")
    if min(shape) < 1:
        raise ValueError(f"dimensions must be positive, got {shape}")
    return glorot_uniform(shape, seed)


@dataclass
class LinearParams:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearParams":
        return cls(
            Tensor(init_params((in_dim, out_dim), rng), requires_grad=True),
            Tensor(np.zeros((1, out_dim)), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}


@dataclass
class GruParams:
    W_z: Tensor
    W_r: Tensor
    W_s: Tensor
    U_z: Tensor
    U_r: Tensor
    U_s: Tensor
    b_z: Tensor
    b_r: Tensor
    b_s: Tensor
    h0: Tensor

    @property
    def hidden(self) -> int:
        return self.U_z.rows

    @classmethod
    def init(cls, in_dim: int, hidden: int, rng: np.random.Generator) -> "GruParams":
        w = [Tensor(init_params((in_dim, hidden), rng), requires_grad=True) for _ in range(3)]
        u = [Tensor(init_params((hidden, hidden), rng), requires_grad=True) for _ in range(3)]
        z = [Tensor(np.zeros((1, hidden)), requires_grad=True) for _ in range(4)]
        return cls(*w, *u, *z)

    def tensors(self) -> tuple[Tensor, ...]:
        return (self.W_z, self.W_r, self.W_s, self.U_z, self.U_r, self.U_s,
                self.b_z, self.b_r, self.b_s, self.h0)

    def named(self, prefix: str) -> dict[str, Tensor]:
        names = ("W_z", "W_r", "W_s", "U_z", "U_r", "U_s", "b_z", "b_r", "b_s", "h0")
        return {f"{prefix}.{n}": t for n, t in zip(names, self.tensors())}


@dataclass
class MpParams:
    W: Tensor
    aggregation: Aggregation = Aggregation.GCN

    @classmethod
    def init(cls, in_dim: int, hidden: int, rng: np.random.Generator,
             aggregation: Aggregation | str = Aggregation.GCN) -> "MpParams":
        return cls(Tensor(init_params((in_dim, hidden), rng), requires_grad=True), Aggregation(aggregation))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W}


def linear_forward(x: Tensor, p: LinearParams) -> Tensor:
    return ad.add(ad.matmul(x, p.W), p.b)


def gru_sequence(x_seq: Tensor, p: GruParams) -> Tensor:
    """Run a GRU over the rows of ``x_seq`` (row 0 first) and return every hidden state.

    With ``h`` the previous state (``h0`` before row 0)::

        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        s = tanh(x W_s + (h * r) U_s + b_s)
        h' = z * h + (1 - z) * s

    Recorded as a single tape operation with an explicit backward-through-time.
    """
    hdim = p.hidden
    expected = {"W": (x_seq.cols, hdim), "U": (hdim, hdim), "b": (1, hdim), "h": (1, hdim)}
    for name, t in p.named("gru").items():
        want = expected[name.rsplit(".", 1)[1][0]]
        if t.shape != want:
            raise ShapeError(f"gru_sequence: {name} has shape {t.shape}, expected {want} for input {x_seq.shape}")

    x = x_seq.data
    n = x.shape[0]
    w_cat = np.concatenate([p.W_z.data, p.W_r.data, p.W_s.data], axis=1)
    b_cat = np.concatenate([p.b_z.data, p.b_r.data, p.b_s.data], axis=1)
    u_zr = np.concatenate([p.U_z.data, p.U_r.data], axis=1)
    u_s = p.U_s.data
    xp = x @ w_cat + b_cat

    h_prev = np.empty((n, hdim))
    zs = np.empty((n, hdim))
    rs = np.empty((n, hdim))
    ss = np.empty((n, hdim))
    qs = np.empty((n, hdim))
    out = np.empty((n, hdim))
    h = p.h0.data[0]
    for t in range(n):
        h_prev[t] = h
        zr = sigmoid_np(xp[t, :2 * hdim] + h @ u_zr)
        z, r = zr[:hdim], zr[hdim:]
        q = h * r
        s = np.tanh(xp[t, 2 * hdim:] + q @ u_s)
        h = z * h + (1.0 - z) * s
        zs[t], rs[t], ss[t], qs[t], out[t] = z, r, s, q, h

    def bw(g: np.ndarray):
        dxp = np.empty((n, 3 * hdim))
        dh = np.zeros(hdim)
        u_zr_t, u_s_t = u_zr.T, u_s.T
        for t in range(n - 1, -1, -1):
            dh = dh + g[t]
            hp, z, r, s = h_prev[t], zs[t], rs[t], ss[t]
            das = dh * (1.0 - z) * (1.0 - s * s)
            dz = dh * (hp - s)
            dq = das @ u_s_t
            dazr = np.concatenate([dz * z * (1.0 - z), dq * hp * r * (1.0 - r)])
            dxp[t, :2 * hdim] = dazr
            dxp[t, 2 * hdim:] = das
            dh = dh * z + dq * r + dazr @ u_zr_t
        dw = x.T @ dxp
        db = dxp.sum(axis=0, keepdims=True)
        du_zr = h_prev.T @ dxp[:, :2 * hdim]
        du_s = qs.T @ dxp[:, 2 * hdim:]
        dx = dxp @ w_cat.T
        hs = slice(0, hdim), slice(hdim, 2 * hdim), slice(2 * hdim, 3 * hdim)
        return (
            dx,
            dw[:, hs[0]], dw[:, hs[1]], dw[:, hs[2]],
            du_zr[:, hs[0]], du_zr[:, hs[1]], du_s,
            db[:, hs[0]], db[:, hs[1]], db[:, hs[2]],
            dh.reshape(1, -1),
        )

    return ad.record(out, (x_seq, *p.tensors()), bw)


def aggregation_matrix(graph: AttributedGraph, kind: Aggregation | str) -> sp.csr_matrix:
    kind = Aggregation(kind)
    if kind is Aggregation.GCN:
        return normalized_adjacency(graph)
    return mean_aggregation_adjacency(graph)


def mp_forward(graph: AttributedGraph, x: Tensor, p: MpParams) -> Tensor:
    """One message-passing layer: ``ReLU(Agg X W)``."""
    return mp_from_aggregated(ad.spmm(aggregation_matrix(graph, p.aggregation), x), p)


def mp_from_aggregated(agg_x: Tensor, p: MpParams) -> Tensor:
    """``ReLU((Agg X) W)`` when ``Agg X`` is already known (it is constant in training)."""
    return ad.relu(ad.matmul(agg_x, p.W))
