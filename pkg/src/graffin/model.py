"""The Graffin plug-in, the fused local/global model and its training loop.

The local branch is one message-passing layer ``H_l = ReLU(Agg X W)``. The
global branch serializes the nodes, RMS-normalizes the reordered features and
runs two projections of them: ``GeLU(linear_1(X'))`` and ``GRU(linear_2(X'))``,
multiplied elementwise. Its output is put back in node order and multiplied
into ``H_l``; a linear classifier reads the result. With the plug removed the
model is exactly the single-layer message-passing baseline.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tape, Tensor
from .data import DatasetBundle
from .graph import AttributedGraph, class_stats
from .layers import (
    Aggregation,
    GruParams,
    LinearParams,
    MpParams,
    aggregation_matrix,
    gru_sequence,
    linear_forward,
    mp_from_aggregated,
)
from .metrics import MetricsReport, aggregate, evaluate
from .serialization import Serialization, Strategy, permute_rows, serialize

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "graffin-checkpoint/1"


class TrainingError(RuntimeError):
    pass


@dataclass
class GraffinParams:
    mp: MpParams
    classifier: LinearParams
    proj1: LinearParams | None = None
    proj2: LinearParams | None = None
    gru: GruParams | None = None

    @property
    def graffin_enabled(self) -> bool:
        return self.gru is not None

    @property
    def hidden(self) -> int:
        return self.mp.W.cols

    def named_parameters(self) -> dict[str, Tensor]:
        out = {**self.mp.named("mp"), **self.classifier.named("classifier")}
        if self.graffin_enabled:
            out.update(self.proj1.named("proj1"))
            out.update(self.proj2.named("proj2"))
            out.update(self.gru.named("gru"))
        return out


def init_graffin_params(
    num_features: int,
    hidden: int,
    num_classes: int,
    seed: int,
    graffin_enabled: bool = True,
    aggregation: Aggregation | str = Aggregation.GCN,
) -> GraffinParams:
    """Glorot-uniform weights, zero biases and zero initial GRU state.

    The message-passing and classifier weights are drawn first, so the same
    seed gives the same values with or without the plug.
    """
    rng = np.random.default_rng(seed)
    mp = MpParams.init(num_features, hidden, rng, aggregation)
    classifier = LinearParams.init(hidden, num_classes, rng)
    if not graffin_enabled:
        return GraffinParams(mp, classifier)
    proj1 = LinearParams.init(num_features, hidden, rng)
    proj2 = LinearParams.init(num_features, hidden, rng)
    gru = GruParams.init(hidden, hidden, rng)
    return GraffinParams(mp, classifier, proj1, proj2, gru)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4
    hidden: int = 64
    strategy: Strategy = Strategy.DEGREE
    aggregation: Aggregation = Aggregation.GCN
    seed: int = 0
    graffin_enabled: bool = True
    repeats: int = 5

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        self.aggregation = Aggregation(self.aggregation)

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ValueError(f"lr must be a finite nonnegative number, got {self.lr}")
        if not self.weight_decay >= 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["aggregation"] = self.aggregation.value
        return d


@dataclass
class PreparedInputs:
    """Forward-pass constants: ``Agg X`` and the normalized feature sequence."""

    agg_x: Tensor
    x_seq: Tensor | None
    serialization: Serialization | None


def prepare_inputs(graph: AttributedGraph, serialization: Serialization | None,
                   aggregation: Aggregation | str) -> PreparedInputs:
    agg_x = ad.spmm(aggregation_matrix(graph, aggregation), Tensor(graph.features))
    x_seq = None
    if serialization is not None:
        x_seq = ad.rms_norm(Tensor(permute_rows(graph.features, serialization.order)))
    return PreparedInputs(agg_x, x_seq, serialization)


def graffin_forward(x_seq: Tensor, params: GraffinParams) -> Tensor:
    """``GeLU(linear_1(X')) * GRU(linear_2(X'))``, rows in sequence order."""
    if params.proj1.W.cols != params.gru.hidden or params.proj2.W.cols != params.gru.W_z.rows:
        raise ad.ShapeError(
            f"hidden sizes disagree: proj1 {params.proj1.W.shape}, proj2 {params.proj2.W.shape}, "
            f"gru hidden {params.gru.hidden}"
        )
    t1 = ad.gelu(linear_forward(x_seq, params.proj1))
    t2 = gru_sequence(linear_forward(x_seq, params.proj2), params.gru)
    return ad.hadamard(t1, t2)


GlobalBranch = Callable[[Tensor, GraffinParams], Tensor]


def fused_forward(
    graph: AttributedGraph,
    serialization: Serialization | None,
    params: GraffinParams,
    graffin_enabled: bool | None = None,
    *,
    prepared: PreparedInputs | None = None,
    global_branch: GlobalBranch | None = None,
    hg_override: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Return ``(logits, H_f)``.

    ``global_branch`` replaces :func:`graffin_forward` (it receives the
    normalized sequence and must stay in sequence order); ``hg_override``
    replaces the node-ordered global representation outright. Both exist for
    testing.
    """
    if graffin_enabled is None:
        graffin_enabled = params.graffin_enabled
    if graffin_enabled and serialization is None and hg_override is None:
        raise ValueError("the global branch needs a serialization")
    if prepared is None:
        prepared = prepare_inputs(graph, serialization if graffin_enabled else None, params.mp.aggregation)

    h_l = mp_from_aggregated(prepared.agg_x, params.mp)
    if graffin_enabled:
        if hg_override is not None:
            h_g = hg_override
        else:
            branch = global_branch or graffin_forward
            h_g_seq = branch(prepared.x_seq, params)
            h_g = ad.permute_rows(h_g_seq, serialization.inverse)
        h_f = ad.hadamard(h_l, h_g)
    else:
        h_f = h_l
    return linear_forward(h_f, params.classifier), h_f


def nll_loss(logits: Tensor, labels: np.ndarray, mask) -> Tensor:
    """Mean negative log-softmax probability of the true class over ``mask``."""
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if idx.size == 0:
        raise ValueError("loss mask selects no nodes")
    picked = ad.take(ad.log_softmax_rows(logits), idx, np.asarray(labels)[idx])
    return ad.scale(ad.mean_all(picked), -1.0)


@dataclass
class RunHistory:
    seed: int
    losses: list[float]
    metrics: MetricsReport
    train_acc: float
    seconds: float = field(default=0.0, compare=False)

    def to_dict(self, timing: bool = False) -> dict:
        d = {"seed": self.seed, "losses": self.losses, "metrics": self.metrics.to_dict(), "train_acc": self.train_acc}
        if timing:
            d["seconds"] = self.seconds
        return d


def predict(bundle: DatasetBundle, params: GraffinParams, serialization: Serialization | None,
            prepared: PreparedInputs | None = None) -> np.ndarray:
    logits, _ = fused_forward(bundle.graph, serialization, params, prepared=prepared)
    return logits.data


def train(bundle: DatasetBundle, config: TrainConfig,
          params: GraffinParams | None = None, *,
          global_branch: GlobalBranch | None = None) -> tuple[GraffinParams, RunHistory]:
    """Full-batch transductive training for exactly ``config.epochs`` epochs.

    The serialization is computed once before the loop; the loss covers the
    training mask and metrics are taken on the test mask after the last update.
    """
    config.validate()
    start = time.perf_counter()
    graph = bundle.graph
    if params is None:
        params = init_graffin_params(graph.num_features, config.hidden, graph.num_classes,
                                     config.seed, config.graffin_enabled, config.aggregation)
    ser = serialize(graph, config.strategy, seed=config.seed) if config.graffin_enabled else None
    prepared = prepare_inputs(graph, ser, params.mp.aggregation)
    named = params.named_parameters()
    opt = Adam(named, lr=config.lr, weight_decay=config.weight_decay)

    losses: list[float] = []
    for epoch in range(config.epochs):
        with Tape() as tape:
            logits, _ = fused_forward(graph, ser, params, config.graffin_enabled,
                                      prepared=prepared, global_branch=global_branch)
            loss = nll_loss(logits, graph.labels, bundle.train_mask)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite training loss {value} at epoch {epoch}")
            tape.backward(loss)
        losses.append(value)
        try:
            opt.step()
        except ad.NonFiniteGradientError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from exc

    logits, _ = fused_forward(graph, ser, params, config.graffin_enabled,
                              prepared=prepared, global_branch=global_branch)
    logits = logits.data
    stats = class_stats(graph)
    report = evaluate(logits, graph.labels, bundle.test_mask, graph.num_classes, stats.tail_class)
    pred = logits.argmax(axis=1)
    train_acc = float(np.mean(pred[bundle.train_mask] == graph.labels[bundle.train_mask]))
    history = RunHistory(config.seed, losses, report, train_acc, time.perf_counter() - start)
    logger.info("seed %d: loss %.4f -> %.4f, test acc %.4f", config.seed, losses[0], losses[-1], report.all_acc)
    return params, history


@dataclass
class RepeatResult:
    config: TrainConfig
    runs: list[RunHistory]

    @property
    def reports(self) -> list[MetricsReport]:
        return [r.metrics for r in self.runs]

    def aggregate(self):
        return aggregate(self.reports)


def run_seeds(config: TrainConfig) -> list[int]:
    return [config.seed + r for r in range(config.repeats)]


def repeat_runs(bundle: DatasetBundle, config: TrainConfig, *,
                global_branch: GlobalBranch | None = None) -> RepeatResult:
    """Train ``config.repeats`` times with seeds ``seed, seed+1, ...`` on the same split."""
    config.validate()
    runs = []
    for seed in run_seeds(config):
        cfg = TrainConfig(**{**asdict(config), "seed": seed})
        runs.append(train(bundle, cfg, global_branch=global_branch)[1])
    runs.sort(key=lambda r: r.seed)
    return RepeatResult(config, runs)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: Path | str, params: GraffinParams) -> None:
    """Write an ``.npz`` archive: one float64 array per parameter name plus ``__meta__``.

    ``__meta__`` is a JSON string with ``format``, ``aggregation``,
    ``graffin_enabled`` and the ordered parameter names.
    """
    named = params.named_parameters()
    meta = {
        "format": CHECKPOINT_FORMAT,
        "aggregation": params.mp.aggregation.value,
        "graffin_enabled": params.graffin_enabled,
        "names": list(named),
    }
    arrays = {name: t.data for name, t in named.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: Path | str) -> GraffinParams:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        arrays = {name: np.array(z[name]) for name in meta["names"]}

    def t(name):
        return Tensor(arrays[name], requires_grad=True)

    mp = MpParams(t("mp.W"), Aggregation(meta["aggregation"]))
    classifier = LinearParams(t("classifier.W"), t("classifier.b"))
    if not meta["graffin_enabled"]:
        return GraffinParams(mp, classifier)
    gru_names = ("W_z", "W_r", "W_s", "U_z", "U_r", "U_s", "b_z", "b_r", "b_s", "h0")
    return GraffinParams(
        mp, classifier,
        LinearParams(t("proj1.W"), t("proj1.b")),
        LinearParams(t("proj2.W"), t("proj2.b")),
        GruParams(*(t(f"gru.{n}") for n in gru_names)),
    )
