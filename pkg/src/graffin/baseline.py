"""Standalone single-layer message-passing classifier (GCN or mean aggregation).

This is the un-plugged comparison arm, written independently of
:mod:`graffin.model` so that removing the plug can be checked against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tape, Tensor
from .data import DatasetBundle
from .graph import class_stats
from .layers import Aggregation, LinearParams, MpParams, aggregation_matrix
from .metrics import MetricsReport, evaluate


@dataclass
class VanillaParams:
    mp: MpParams
    classifier: LinearParams

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.mp.named("mp"), **self.classifier.named("classifier")}


def init_vanilla_params(num_features: int, hidden: int, num_classes: int, seed: int,
                        aggregation: Aggregation | str = Aggregation.GCN) -> VanillaParams:
    rng = np.random.default_rng(seed)
    mp = MpParams.init(num_features, hidden, rng, aggregation)
    return VanillaParams(mp, LinearParams.init(hidden, num_classes, rng))


def vanilla_forward(agg_x: Tensor, params: VanillaParams) -> Tensor:
    h = ad.relu(ad.matmul(agg_x, params.mp.W))
    return ad.add(ad.matmul(h, params.classifier.W), params.classifier.b)


def train_vanilla(bundle: DatasetBundle, *, epochs: int = 200, lr: float = 0.01,
                  weight_decay: float = 5e-4, hidden: int = 64,
                  aggregation: Aggregation | str = Aggregation.GCN,
                  seed: int = 0) -> tuple[VanillaParams, list[float], np.ndarray, MetricsReport]:
    """Returns parameters, per-epoch losses, final logits and test metrics."""
    g = bundle.graph
    params = init_vanilla_params(g.num_features, hidden, g.num_classes, seed, aggregation)
    agg_x = ad.spmm(aggregation_matrix(g, aggregation), Tensor(g.features))
    idx = bundle.train_mask
    opt = Adam(params.named_parameters(), lr=lr, weight_decay=weight_decay)
    losses = []
    for _ in range(epochs):
        with Tape() as tape:
            logp = ad.log_softmax_rows(vanilla_forward(agg_x, params))
            loss = ad.scale(ad.mean_all(ad.take(logp, idx, g.labels[idx])), -1.0)
            tape.backward(loss)
        losses.append(loss.item())
        opt.step()
    logits = vanilla_forward(agg_x, params).data
    report = evaluate(logits, g.labels, bundle.test_mask, g.num_classes, class_stats(g).tail_class)
    return params, losses, logits, report
