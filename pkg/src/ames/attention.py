"""Attention over per-space node features and the attention-weighted shared gradient."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape
from .errors import ContractError, DimensionError
from .layers import glorot


class AttentionParams:
    """Query/key matrices shared by every space and every node."""

    def __init__(self, dim: int, rng: np.random.Generator, name: str = "attn"):
        self.dim = dim
        self.w_q = Parameter(f"{name}.w_q", glorot(rng, dim, dim))
        self.w_k = Parameter(f"{name}.w_k", glorot(rng, dim, dim))

    def parameters(self) -> list[Parameter]:
        return [self.w_q, self.w_k]


@dataclass
class AttentionState:
    per_node_weights: np.ndarray  # N x M
    per_node_node: Node | None = None  # the same weights on the tape

    @property
    def per_manifold_weights(self) -> np.ndarray:
        return manifold_weights(self)


def fuse(tape: Tape, params: AttentionParams, features: Sequence[Node]) -> tuple[Node, AttentionState]:
    """Combine per-space features row by row.

    For node ``k``, query space ``i`` attends over key spaces ``j`` with
    ``softmax_j((W_Q x_ki) . (W_K x_kj) / sqrt(d))``. A space's weight for
    node ``k`` is the mean attention it receives over all queries; the fused
    row is the weighted sum of the per-space rows.
    """
    if not features:
        raise ContractError("fuse needs at least one feature matrix")
    shape = features[0].shape
    if any(f.shape != shape for f in features):
        raise DimensionError(f"feature shapes differ: {[f.shape for f in features]}")
    if shape[1] != params.dim:
        raise DimensionError(f"features have {shape[1]} columns, attention expects {params.dim}")
    m = len(features)
    wq_t = ad.transpose(tape.param(params.w_q))
    wk_t = ad.transpose(tape.param(params.w_k))
    queries = [ad.matmul(x, wq_t) for x in features]
    keys = [ad.matmul(x, wk_t) for x in features]
    inv_sqrt_d = 1.0 / np.sqrt(params.dim)

    received = None
    for q in queries:
        scores = ad.concat_cols([ad.scale(ad.rowsum(ad.mul(q, kk)), inv_sqrt_d) for kk in keys])
        att = ad.softmax_rows(scores)  # N x M, row = this query's distribution over keys
        received = att if received is None else ad.add(received, att)
    weights = ad.scale(received, 1.0 / m)

    fused = None
    for i, x in enumerate(features):
        term = ad.mul(ad.columns(weights, i), x)
        fused = term if fused is None else ad.add(fused, term)
    return fused, AttentionState(weights.value.copy(), weights)


def manifold_weights(state: AttentionState) -> np.ndarray:
    """Node-averaged weight of each space (a detached copy)."""
    return state.per_node_weights.mean(axis=0)


def combine_gradients(
    weights: Sequence[float], grads: Sequence[Mapping[str, np.ndarray]]
) -> dict[str, np.ndarray]:
    """``sum_i w_i * grads[i][name]`` for every parameter slot ``name``."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(grads):
        raise DimensionError(f"{len(weights)} weights for {len(grads)} gradient sets")
    if not grads:
        raise ContractError("no gradient sets to combine")
    keys = list(grads[0])
    combined = {}
    for key in keys:
        total = None
        for w, g in zip(weights, grads):
            if key not in g:
                raise DimensionError(f"gradient set is missing {key!r}")
            arr = np.asarray(g[key], dtype=np.float64)
            if total is not None and arr.shape != total.shape:
                raise DimensionError(f"{key!r}: shapes {arr.shape} and {total.shape} differ")
            total = w * arr if total is None else total + w * arr
        combined[key] = total
    for g in grads[1:]:
        if set(g) != set(keys):
            raise DimensionError("gradient sets cover different parameters")
    return combined
