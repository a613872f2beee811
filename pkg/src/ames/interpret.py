"""Gradient attribution per latent space: Frobenius norms of dL_T/dX_Mi."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Node, Tape
from .errors import ContractError, UnknownNodeError


def attribution_norms(
    tape: Tape,
    task_loss: Node,
    feature_ids: Sequence[int],
    graph_loss: Node | None = None,
) -> np.ndarray:
    """Frobenius norm of the task-loss gradient at each space's features.

    Reads gradients left by the last ``tape.backward`` call. When that call
    was on ``task_loss + graph_loss``, pass ``graph_loss`` so the absence of
    any path from the features into it is checked: only then are the stored
    gradients equal to those of the task loss alone.
    """
    n = len(tape.nodes)
    for fid in feature_ids:
        if not 0 <= fid < n:
            raise UnknownNodeError(f"feature id {fid} is not on the tape")
    if task_loss.grad is None:
        raise ContractError("run backward before reading attribution norms")
    if graph_loss is not None:
        upstream = tape.ancestors(graph_loss)
        leaked = [fid for fid in feature_ids if fid in upstream]
        if leaked:
            raise ContractError(f"graph loss depends on feature nodes {leaked}; attribution would be contaminated")
    return np.array([np.sqrt(np.sum(tape.grad(fid) ** 2)) for fid in feature_ids])


def aggregate_trace(traces: Sequence[np.ndarray]) -> np.ndarray:
    """Pointwise mean over folds of (epochs x spaces) norm curves."""
    if not traces:
        raise ContractError("no traces to aggregate")
    arrays = [np.asarray(t, dtype=np.float64) for t in traces]
    if len({a.shape for a in arrays}) != 1:
        raise ContractError(f"ragged traces: {[a.shape for a in arrays]}")
    return np.mean(np.stack(arrays), axis=0)


def rank_spaces(labels: Sequence[str], norms) -> list[tuple[str, float]]:
    """Spaces ordered by decreasing attribution; ties keep the input order."""
    norms = np.asarray(norms, dtype=np.float64)
    if len(labels) != len(norms):
        raise ContractError("one norm per space label is required")
    order = sorted(range(len(labels)), key=lambda i: -norms[i])
    return [(labels[i], float(norms[i])) for i in order]
