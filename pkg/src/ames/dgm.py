"""Discrete differentiable graph module: one latent graph per model space.

Pipeline for a single space: embed node features with ``f_theta``, project
onto the manifold with the exponential map, turn geodesic distances into
edge log-probabilities ``-T * d``, and sample ``k`` out-edges per node with
the Gumbel top-k trick. The sampled adjacency is a constant downstream; the
module's own parameters (``f_theta`` and the temperature) learn only through
the reward-weighted graph loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape
from .errors import ConfigError, ContractError
from .layers import LayerSpec, build_stack, run_stack, stack_parameters
from .manifolds import ModelSpace, exp_map_origin, geodesic_distance_pairwise

LATENT_DIM = 4


def dgm_architecture(kind: str, num_features: int, latent_dim: int = LATENT_DIM) -> tuple[LayerSpec, ...]:
    """Layer stack of ``f_theta`` for a dataset kind."""
    L = LayerSpec
    if kind == "homophilic":
        return (
            L("linear", num_features, 32),
            L("elu"),
            L("gcn", 32, 16),
            L("elu"),
            L("gcn", 16, latent_dim),
            L("sigmoid"),
        )
    if kind == "heterophilic":
        return (
            L("linear", num_features, 32),
            L("bn", 0, 32),
            L("elu"),
            L("linear", 32, latent_dim),
            L("bn", 0, latent_dim),
            L("elu"),
            L("linear", latent_dim, latent_dim),
            L("bn", 0, latent_dim),
            L("sigmoid"),
        )
    if kind == "pointcloud":
        return (
            L("linear", num_features, 16),
            L("bn", 0, 16),
            L("elu"),
            L("linear", 16, latent_dim),
            L("bn", 0, latent_dim),
            L("sigmoid"),
        )
    raise ConfigError(f"unknown dataset kind {kind!r}")


@dataclass(frozen=True)
class DgmConfig:
    space: ModelSpace
    k: int
    architecture: tuple[LayerSpec, ...]
    temperature_init: float = 1.0
    use_input_graph: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.temperature_init <= 0:
            raise ConfigError("temperature_init must be positive")
        if self.architecture and self.architecture[-1].kind != "sigmoid":
            raise ConfigError("f_theta must end with a sigmoid")


@dataclass
class LatentGraph:
    targets: np.ndarray  # N x k sampled neighbour ids, sorted per row
    edge_logp: Node  # (N*k) x 1, log p_ij of each sampled edge in row-major order
    adjacency: np.ndarray  # N x N directed 0/1 matrix

    @property
    def k(self) -> int:
        return self.targets.shape[1]

    @property
    def edges(self) -> np.ndarray:
        n, k = self.targets.shape
        return np.stack([np.repeat(np.arange(n), k), self.targets.ravel()], axis=1)


@dataclass
class NodeRewardState:
    """Cumulative per-node accuracy, used as the baseline of the graph-loss reward."""

    mean: np.ndarray
    count: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.count is None:
            self.count = np.zeros(self.mean.shape, dtype=np.int64)

    @classmethod
    def fresh(cls, n: int, init: float = 0.5) -> "NodeRewardState":
        return cls(np.full(n, init))


def update_rewards(state: NodeRewardState, predictions, labels, train_mask) -> np.ndarray:
    """Return ``delta = E[a] - a`` on training nodes, then fold ``a`` into the running mean."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    mask = np.asarray(train_mask, dtype=bool)
    correct = (predictions == labels).astype(np.float64)
    delta = np.where(mask, state.mean - correct, 0.0)
    count = state.count + mask
    # plain cumulative mean: the initial value is replaced by the first observation
    state.mean = np.where(mask, state.mean + (correct - state.mean) / np.maximum(count, 1), state.mean)
    state.count = count
    return delta


def gumbel_topk(logp: np.ndarray, k: int, rng: np.random.Generator | None, mode: str = "train") -> np.ndarray:
    """Pick ``k`` distinct non-self targets per row; returns an N x k array sorted per row."""
    n = logp.shape[0]
    if k >= n:
        raise ConfigError(f"k={k} must be smaller than the number of nodes ({n})")
    if mode == "train":
        if rng is None:
            raise ContractError("train-mode sampling needs an rng")
        u = rng.random(logp.shape)
        u[u == 0.0] = np.finfo(np.float64).tiny
        scores = logp - np.log(-np.log(u))
        np.fill_diagonal(scores, -np.inf)
        picked = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    elif mode == "eval":
        scores = np.array(logp, dtype=np.float64)
        np.fill_diagonal(scores, -np.inf)
        kth = -np.partition(-scores, k - 1, axis=1)[:, k - 1 : k]
        above = scores > kth
        tied = scores == kth
        # fill the remaining slots with the lowest-index ties
        need = k - above.sum(axis=1, keepdims=True)
        chosen = above | (tied & (np.cumsum(tied, axis=1) <= need))
        picked = np.nonzero(chosen)[1].reshape(n, k)
    else:
        raise ContractError(f"unknown sampling mode {mode!r}")
    return np.sort(picked, axis=1)


class DGM:
    def __init__(self, name: str, config: DgmConfig, rng: np.random.Generator):
        self.name = name
        self.config = config
        self.layers = build_stack(f"{name}.f", config.architecture, rng)
        t0 = config.temperature_init
        # softplus(tau) == t0
        self.tau = Parameter(f"{name}.tau", [[t0 + math.log(-math.expm1(-t0))]])

    @property
    def space(self) -> ModelSpace:
        return self.config.space

    def parameters(self) -> list[Parameter]:
        return stack_parameters(self.layers) + [self.tau]

    def temperature(self, tape: Tape) -> Node:
        return ad.softplus(tape.param(self.tau))

    def embed(self, tape: Tape, x: Node, input_adj=None, mode: str = "train") -> Node:
        if self.config.use_input_graph and input_adj is None:
            raise ConfigError(f"{self.name}: f_theta uses the input graph but none was given")
        return run_stack(self.layers, tape, x, input_adj, mode)

    def edge_log_probabilities(self, tape: Tape, embedded: Node) -> Node:
        dist = geodesic_distance_pairwise(self.space, exp_map_origin(self.space, embedded))
        return ad.neg(ad.mul(self.temperature(tape), dist))

    def edge_probabilities(self, tape: Tape, embedded: Node) -> Node:
        return ad.exp(self.edge_log_probabilities(tape, embedded))

    def sample(self, logp: Node, rng: np.random.Generator | None, mode: str = "train") -> LatentGraph:
        return sample_gumbel_topk(logp, self.config.k, rng, mode)


def sample_gumbel_topk(logp: Node, k: int, rng, mode: str = "train") -> LatentGraph:
    """Sample a k-regular directed graph from edge log-probabilities on the tape."""
    return latent_from_targets(logp, gumbel_topk(logp.value, k, rng, mode))


def latent_from_targets(logp: Node, targets) -> LatentGraph:
    """Wrap a fixed N x k neighbour array as a latent graph over ``logp``."""
    targets = np.asarray(targets, dtype=np.intp)
    n, k = targets.shape
    if n != logp.shape[0]:
        raise ContractError(f"targets cover {n} nodes, log-probabilities {logp.shape[0]}")
    rows = np.repeat(np.arange(n), k)
    adjacency = np.zeros((n, n))
    adjacency[rows, targets.ravel()] = 1.0
    return LatentGraph(targets, ad.take(logp, rows, targets.ravel()), adjacency)


def graph_loss(latent: LatentGraph, rewards) -> Node:
    """``sum_i delta_i * sum_{j in N(i)} log p_ij``; rewards are constants."""
    rewards = np.asarray(rewards, dtype=np.float64).ravel()
    if rewards.shape[0] != latent.targets.shape[0]:
        raise ContractError("one reward per node is required")
    weights = np.repeat(rewards, latent.k).reshape(-1, 1)
    return ad.sum_all(ad.mul(latent.edge_logp, weights))
