"""Layer building blocks shared by the graph module and the downstream network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Node, Parameter, Tape
from .errors import ConfigError, DimensionError


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric GCN normalisation ``D^-1/2 (A + I) D^-1/2`` of a 0/1 matrix."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got {a.shape}")
    a = np.maximum(a, a.T)
    np.fill_diagonal(a, 0.0)
    a_tilde = a + np.eye(a.shape[0])
    inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]


def edges_to_adjacency(edges: np.ndarray | None, n: int) -> np.ndarray:
    a = np.zeros((n, n))
    if edges is not None and len(edges):
        edges = np.asarray(edges)
        a[edges[:, 0], edges[:, 1]] = 1.0
        a[edges[:, 1], edges[:, 0]] = 1.0
    return a


class Linear:
    def __init__(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.weight = Parameter(f"{name}.weight", glorot(rng, fan_in, fan_out))
        self.bias = Parameter(f"{name}.bias", np.zeros((1, fan_out)))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def __call__(self, tape: Tape, x: Node, adj=None, mode: str = "train") -> Node:
        return ad.add(ad.matmul(x, tape.param(self.weight)), tape.param(self.bias))


class GCNConv(Linear):
    """``norm_adj @ x @ W + b``; ``norm_adj`` is a constant."""

    def __call__(self, tape: Tape, x: Node, adj=None, mode: str = "train") -> Node:
        if adj is None:
            raise ConfigError("GCNConv needs a normalised adjacency")
        return gcn_conv(self, x, adj)


def gcn_conv(layer: Linear, x: Node, norm_adj) -> Node:
    tape = x.tape
    if not isinstance(norm_adj, Node):
        norm_adj = tape.constant(norm_adj, op="norm_adj")
    if norm_adj.shape != (x.shape[0], x.shape[0]):
        raise DimensionError(f"adjacency {norm_adj.shape} does not match {x.shape[0]} nodes")
    support = ad.matmul(x, tape.param(layer.weight))
    return ad.add(ad.matmul(norm_adj, support), tape.param(layer.bias))


class BatchNorm:
    def __init__(self, name: str, num_features: int):
        self.gamma = Parameter(f"{name}.gamma", np.ones((1, num_features)))
        self.beta = Parameter(f"{name}.beta", np.zeros((1, num_features)))
        self.state = BatchNormState(num_features)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def __call__(self, tape: Tape, x: Node, adj=None, mode: str = "train") -> Node:
        return ad.batchnorm(x, tape.param(self.gamma), tape.param(self.beta), self.state, mode)


class Activation:
    _FNS = {"elu": ad.elu, "sigmoid": ad.sigmoid}

    def __init__(self, kind: str):
        if kind not in self._FNS:
            raise ConfigError(f"unknown activation {kind!r}")
        self.kind = kind

    def parameters(self) -> list[Parameter]:
        return []

    def __call__(self, tape: Tape, x: Node, adj=None, mode: str = "train") -> Node:
        return self._FNS[self.kind](x)


@dataclass(frozen=True)
class LayerSpec:
    """One row of an architecture table: ``kind`` in linear/gcn/bn/elu/sigmoid."""

    kind: str
    fan_in: int = 0
    fan_out: int = 0


def build_stack(name: str, specs: Sequence[LayerSpec], rng: np.random.Generator) -> list:
    layers = []
    for i, spec in enumerate(specs):
        lname = f"{name}.{i}"
        if spec.kind == "linear":
            layers.append(Linear(lname, spec.fan_in, spec.fan_out, rng))
        elif spec.kind == "gcn":
            layers.append(GCNConv(lname, spec.fan_in, spec.fan_out, rng))
        elif spec.kind == "bn":
            layers.append(BatchNorm(lname, spec.fan_out))
        elif spec.kind in ("elu", "sigmoid"):
            layers.append(Activation(spec.kind))
        else:
            raise ConfigError(f"unknown layer kind {spec.kind!r}")
    return layers


def run_stack(layers, tape: Tape, x: Node, adj=None, mode: str = "train") -> Node:
    for layer in layers:
        x = layer(tape, x, adj, mode)
    return x


def stack_parameters(layers) -> list[Parameter]:
    return [p for layer in layers for p in layer.parameters()]
