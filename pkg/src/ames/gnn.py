"""Model assembly: per-space graph modules, replicated diffusion stacks, attention, shared head."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import AttentionParams, AttentionState, combine_gradients, fuse, manifold_weights
from .autodiff import Node, Parameter, Tape
from .dgm import DGM, DgmConfig, LatentGraph, dgm_architecture, latent_from_targets, sample_gumbel_topk
from .errors import ConfigError, ContractError
from .layers import (
    LayerSpec,
    build_stack,
    gcn_conv,
    normalize_adjacency,
    run_stack,
    stack_parameters,
)
from .manifolds import ModelSpace

KINDS = ("homophilic", "heterophilic", "pointcloud")
VARIANTS = ("ames", "ddgm", "mlp", "gcn")


def diffusion_architecture(kind: str, num_features: int) -> tuple[LayerSpec, ...]:
    """Graph-convolution part of the downstream network (ELU after every conv)."""
    L = LayerSpec
    if kind == "heterophilic":
        dims = [num_features, 16, 8]
    elif kind in ("homophilic", "pointcloud"):
        dims = [num_features, 32, 16, 8]
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    specs = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        specs += [L("gcn", fan_in, fan_out), L("elu")]
    return tuple(specs)


def head_architecture(kind: str, num_classes: int) -> tuple[LayerSpec, ...]:
    """Graph-independent layers after the last convolution."""
    L = LayerSpec
    if kind == "homophilic":
        return (L("linear", 8, 8), L("elu"), L("linear", 8, 8), L("elu"), L("linear", 8, num_classes))
    if kind == "heterophilic":
        return (L("linear", 8, 8), L("bn", 0, 8), L("elu"), L("linear", 8, num_classes))
    if kind == "pointcloud":
        return (
            L("linear", 8, 8),
            L("bn", 0, 8),
            L("elu"),
            L("linear", 8, 8),
            L("bn", 0, 8),
            L("elu"),
            L("linear", 8, num_classes),
        )
    raise ConfigError(f"unknown dataset kind {kind!r}")


class ReplicaGroup:
    """M diffusion stacks kept parameter-identical by a shared gradient."""

    def __init__(self, labels: Sequence[str], specs: Sequence[LayerSpec], rng: np.random.Generator):
        canonical = build_stack("diff", specs, rng)
        self.snapshot = [p.value.copy() for p in stack_parameters(canonical)]
        self.labels = list(labels)
        self.stacks = []
        for label in self.labels:
            # the rng is irrelevant: every value is overwritten from the snapshot
            stack = build_stack(f"diff.{label}", specs, np.random.default_rng(0))
            for p, v in zip(stack_parameters(stack), self.snapshot):
                p.value = v.copy()
            self.stacks.append(stack)

    def __len__(self) -> int:
        return len(self.stacks)

    def replica_parameters(self, i: int) -> list[Parameter]:
        return stack_parameters(self.stacks[i])

    def parameters(self) -> list[Parameter]:
        return [p for i in range(len(self)) for p in self.replica_parameters(i)]

    def max_difference(self) -> float:
        """Largest absolute parameter difference between any replica and the first."""
        ref = self.replica_parameters(0)
        worst = 0.0
        for i in range(1, len(self)):
            for a, b in zip(ref, self.replica_parameters(i)):
                worst = max(worst, float(np.max(np.abs(a.value - b.value))))
        return worst

    def replica_gradients(self, tape: Tape) -> list[dict[str, np.ndarray]]:
        return [
            {str(j): tape.param_grad(p) for j, p in enumerate(self.replica_parameters(i))}
            for i in range(len(self))
        ]

    def share_gradient(self, tape: Tape, weights) -> dict[str, np.ndarray]:
        """Overwrite every replica's gradient with the weighted combination."""
        combined = combine_gradients(weights, self.replica_gradients(tape))
        for i in range(len(self)):
            for j, p in enumerate(self.replica_parameters(i)):
                node = tape.param_node(p)
                if node is not None:
                    tape.override_gradient(node.id, combined[str(j)])
        return combined


@dataclass
class ForwardResult:
    tape: Tape
    logits: Node
    features: list[Node] = field(default_factory=list)  # X_Mi, one per space
    attention: AttentionState | None = None
    graphs: list[LatentGraph] = field(default_factory=list)

    @property
    def feature_ids(self) -> list[int]:
        return [f.id for f in self.features]

    @property
    def alpha(self) -> np.ndarray | None:
        if self.attention is None:
            return np.ones(len(self.features)) if self.features else None
        return manifold_weights(self.attention)


class ModelAssembly:
    def __init__(
        self,
        kind: str,
        variant: str,
        num_features: int,
        num_classes: int,
        spaces: Sequence[ModelSpace],
        k: int,
        seed: int = 0,
        temperature_init: float = 1.0,
    ):
        if kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
        if variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")
        spaces = list(spaces)
        if variant in ("ames", "ddgm") and not spaces:
            raise ConfigError("latent-graph variants need at least one model space")
        if variant == "ddgm" and len(spaces) != 1:
            raise ConfigError("the single-space baseline takes exactly one model space")
        self.kind = kind
        self.variant = variant
        self.num_features = num_features
        self.num_classes = num_classes
        self.k = k
        self.spaces = spaces if variant in ("ames", "ddgm") else []

        # independent streams so optional components never shift other initialisations
        def stream(tag: int) -> np.random.Generator:
            return np.random.default_rng([seed, tag])

        diff_specs = diffusion_architecture(kind, num_features)
        self.dgms: list[DGM] = []
        self.replicas: ReplicaGroup | None = None
        self.baseline_stack = None
        self.attention: AttentionParams | None = None
        if self.spaces:
            for space in self.spaces:
                cfg = DgmConfig(
                    space=space,
                    k=k,
                    architecture=dgm_architecture(kind, num_features, space.latent_dim),
                    temperature_init=temperature_init,
                    use_input_graph=(kind == "homophilic"),
                )
                self.dgms.append(DGM(f"dgm.{space.label}", cfg, stream(100 + "EHS".index(space.label))))
            self.replicas = ReplicaGroup([s.label for s in self.spaces], diff_specs, stream(1))
            if variant == "ames":
                self.attention = AttentionParams(diff_specs[-2].fan_out, stream(3))
        else:
            if variant == "mlp":
                diff_specs = tuple(LayerSpec("linear", s.fan_in, s.fan_out) if s.kind == "gcn" else s for s in diff_specs)
            self.baseline_stack = build_stack("diff", diff_specs, stream(1))
        self.head = build_stack("head", head_architecture(kind, num_classes), stream(2))

    @property
    def uses_input_graph(self) -> bool:
        return self.variant == "gcn" or any(d.config.use_input_graph for d in self.dgms)

    def parameters(self) -> list[Parameter]:
        params = [p for d in self.dgms for p in d.parameters()]
        if self.replicas is not None:
            params += self.replicas.parameters()
        if self.baseline_stack is not None:
            params += stack_parameters(self.baseline_stack)
        if self.attention is not None:
            params += self.attention.parameters()
        return params + stack_parameters(self.head)

    def forward(
        self,
        tape: Tape,
        features: np.ndarray,
        input_adj: np.ndarray | None = None,
        mode: str = "train",
        rngs: Sequence[np.random.Generator] | None = None,
        forced_targets: np.ndarray | None = None,
    ) -> ForwardResult:
        """One full pass.

        ``input_adj`` is the normalised dataset graph (needed by homophilic
        graph modules and the GCN baseline). ``rngs`` holds one generator per
        space for train-mode sampling. ``forced_targets`` (N x k) replaces
        the sampled neighbour sets of every space.
        """
        x = tape.constant(features, op="features")
        if self.uses_input_graph and input_adj is None:
            raise ConfigError("this model needs the dataset graph")
        adj_node = tape.constant(input_adj, op="input_adj") if input_adj is not None else None
        result = ForwardResult(tape, None)

        if self.baseline_stack is not None:
            h = run_stack(self.baseline_stack, tape, x, adj_node, mode)
        else:
            if mode == "train" and forced_targets is None:
                if rngs is None or len(rngs) != len(self.dgms):
                    raise ContractError("train mode needs one rng per model space")
            for i, (dgm, stack) in enumerate(zip(self.dgms, self.replicas.stacks)):
                logp = dgm.edge_log_probabilities(tape, dgm.embed(tape, x, adj_node, mode))
                if forced_targets is not None:
                    latent = latent_from_targets(logp, forced_targets)
                else:
                    latent = sample_gumbel_topk(logp, dgm.config.k, rngs[i] if rngs else None, mode)
                result.graphs.append(latent)
                norm_adj = tape.constant(normalize_adjacency(latent.adjacency), op="latent_adj")
                result.features.append(run_stack(stack, tape, x, norm_adj, mode))
            if self.attention is not None:
                h, result.attention = fuse(tape, self.attention, result.features)
            else:
                h = result.features[0]
        result.logits = run_stack(self.head, tape, h, None, mode)
        return result


def build_model(
    dataset_kind: str,
    num_features: int,
    num_classes: int,
    spaces: Sequence[ModelSpace],
    k: int,
    variant: str = "ames",
    seed: int = 0,
    temperature_init: float = 1.0,
) -> ModelAssembly:
    return ModelAssembly(dataset_kind, variant, num_features, num_classes, spaces, k, seed, temperature_init)


__all__ = [
    "ForwardResult",
    "ModelAssembly",
    "ReplicaGroup",
    "build_model",
    "diffusion_architecture",
    "gcn_conv",
    "head_architecture",
    "normalize_adjacency",
]
