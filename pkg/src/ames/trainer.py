"""Training: Adam, the shared-gradient training step, k-fold cross-validation."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape
from .data import Dataset
from .dgm import NodeRewardState, graph_loss, update_rewards
from .errors import ContractError, DivergenceError
from .gnn import ModelAssembly, build_model
from .interpret import aggregate_trace, attribution_norms

logger = logging.getLogger(__name__)

_SPACE_CODES = {"E": 0, "H": 1, "S": 2}


class Adam:
    """Adam with bias correction; weight decay is an L2 term added to the gradient."""

    def __init__(self, lr: float, weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Sequence[Parameter], grads: Sequence[np.ndarray]) -> None:
        adam_step(self, params, grads)


def adam_step(opt: Adam, params: Sequence[Parameter], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise ContractError("one gradient per parameter is required")
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**opt.t
    c2 = 1.0 - b2**opt.t
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"{p.name}: gradient shape {g.shape} != {p.shape}")
        if opt.weight_decay:
            g = g + opt.weight_decay * p.value
        m = opt.m.get(p.name)
        v = opt.v.get(p.name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        opt.m[p.name] = m
        opt.v[p.name] = v
        p.value = p.value - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def cross_entropy(logits: Node, labels, mask) -> Node:
    """Mean negative log-likelihood over the masked rows."""
    labels = np.asarray(labels)
    rows = np.flatnonzero(np.asarray(mask, dtype=bool))
    if rows.size == 0:
        raise ContractError("cross-entropy mask selects no rows")
    picked = ad.take(ad.log_softmax_rows(logits), rows, labels[rows])
    return ad.neg(ad.mean(picked))


def accuracy(logits: np.ndarray, labels, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    return float(np.mean(np.argmax(logits[mask], axis=1) == np.asarray(labels)[mask]))


@dataclass
class TrainData:
    """Arrays a training run needs, prepared once per dataset."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    input_adj: np.ndarray | None = None

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "TrainData":
        return cls(dataset.features, dataset.labels, dataset.num_classes, dataset.normalized_adjacency())


@dataclass
class EpochRecord:
    fold: int
    epoch: int
    loss_task: float
    loss_graph: float
    acc_train: float
    acc_test: float = float("nan")
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fro: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class FoldPlan:
    fold: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    base_seed: int

    def masks(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        train = np.zeros(n, dtype=bool)
        test = np.zeros(n, dtype=bool)
        train[self.train_idx] = True
        test[self.test_idx] = True
        return train, test


def make_folds(n: int, num_folds: int = 10, seed: int = 0) -> list[FoldPlan]:
    """Random partition into ``num_folds`` disjoint test sets; the rest trains."""
    if num_folds < 2 or num_folds > n:
        raise ContractError(f"cannot split {n} nodes into {num_folds} folds")
    perm = np.random.default_rng([seed, 7919]).permutation(n)
    chunks = np.array_split(perm, num_folds)
    plans = []
    for f, test in enumerate(chunks):
        train = np.sort(np.concatenate([c for g, c in enumerate(chunks) if g != f]))
        plans.append(FoldPlan(f, train, np.sort(test), seed))
    return plans


def sampling_rngs(model: ModelAssembly, seed: int, fold: int, epoch: int) -> list[np.random.Generator]:
    """One independent Gumbel stream per space, keyed by (seed, fold, epoch, space)."""
    return [np.random.default_rng([seed, fold, epoch, _SPACE_CODES[s.label]]) for s in model.spaces]


@dataclass
class StepOutput:
    record: EpochRecord
    tape: Tape
    loss_task: Node
    loss_graph: Node | None
    logits: np.ndarray


def train_step(
    model: ModelAssembly,
    data: TrainData,
    train_mask,
    optimizer: Adam,
    rewards: NodeRewardState,
    rngs: Sequence[np.random.Generator] | None = None,
    fold: int = 0,
    epoch: int = 0,
    forced_targets: np.ndarray | None = None,
    share_gradient: bool = True,
) -> StepOutput:
    """Forward, both losses, one backward, shared diffusion gradient, Adam update."""
    tape = Tape()
    result = model.forward(tape, data.features, data.input_adj, "train", rngs, forced_targets)
    loss_task = cross_entropy(result.logits, data.labels, train_mask)
    predictions = np.argmax(result.logits.value, axis=1)
    train_acc = accuracy(result.logits.value, data.labels, train_mask)

    loss_graph = None
    if result.graphs:
        delta = update_rewards(rewards, predictions, data.labels, train_mask)
        for latent in result.graphs:
            term = graph_loss(latent, delta)
            loss_graph = term if loss_graph is None else ad.add(loss_graph, term)
        total = ad.add(loss_task, loss_graph)
    else:
        total = loss_task
    if not np.isfinite(total.value).all():
        raise DivergenceError("training loss is not finite", op="loss")
    tape.backward(total)

    fro = np.zeros(0)
    if result.features:
        # the graph losses see the latent graphs only as constants, so the
        # joint backward leaves dL_T/dX_Mi untouched; attribution_norms checks it
        fro = attribution_norms(tape, loss_task, result.feature_ids, loss_graph)
    alpha = result.alpha if result.alpha is not None else np.zeros(0)
    if model.variant == "ames" and share_gradient:
        model.replicas.share_gradient(tape, alpha)

    params = model.parameters()
    optimizer.step(params, [tape.param_grad(p) for p in params])
    record = EpochRecord(
        fold=fold,
        epoch=epoch,
        loss_task=float(loss_task.value[0, 0]),
        loss_graph=float(loss_graph.value[0, 0]) if loss_graph is not None else 0.0,
        acc_train=train_acc,
        alpha=np.asarray(alpha, dtype=np.float64),
        fro=fro,
    )
    return StepOutput(record, tape, loss_task, loss_graph, result.logits.value)


def predict(model: ModelAssembly, data: TrainData) -> np.ndarray:
    """Eval-mode logits: deterministic top-k graphs and running batch-norm statistics."""
    tape = Tape()
    return model.forward(tape, data.features, data.input_adj, "eval").logits.value


@dataclass
class FoldResult:
    fold: int
    records: list[EpochRecord]
    final_acc: float
    best_acc: float
    best_epoch: int


def _model_for(config, data: TrainData, fold: int) -> ModelAssembly:
    return build_model(
        config.kind,
        data.features.shape[1],
        data.num_classes,
        config.space_list() if config.variant in ("ames", "ddgm") else [],
        config.k,
        variant=config.variant,
        seed=config.seed + fold,
        temperature_init=config.temperature,
    )


def train_fold(config, data: TrainData, plan: FoldPlan, epochs: int | None = None) -> FoldResult:
    n = data.features.shape[0]
    train_mask, test_mask = plan.masks(n)
    model = _model_for(config, data, plan.fold)
    optimizer = Adam(config.lr, config.weight_decay)
    rewards = NodeRewardState.fresh(n)
    records = []
    for epoch in range(1, (epochs or config.epochs) + 1):
        rngs = sampling_rngs(model, config.seed, plan.fold, epoch)
        out = train_step(model, data, train_mask, optimizer, rewards, rngs, plan.fold, epoch)
        out.record.acc_test = accuracy(predict(model, data), data.labels, test_mask)
        records.append(out.record)
    accs = np.array([r.acc_test for r in records])
    best = int(np.argmax(accs))
    return FoldResult(plan.fold, records, float(accs[-1]), float(accs[best]), records[best].epoch)


@dataclass
class CVSummary:
    folds: list[FoldResult]
    space_labels: list[str]

    @property
    def final_accuracies(self) -> np.ndarray:
        return np.array([f.final_acc for f in self.folds])

    @property
    def mean(self) -> float:
        return float(np.mean(self.final_accuracies))

    @property
    def std(self) -> float:
        accs = self.final_accuracies
        return float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0

    def formatted(self) -> str:
        return format_accuracy(self.final_accuracies)

    def attribution_curve(self) -> np.ndarray:
        return aggregate_trace([np.stack([r.fro for r in f.records]) for f in self.folds])


def format_accuracy(accuracies) -> str:
    """Percent ``mean ± sample stdev`` with two decimals."""
    pct = 100.0 * np.asarray(accuracies, dtype=np.float64)
    sd = float(np.std(pct, ddof=1)) if len(pct) > 1 else 0.0
    return f"{float(np.mean(pct)):.2f} ± {sd:.2f}"


def _fold_job(args):
    config, data, plan, epochs = args
    return train_fold(config, data, plan, epochs)


def run_cross_validation(
    config,
    dataset: Dataset,
    fold_ids: Sequence[int] | None = None,
    epochs: int | None = None,
    parallel_folds: int = 1,
) -> CVSummary:
    """Train one model per fold and collect per-epoch traces.

    Fold partitions depend only on ``config.seed`` so every variant sees the
    same splits; fold ``f`` initialises its model from ``seed + f``.
    """
    if config.kind is None:
        config = config.replace(kind=dataset.kind)
    data = TrainData.from_dataset(dataset)
    plans = make_folds(dataset.num_nodes, config.folds, config.seed)
    if fold_ids is not None:
        plans = [plans[i] for i in fold_ids]
    jobs = [(config, data, plan, epochs) for plan in plans]
    if parallel_folds > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel_folds) as pool:
            folds = list(pool.map(_fold_job, jobs))
    else:
        folds = []
        for job in jobs:
            folds.append(_fold_job(job))
            logger.info("fold %d: final acc %.4f", folds[-1].fold, folds[-1].final_acc)
    return CVSummary(folds, config.space_labels())
