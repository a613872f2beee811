"""Datasets: loaders for citation and CSV formats, synthetic generators, exporter."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .layers import edges_to_adjacency, normalize_adjacency

logger = logging.getLogger(__name__)

KINDS = ("homophilic", "heterophilic", "pointcloud")


def _canonical_edges(pairs, n: int) -> np.ndarray:
    """Undirected, deduplicated, self-loop-free edge list with ``src < dst``, sorted."""
    pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if pairs.min() < 0 or pairs.max() >= n:
        raise ContractError("edge endpoint out of range")
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


@dataclass
class Dataset:
    name: str
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    edges: np.ndarray | None = None
    kind: str = "pointcloud"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ContractError("features must be N x F with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError("labels must lie in [0, num_classes)")
        if self.kind not in KINDS:
            raise ContractError(f"unknown dataset kind {self.kind!r}")
        if self.edges is not None:
            self.edges = _canonical_edges(self.edges, self.num_nodes)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def adjacency(self) -> np.ndarray | None:
        if self.edges is None:
            return None
        return edges_to_adjacency(self.edges, self.num_nodes)

    def normalized_adjacency(self) -> np.ndarray | None:
        a = self.adjacency()
        return None if a is None else normalize_adjacency(a)

    def permuted(self, perm) -> "Dataset":
        """Reorder nodes: new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        edges = None if self.edges is None else inverse[self.edges]
        return Dataset(self.name, self.features[perm], self.labels[perm], self.num_classes, edges, self.kind, dict(self.meta))


def row_normalize(features: np.ndarray) -> np.ndarray:
    sums = np.abs(features).sum(axis=1, keepdims=True)
    return np.divide(features, sums, out=features.copy(), where=sums > 0)


def standardize(features: np.ndarray) -> np.ndarray:
    mu = features.mean(axis=0, keepdims=True)
    sd = features.std(axis=0, keepdims=True)
    return np.divide(features - mu, sd, out=np.zeros_like(features), where=sd > 0)


# ---------------------------------------------------------------------------
# loaders


def _fields(line: str) -> list[str]:
    return line.split("\t") if "\t" in line else line.split()


def load_citation(content_path, cites_path, normalize: bool = True, name: str | None = None) -> Dataset:
    """Read the ``.content``/``.cites`` pair of a Planetoid-style citation graph."""
    content_path, cites_path = Path(content_path), Path(cites_path)
    ids: list[str] = []
    rows: list[list[float]] = []
    raw_labels: list[str] = []
    width = None
    with content_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = [p.strip() for p in _fields(line)]
            if len(parts) < 3:
                raise ParseError(f"{content_path}:{lineno}: expected id, features, label")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(f"{content_path}:{lineno}: expected {width} fields, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts[1:-1]])
            except ValueError as exc:
                raise ParseError(f"{content_path}:{lineno}: {exc}") from None
            ids.append(parts[0])
            raw_labels.append(parts[-1])
    if not ids:
        raise ParseError(f"{content_path}: no nodes")
    index = {}
    for i, node_id in enumerate(ids):
        if node_id in index:
            raise ParseError(f"{content_path}: duplicate node id {node_id!r}")
        index[node_id] = i
    classes = sorted(set(raw_labels))
    class_of = {c: i for i, c in enumerate(classes)}
    labels = np.array([class_of[c] for c in raw_labels])

    pairs = []
    dangling = 0
    with cites_path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = [p.strip() for p in _fields(line.rstrip("\r\n"))]
            if len(parts) != 2:
                raise ParseError(f"{cites_path}:{lineno}: expected 'cited<TAB>citing'")
            a, b = (index.get(p) for p in parts)
            if a is None or b is None:
                dangling += 1
                continue
            pairs.append((a, b))
    if dangling:
        logger.warning("%s: dropped %d citations with unknown endpoints", cites_path, dangling)
    features = np.array(rows)
    if normalize:
        features = row_normalize(features)
    return Dataset(
        name or content_path.stem,
        features,
        labels,
        len(classes),
        _canonical_edges(pairs, len(ids)),
        "homophilic",
        {"dangling_citations": dangling, "class_names": classes, "node_ids": ids, "row_normalized": normalize},
    )


def load_tabular(
    nodes_csv,
    edges_csv=None,
    kind: str | None = None,
    standardize_features: bool = False,
    name: str | None = None,
) -> Dataset:
    """Read ``id,label,f1..fF`` (and optionally ``src,dst``) CSV files."""
    nodes_csv = Path(nodes_csv)
    ids, labels, rows = [], [], []
    with nodes_csv.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "label"]:
            raise ParseError(f"{nodes_csv}:1: header must start with 'id,label'")
        width = len(header)
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != width:
                raise ParseError(f"{nodes_csv}:{lineno}: expected {width} fields, got {len(rec)}")
            try:
                labels.append(int(rec[1]))
            except ValueError:
                raise ParseError(f"{nodes_csv}:{lineno}: label {rec[1]!r} is not an integer") from None
            try:
                rows.append([float(v) for v in rec[2:]])
            except ValueError as exc:
                raise ParseError(f"{nodes_csv}:{lineno}: {exc}") from None
            ids.append(rec[0].strip())
    if not ids:
        raise ParseError(f"{nodes_csv}: no nodes")
    index = {node_id: i for i, node_id in enumerate(ids)}
    if len(index) != len(ids):
        raise ParseError(f"{nodes_csv}: duplicate node ids")
    labels = np.array(labels)
    if labels.min() < 0:
        raise ParseError(f"{nodes_csv}: labels must be non-negative")

    edges = None
    if edges_csv is not None:
        edges_csv = Path(edges_csv)
        pairs = []
        with edges_csv.open(encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["src", "dst"]:
                raise ParseError(f"{edges_csv}:1: header must be 'src,dst'")
            for lineno, rec in enumerate(reader, 2):
                if not rec:
                    continue
                if len(rec) != 2 or rec[0].strip() not in index or rec[1].strip() not in index:
                    raise ParseError(f"{edges_csv}:{lineno}: unknown or malformed endpoint")
                pairs.append((index[rec[0].strip()], index[rec[1].strip()]))
        edges = _canonical_edges(pairs, len(ids))

    if kind is None:
        kind = "pointcloud" if edges is None else "heterophilic"
    features = np.array(rows).reshape(len(ids), -1)
    if standardize_features:
        features = standardize(features)
    return Dataset(
        name or nodes_csv.stem,
        features,
        labels,
        int(labels.max()) + 1,
        edges,
        kind,
        {"node_ids": ids, "standardized": standardize_features},
    )


def write_tabular(dataset: Dataset, nodes_csv, edges_csv=None) -> None:
    """Export in the format read by :func:`load_tabular`; floats round-trip exactly."""
    ids = dataset.meta.get("node_ids") or [str(i) for i in range(dataset.num_nodes)]
    with Path(nodes_csv).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"] + [f"f{j + 1}" for j in range(dataset.num_features)])
        for node_id, label, row in zip(ids, dataset.labels, dataset.features):
            writer.writerow([node_id, int(label)] + [repr(float(v)) for v in row])
    if edges_csv is not None:
        with Path(edges_csv).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["src", "dst"])
            for a, b in dataset.edges if dataset.edges is not None else []:
                writer.writerow([ids[a], ids[b]])


# ---------------------------------------------------------------------------
# synthetic generators


def synth_tree(
    levels: int,
    branching: int,
    feature_dim: int = 16,
    noise_sigma: float = 0.1,
    seed: int = 0,
    step_scale: float = 1.0,
) -> Dataset:
    """Balanced tree as a point cloud; the label of a node is its depth.

    Every node owns a prototype ``p_child = p_parent + step`` with a
    Gaussian step. A node's features are its parent's prototype plus
    ``noise_sigma`` Gaussian noise, so siblings form tight clusters around
    the parent and distances grow with tree distance.
    """
    if levels < 2:
        raise ContractError("levels must be >= 2")
    if branching < 1:
        raise ContractError("branching must be >= 1")
    rng = np.random.default_rng(seed)
    n = sum(branching**lvl for lvl in range(levels))
    parent = np.full(n, -1)
    depth = np.zeros(n, dtype=np.int64)
    for v in range(1, n):
        parent[v] = (v - 1) // branching
        depth[v] = depth[parent[v]] + 1
    prototypes = np.zeros((n, feature_dim))
    prototypes[0] = rng.normal(size=feature_dim)
    steps = rng.normal(scale=step_scale, size=(n, feature_dim))
    for v in range(1, n):
        prototypes[v] = prototypes[parent[v]] + steps[v]
    anchor = np.where(parent >= 0, parent, 0)
    noise = rng.normal(scale=noise_sigma, size=(n, feature_dim)) if noise_sigma > 0 else 0.0
    features = prototypes[anchor] + noise
    return Dataset(
        f"tree-{levels}x{branching}",
        features,
        depth,
        levels,
        None,
        "pointcloud",
        {"parent": parent.tolist()},
    )


def synth_sphere_communities(
    num_classes: int,
    per_class: int,
    feature_dim: int = 3,
    kappa: float = 50.0,
    seed: int = 0,
) -> Dataset:
    """Unit-norm features clustered around random class centroids on the sphere.

    Jitter is tangential Gaussian with scale ``1/sqrt(kappa)`` (zero for
    ``kappa = inf``), followed by renormalisation.
    """
    if feature_dim < 3:
        raise ContractError("feature_dim must be >= 3")
    if kappa <= 0:
        raise ContractError("kappa must be positive")
    rng = np.random.default_rng(seed)
    centroids = rng.normal(size=(num_classes, feature_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), per_class)
    base = centroids[labels]
    if np.isinf(kappa):
        features = base.copy()
    else:
        jitter = rng.normal(scale=1.0 / np.sqrt(kappa), size=base.shape)
        jitter -= (jitter * base).sum(axis=1, keepdims=True) * base
        features = base + jitter
    features /= np.linalg.norm(features, axis=1, keepdims=True)
    return Dataset(f"sphere-{num_classes}x{per_class}", features, labels, num_classes, None, "pointcloud")
