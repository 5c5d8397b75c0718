"""Graph-pair data model, JSON serialization, and train/valid/test splits.

A dataset is a set of graphs plus a list of (g1, g2, target) pairs.  The
on-disk format is a single UTF-8 JSON document::

    {"feature_width": F, "edge_feature_width": Fe, "task": "regression"|"classification",
     "graphs": {id: {"n": N, "x": [[...]], "edges": [[i, j], ...],
                     "edge_x": [[...]] | null, "scaffold": int | null}},
     "pairs": [{"g1": id, "g2": id, "y": number, "id": str}, ...]}

Floats are serialized with shortest round-trip precision, so save -> load is
the identity bitwise.  Unknown top-level keys are ignored on load, which lets
ingestion tools attach descriptive headers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional

import numpy as np


class DatasetError(ValueError):
    """A dataset file or record violates the pair-dataset contract."""


TASKS = ("regression", "classification")


@dataclass(eq=False)
class Graph:
    """One undirected graph: node features, edge list, optional edge features.

    Each undirected edge is stored once; adjacency expansion symmetrizes.
    """

    num_nodes: int
    x: np.ndarray
    edges: np.ndarray
    edge_x: Optional[np.ndarray] = None
    scaffold_id: Optional[int] = None
    graph_id: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.num_nodes <= 0:
            raise DatasetError(f"graph {self.graph_id!r}: num_nodes must be positive")
        if self.x.ndim != 2 or self.x.shape[0] != self.num_nodes:
            raise DatasetError(
                f"graph {self.graph_id!r}: feature matrix shape {self.x.shape} "
                f"does not match {self.num_nodes} nodes"
            )
        if not np.all(np.isfinite(self.x)):
            raise DatasetError(f"graph {self.graph_id!r}: non-finite node features")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise DatasetError(
                    f"graph {self.graph_id!r}: edge ({i}, {j}) endpoint out of range"
                )
            if i == j:
                raise DatasetError(f"graph {self.graph_id!r}: self-loop at node {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise DatasetError(f"graph {self.graph_id!r}: duplicate edge ({i}, {j})")
            seen.add(key)
        if self.edge_x is not None:
            self.edge_x = np.asarray(self.edge_x, dtype=np.float64)
            if self.edge_x.size == 0:
                self.edge_x = self.edge_x.reshape(0, 0)
            if self.edge_x.ndim != 2 or self.edge_x.shape[0] != len(self.edges):
                raise DatasetError(
                    f"graph {self.graph_id!r}: edge feature shape {self.edge_x.shape} "
                    f"does not match {len(self.edges)} edges"
                )

    @property
    def feature_width(self) -> int:
        return self.x.shape[1]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def neighbor_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(idx, degree): idx is (N, max_deg) neighbor ids padded with N.

        The pad value addresses an all-zero row appended by the encoder, so
        padded slots contribute exact zeros to neighborhood sums.
        """
        lists: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, j in self.edges:
            lists[i].append(int(j))
            lists[j].append(int(i))
        max_deg = max((len(l) for l in lists), default=0)
        idx = np.full((self.num_nodes, max_deg), self.num_nodes, dtype=np.int64)
        deg = np.zeros((self.num_nodes, 1), dtype=np.float64)
        for i, l in enumerate(lists):
            idx[i, : len(l)] = l
            deg[i, 0] = len(l)
        return idx, deg

    @cached_property
    def directed_edge_index(self) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
        """(src, dst_slot, edge_x2) for per-edge message passing.

        Every undirected edge appears in both directions: ``src`` lists the
        source node of each directed edge, ``dst_slot`` is (N, max_in) rows of
        directed-edge indices incident to each destination node (padded with
        2E), and ``edge_x2`` duplicates edge features per direction.
        """
        n_dir = 2 * len(self.edges)
        src = np.empty(n_dir, dtype=np.int64)
        incoming: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for e, (i, j) in enumerate(self.edges):
            src[2 * e] = i
            incoming[int(j)].append(2 * e)
            src[2 * e + 1] = j
            incoming[int(i)].append(2 * e + 1)
        max_in = max((len(l) for l in incoming), default=0)
        dst_slot = np.full((self.num_nodes, max_in), n_dir, dtype=np.int64)
        for i, l in enumerate(incoming):
            dst_slot[i, : len(l)] = l
        edge_x2 = None
        if self.edge_x is not None:
            edge_x2 = np.repeat(self.edge_x, 2, axis=0)
        return src, dst_slot, edge_x2


def permute_nodes(graph: Graph, perm: np.ndarray) -> Graph:
    """Relabel nodes so old node i becomes ``perm[i]``; features follow."""
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.argsort(perm)
    edges = np.stack([perm[graph.edges[:, 0]], perm[graph.edges[:, 1]]], axis=1) if len(graph.edges) else graph.edges
    return Graph(
        num_nodes=graph.num_nodes,
        x=graph.x[inv],
        edges=edges,
        edge_x=None if graph.edge_x is None else graph.edge_x.copy(),
        scaffold_id=graph.scaffold_id,
        graph_id=graph.graph_id + "#perm",
    )


@dataclass(eq=False)
class PairSample:
    """The unit of supervision: two graphs and a target."""

    g1: Graph
    g2: Graph
    y: float
    pair_id: str


@dataclass(eq=False)
class PairDataset:
    feature_width: int
    edge_feature_width: int
    task: str
    graphs: dict[str, Graph]
    pairs: list[PairSample] = field(default_factory=list)

    def __post_init__(self):
        if self.task not in TASKS:
            raise DatasetError(f"unknown task {self.task!r}")
        for gid, g in self.graphs.items():
            if g.feature_width != self.feature_width:
                raise DatasetError(
                    f"graph {gid!r}: feature width {g.feature_width} != dataset width {self.feature_width}"
                )
            has_ex = g.edge_x is not None and g.edge_x.shape[1] > 0
            if self.edge_feature_width > 0:
                if g.num_edges > 0 and (not has_ex or g.edge_x.shape[1] != self.edge_feature_width):
                    raise DatasetError(f"graph {gid!r}: edge feature width mismatch")
            elif has_ex:
                raise DatasetError(f"graph {gid!r}: unexpected edge features")
        for k, p in enumerate(self.pairs):
            if self.task == "classification" and p.y not in (0.0, 1.0):
                raise DatasetError(f"pair {k}: classification target {p.y!r} not in {{0, 1}}")
            if not np.isfinite(p.y):
                raise DatasetError(f"pair {k}: non-finite target")

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i: int) -> PairSample:
        return self.pairs[i]

    def __iter__(self) -> Iterator[PairSample]:
        return iter(self.pairs)


def load_dataset(path) -> PairDataset:
    """Parse and fully validate a pair-dataset JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("feature_width", "edge_feature_width", "task", "graphs", "pairs"):
        if key not in doc:
            raise DatasetError(f"{path}: missing top-level key {key!r}")
    graphs: dict[str, Graph] = {}
    for gid, rec in doc["graphs"].items():
        try:
            graphs[gid] = Graph(
                num_nodes=int(rec["n"]),
                x=rec["x"],
                edges=np.asarray(rec["edges"], dtype=np.int64).reshape(-1, 2),
                edge_x=None if rec.get("edge_x") is None else rec["edge_x"],
                scaffold_id=None if rec.get("scaffold") is None else int(rec["scaffold"]),
                graph_id=gid,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: malformed graph record {gid!r}: {exc}") from exc
    pairs = []
    for k, rec in enumerate(doc["pairs"]):
        try:
            g1, g2 = graphs[rec["g1"]], graphs[rec["g2"]]
            pairs.append(PairSample(g1=g1, g2=g2, y=float(rec["y"]), pair_id=str(rec["id"])))
        except KeyError as exc:
            raise DatasetError(f"{path}: malformed pair record {k}: {exc}") from exc
    return PairDataset(
        feature_width=int(doc["feature_width"]),
        edge_feature_width=int(doc["edge_feature_width"]),
        task=str(doc["task"]),
        graphs=graphs,
        pairs=pairs,
    )


def save_dataset(dataset: PairDataset, path) -> None:
    """Write the dataset; load_dataset(save_dataset(ds)) is the identity."""
    doc = {
        "feature_width": dataset.feature_width,
        "edge_feature_width": dataset.edge_feature_width,
        "task": dataset.task,
        "graphs": {
            gid: {
                "n": g.num_nodes,
                "x": g.x.tolist(),
                "edges": g.edges.tolist(),
                "edge_x": None if g.edge_x is None else g.edge_x.tolist(),
                "scaffold": g.scaffold_id,
            }
            for gid, g in dataset.graphs.items()
        },
        "pairs": [
            {"g1": p.g1.graph_id, "g2": p.g2.graph_id, "y": p.y, "id": p.pair_id}
            for p in dataset.pairs
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitPlan:
    """Disjoint index lists into a dataset's pair list."""

    train: list[int]
    valid: list[int]
    test: list[int]
    mode: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sets = [set(self.train), set(self.valid), set(self.test)]
        total = len(self.train) + len(self.valid) + len(self.test)
        if len(sets[0] | sets[1] | sets[2]) != total:
            raise DatasetError("split plan: index lists are not pairwise disjoint")

    @property
    def heldout(self) -> list[int]:
        """The full held-out fold (validation slice plus test remainder)."""
        return list(self.valid) + list(self.test)


def kfold_splits(
    n: int, k: int, repeats: int, seed: int, valid_fraction: float = 0.5
) -> list[SplitPlan]:
    """Repeated random k-fold partitions; one plan per (repeat, fold).

    Each plan holds out one fold; a ``valid_fraction`` slice of the held-out
    fold becomes the validation set and the remainder is the test set.
    """
    if k < 2:
        raise DatasetError(f"kfold: k must be >= 2, got {k}")
    if n < k:
        raise DatasetError(f"kfold: need at least k={k} samples, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    plans = []
    for rep in range(repeats):
        perm = rng.permutation(n)
        folds = np.array_split(perm, k)
        for fold_idx in range(k):
            fold = folds[fold_idx]
            n_valid = int(round(len(fold) * valid_fraction))
            valid = fold[:n_valid]
            test = fold[n_valid:]
            train = np.concatenate([folds[j] for j in range(k) if j != fold_idx])
            plans.append(
                SplitPlan(
                    train=[int(i) for i in train],
                    valid=[int(i) for i in valid],
                    test=[int(i) for i in test],
                    mode="random_kfold",
                    meta={"k": k, "fold": fold_idx, "repeat": rep, "valid_fraction": valid_fraction},
                )
            )
    return plans


def scaffold_ood_split(
    dataset: PairDataset, c: int, valid_fraction: float = 0.5, seed: int = 0
) -> SplitPlan:
    """Split pairs by scaffold class into in-distribution train and OOD test.

    Scaffold classes are ordered by descending graph count (ties by class id);
    the first ``c`` classes form the in-distribution graph set.  Train pairs
    have both graphs in-distribution; every pair touching an OOD graph goes to
    the held-out side, from which a random ``valid_fraction`` becomes the
    validation set.
    """
    for gid, g in dataset.graphs.items():
        if g.scaffold_id is None:
            raise DatasetError(f"scaffold split: graph {gid!r} has no scaffold_id")
    counts: dict[int, int] = {}
    for g in dataset.graphs.values():
        counts[g.scaffold_id] = counts.get(g.scaffold_id, 0) + 1
    classes = sorted(counts, key=lambda s: (-counts[s], s))
    if c < 1 or c >= len(classes):
        raise DatasetError(
            f"scaffold split: c={c} must satisfy 1 <= c < {len(classes)} (distinct scaffolds)"
        )
    in_dist = set(classes[:c])
    train, heldout = [], []
    for idx, p in enumerate(dataset.pairs):
        if p.g1.scaffold_id in in_dist and p.g2.scaffold_id in in_dist:
            train.append(idx)
        else:
            heldout.append(idx)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    perm = rng.permutation(len(heldout))
    n_valid = int(round(len(heldout) * valid_fraction))
    valid = [heldout[i] for i in perm[:n_valid]]
    test = [heldout[i] for i in perm[n_valid:]]
    return SplitPlan(
        train=train,
        valid=sorted(valid),
        test=sorted(test),
        mode="scaffold_ood",
        meta={"c": c, "valid_fraction": valid_fraction, "num_scaffolds": len(classes)},
    )
