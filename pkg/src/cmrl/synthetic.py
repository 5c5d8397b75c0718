"""Synthetic motif benchmark: biased graph pairs with a controllable shortcut.

Each graph is a shortcut base (balanced binary tree or preferential-attachment
graph) with one causal motif (house, cycle, grid, or diamond) attached by a
single random bridge edge.  Pairs sharing the causal motif are positive;
pairs always share the base type.  The bias level b sets the fraction of
positive pairs built on the preferential-attachment base (negatives get
fraction 1 - b), so b = 0.5 is unbiased and smaller b is more biased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import Graph, PairDataset, PairSample

CAUSAL_MOTIFS = ("house", "cycle", "grid", "diamond")
SHORTCUT_BASES = ("tree", "ba")

# scaffold_id doubles as the shortcut-type marker in serialized datasets
SHORTCUT_CLASS = {"tree": 0, "ba": 1}

DEGREE_CAP = 10  # one-hot degree features, width DEGREE_CAP + 1

_TREE_DEPTH = 3
_BA_NODES = 15
_BA_ATTACH = 2


@dataclass(frozen=True)
class MotifSpec:
    causal: str
    shortcut: str

    def __post_init__(self):
        if self.causal not in CAUSAL_MOTIFS:
            raise ValueError(f"unknown causal motif {self.causal!r}")
        if self.shortcut not in SHORTCUT_BASES:
            raise ValueError(f"unknown shortcut base {self.shortcut!r}")


@dataclass
class BiasedPairConfig:
    bias: float
    n_graphs_per_combo: int = 2000
    n_pos_pairs_per_shortcut: int = 10000
    n_neg_pairs_per_shortcut: int = 10000

    def __post_init__(self):
        if not 0.0 < self.bias < 1.0:
            raise ValueError(f"bias must lie in (0, 1), got {self.bias}")


def motif_edges(name: str) -> tuple[int, np.ndarray]:
    """(node count, edge list) of a causal motif."""
    if name == "house":
        # 4-cycle with a roof apex over one side: 5 nodes, 6 edges
        return 5, np.array([[0, 1], [1, 2], [2, 3], [3, 0], [0, 4], [1, 4]])
    if name == "cycle":
        return 6, np.array([[i, (i + 1) % 6] for i in range(6)])
    if name == "grid":
        edges = []
        for r in range(3):
            for c in range(3):
                i = 3 * r + c
                if c < 2:
                    edges.append([i, i + 1])
                if r < 2:
                    edges.append([i, i + 3])
        return 9, np.array(edges)
    if name == "diamond":
        # two triangles joined by one edge: 6 nodes, 7 edges
        return 6, np.array([[0, 1], [0, 2], [1, 2], [3, 4], [3, 5], [4, 5], [2, 3]])
    raise ValueError(f"unknown causal motif {name!r}")


def _tree_base() -> tuple[int, np.ndarray]:
    n = 2 ** (_TREE_DEPTH + 1) - 1
    edges = []
    for i in range((n - 1) // 2):
        edges.append([i, 2 * i + 1])
        edges.append([i, 2 * i + 2])
    return n, np.array(edges)


def _ba_base(rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Preferential attachment: each new node links to m distinct earlier nodes."""
    m = _BA_ATTACH
    repeated: list[int] = []
    edges = []
    targets = list(range(m))
    for new in range(m, _BA_NODES):
        for t in targets:
            edges.append([t, new])
            repeated.extend((t, new))
        targets = []
        while len(targets) < m:
            pick = int(repeated[rng.integers(len(repeated))])
            if pick not in targets:
                targets.append(pick)
    return _BA_NODES, np.array(edges)


def make_graph(spec: MotifSpec, rng: np.random.Generator, graph_id: str = "") -> Graph:
    """Base graph plus motif, bridged by one random edge; degree one-hots."""
    if spec.shortcut == "tree":
        base_n, base_edges = _tree_base()
    else:
        base_n, base_edges = _ba_base(rng)
    motif_n, m_edges = motif_edges(spec.causal)
    edges = np.concatenate([base_edges, m_edges + base_n], axis=0)
    bridge_motif = base_n + int(rng.integers(motif_n))
    bridge_base = int(rng.integers(base_n))
    edges = np.concatenate([edges, [[bridge_base, bridge_motif]]], axis=0)
    n = base_n + motif_n
    deg = np.zeros(n, dtype=np.int64)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    x = np.zeros((n, DEGREE_CAP + 1))
    x[np.arange(n), np.minimum(deg, DEGREE_CAP)] = 1.0
    return Graph(
        num_nodes=n,
        x=x,
        edges=edges,
        scaffold_id=SHORTCUT_CLASS[spec.shortcut],
        graph_id=graph_id or f"{spec.causal}-{spec.shortcut}",
    )


def make_dataset(cfg: BiasedPairConfig, rng: np.random.Generator) -> PairDataset:
    """Full biased pair dataset: balanced graph combos, bias-resolved pairs.

    Total positives are 2 * n_pos_pairs_per_shortcut with round(b * total)
    built on the 'ba' base; negatives mirror with fraction 1 - b on 'ba'.
    Pairs are drawn without replacement while distinct unordered pairs remain,
    then with replacement.
    """
    if cfg.n_graphs_per_combo < 2:
        raise ValueError("need at least 2 graphs per combination to form pairs")
    graphs: dict[str, Graph] = {}
    pools: dict[tuple[str, str], list[str]] = {}
    for causal in CAUSAL_MOTIFS:
        for base in SHORTCUT_BASES:
            ids = []
            for k in range(cfg.n_graphs_per_combo):
                gid = f"{causal}-{base}-{k:05d}"
                graphs[gid] = make_graph(MotifSpec(causal, base), rng, graph_id=gid)
                ids.append(gid)
            pools[(causal, base)] = ids

    n_pos = 2 * cfg.n_pos_pairs_per_shortcut
    n_neg = 2 * cfg.n_neg_pairs_per_shortcut
    n_pos_ba = int(round(cfg.bias * n_pos))
    n_neg_ba = int(round((1.0 - cfg.bias) * n_neg))
    quotas = [
        ("ba", True, n_pos_ba),
        ("tree", True, n_pos - n_pos_ba),
        ("ba", False, n_neg_ba),
        ("tree", False, n_neg - n_neg_ba),
    ]

    pairs: list[PairSample] = []
    used: set[tuple[str, str]] = set()
    serial = 0
    for base, positive, count in quotas:
        for _ in range(count):
            for attempt in range(64):
                if positive:
                    causal = CAUSAL_MOTIFS[int(rng.integers(len(CAUSAL_MOTIFS)))]
                    pool = pools[(causal, base)]
                    a, b_idx = rng.choice(len(pool), size=2, replace=False)
                    gid1, gid2 = pool[int(a)], pool[int(b_idx)]
                else:
                    c1, c2 = rng.choice(len(CAUSAL_MOTIFS), size=2, replace=False)
                    pool1 = pools[(CAUSAL_MOTIFS[int(c1)], base)]
                    pool2 = pools[(CAUSAL_MOTIFS[int(c2)], base)]
                    gid1 = pool1[int(rng.integers(len(pool1)))]
                    gid2 = pool2[int(rng.integers(len(pool2)))]
                key = (gid1, gid2) if gid1 < gid2 else (gid2, gid1)
                if key not in used:
                    used.add(key)
                    break
                # pool nearly exhausted: fall back to sampling with replacement
                if attempt == 63:
                    break
            pairs.append(
                PairSample(
                    g1=graphs[gid1],
                    g2=graphs[gid2],
                    y=1.0 if positive else 0.0,
                    pair_id=f"p{serial:06d}",
                )
            )
            serial += 1

    order = rng.permutation(len(pairs))
    pairs = [pairs[int(i)] for i in order]
    return PairDataset(
        feature_width=DEGREE_CAP + 1,
        edge_feature_width=0,
        task="classification",
        graphs=graphs,
        pairs=pairs,
    )


def bias_of(dataset: PairDataset) -> float:
    """Fraction of positive pairs whose graphs carry the 'ba' shortcut base."""
    ba = SHORTCUT_CLASS["ba"]
    n_pos = 0
    n_pos_ba = 0
    for p in dataset.pairs:
        if p.y == 1.0:
            n_pos += 1
            if p.g1.scaffold_id == ba and p.g2.scaffold_id == ba:
                n_pos_ba += 1
    if n_pos == 0:
        raise ValueError("bias_of: dataset has no positive pairs")
    return n_pos_ba / n_pos
