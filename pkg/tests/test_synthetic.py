"""Synthetic motif benchmark: graph construction, pair sampling, bias control."""

import numpy as np
import pytest

from cmrl.graphs import Graph, PairDataset, PairSample
from cmrl.synthetic import (
    BiasedPairConfig,
    CAUSAL_MOTIFS,
    MotifSpec,
    SHORTCUT_CLASS,
    bias_of,
    make_dataset,
    make_graph,
    motif_edges,
)


def _degrees(n, edges):
    deg = np.zeros(n, dtype=int)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    return deg


class TestMotifs:
    def test_house_shape(self):
        n, edges = motif_edges("house")
        assert n == 5 and len(edges) == 6

    def test_cycle_is_a_ring(self):
        n, edges = motif_edges("cycle")
        assert n == 6 and len(edges) == 6
        assert np.all(_degrees(n, edges) == 2)

    def test_grid_lattice(self):
        n, edges = motif_edges("grid")
        assert n == 9 and len(edges) == 12
        assert sorted(_degrees(n, edges).tolist()) == [2, 2, 2, 2, 3, 3, 3, 3, 4]

    def test_diamond_double_triangle(self):
        n, edges = motif_edges("diamond")
        assert n == 6 and len(edges) == 7

    def test_unknown_motif(self):
        with pytest.raises(ValueError):
            motif_edges("pentagon")
        with pytest.raises(ValueError):
            MotifSpec("pentagon", "tree")


class TestMakeGraph:
    def test_house_tree_counts(self):
        g = make_graph(MotifSpec("house", "tree"), np.random.default_rng(0))
        assert g.num_nodes == 20  # 15-node tree + 5-node house
        assert g.num_edges == 21  # 14 tree + 6 house + 1 bridge

    def test_ba_base_edge_count(self):
        g = make_graph(MotifSpec("cycle", "ba"), np.random.default_rng(1))
        assert g.num_nodes == 21  # 15 + 6
        assert g.num_edges == 26 + 6 + 1  # (15-2)*2 attachment + motif + bridge

    def test_same_seed_identical(self):
        a = make_graph(MotifSpec("grid", "ba"), np.random.default_rng(7))
        b = make_graph(MotifSpec("grid", "ba"), np.random.default_rng(7))
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.edges, b.edges)

    def test_degree_one_hot_features(self):
        g = make_graph(MotifSpec("diamond", "tree"), np.random.default_rng(2))
        assert g.x.shape == (g.num_nodes, 11)
        deg = _degrees(g.num_nodes, g.edges)
        for i in range(g.num_nodes):
            assert g.x[i, min(deg[i], 10)] == 1.0
            assert g.x[i].sum() == 1.0

    def test_shortcut_marked_in_scaffold(self):
        g = make_graph(MotifSpec("house", "ba"), np.random.default_rng(3))
        assert g.scaffold_id == SHORTCUT_CLASS["ba"]


def _small_cfg(bias, combo=10, per_shortcut=40):
    return BiasedPairConfig(
        bias=bias,
        n_graphs_per_combo=combo,
        n_pos_pairs_per_shortcut=per_shortcut,
        n_neg_pairs_per_shortcut=per_shortcut,
    )


class TestMakeDataset:
    def test_counts_and_bias(self):
        cfg = _small_cfg(0.3)
        ds = make_dataset(cfg, np.random.default_rng(0))
        assert len(ds.graphs) == 8 * 10
        assert len(ds.pairs) == 4 * 40
        assert bias_of(ds) == pytest.approx(0.3, abs=1.0 / 80)
        positives = [p for p in ds.pairs if p.y == 1.0]
        assert len(positives) == 80
        ba_pos = sum(
            1 for p in positives
            if p.g1.scaffold_id == SHORTCUT_CLASS["ba"] and p.g2.scaffold_id == SHORTCUT_CLASS["ba"]
        )
        assert ba_pos == round(0.3 * 80)

    def test_unbiased_level(self):
        ds = make_dataset(_small_cfg(0.5), np.random.default_rng(1))
        assert bias_of(ds) == 0.5

    def test_pair_structure_full_scan(self):
        ds = make_dataset(_small_cfg(0.2), np.random.default_rng(2))
        for p in ds.pairs:
            assert p.g1.scaffold_id == p.g2.scaffold_id  # same shortcut base
            motif1 = p.g1.graph_id.split("-")[0]
            motif2 = p.g2.graph_id.split("-")[0]
            assert (motif1 == motif2) == (p.y == 1.0)
            assert p.g1.graph_id != p.g2.graph_id

    def test_per_combination_graph_counts(self):
        ds = make_dataset(_small_cfg(0.4, combo=7), np.random.default_rng(3))
        counts = {}
        for gid in ds.graphs:
            key = tuple(gid.split("-")[:2])
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 8
        assert all(v == 7 for v in counts.values())

    def test_determinism(self):
        a = make_dataset(_small_cfg(0.25), np.random.default_rng(9))
        b = make_dataset(_small_cfg(0.25), np.random.default_rng(9))
        assert [p.pair_id for p in a.pairs] == [p.pair_id for p in b.pairs]
        assert [(p.g1.graph_id, p.g2.graph_id, p.y) for p in a.pairs] == [
            (p.g1.graph_id, p.g2.graph_id, p.y) for p in b.pairs
        ]

    def test_bias_validated(self):
        with pytest.raises(ValueError, match="bias"):
            _small_cfg(0.0)
        with pytest.raises(ValueError, match="bias"):
            _small_cfg(1.0)

    def test_insufficient_graphs_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            make_dataset(_small_cfg(0.5, combo=1), np.random.default_rng(0))

    def test_exhausted_pool_falls_back_to_replacement(self):
        # tiny pool, many pairs: sampling must still terminate with full counts
        ds = make_dataset(_small_cfg(0.5, combo=2, per_shortcut=30), np.random.default_rng(4))
        assert len(ds.pairs) == 120

    def test_serializes_through_pair_dataset_format(self, tmp_path):
        from cmrl.graphs import load_dataset, save_dataset

        ds = make_dataset(_small_cfg(0.5, combo=3, per_shortcut=5), np.random.default_rng(5))
        path = tmp_path / "synth.json"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert len(back.pairs) == len(ds.pairs)
        assert bias_of(back) == bias_of(ds)


class TestBiasOf:
    def _toy_graph(self, shortcut, gid):
        return Graph(num_nodes=2, x=np.zeros((2, 11)), edges=np.array([[0, 1]]),
                     scaffold_id=SHORTCUT_CLASS[shortcut], graph_id=gid)

    def test_hand_built_half(self):
        ga1, ga2 = self._toy_graph("ba", "a1"), self._toy_graph("ba", "a2")
        gt1, gt2 = self._toy_graph("tree", "t1"), self._toy_graph("tree", "t2")
        pairs = [
            PairSample(g1=ga1, g2=ga2, y=1.0, pair_id="p0"),  # ba positive
            PairSample(g1=gt1, g2=gt2, y=1.0, pair_id="p1"),  # tree positive
            PairSample(g1=ga1, g2=ga2, y=0.0, pair_id="p2"),
            PairSample(g1=gt1, g2=gt2, y=0.0, pair_id="p3"),
        ]
        ds = PairDataset(feature_width=11, edge_feature_width=0, task="classification",
                         graphs={g.graph_id: g for g in (ga1, ga2, gt1, gt2)}, pairs=pairs)
        assert bias_of(ds) == 0.5

    def test_all_tree_positives(self):
        gt1, gt2 = self._toy_graph("tree", "t1"), self._toy_graph("tree", "t2")
        ds = PairDataset(feature_width=11, edge_feature_width=0, task="classification",
                         graphs={"t1": gt1, "t2": gt2},
                         pairs=[PairSample(g1=gt1, g2=gt2, y=1.0, pair_id="p0")])
        assert bias_of(ds) == 0.0

    def test_no_positives_rejected(self):
        gt1, gt2 = self._toy_graph("tree", "t1"), self._toy_graph("tree", "t2")
        ds = PairDataset(feature_width=11, edge_feature_width=0, task="classification",
                         graphs={"t1": gt1, "t2": gt2},
                         pairs=[PairSample(g1=gt1, g2=gt2, y=0.0, pair_id="p0")])
        with pytest.raises(ValueError, match="positive"):
            bias_of(ds)
