"""Data model, serialization round-trips, and split generation."""

import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmrl.graphs import (
    DatasetError,
    Graph,
    PairDataset,
    PairSample,
    SplitPlan,
    kfold_splits,
    load_dataset,
    permute_nodes,
    save_dataset,
    scaffold_ood_split,
)

HERE = os.path.dirname(__file__)


def _random_graph(rng, n=4, width=3, edge_width=0, scaffold=None, gid="g"):
    all_edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    k = int(rng.integers(1, len(all_edges) + 1))
    chosen = [all_edges[int(i)] for i in rng.choice(len(all_edges), size=k, replace=False)]
    return Graph(
        num_nodes=n,
        x=rng.normal(size=(n, width)),
        edges=np.array(chosen),
        edge_x=rng.normal(size=(k, edge_width)) if edge_width else None,
        scaffold_id=scaffold,
        graph_id=gid,
    )


def _random_dataset(seed, n_graphs=6, n_pairs=8, edge_width=0, scaffolds=False, task="regression"):
    rng = np.random.default_rng(seed)
    graphs = {}
    for i in range(n_graphs):
        gid = f"g{i}"
        graphs[gid] = _random_graph(
            rng, n=int(rng.integers(2, 6)), edge_width=edge_width,
            scaffold=int(rng.integers(0, 3)) if scaffolds else None, gid=gid,
        )
    ids = list(graphs)
    pairs = []
    for k in range(n_pairs):
        a, b = rng.choice(len(ids), size=2)
        y = float(rng.normal()) if task == "regression" else float(rng.integers(0, 2))
        pairs.append(PairSample(g1=graphs[ids[int(a)]], g2=graphs[ids[int(b)]], y=y, pair_id=f"p{k}"))
    return PairDataset(
        feature_width=3, edge_feature_width=edge_width, task=task, graphs=graphs, pairs=pairs
    )


class TestGraphValidation:
    def test_edge_endpoint_out_of_range(self):
        with pytest.raises(DatasetError, match="out of range"):
            Graph(num_nodes=2, x=np.zeros((2, 1)), edges=np.array([[0, 2]]))

    def test_self_loop_rejected(self):
        with pytest.raises(DatasetError, match="self-loop"):
            Graph(num_nodes=2, x=np.zeros((2, 1)), edges=np.array([[1, 1]]))

    def test_duplicate_edge_rejected(self):
        with pytest.raises(DatasetError, match="duplicate"):
            Graph(num_nodes=2, x=np.zeros((2, 1)), edges=np.array([[0, 1], [1, 0]]))

    def test_feature_shape_mismatch(self):
        with pytest.raises(DatasetError):
            Graph(num_nodes=3, x=np.zeros((2, 1)), edges=np.zeros((0, 2)))

    def test_neighbor_index_padding(self):
        g = Graph(num_nodes=3, x=np.zeros((3, 1)), edges=np.array([[0, 1]]))
        idx, deg = g.neighbor_index
        assert idx.shape == (3, 1)
        assert idx[2, 0] == 3  # isolated node padded with N
        assert deg[2, 0] == 0.0


class TestSerialization:
    @pytest.mark.parametrize("seed,edge_width", [(0, 0), (1, 2), (2, 0), (3, 1)])
    def test_round_trip_identity(self, tmp_path, seed, edge_width):
        ds = _random_dataset(seed, edge_width=edge_width, scaffolds=True)
        path = tmp_path / "ds.json"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.feature_width == ds.feature_width
        assert back.task == ds.task
        assert list(back.graphs) == list(ds.graphs)
        for gid in ds.graphs:
            a, b = ds.graphs[gid], back.graphs[gid]
            assert np.array_equal(a.x, b.x)  # bitwise float round-trip
            assert np.array_equal(a.edges, b.edges)
            assert a.scaffold_id == b.scaffold_id
            if a.edge_x is None:
                assert b.edge_x is None or b.edge_x.size == 0
            else:
                assert np.array_equal(a.edge_x, b.edge_x)
        for p, q in zip(ds.pairs, back.pairs):
            assert p.y == q.y and p.pair_id == q.pair_id
            assert p.g1.graph_id == q.g1.graph_id and p.g2.graph_id == q.g2.graph_id

    def test_empty_pair_list(self, tmp_path):
        ds = _random_dataset(0, n_pairs=0)
        path = tmp_path / "empty.json"
        save_dataset(ds, path)
        assert len(load_dataset(path)) == 0

    def test_ingested_benzene_water_file(self):
        ds = load_dataset(os.path.join(HERE, "data", "benzene_water.json"))
        benzene = ds.pairs[0].g1
        assert benzene.num_nodes == 6
        assert benzene.num_edges == 6

    def test_unknown_top_level_keys_ignored(self, tmp_path):
        doc = {
            "feature_width": 1, "edge_feature_width": 0, "task": "regression",
            "graphs": {"a": {"n": 1, "x": [[0.5]], "edges": [], "edge_x": None, "scaffold": None}},
            "pairs": [], "featurization": {"vocab": ["C"]},
        }
        path = tmp_path / "d.json"
        path.write_text(json.dumps(doc))
        assert load_dataset(path).feature_width == 1

    def test_malformed_record_names_index(self, tmp_path):
        doc = {
            "feature_width": 1, "edge_feature_width": 0, "task": "regression",
            "graphs": {"a": {"n": 1, "x": [[0.0]], "edges": [], "edge_x": None, "scaffold": None}},
            "pairs": [{"g1": "a", "g2": "missing", "y": 0.0, "id": "p0"}],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(DatasetError, match="pair record 0"):
            load_dataset(path)

    def test_inconsistent_feature_width(self, tmp_path):
        doc = {
            "feature_width": 2, "edge_feature_width": 0, "task": "regression",
            "graphs": {"a": {"n": 1, "x": [[0.0]], "edges": [], "edge_x": None, "scaffold": None}},
            "pairs": [],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(DatasetError, match="width"):
            load_dataset(path)

    def test_classification_target_validated(self):
        rng = np.random.default_rng(0)
        g = _random_graph(rng)
        with pytest.raises(DatasetError, match="classification target"):
            PairDataset(
                feature_width=3, edge_feature_width=0, task="classification",
                graphs={"g": g}, pairs=[PairSample(g1=g, g2=g, y=0.5, pair_id="p")],
            )

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_round_trip_property(self, seed):
        import tempfile

        ds = _random_dataset(seed, n_graphs=3, n_pairs=3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "d.json")
            save_dataset(ds, path)
            back = load_dataset(path)
        for gid in ds.graphs:
            assert np.array_equal(ds.graphs[gid].x, back.graphs[gid].x)


class TestKFold:
    def test_partition_and_sizes(self):
        plans = kfold_splits(10, k=5, repeats=1, seed=0)
        assert len(plans) == 5
        heldout_all = []
        for plan in plans:
            held = plan.heldout
            assert len(held) == 2  # the held-out fold
            assert len(plan.train) == 8
            heldout_all.extend(held)
        assert sorted(heldout_all) == list(range(10))

    def test_25_runs_total(self):
        plans = kfold_splits(25, k=5, repeats=5, seed=1)
        assert len(plans) == 25
        for rep in range(5):
            fold_union = []
            for plan in plans[rep * 5 : (rep + 1) * 5]:
                fold_union.extend(plan.heldout)
            assert sorted(fold_union) == list(range(25))

    def test_determinism(self):
        a = kfold_splits(12, 3, 2, seed=7)
        b = kfold_splits(12, 3, 2, seed=7)
        for p, q in zip(a, b):
            assert p.train == q.train and p.valid == q.valid and p.test == q.test

    def test_validation_carved_from_fold(self):
        plans = kfold_splits(20, k=4, repeats=1, seed=0, valid_fraction=0.5)
        for plan in plans:
            assert len(plan.valid) == 2 or len(plan.valid) == 3
            assert set(plan.valid).isdisjoint(plan.train)

    def test_n_less_than_k(self):
        with pytest.raises(DatasetError):
            kfold_splits(3, k=5, repeats=1, seed=0)


def _brute_force_ood(dataset, c):
    """Direct evaluation of the in/out-of-distribution set definitions."""
    counts = {}
    for g in dataset.graphs.values():
        counts[g.scaffold_id] = counts.get(g.scaffold_id, 0) + 1
    ordered = sorted(counts, key=lambda s: (-counts[s], s))
    in_dist = set(ordered[:c])
    d_id, d_ood = set(), set()
    for i, p in enumerate(dataset.pairs):
        g1_in = p.g1.scaffold_id in in_dist
        g2_in = p.g2.scaffold_id in in_dist
        if g1_in and g2_in:
            d_id.add(i)
        elif (not g1_in and not g2_in) or (not g1_in and g2_in) or (g1_in and not g2_in):
            d_ood.add(i)
    return d_id, d_ood


class TestScaffoldSplit:
    def test_three_scaffold_example(self):
        # scaffolds {A, A, B, B, C}: with c=2 any pair touching graph 5 is held out
        rng = np.random.default_rng(0)
        graphs = {
            f"g{i}": _random_graph(rng, scaffold=s, gid=f"g{i}")
            for i, s in enumerate([0, 0, 1, 1, 2])
        }
        ids = list(graphs)
        pairs = [
            PairSample(g1=graphs[a], g2=graphs[b], y=0.0, pair_id=f"{a}-{b}")
            for a in ids
            for b in ids
            if a < b
        ]
        ds = PairDataset(feature_width=3, edge_feature_width=0, task="regression",
                         graphs=graphs, pairs=pairs)
        plan = scaffold_ood_split(ds, c=2, valid_fraction=0.0, seed=0)
        for i in plan.train:
            p = ds.pairs[i]
            assert p.g1.scaffold_id in (0, 1) and p.g2.scaffold_id in (0, 1)
        for i in plan.test:
            p = ds.pairs[i]
            assert p.g1.scaffold_id == 2 or p.g2.scaffold_id == 2

    def test_single_scaffold_degenerate(self):
        rng = np.random.default_rng(0)
        graphs = {f"g{i}": _random_graph(rng, scaffold=0, gid=f"g{i}") for i in range(3)}
        ds = PairDataset(feature_width=3, edge_feature_width=0, task="regression",
                         graphs=graphs, pairs=[])
        with pytest.raises(DatasetError, match="c="):
            scaffold_ood_split(ds, c=1)

    def test_missing_scaffold_id(self):
        ds = _random_dataset(0, scaffolds=False)
        with pytest.raises(DatasetError, match="scaffold"):
            scaffold_ood_split(ds, c=1)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        ds = _random_dataset(seed, n_graphs=10, n_pairs=int(np.random.default_rng(seed).integers(5, 50)),
                             scaffolds=True)
        n_classes = len({g.scaffold_id for g in ds.graphs.values()})
        if n_classes < 2:
            pytest.skip("degenerate scaffold draw")
        c = 1 + seed % (n_classes - 1)
        plan = scaffold_ood_split(ds, c=c, valid_fraction=0.5, seed=seed)
        d_id, d_ood = _brute_force_ood(ds, c)
        assert set(plan.train) == d_id
        assert set(plan.valid) | set(plan.test) == d_ood
        assert set(plan.valid).isdisjoint(plan.test)
        # no graph id on both sides of the graph-set boundary, every pair covered
        assert d_id | d_ood == set(range(len(ds.pairs)))

    def test_every_test_pair_touches_ood_graph(self):
        ds = _random_dataset(4, n_graphs=8, n_pairs=30, scaffolds=True)
        plan = scaffold_ood_split(ds, c=1, valid_fraction=0.3, seed=0)
        counts = {}
        for g in ds.graphs.values():
            counts[g.scaffold_id] = counts.get(g.scaffold_id, 0) + 1
        top = sorted(counts, key=lambda s: (-counts[s], s))[0]
        for i in plan.valid + plan.test:
            p = ds.pairs[i]
            assert p.g1.scaffold_id != top or p.g2.scaffold_id != top


class TestSplitPlan:
    def test_overlap_rejected(self):
        with pytest.raises(DatasetError, match="disjoint"):
            SplitPlan(train=[0, 1], valid=[1], test=[2], mode="x")


class TestPermuteNodes:
    def test_features_follow_labels(self):
        rng = np.random.default_rng(0)
        g = _random_graph(rng, n=5)
        perm = rng.permutation(5)
        gp = permute_nodes(g, perm)
        for old in range(5):
            assert np.array_equal(gp.x[perm[old]], g.x[old])
        assert gp.num_edges == g.num_edges
