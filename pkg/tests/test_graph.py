import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gala.errors import ArgumentError, ContractError, DegenerateInputError, FormatError, IntegrityError
from gala.graph import (Dataset, Graph, adjacency_matrix, degree_onehot, graph_density,
                        graph_from_adjacency, parse_tu_dataset, read_graphs_jsonl, split_by_density,
                        stratified_split, write_graphs_jsonl, write_tu_dataset)

from conftest import make_graph, path3, random_graph, triangle


@st.composite
def graphs(draw, max_nodes=9, dim=2):
    n = draw(st.integers(2, max_nodes))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    x = draw(st.lists(st.floats(-5, 5), min_size=n * dim, max_size=n * dim))
    label = draw(st.none() | st.integers(0, 2))
    return Graph(n, chosen, np.array(x).reshape(n, dim), label)


def _write_tu(tmp_path, name="DS", A=None, indicator=None, labels=None, node_labels=None, attrs=None):
    tmp_path.mkdir(parents=True, exist_ok=True)
    def put(suffix, rows):
        if rows is not None:
            (tmp_path / f"{name}_{suffix}.txt").write_text("\n".join(rows) + "\n")
    put("A", A)
    put("graph_indicator", indicator)
    put("graph_labels", labels)
    put("node_labels", node_labels)
    put("node_attributes", attrs)
    return tmp_path


class TestGraphInvariants:
    def test_edges_are_canonical(self):
        g = Graph(3, [(1, 0), (0, 1), (2, 1)], np.zeros((3, 1)))
        assert g.edges == ((0, 1), (1, 2))

    def test_rejects_self_loop(self):
        with pytest.raises(ContractError):
            Graph(2, [(1, 1)], np.zeros((2, 1)))

    def test_rejects_out_of_range_endpoint(self):
        with pytest.raises(ContractError):
            Graph(2, [(0, 2)], np.zeros((2, 1)))

    def test_rejects_wrong_attribute_rows(self):
        with pytest.raises(ContractError):
            Graph(3, [], np.zeros((2, 1)))

    def test_attributes_are_read_only(self):
        g = triangle()
        with pytest.raises(ValueError):
            g.node_attributes[0, 0] = 5.0

    def test_dataset_rejects_mixed_widths(self):
        with pytest.raises(ContractError):
            Dataset((make_graph(2, [], dim=1), make_graph(2, [], dim=2)), 1, 1)

    def test_dataset_rejects_out_of_range_label(self):
        with pytest.raises(ContractError):
            Dataset((make_graph(2, [], label=3, dim=1),), 2, 1)

    @given(graphs())
    def test_json_round_trip(self, g):
        assert Graph.from_json(json.loads(json.dumps(g.to_json()))) == g


class TestAdjacency:
    def test_single_edge(self):
        assert adjacency_matrix(make_graph(2, [(0, 1)])).tolist() == [[0, 1], [1, 0]]

    def test_empty_graph(self):
        assert np.array_equal(adjacency_matrix(make_graph(3, [])), np.zeros((3, 3)))

    def test_triangle(self):
        assert np.array_equal(adjacency_matrix(triangle()), np.ones((3, 3)) - np.eye(3))

    @given(graphs())
    def test_symmetric_zero_trace(self, g):
        M = adjacency_matrix(g)
        assert np.array_equal(M, M.T)
        assert np.trace(M) == 0

    def test_graph_from_adjacency_inverts(self, rng):
        g = random_graph(rng, 9, 0.4)
        back = graph_from_adjacency(adjacency_matrix(g), g.node_attributes)
        assert back.edges == g.edges


class TestDegreeOnehot:
    def test_path(self):
        assert degree_onehot(path3(), 3).argmax(1).tolist() == [1, 2, 1]

    def test_isolated_node(self):
        assert degree_onehot(make_graph(1, []), 4).tolist() == [[1, 0, 0, 0, 0]]

    def test_star_clamps(self):
        star = make_graph(10, [(0, k) for k in range(1, 10)])
        oh = degree_onehot(star, 5)
        assert oh.shape == (10, 6)
        assert oh[0].argmax() == 5
        assert np.all(oh.sum(1) == 1)


class TestDensity:
    def test_triangle(self):
        assert graph_density(triangle()) == 1.0

    def test_path(self):
        assert graph_density(path3()) == pytest.approx(2 * 2 / (3 * 2))

    def test_empty(self):
        assert graph_density(make_graph(3, [])) == 0.0

    def test_too_small(self):
        with pytest.raises(DegenerateInputError):
            graph_density(make_graph(1, []))

    @given(graphs(), st.randoms(use_true_random=False))
    def test_relabeling_invariant(self, g, rnd):
        perm = list(range(g.node_count))
        rnd.shuffle(perm)
        h = Graph(g.node_count, [(perm[i], perm[j]) for i, j in g.edges], g.node_attributes)
        assert graph_density(h) == graph_density(g)


class TestTUDataset:
    def test_two_graph_fixture(self, tmp_path):
        d = _write_tu(tmp_path, A=["1, 2", "2, 3", "3, 1", "4, 5", "5, 4"],
                      indicator=["1", "1", "1", "2", "2"], labels=["0", "1"],
                      node_labels=["0", "1", "0", "1", "1"])
        ds = parse_tu_dataset(d)
        assert len(ds) == 2 and ds.num_classes == 2
        assert set(ds[0].edges) == {(0, 1), (1, 2), (0, 2)}
        assert ds[1].edges == ((0, 1),)
        assert ds.labels().tolist() == [0, 1]
        # node labels arrive as one-hot rows
        assert ds[0].node_attributes.tolist() == [[1, 0], [0, 1], [1, 0]]

    def test_labels_remapped_contiguously(self, tmp_path):
        d = _write_tu(tmp_path, A=["1, 2", "3, 4"], indicator=["1", "1", "2", "2"],
                      labels=["-1", "5"], attrs=["0.5", "1", "2", "3"])
        ds = parse_tu_dataset(d)
        assert ds.labels().tolist() == [0, 1]
        assert ds[1].node_attributes.tolist() == [[2.0], [3.0]]

    def test_cross_graph_edge_is_integrity_error(self, tmp_path):
        d = _write_tu(tmp_path, A=["1, 2", "5, 1"], indicator=["1", "1", "1", "2", "2"],
                      labels=["0", "1"], node_labels=["0"] * 5)
        with pytest.raises(IntegrityError):
            parse_tu_dataset(d)

    def test_non_contiguous_indicator(self, tmp_path):
        d = _write_tu(tmp_path, A=["1, 2"], indicator=["1", "1", "3"], labels=["0", "1"],
                      node_labels=["0"] * 3)
        with pytest.raises(IntegrityError):
            parse_tu_dataset(d)

    def test_missing_file(self, tmp_path):
        d = _write_tu(tmp_path, A=["1, 2"], indicator=["1", "1"], node_labels=["0", "0"])
        with pytest.raises(FormatError):
            parse_tu_dataset(d)

    def test_missing_node_data(self, tmp_path):
        d = _write_tu(tmp_path, A=["1, 2"], indicator=["1", "1"], labels=["0"])
        with pytest.raises(FormatError):
            parse_tu_dataset(d)

    def test_round_trip(self, tmp_path, rng):
        gs = tuple(random_graph(rng, int(rng.integers(3, 9)), 0.4, label=int(rng.integers(3)))
                   for _ in range(12))
        ds = Dataset(gs, 3, gs[0].attribute_dim)
        # make every class present so the label remap is the identity
        ds = Dataset(tuple(g.with_label(k % 3) for k, g in enumerate(gs)), 3, ds.attribute_dim)
        write_tu_dataset(ds, tmp_path / "a")
        once = parse_tu_dataset(tmp_path / "a")
        write_tu_dataset(once, tmp_path / "b")
        twice = parse_tu_dataset(tmp_path / "b")
        assert list(once.graphs) == list(ds.graphs)
        assert list(twice.graphs) == list(once.graphs)

    def test_jsonl_round_trip(self, tmp_path, rng):
        gs = [random_graph(rng, 6, 0.5, label=1) for _ in range(4)]
        write_graphs_jsonl(gs, tmp_path / "g.jsonl")
        assert read_graphs_jsonl(tmp_path / "g.jsonl") == gs


class TestSplits:
    def _density_dataset(self, densities):
        gs = []
        n = 6
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        for k, d in enumerate(densities):
            m = int(round(d * len(pairs)))
            gs.append(make_graph(n, pairs[:m], label=k % 2))
        return Dataset(tuple(gs), 2, gs[0].attribute_dim)

    def test_eight_graphs_four_groups(self):
        dens = [0.8, 0.1, 0.5, 0.3, 0.7, 0.2, 0.6, 0.4]
        ds = self._density_dataset(dens)
        split = split_by_density(ds, 4, seed=0)
        assert [len(s) for s in split.sub_datasets] == [2, 2, 2, 2]
        means = [s.densities().mean() for s in split.sub_datasets]
        assert means == sorted(means)

    def test_remainder_goes_to_densest(self):
        ds = self._density_dataset(np.linspace(0.1, 0.9, 10))
        split = split_by_density(ds, 4)
        assert [len(s) for s in split.sub_datasets] == [2, 2, 3, 3]

    def test_partition_and_ordering(self, rng):
        gs = tuple(random_graph(rng, 8, p, label=k % 2) for k, p in enumerate(rng.uniform(0.1, 0.9, 23)))
        ds = Dataset(gs, 2, gs[0].attribute_dim)
        split = split_by_density(ds, 4, seed=3)
        flat = sorted(i for idx in split.indices for i in idx)
        assert flat == list(range(len(ds)))
        for a, b in zip(split.sub_datasets, split.sub_datasets[1:]):
            assert a.densities().max() <= b.densities().min()
        for i, (tr, te) in enumerate(split.train_test):
            assert sorted(list(tr) + list(te)) == list(range(len(split.sub_datasets[i])))

    def test_too_few_graphs(self):
        ds = self._density_dataset([0.5])
        with pytest.raises(ArgumentError):
            split_by_density(ds, 4)

    def test_k_below_two(self):
        with pytest.raises(ArgumentError):
            split_by_density(self._density_dataset([0.1, 0.2, 0.3]), 1)

    def test_stratified_ratio_and_determinism(self):
        labels = np.array([0] * 10 + [1] * 20)
        tr, te = stratified_split(labels, 0.8, seed=5)
        assert len(tr) == 24 and len(te) == 6
        assert np.bincount(labels[np.asarray(te)]).tolist() == [2, 4]
        tr2, te2 = stratified_split(labels, 0.8, seed=5)
        assert list(tr) == list(tr2) and list(te) == list(te2)
