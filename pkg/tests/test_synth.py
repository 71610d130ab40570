import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components, shortest_path

from hg2v.errors import DataError
from hg2v.synth import (
    DlaConfig,
    dla_dataset,
    gen_dla,
    gen_topology,
    image_to_graph,
    images_to_graphs,
    load_idx_images,
    load_idx_labels,
    perturb_edges,
    read_idx,
    write_idx,
)

from conftest import data_dir


def is_tree(g):
    ncomp, _ = connected_components(g.adjacency, directed=False)
    return ncomp == 1 and g.num_edges == g.n - 1


def graph_radius(g):
    ecc = shortest_path(g.adjacency, unweighted=True, directed=False).max(axis=1)
    return ecc.min()


class TestTopologies:
    def test_cycle(self):
        g = gen_topology("cycle", 500)
        assert g.n == 500 and g.num_edges == 500
        np.testing.assert_array_equal(g.degrees, 2.0)

    def test_wheel_degrees(self):
        g = gen_topology("wheel", 5)
        np.testing.assert_array_equal(g.degrees, [4, 3, 3, 3, 3])

    def test_ladder_edge_count(self):
        g = gen_topology("ladder", 500)
        assert g.n == 500 and g.num_edges == 2 * 249 + 250

    def test_tree3_is_tree(self):
        g = gen_topology("tree3", 40)
        assert is_tree(g)
        assert g.degrees.max() == 4

    def test_seed_shuffles_ids_only(self):
        a, b = gen_topology("wheel", 12), gen_topology("wheel", 12, seed=3)
        assert sorted(a.degrees) == sorted(b.degrees)
        assert a.edge_set() != b.edge_set()

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            gen_topology("star", 10)
        with pytest.raises(ValueError):
            gen_topology("ladder", 7)


class TestPerturb:
    def test_zero_removals_identity(self):
        g = gen_topology("cycle", 20)
        assert perturb_edges(g, 0, seed=1) is g

    def test_counting(self):
        g = perturb_edges(gen_topology("cycle", 500), 10, seed=0)
        assert g.num_edges == 490 and g.n == 500

    def test_too_many(self):
        with pytest.raises(ValueError):
            perturb_edges(gen_topology("cycle", 5), 6, seed=0)

    def test_uniform_frequency(self):
        g = gen_topology("cycle", 50)
        trials, k = 10_000, 10
        counts = np.zeros(g.num_edges)
        full = g.edge_set()
        for t in range(trials):
            kept = perturb_edges(g, k, seed=t).edge_set()
            counts[[i for i, e in enumerate(sorted(full)) if e not in kept]] += 1
        p = k / g.num_edges
        sigma = np.sqrt(trials * p * (1 - p))
        assert np.all(np.abs(counts - trials * p) < 3.5 * sigma)


class TestDla:
    def test_tree_with_all_nodes(self):
        g = gen_dla(DlaConfig(n_nodes=500, stickiness=1.0, seed=0))
        assert g.n == 500 and g.num_edges == 499
        assert is_tree(g)

    def test_single_bond_length(self):
        g = gen_dla(DlaConfig(n_nodes=2, seed=4))
        assert g.num_edges == 1
        bond = np.linalg.norm(g.features[0] - g.features[1])
        assert 0.0 < bond < 1.0 + 1e-9

    def test_bonds_never_longer_than_contact(self):
        g = gen_dla(DlaConfig(n_nodes=80, stickiness=0.3, seed=2))
        lengths = np.linalg.norm(g.features[g.edges[:, 0]] - g.features[g.edges[:, 1]], axis=1)
        assert lengths.max() < 1.0

    def test_seed_determinism(self):
        a = gen_dla(DlaConfig(60, 0.5, 9))
        b = gen_dla(DlaConfig(60, 0.5, 9))
        assert a.features.tobytes() == b.features.tobytes()
        assert a.edge_set() == b.edge_set()

    def test_bad_stickiness(self):
        with pytest.raises(ValueError):
            DlaConfig(stickiness=0.0)

    def test_dataset_balanced(self):
        graphs = dla_dataset(6, 20, seed=1)
        assert [g.label for g in graphs] == [0, 1, 0, 1, 0, 1]

    @pytest.mark.slow
    def test_low_stickiness_is_more_compact(self):
        # measured over 20 graphs x 100 nodes: radius 17.5 (p=1) vs 12.05 (p=0.05);
        # 50 x 200 gives 26.3 vs 16.4
        rad = {p: np.mean([graph_radius(gen_dla(DlaConfig(100, p, s))) for s in range(20)])
               for p in (1.0, 0.05)}
        assert rad[0.05] < rad[1.0]
        np.testing.assert_allclose([rad[1.0], rad[0.05]], [17.5, 12.05], atol=1e-9)


class TestImageGraphs:
    def test_strict_threshold(self):
        g = image_to_graph([[0.0, 0.9]])
        assert g.n == 1 and g.num_edges == 0
        np.testing.assert_array_equal(g.features, [[0.9, 1.0, 0.0]])

    def test_inclusive_threshold(self):
        assert image_to_graph([[0.0, 0.9]], strict=False).n == 2

    def test_full_block_eight_neighborhood(self):
        g = image_to_graph(np.ones((2, 2)))
        assert g.n == 4 and g.num_edges == 6

    def test_3x3_edges_match_enumeration(self):
        g = image_to_graph(np.ones((3, 3)))
        coords = [(y, x) for y in range(3) for x in range(3)]
        pairs = sum(1 for i, a in enumerate(coords) for b in coords[i + 1:]
                    if max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1)
        assert g.num_edges == pairs == 20

    def test_empty_image(self):
        with pytest.raises(DataError):
            image_to_graph(np.zeros((3, 3)))


class TestIdx:
    def test_round_trip_bit_identical(self, tmp_path, rng):
        imgs = rng.integers(0, 256, size=(3, 5, 4)).astype(np.uint8)
        write_idx(tmp_path / "x.idx", imgs)
        np.testing.assert_array_equal(read_idx(tmp_path / "x.idx"), imgs)
        floats = rng.random((3, 5, 4))
        write_idx(tmp_path / "f.idx.gz", floats)
        back = np.stack(load_idx_images(tmp_path / "f.idx.gz"))
        assert back.tobytes() == floats.tobytes()

    def test_empty_payload(self, tmp_path):
        write_idx(tmp_path / "e.idx", np.zeros((0, 28, 28), dtype=np.uint8))
        assert load_idx_images(tmp_path / "e.idx") == []

    def test_bad_magic_and_truncation(self, tmp_path):
        (tmp_path / "b.idx").write_bytes(b"\x01\x02\x03\x04")
        with pytest.raises(DataError):
            read_idx(tmp_path / "b.idx")
        write_idx(tmp_path / "t.idx", np.zeros((2, 3), dtype=np.uint8))
        (tmp_path / "t.idx").write_bytes((tmp_path / "t.idx").read_bytes()[:-1])
        with pytest.raises(DataError):
            read_idx(tmp_path / "t.idx")

    def test_mnist_sample(self):
        path = data_dir() / "mnist5k-images-idx3-ubyte.gz"
        if not path.exists():
            pytest.skip("MNIST sample not present; run scripts/fetch_data.py")
        imgs = load_idx_images(path)
        labels = load_idx_labels(data_dir() / "mnist5k-labels-idx1-ubyte.gz")
        assert len(imgs) == 5000 and imgs[0].shape == (28, 28)
        np.testing.assert_array_equal(np.bincount(labels), 500)
        graphs = images_to_graphs(imgs[::25], labels[::25])
        assert 120 < np.mean([g.n for g in graphs]) < 180
