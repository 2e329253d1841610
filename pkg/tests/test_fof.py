import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cluster_guard.fof import FofLabels, fof_components, halo_catalog
from cluster_guard.particles import DomainBox, ParticleSet

from .conftest import random_set
from .oracles import components_by_matrix


def test_pair_at_b_links(backend):
    p = ParticleSet.from_positions(np.array([[0.0, 0, 0], [0.5, 0, 0]]))
    assert fof_components(p, 0.5).n_components == 1
    assert fof_components(p, 0.5 / (1 + 1e-9)).n_components == 2


def test_chain_is_one_component(backend):
    p = ParticleSet.from_positions(np.array([[0.0, 0, 0], [0.9, 0, 0], [1.8, 0, 0]]))
    lab = fof_components(p, 1.0)
    assert list(lab.labels) == [0, 0, 0]
    assert list(lab.sizes()) == [3]


def test_empty_and_invalid(backend):
    assert fof_components(ParticleSet.from_positions(np.zeros((0, 3))), 0.1).n_components == 0
    with pytest.raises(ValueError):
        fof_components(ParticleSet.from_positions(np.zeros((2, 3))), 0.0)


@pytest.mark.parametrize("seed", range(20))
def test_matches_adjacency_oracle(backend, seed):
    rng = np.random.default_rng(seed)
    p = random_set(rng, int(rng.integers(50, 1500)), "clustered" if seed % 2 else "uniform")
    b = 0.01 + 0.05 * rng.random()
    lab = fof_components(p, b)
    assert np.array_equal(lab.labels, components_by_matrix(p.positions(), b))


def test_label_invariants(backend):
    p = random_set(np.random.default_rng(3), 900, "clustered")
    lab = fof_components(p, 0.03).labels
    idx = np.arange(len(lab))
    assert np.all(lab <= idx)
    assert np.array_equal(lab[lab], lab)


def test_monotone_in_b(backend):
    p = random_set(np.random.default_rng(4), 800)
    counts = [fof_components(p, b).n_components for b in (0.01, 0.02, 0.04, 0.08)]
    assert counts == sorted(counts, reverse=True)


def test_backends_agree():
    from cluster_guard import kernels
    from cluster_guard.grid import build_grid

    if len(kernels.BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    p = random_set(np.random.default_rng(5), 4000, "clustered")
    g = build_grid(p, 0.02)
    a, c = (np.asarray(kernels.get_backend(n).fof_labels(p.positions(), g.cell_of, g.cell_start,
                                                         g.sorted_ids, g.dims, 0.02 ** 2))
            for n in ("python", "cython"))
    assert np.array_equal(a, c)


def test_catalog_examples():
    one = FofLabels(np.zeros(100, dtype=np.int64))
    assert list(halo_catalog(one, 20).sizes) == [100]
    labels = np.concatenate([np.zeros(3), np.full(5, 3), np.full(50, 8)]).astype(np.int64)
    cat = halo_catalog(FofLabels(labels), 20)
    assert list(cat.sizes) == [50] and len(cat) == 1


def test_catalog_matches_oracle(backend):
    p = random_set(np.random.default_rng(6), 1500, "clustered")
    b = 0.02
    oracle = components_by_matrix(p.positions(), b)
    sizes = np.bincount(oracle)
    sizes = np.sort(sizes[sizes >= 5])[::-1]
    cat = halo_catalog(fof_components(p, b), 5)
    assert np.array_equal(cat.sizes, sizes)
    assert fof_components(p, b).sizes().sum() == p.n


def test_label_file_round_trip(tmp_path):
    lab = FofLabels(np.array([0, 0, 2, 0], dtype=np.int64))
    lab.save(tmp_path / "l.bin")
    assert (tmp_path / "l.bin").stat().st_size == 32
    assert FofLabels.load(tmp_path / "l.bin") == lab


@settings(max_examples=50, deadline=None)
@given(pts=st.lists(st.tuples(*[st.floats(0, 1, allow_nan=False)] * 3), max_size=80), b=st.floats(0.02, 0.6))
def test_oracle_property(pts, b):
    pos = np.array(pts, dtype=np.float64).reshape(-1, 3)
    p = ParticleSet.from_positions(pos, DomainBox.unit())
    assert np.array_equal(fof_components(p, b).labels, components_by_matrix(pos, b))
