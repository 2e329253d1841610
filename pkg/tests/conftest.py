import numpy as np
import pytest

from cluster_guard import kernels
from cluster_guard.particles import DomainBox, ParticleSet, SynthSpec, gen_synthetic, scaled

KERNEL_NAMES = ("cell_sort", "band_pairs", "fof_labels", "pair_terms", "huff_decode")


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    mod = kernels.get_backend(request.param)
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_set(rng, n, kind="uniform", box=1.0):
    if kind == "uniform":
        pos = rng.random((n, 3)) * box
    else:
        k = max(1, n // 60)
        centers = 0.2 + 0.6 * rng.random((k, 3))
        pos = centers[rng.integers(0, k, n)] + 0.03 * rng.standard_normal((n, 3))
        pos = np.clip(pos, 0.0, 1.0) * box
    return ParticleSet.from_positions(pos, DomainBox((0.0,) * 3, (box,) * 3))


def clustered(n, seed=1, box=256.0):
    spec = SynthSpec("clustered", n, blobs=20, sigma=0.02, background_fraction=0.2, seed=seed)
    return scaled(gen_synthetic(spec), box)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance gate criteria")


def pytest_terminal_summary(terminalreporter):
    from tests import gate

    if gate.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in gate.summary_lines():
            terminalreporter.write_line(line)
