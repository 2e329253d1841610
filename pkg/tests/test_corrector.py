import math

import numpy as np
import pytest

from cluster_guard.base import base_compress
from cluster_guard.corrector import (
    BoundViolationError, CorrectionParams, OptimState, active_pairs, adam_step, correct, gradient,
    iteration_budget, lipschitz_estimate, loss, project_box, tight_loss, violated_pairs,
)
from cluster_guard.fof import fof_components
from cluster_guard.grid import VulnerablePairSet, find_vulnerable_pairs
from cluster_guard.particles import ParticleSet

from .oracles import SQRT3, adam_ref, tight_loss_ref


def pair_set(pos, b, xi, pairs):
    i = np.array([p[0] for p in pairs], dtype=np.int64)
    j = np.array([p[1] for p in pairs], dtype=np.int64)
    d = np.linalg.norm(pos[i] - pos[j], axis=1)
    return VulnerablePairSet(i, j, d <= b, b, xi)


def two(d, dh):
    orig = ParticleSet.from_positions(np.array([[0.0, 0, 0], [d, 0, 0]]))
    hat = ParticleSet.from_positions(np.array([[0.0, 0, 0], [dh, 0, 0]]))
    v = pair_set(orig.positions(), 1.0, 0.1, [(0, 1)])
    return orig, hat, v


def test_params_derived_values():
    p = CorrectionParams(xi=0.5, b=1.0, m=4)
    assert p.eps_q == pytest.approx(1.0 / 15)
    assert p.xi_prime == pytest.approx(0.5 * (1 - 1 / 16))
    assert 0 < p.xi_prime < p.xi
    assert p.eps_q > p.xi * 2.0 ** -p.m
    for bad in ({"xi": 0}, {"b": -1}, {"m": 1}, {"t_max": -1}, {"eps_loss": 0}, {"optimizer": "sgd"}):
        with pytest.raises(ValueError):
            CorrectionParams(**{"xi": 0.1, "b": 1.0, **bad})


def test_loss_broken_example(backend):
    assert loss(*two(0.99, 1.05), 1.0) == pytest.approx(2.5e-3)


def test_loss_false_example(backend):
    assert loss(*two(1.01, 0.97), 1.0) == pytest.approx(9e-4)


def test_loss_zero_when_sides_kept(backend):
    assert loss(*two(0.99, 0.995), 1.0) == 0.0
    assert loss(*two(1.01, 1.2), 1.0) == 0.0


def test_tight_loss_reduces_to_loss(backend):
    rng = np.random.default_rng(0)
    pos = rng.random((40, 3))
    v = find_vulnerable_pairs(ParticleSet.from_positions(pos), 0.3, 0.02)
    hat = ParticleSet.from_positions(pos + rng.uniform(-0.02, 0.02, pos.shape))
    assert tight_loss(None, hat, v, 0.3, 0.0) == loss(None, hat, v, 0.3)


def test_tight_loss_boundaries(backend):
    eps_q = 0.01
    c = 2 * SQRT3 * eps_q
    assert tight_loss(*two(0.99, 1.0 - c), 1.0, eps_q) == 0.0
    assert tight_loss(*two(0.99, 1.0), 1.0, eps_q) == pytest.approx(c * c)
    assert tight_loss(*two(1.01, 1.0 + c), 1.0, eps_q) == 0.0


def test_gradient_zero_when_loss_zero(backend):
    g = gradient(*two(0.99, 0.9), 1.0, 0.001)
    assert np.all(g == 0)


def test_broken_pair_pulled_together_along_x(backend):
    g = gradient(*two(0.99, 1.05), 1.0, 0.0)
    # descent direction -g: particle 0 moves +x, particle 1 moves -x, no y/z component
    assert g[0, 0] < 0 < g[1, 0]
    assert np.all(g[:, 1:] == 0)


def test_coincident_false_pair_gets_fixed_direction(backend):
    from cluster_guard import kernels

    pos = np.zeros((2, 3))
    val, g, ns = kernels.pair_terms(pos, np.array([0]), np.array([1]), np.array([0], np.uint8), 1.0, 0.0, True)
    assert ns == 1 and val == pytest.approx(1.0)
    assert g[0, 0] == -2.0 and g[1, 0] == 2.0


def _random_config(rng):
    """Small cluster of particles with many pairs on both sides of b, perturbed within xi."""
    n = int(rng.integers(8, 40))
    b = 1.0
    xi = 0.03 + 0.05 * rng.random()
    pos = rng.random((n, 3)) * 2.0
    v = find_vulnerable_pairs(ParticleSet.from_positions(pos), b, xi)
    hat = pos + rng.uniform(-xi, xi, pos.shape)
    return pos, hat, v, b, xi


def test_gradient_matches_reference_loss_shape(backend):
    rng = np.random.default_rng(1)
    pos, hat, v, b, xi = _random_config(rng)
    eps_q = 2 * xi / (2**4 - 1)
    pairs = list(zip(v.i, v.j))
    ref = tight_loss_ref(hat, pairs, v.orig_linked, b, 2 * SQRT3 * eps_q)
    assert tight_loss(None, ParticleSet.from_positions(hat), v, b, eps_q) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_finite_differences(backend, seed):
    rng = np.random.default_rng(100 + seed)
    pos, hat, v, b, xi = _random_config(rng)
    eps_q = 2 * xi / (2**4 - 1)
    c = 2 * SQRT3 * eps_q
    pairs = list(zip(v.i, v.j))
    g = gradient(None, ParticleSet.from_positions(hat), v, b, eps_q)
    h = 1e-6 * xi
    fd = np.zeros_like(hat)
    for k in range(hat.shape[0]):
        for a in range(3):
            up, dn = hat.copy(), hat.copy()
            up[k, a] += h
            dn[k, a] -= h
            fd[k, a] = (tight_loss_ref(up, pairs, v.orig_linked, b, c)
                        - tight_loss_ref(dn, pairs, v.orig_linked, b, c)) / (2 * h)
    scale = np.linalg.norm(fd)
    if scale == 0:
        assert np.all(g == 0)
    else:
        assert np.linalg.norm(g - fd) / scale < 1e-5


def test_gradient_only_on_editable(backend):
    pos, hat, v, b, xi = _random_config(np.random.default_rng(2))
    g = gradient(None, ParticleSet.from_positions(hat), v, b, 0.001)
    others = np.setdiff1d(np.arange(len(pos)), v.editable)
    assert np.all(g[others] == 0)


def test_project_box():
    orig = np.zeros((4, 3))
    hat = np.array([[2.0, 0.5, -3.0]] * 4)
    out = project_box(hat, orig, 1.0)
    assert np.array_equal(out[0], [1.0, 0.5, -1.0])
    assert np.array_equal(project_box(out, orig, 1.0), out)
    with pytest.raises(ValueError):
        project_box(hat, orig, 0.0)
    po = ParticleSet.from_positions(orig)
    ph = ParticleSet.from_positions(hat)
    assert project_box(ph, po, 1.0).positions()[0, 0] == 1.0


def test_adam_zero_gradient_no_move():
    st = OptimState.fresh(np.array([[1.0, 2.0, 3.0]]))
    adam_step(st, np.zeros((1, 3)), CorrectionParams(xi=0.1, b=1.0))
    assert np.array_equal(st.positions, [[1.0, 2.0, 3.0]])


def test_adam_matches_reference():
    params = CorrectionParams(xi=0.1, b=1.0)
    rng = np.random.default_rng(3)
    grads = rng.standard_normal((25, 1, 3))
    st = OptimState.fresh(np.zeros((1, 3)))
    for g in grads:
        adam_step(st, g, params)
    for a in range(3):
        ref = adam_ref(0.0, grads[:, 0, a])
        assert st.positions[0, a] == pytest.approx(ref, rel=1e-12, abs=1e-15)
    first = OptimState.fresh(np.zeros((1, 3)))
    adam_step(first, np.ones((1, 3)), params)
    assert first.positions[0, 0] == pytest.approx(-1e-3, rel=1e-6)
    assert np.all(st.second_moment >= 0)


def test_iteration_budget():
    assert iteration_budget(1e-3, 100, 1e-10) == 12_000_000
    assert iteration_budget(1e-3, 0, 1e-10) == 0
    assert iteration_budget(2e-3, 100, 1e-10) >= iteration_budget(1e-3, 100, 1e-10)
    assert iteration_budget(1e-3, 101, 1e-10) >= iteration_budget(1e-3, 100, 1e-10)
    assert iteration_budget(1e-3, 100, 1e-11) >= iteration_budget(1e-3, 100, 1e-10)
    with pytest.raises(ValueError):
        iteration_budget(1e-3, 1, 0.0)


def test_empty_pair_set_is_zero_work(backend):
    p = ParticleSet.from_positions(np.random.default_rng(4).random((10, 3)))
    v = find_vulnerable_pairs(p, 0.01, 0.0)
    res = correct(p, p, v, CorrectionParams(xi=0.01, b=0.01))
    assert res.iterations == 0 and res.converged and np.all(res.delta == 0)


def test_rejects_out_of_bound_input():
    p = ParticleSet.from_positions(np.zeros((2, 3)))
    q = ParticleSet.from_positions(np.array([[0.2, 0, 0], [0, 0, 0]]))
    v = find_vulnerable_pairs(p, 1.0, 0.1)
    with pytest.raises(BoundViolationError):
        correct(p, q, v, CorrectionParams(xi=0.1, b=1.0))


def test_repairs_single_broken_pair(backend):
    b, xi = 1.0, 0.0625
    orig = ParticleSet.from_positions(np.array([[0.0, 0, 0], [b, 0, 0], [5.0, 5, 5]]))
    hat = ParticleSet.from_positions(np.array([[-xi, 0, 0], [b + xi, 0, 0], [5.0, 5, 5]]))
    params = CorrectionParams(xi=xi, b=b, t_max=20000)
    v = find_vulnerable_pairs(orig, b, xi)
    assert loss(orig, hat, v, b) > 0
    res = correct(orig, hat, v, params)
    assert res.converged and res.final_loss <= params.eps_loss
    d = np.linalg.norm(res.corrected.positions()[0] - res.corrected.positions()[1])
    assert d <= b - params.margin + 1e-5
    assert fof_components(res.corrected, b) == fof_components(orig, b)
    assert np.max(np.abs(res.corrected.positions() - orig.positions())) <= params.xi_prime
    assert np.all(res.delta.reshape(-1, 3)[2] == 0)


def test_box_and_editable_safety(backend):
    rng = np.random.default_rng(5)
    pos = rng.random((300, 3))
    orig = ParticleSet.from_positions(pos)
    xi = 0.004
    b = 0.06
    hat = base_compress(orig, xi).decompressed
    params = CorrectionParams(xi=xi, b=b, t_max=3000)
    v = find_vulnerable_pairs(orig, b, xi)
    res = correct(orig, hat, v, params)
    moved = np.flatnonzero(np.any(res.delta.reshape(-1, 3) != 0, axis=1))
    assert set(moved) <= set(v.editable)
    assert np.max(np.abs(res.corrected.positions() - pos)[v.editable]) <= params.xi_prime
    if res.converged:
        assert violated_pairs(res.corrected.positions(), v, b).sum() == 0


def test_lipschitz_estimate_positive():
    pos, hat, v, b, xi = _random_config(np.random.default_rng(6))
    params = CorrectionParams(xi=xi, b=b)
    assert lipschitz_estimate(v, params) >= 4.0
    empty = v.take(np.zeros(len(v), bool))
    assert lipschitz_estimate(empty, params) == 0.0


def test_vanilla_trace_non_increasing(backend):
    rng = np.random.default_rng(7)
    pos, hat, v, b, xi = _random_config(rng)
    params = CorrectionParams(xi=xi, b=b, optimizer="vanilla_pgd", t_max=500)
    res = correct(ParticleSet.from_positions(pos), ParticleSet.from_positions(hat), v, params, trace=True)
    assert all(x >= y for x, y in zip(res.loss_trace, res.loss_trace[1:]))


def test_active_pairs_counts():
    orig, hat, v = two(0.99, 1.05)
    assert active_pairs(hat.positions(), v, 1.0, 0.0).tolist() == [True]
    assert math.isclose(float(violated_pairs(hat.positions(), v, 1.0).sum()), 1.0)
