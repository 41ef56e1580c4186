import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CAT, Uncompensated, shear_sandwich
from torusendo.errors import CapacityError, InvalidWeightingError
from torusendo.lattice import IntMatrix2, torus_distance
from torusendo.maps import make_linear, make_shear
from torusendo.perturbation import make_g_epsilon
from torusendo.preimage import (
    backward_orbit_from_branches,
    branch_weights,
    preimage_points,
    preimage_tree,
    preimages,
    sample_backward_orbit,
)

rng = np.random.default_rng(5)
MAPS = [make_linear(CAT), shear_sandwich(0.5), make_g_epsilon(IntMatrix2.from_rows(CAT), 0.02)]


def test_linear_preimages_of_origin():
    # oracle: half-integer candidates y with E y = 0 mod Z^2
    E = np.array(CAT)
    cands = [np.array([a, b]) / 2 for a in range(2) for b in range(2)]
    expected = sorted(tuple(c) for c in cands if np.allclose(np.mod(E @ c, 1.0), 0))
    got = sorted(tuple(np.round(p.point, 12)) for p in preimages(make_linear(CAT), [0.0, 0.0]))
    assert got == expected == [(0.0, 0.0), (0.5, 0.5)]


def test_shear_single_preimage():
    f = make_shear(0.3)
    (p,) = preimages(f, [0.2, 0.7])
    assert p.label == 1
    assert torus_distance(f(p.point), [0.2, 0.7]) < 1e-14
    assert np.allclose(p.point, [np.mod(0.2 - 0.3 * np.sin(2 * np.pi * 0.7), 1.0), 0.7])


@pytest.mark.parametrize("f", MAPS, ids=lambda f: f.kind)
@settings(max_examples=20, deadline=None)
@given(x=st.floats(0, 1, exclude_max=True), y=st.floats(0, 1, exclude_max=True))
def test_preimage_residual(f, x, y):
    ps = preimages(f, [x, y])
    assert [p.label for p in ps] == list(range(1, f.degree + 1))
    assert np.max(torus_distance(f(np.array([p.point for p in ps])), [x, y])) < 1e-10


def test_tree_small_cases(E):
    t = preimage_tree(E, [0.3, 0.1], 0)
    assert t.leaves.shape == (1, 2) and np.array_equal(t.leaf_cocycles[0], np.eye(2))
    t = preimage_tree(E, [0.3, 0.1], 10)
    assert t.leaves.shape == (1024, 2)
    x = t.leaves
    for _ in range(10):
        x = E(x)
    assert np.max(torus_distance(x, [0.3, 0.1])) < 1e-10


@pytest.mark.parametrize("f", MAPS, ids=lambda f: f.kind)
def test_tree_cocycles_match_edge_products(f):
    t = preimage_tree(f, rng.random(2), 6)
    d = f.degree
    for i in rng.integers(0, d**6, 20):
        M = np.eye(2)
        det = 1.0
        idx = [int(i) // d ** (6 - k) for k in range(1, 7)]
        for k, j in enumerate(idx, start=1):
            J = f.jacobian(t.levels[k][j])
            M = M @ J
            det *= np.linalg.det(J)
        assert np.max(np.abs(M - t.leaf_cocycles[i])) < 1e-9 * max(1.0, np.max(np.abs(M)))
        # adjugate over the product of step determinants: no cancellation
        inv = np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]]) / det
        assert np.max(np.abs(t.leaf_inverses[i] - inv)) < 1e-9 * np.max(np.abs(inv))
    assert np.allclose(t.cocycles(6), t.leaf_cocycles)


def test_tree_internal_structure(sandwich):
    t = preimage_tree(sandwich, [0.4, 0.9], 4)
    for k in range(1, 5):
        kids = t.levels[k]
        parents = t.levels[k - 1][np.arange(len(kids)) // 2]
        assert np.max(torus_distance(sandwich(kids), parents)) < 1e-10
        assert [t.node_label(k, i) for i in range(2)] == [1, 2]
    assert t.path_labels(5) == (1, 2, 1, 2)


def test_tree_capacity(E):
    with pytest.raises(CapacityError) as exc:
        preimage_tree(E, [0.1, 0.1], 12, node_cap=1000)
    assert "2^12" in str(exc.value)


def test_tree_csv(tmp_path, E):
    path = tmp_path / "tree.csv"
    preimage_tree(E, [0.1, 0.2], 3).to_csv(path, v=(0.0, 1.0))
    import csv

    rows = list(csv.reader(path.open()))
    assert rows[0] == ["x", "y", "word", "log_norm_inv_cocycle_v"] and len(rows) == 9
    assert rows[1][2] == "1,1,1" and rows[-1][2] == "2,2,2"


@pytest.mark.parametrize("f", MAPS, ids=lambda f: f.kind)
def test_backward_orbit_consistency(f):
    for w in ("bernoulli", "jacobian"):
        o = sample_backward_orbit(f, [0.21, 0.77], 200, w, seed=3)
        assert np.max(torus_distance(f(o.points[1:]), o.points[:-1])) < 1e-10
        assert np.allclose(o.weights.sum(axis=1), 1.0)
        assert np.allclose(o.steps, f.jacobian(o.points[1:]))


def test_backward_orbit_deterministic(g_eps):
    a = sample_backward_orbit(g_eps, [0.1, 0.2], 500, "jacobian", seed=9)
    b = sample_backward_orbit(g_eps, [0.1, 0.2], 500, "jacobian", seed=9)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.branches, b.branches)


def test_constant_jacobian_weights_coincide(E):
    a = sample_backward_orbit(E, [0.1, 0.2], 300, "jacobian", seed=4)
    b = sample_backward_orbit(E, [0.1, 0.2], 300, "bernoulli", seed=4)
    assert np.allclose(a.weights, 0.5)
    assert np.array_equal(a.branches, b.branches)


def test_branch_frequencies(E):
    # binomial 5 sigma: |freq - 1/2| <= 5 sqrt(1/4 / n)
    n = 10_000
    o = sample_backward_orbit(E, [0.3, 0.3], n, "bernoulli", seed=1)
    freq = np.mean(o.branches == 1)
    assert abs(freq - 0.5) <= 5 * np.sqrt(0.25 / n)


def test_jacobian_weighted_frequencies(g_eps):
    # one step from a point whose fiber has unequal weights, many independent orbits
    from torusendo.preimage import backward_steps

    x = np.mod(g_eps.lift(np.array([0.1, 0.4])), 1.0)
    w = branch_weights(g_eps, preimage_points(g_eps, x)[None], "jacobian")[0]
    assert np.ptp(w) > 1e-3
    N = 200_000
    _, labels, _, _ = next(backward_steps(g_eps, np.broadcast_to(x, (N, 2)), 1, "jacobian", np.random.default_rng(2)))
    freq = np.bincount(labels, minlength=3)[1:] / N
    assert np.all(np.abs(freq - w) <= 5 * np.sqrt(w * (1 - w) / N))


def test_invalid_weighting():
    f = Uncompensated()
    with pytest.raises(InvalidWeightingError):
        sample_backward_orbit(f, [0.1, 0.2], 5, "jacobian", seed=0)
    with pytest.raises(ValueError):
        sample_backward_orbit(make_linear(CAT), [0.1, 0.2], 5, "uniform", seed=0)
    with pytest.raises(ValueError):
        sample_backward_orbit(make_linear(CAT), [0.1, 0.2], 0)


def test_orbit_from_branches(sandwich):
    o = backward_orbit_from_branches(sandwich, [0.5, 0.5], [1, 2, 2, 1])
    assert list(o.branches) == [1, 2, 2, 1]
    assert np.max(torus_distance(sandwich(o.points[1:]), o.points[:-1])) < 1e-10
    with pytest.raises(ValueError):
        backward_orbit_from_branches(sandwich, [0.5, 0.5], [3])
