import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import CAT, Uncompensated
from torusendo.errors import PreconditionError
from torusendo.lattice import IntMatrix2
from torusendo.maps import make_linear, make_shear
from torusendo.perturbation import (
    BUMP_SLOPE_CONSTANT,
    check_conservative_1d,
    check_conservative_2d,
    det_spread,
    folding_entropy_leb,
    make_bump,
    make_g_epsilon,
    make_s_epsilon,
)

rng = np.random.default_rng(11)
E = IntMatrix2.from_rows(CAT)

# log 2 - F_Leb(g_eps) from the 1024^2 midpoint run, frozen after the
# independent 1-D quadrature below agreed to < 1e-8
PINNED_GAPS = {0.005: 3.044695046838797e-04, 0.01: 1.2407511248303527e-03, 0.02: 5.407597199455605e-03}


def test_slope_constant():
    t = np.linspace(-1 + 1e-9, 1 - 1e-9, 2_000_001)
    u = 1 - t * t
    h1 = -2 * t * np.exp(1 - 1 / u) / u**2
    assert 2 * np.max(np.abs(h1)) == pytest.approx(BUMP_SLOPE_CONSTANT, rel=1e-9)


def test_bump_properties():
    b = make_bump(0.3, 0.1, 0.02)
    assert b.value(0.3) == pytest.approx(0.02)
    assert b.value(0.3 + 0.05) == 0.0 and b.value(0.3 - 0.05) == 0.0
    assert b.value(0.9) == 0.0
    props = b.properties()
    assert props["bounded"] and props["positive_at_center"] and props["compact_support"]
    xs = np.linspace(0.2, 0.4, 100_000)
    assert np.max(np.abs(b.derivative(xs))) <= b.max_slope * (1 + 1e-9)


def test_bump_slope_property_needs_small_height():
    # |phi'| < eps holds exactly when delta > C0
    assert not make_bump(0.3, 0.1, 0.02).properties()["slope_below_height"]
    wide = make_bump(0.5, 4.5, 0.02)
    assert wide.properties()["slope_below_height"]


def test_bump_rejections():
    with pytest.raises(ValueError):
        make_bump(0.3, 0.1, 0.2)
    with pytest.raises(ValueError):
        make_bump(0.3, 0.1, -0.01)
    with pytest.raises(ValueError):
        make_bump(0.3, 0.0, 0.0)


def test_s_zero_is_rk():
    x = rng.random(1000)
    for k in (2, 3, 5):
        S = make_s_epsilon(k)
        assert np.array_equal(S.lift(x), k * x)


def test_s_outside_supports():
    S = make_s_epsilon(3, eps=0.02)
    x = rng.random(20_000)
    off = (np.abs(x - S.p) > S.delta / 2) & (np.abs(x - S.p - 1 / 3) > S.delta / 2)
    assert np.allclose(S(x[off]), np.mod(3 * x[off], 1.0), atol=1e-15)


@pytest.mark.parametrize("k", [2, 3, 5])
def test_t_conjugacy(k):
    S = make_s_epsilon(k, eps=0.005)
    z = S.p + np.linspace(-S.delta / 2, S.delta / 2, 1001)
    assert np.max(np.abs(np.mod(S.lift(S.T(z)) - S.lift(z) + 0.5, 1.0) - 0.5)) < 1e-10


def test_s_rejects_wide_support():
    with pytest.raises(ValueError):
        make_s_epsilon(2, delta=0.3)


@pytest.mark.parametrize("k", [2, 3, 5])
@pytest.mark.parametrize("eps", [0.0, 0.005, 0.02])
def test_conservative_1d(k, eps):
    S = make_s_epsilon(k, eps=eps)
    assert check_conservative_1d(S, rng.random(1000)) < 1e-9
    # fibers meeting the supports
    y = np.mod(S.lift(S.p + np.linspace(-S.delta / 2, S.delta / 2, 500)), 1.0)
    assert check_conservative_1d(S, y) < 1e-9


def test_conservative_1d_trivial_outside():
    S = make_s_epsilon(2, eps=0.02)
    # y = 0.6 has preimages 0.3 and 0.8, both away from the supports
    z = S.preimages(np.array([0.6]))
    assert np.allclose(np.sort(z.ravel()), [0.3, 0.8], atol=1e-15)
    assert np.array_equal(1 / S.derivative(z), [[0.5, 0.5]])


def test_branch_inverse_residual():
    S = make_s_epsilon(2, eps=0.02)
    y = rng.uniform(-3, 3, 5000)
    assert np.max(np.abs(S.lift(S.lift_inverse(y)) - y)) < 1e-12
    assert S.lift_inverse(np.float64(0.3)).shape == ()


def test_g_zero_is_linear():
    g = make_g_epsilon(E, 0.0)
    p = rng.random((1000, 2))
    assert np.max(np.abs(g.lift(p) - make_linear(CAT).lift(p))) < 1e-12


def test_g_smith_data():
    g = make_g_epsilon(E, 0.02)
    assert (g.degree, g.tau1, g.tau2) == (2, 2, 1)


def test_g_rejects_degree_one():
    with pytest.raises(ValueError):
        make_g_epsilon(IntMatrix2.identity(), 0.01)


def _random_matrices(n, seed=3):
    r = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        M = IntMatrix2(*(int(v) for v in r.integers(-4, 5, 4)))
        if 2 <= M.degree <= 12:
            out.append(M)
    return out


@pytest.mark.parametrize("M", [E] + _random_matrices(5), ids=lambda M: str(M.tolist()))
def test_conservative_2d(M):
    g = make_g_epsilon(M, 0.01)
    assert check_conservative_2d(g, rng.random((1000, 2))) < 1e-9


def test_conservative_2d_trivial_cases():
    assert check_conservative_2d(make_g_epsilon(E, 0.0), rng.random((100, 2))) < 1e-15
    g = make_g_epsilon(E, 0.02)
    # the map is conservative but |det| is not constant
    lo, hi = det_spread(g)
    assert hi - lo > 0
    assert det_spread(make_g_epsilon(E, 0.0)) == (2.0, 2.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.025), st.floats(0, 1), st.floats(0, 1))
def test_conservative_2d_property(eps, x, y):
    g = make_g_epsilon(E, eps)
    assert check_conservative_2d(g, [[x, y]]) < 1e-9


def test_folding_entropy_constant_jacobian():
    F, _ = folding_entropy_leb(make_linear(CAT), m=64)
    assert F == pytest.approx(np.log(2), abs=1e-12)


def test_folding_entropy_rejects_non_conservative():
    f = Uncompensated()
    assert check_conservative_2d(f, rng.random((50, 2))) > 1e-3
    with pytest.raises(PreconditionError):
        folding_entropy_leb(f, m=16)


def _gap_by_quad(eps):
    """Independent route: V preserves Lebesgue, so F = log tau2 + int_0^1 log S'(x) dx."""
    g = make_g_epsilon(E, eps)
    S = g.circle
    fn = lambda x: float(np.log(S.derivative(np.array([x]))[0]))
    h = S.delta / 2
    cuts = sorted({0.0, 1.0, *(c + o for c in (S.p, S.p + 1 / S.k) for o in (-h, 0.0, h))})
    val = sum(quad(fn, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)[0] for a, b in zip(cuts, cuts[1:]))
    return np.log(2) - (val + np.log(g.tau2))


@pytest.mark.parametrize("eps", [0.005, 0.01, 0.02])
def test_folding_entropy_gap_two_routes(eps):
    F, err = folding_entropy_leb(make_g_epsilon(E, eps), m=1024)
    gap = np.log(2) - F
    assert gap == pytest.approx(PINNED_GAPS[eps], rel=1e-9)
    assert abs(gap - _gap_by_quad(eps)) < 1e-7


def test_folding_entropy_jensen():
    g = make_g_epsilon(E, 0.02)
    F, _ = folding_entropy_leb(g, m=256)
    c = (np.arange(256) + 0.5) / 256
    pts = np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1)
    assert F <= np.log(np.mean(np.abs(g.det_jacobian(pts)))) + 1e-15
