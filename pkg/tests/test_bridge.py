import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnl.bridge import PiecewiseCurve, PiecewiseSurface, extend_params, recovery_sequence, sample_params, sup_distance
from dnl.continuous import ConstantCurve, FunctionCurve, FunctionSurface, constant_params, smooth_params
from dnl.discrete import DiscreteParams, flip, tri_index
from dnl.errors import InvalidInputError


@pytest.mark.parametrize("kind", ["constant", "linear"])
def test_constant_nodes_give_constant_curve(kind):
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    c = PiecewiseCurve(kind, np.broadcast_to(M, (6, 2, 2)))
    t = np.linspace(0, 1, 37)
    np.testing.assert_array_equal(c(t), np.broadcast_to(M, (37, 2, 2)))
    assert not c.derivative(t).any()


def test_linear_midpoint():
    assert PiecewiseCurve("linear", [0.0, 1.0, 0.0])(0.25) == pytest.approx(0.5)
    assert PiecewiseCurve("linear", [0.0, 1.0, 0.0]).derivative(0.75) == pytest.approx(-2.0)


def test_bilinear_hand_value():
    g = flip([[1.0], [2.0, 3.0]])
    np.testing.assert_array_equal(g, [[1, 1, 2], [1, 1, 2], [2, 2, 3]])
    s = PiecewiseSurface("bilinear", g)
    # the four corners of cell (2, 2) are 1, 2, 2, 3 and the point is its center
    assert s(0.75, 0.75) == pytest.approx(2.0, abs=1e-15)
    assert s(0.5, 1.0) == pytest.approx(2.0, abs=1e-15)


def test_constant_extension_cells_are_right_closed():
    c = PiecewiseCurve("constant", np.arange(5.0))
    assert c(0.0) == 0.0
    assert c(1e-12) == 0.0  # snaps onto the node
    assert c(0.01) == 1.0
    assert c(0.25) == 1.0
    assert c(0.26) == 2.0
    assert c(1.0) == 4.0
    with pytest.raises(InvalidInputError):
        c(1.5)


def test_bad_kinds():
    with pytest.raises(InvalidInputError):
        PiecewiseCurve("cubic", [0.0, 1.0])
    with pytest.raises(InvalidInputError):
        PiecewiseSurface("linear", np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        extend_params(DiscreteParams.zeros(1, 1), "spline")


@pytest.mark.parametrize("mode", ["constant", "linear"])
def test_extensions_interpolate_nodes_exhaustively(mode):
    r = np.random.default_rng(0)
    for L in range(1, 9):
        p = DiscreteParams.random(2, L, r, 1.0)
        q = extend_params(p, mode)
        nodes = np.arange(L + 1) / L
        np.testing.assert_array_equal(q.U(nodes), p.U)
        np.testing.assert_array_equal(q.b(nodes), p.b)
        t, s = np.meshgrid(nodes, nodes, indexing="ij")
        np.testing.assert_array_equal(q.W(t, s), flip(p.W))
        np.testing.assert_array_equal(q.c(t, s), flip(p.c))


@given(seed=st.integers(0, 2**31), L=st.integers(1, 12))
def test_bilinear_surface_symmetry(seed, L):
    r = np.random.default_rng(seed)
    s = PiecewiseSurface("bilinear", flip(r.normal(size=(L * (L + 1) // 2, 2, 2))))
    t, u = r.uniform(0, 1, (2, 50))
    assert np.abs(s(t, u) - s(u, t)).max() <= 1e-14


def test_constant_theta_sampled_and_recovered_exactly():
    r = np.random.default_rng(1)
    blocks = {k: r.normal(size=(2, 2)) for k in ("T1", "T2", "T3", "U", "V", "W")}
    vecs = {k: r.normal(size=2) for k in ("a", "b", "c")}
    p = constant_params(2, **blocks, **vecs)
    for op in (sample_params, recovery_sequence):
        q = op(p, 5)
        np.testing.assert_allclose(q.U, np.broadcast_to(blocks["U"], (6, 2, 2)), rtol=1e-14)
        np.testing.assert_allclose(q.T[2], np.broadcast_to(blocks["T3"], (6, 2, 2)), rtol=1e-14)
        np.testing.assert_allclose(q.W, np.broadcast_to(blocks["W"], (15, 2, 2)), rtol=1e-14)
        np.testing.assert_allclose(q.c, np.broadcast_to(vecs["c"], (15, 2)), rtol=1e-14)


def test_cell_mean_of_linear_surface():
    W = FunctionSurface(lambda t, s: (t + s)[..., None, None], lambda t, s: np.ones_like(t)[..., None, None],
                        lambda t, s: np.ones_like(t)[..., None, None], (1, 1))
    p = constant_params(1).replace(W=W)
    q = sample_params(p, 2)
    assert q.W[tri_index(1, 1), 0, 0] == pytest.approx(0.5, abs=1e-15)
    assert q.W[tri_index(2, 1), 0, 0] == pytest.approx(1.0, abs=1e-15)
    assert q.W[tri_index(2, 2), 0, 0] == pytest.approx(1.5, abs=1e-15)


def test_recovery_end_windows():
    # U(t) = t: cell means are (l - 1/2)/L, interior nodes average two cells
    U = FunctionCurve(lambda t: t[..., None, None], lambda t: np.ones_like(t)[..., None, None], (1, 1))
    q = recovery_sequence(constant_params(1).replace(U=U), 4)
    np.testing.assert_allclose(q.U[:, 0, 0], [0.125, 0.25, 0.5, 0.75, 0.875], atol=1e-15)


def test_sup_distance_examples():
    p = smooth_params(2, seed=3)
    assert sup_distance(p, p) == 0.0
    shifted = p.replace(U=ConstantCurve(np.zeros((2, 2))))
    base = p.replace(U=ConstantCurve(0.3 * np.eye(2)))
    assert sup_distance(base, shifted) == pytest.approx(0.3, rel=1e-12)


def _derivative_bound(p, probes=65):
    g = np.linspace(0, 1, probes)
    t, s = np.meshgrid(g, g, indexing="ij")
    worst = max(np.abs(c.derivative(g)).max() for c in p.curves().values())
    for surf in p.surfaces().values():
        worst = max(worst, np.abs(surf.dt(t, s)).max() + np.abs(surf.ds(t, s)).max())
    return worst


def test_sampled_extension_within_modulus_estimate():
    p = smooth_params(2, seed=7)
    L = 16
    # entrywise derivative bound, times sqrt(n) for block norms, over the worst
    # node offset (one cell for the boundary rows of the flipped grid)
    omega = np.sqrt(2) * _derivative_bound(p) * 2.0 / L
    assert sup_distance(extend_params(sample_params(p, L)), p, grid=128) <= omega


def test_sampled_extension_distance_halves():
    p = smooth_params(2, seed=7)
    d = [sup_distance(extend_params(sample_params(p, L)), p, grid=128) for L in (8, 16, 32)]
    for a, b in zip(d, d[1:]):
        assert 0.3 < b / a < 0.7


def test_recovery_extension_distance_monotone():
    p = smooth_params(2, seed=11)
    d = [sup_distance(extend_params(recovery_sequence(p, L)), p, grid=128) for L in (4, 8, 16, 32, 64)]
    for a, b in zip(d, d[1:]):
        assert b <= 1.05 * a
    assert d[-1] < 0.1 * d[0]


def test_invalid_levels():
    p = constant_params(1)
    with pytest.raises(InvalidInputError):
        sample_params(p, 0)
    with pytest.raises(InvalidInputError):
        recovery_sequence(p, 0)
