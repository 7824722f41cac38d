import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnl.discrete import (
    DiscreteParams, NetConfig, RepeatedSingularValueWarning, flip, forward, from_json, objective, param_norm,
    reg1, reg3, reg_discrete, reg_discrete_grad, state_bound, to_json, tri_index, tri_row,
)
from dnl.errors import InvalidInputError, NumericalOverflowError
from dnl.training import Dataset, LossSpec
from oracles import flip_literal, forward_literal, reg_loop, unpack_triangle

ACTS = ["relu", "tanh", "identity"]
KERNELS = ["kronecker", "scaled-dot-softmax", "gaussian-softmax"]


def hand_params(n=2):
    I = np.eye(n)
    p = DiscreteParams.zeros(n, 1)
    return p.replace(T=np.broadcast_to(I, (3, 2, n, n)), U=np.broadcast_to(I, (2, n, n)),
                     V=np.broadcast_to(I, (2, n, n)), W=I[None])


def as_lists(p):
    L = p.L
    W = unpack_triangle(p.W.tolist(), L)
    c = unpack_triangle(p.c.tolist(), L)
    return p.T.tolist(), p.U.tolist(), p.a.tolist(), p.V.tolist(), p.b.tolist(), W, c


def test_zero_output_map_kills_everything(rng):
    p = DiscreteParams.random(3, 5, rng, 1.0).replace(V=np.zeros((6, 3, 3)), b=np.zeros((6, 3)))
    assert not forward(NetConfig("gaussian-softmax", "tanh"), p, rng.normal(size=3)).states.any()


def test_one_layer_hand_example():
    x = forward(NetConfig("kronecker", "identity"), hand_params(), [1.0, 0.0]).states
    np.testing.assert_array_equal(x, [[1.0, 0.0], [2.0, 0.0]])


@pytest.mark.parametrize("kernel", KERNELS)
@pytest.mark.parametrize("act", ACTS)
def test_forward_matches_literal_transcription(kernel, act):
    r = np.random.default_rng(4)
    p = DiscreteParams.random(3, 4, r, 0.8)
    d = r.uniform(-1, 1, 3)
    got = forward(NetConfig(kernel, act), p, d).states
    T, U, a, V, b, W, c = as_lists(p)
    ref = forward_literal(kernel, act, T, U, a, V, b, W, c, d.tolist())
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-14)


def test_memoryless_kronecker_identity(rng):
    L, n = 6, 3
    p = DiscreteParams.random(n, L, rng, 1.0)
    p = p.replace(W=np.zeros_like(p.W), c=rng.normal(size=p.c.shape) * 0)
    d = rng.normal(size=n)
    x = forward(NetConfig("kronecker", "identity"), p, d).states
    for l in range(L + 1):
        ref = p.V[l] @ (p.U[l] @ (p.T[2, l] @ d) + p.a[l]) + p.b[l]
        np.testing.assert_allclose(x[l], ref, rtol=1e-14, atol=1e-15)


def test_param_norm_examples(rng):
    assert param_norm(DiscreteParams.zeros(2, 3)) == 0.0
    U = np.zeros((4, 2, 2))
    U[0] = 3 * np.eye(2)
    assert param_norm(DiscreteParams.zeros(2, 3).replace(U=U)) == pytest.approx(3.0, rel=1e-12)
    p = DiscreteParams.random(3, 4, rng, 1.0)
    brute = max(
        [np.linalg.norm(m, 2) for blk in (p.T.reshape(-1, 3, 3), p.U, p.V, p.W) for m in blk]
        + [np.linalg.norm(v) for blk in (p.a, p.b, p.c) for v in blk]
    )
    assert param_norm(p) == pytest.approx(brute, rel=1e-10)


def test_flip_examples():
    g = flip([[1.0], [2.0, 3.0], [4.0, 5.0, 6.0]])
    np.testing.assert_array_equal(g, [[1, 1, 2, 4], [1, 1, 2, 4], [2, 2, 3, 5], [4, 4, 5, 6]])
    np.testing.assert_array_equal(flip([[7.0]]), np.full((2, 2), 7.0))


def test_flip_matches_rules_and_round_trips(rng):
    for L in range(1, 9):
        rows = [list(rng.normal(size=l)) for l in range(1, L + 1)]
        g = flip(rows)
        np.testing.assert_array_equal(g, flip_literal(rows))
        np.testing.assert_array_equal(g, g.T)
        for l in range(1, L + 1):
            np.testing.assert_array_equal(g[l, 1:l + 1], rows[l - 1])


def test_flip_rejects_ragged():
    with pytest.raises(InvalidInputError):
        flip([[1.0], [2.0]])
    with pytest.raises(InvalidInputError):
        flip(np.zeros(4))


def test_reg_constant_sequences(rng):
    U = rng.normal(size=(3, 3))
    s = np.linalg.norm(U, 2)
    assert reg1(np.broadcast_to(U, (9, 3, 3))) == pytest.approx(s**2, rel=1e-12)
    assert reg3(np.broadcast_to(U, (6, 6, 3, 3))) == pytest.approx(s**3, rel=1e-12)


def test_reg_hand_sum():
    U = (np.arange(5) / 4.0).reshape(5, 1, 1)
    assert reg1(U) == pytest.approx(1.46875, rel=1e-14)


def test_reg_discrete_matches_loop():
    r = np.random.default_rng(9)
    L, n = 3, 2
    p = DiscreteParams.random(n, L, r, 1.0)
    Wrows = [[p.W_block(l, k).tolist() for k in range(1, l + 1)] for l in range(1, L + 1)]
    crows = [[p.c_block(l, k).tolist() for k in range(1, l + 1)] for l in range(1, L + 1)]
    ref = reg_loop((p.T.tolist(), p.U.tolist(), p.a.tolist(), p.V.tolist(), p.b.tolist(),
                    flip_literal(Wrows), flip_literal(crows)), L)
    assert reg_discrete(p) == pytest.approx(ref, rel=1e-10)


def test_reg_grid_is_transpose_invariant(rng):
    g = flip(rng.normal(size=(10, 2, 2)))
    assert reg3(g) == reg3(g.swapaxes(0, 1))


@pytest.mark.parametrize("norm", ["spectral", "frobenius"])
def test_reg_gradient_matches_finite_differences(norm):
    r = np.random.default_rng(3)
    p = DiscreteParams.random(2, 3, r, 1.0)
    value, g = reg_discrete_grad(p, norm)
    assert value == pytest.approx(reg_discrete(p, norm), rel=1e-12)
    v, gv = p.to_vector(), g.to_vector()
    h = 1e-5
    fd = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        fd[i] = (reg_discrete(DiscreteParams.from_vector(v + e, 2, 3), norm)
                 - reg_discrete(DiscreteParams.from_vector(v - e, 2, 3), norm)) / (2 * h)
    np.testing.assert_allclose(gv, fd, atol=1e-5 * np.abs(fd).max())


def test_repeated_sigma_warns():
    p = DiscreteParams.zeros(2, 1).replace(U=np.broadcast_to(np.eye(2), (2, 2, 2)))
    with pytest.warns(RepeatedSingularValueWarning):
        reg_discrete_grad(p)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        reg_discrete_grad(p, "frobenius")


def test_state_bound_zero_and_identity_scale():
    cfg = NetConfig("kronecker", "tanh")
    p = DiscreteParams.zeros(2, 4)
    assert state_bound(cfg, p, [0.3, -0.2]) == 0.0
    I = np.eye(2)
    p = DiscreteParams(T=np.broadcast_to(I, (3, 5, 2, 2)), U=np.broadcast_to(I, (5, 2, 2)), a=np.zeros((5, 2)),
                       V=np.broadcast_to(I, (5, 2, 2)), b=np.zeros((5, 2)),
                       W=np.broadcast_to(I, (10, 2, 2)), c=np.zeros((10, 2)))
    assert state_bound(cfg, p, np.zeros(2)) == pytest.approx(3 * math.e + 3, rel=1e-12)


@pytest.mark.parametrize("kernel", KERNELS)
def test_state_bound_dominates_states(kernel, rng):
    for act in ACTS:
        cfg = NetConfig(kernel, act)
        p = DiscreteParams.random(3, 8, rng, 0.6)
        d = rng.uniform(-1, 1, 3)
        x = forward(cfg, p, d).states
        assert np.linalg.norm(x, axis=1).max() <= state_bound(cfg, p, d)


def test_overflow_names_layer():
    n, L = 2, 3
    p = hand_params(n)
    big = DiscreteParams.zeros(n, L).replace(
        T=np.broadcast_to(np.eye(n), (3, L + 1, n, n)), U=np.broadcast_to(np.eye(n), (L + 1, n, n)),
        V=np.broadcast_to(1e200 * np.eye(n), (L + 1, n, n)), W=np.broadcast_to(np.eye(n), (6, n, n)))
    with pytest.raises(NumericalOverflowError) as ei:
        forward(NetConfig("kronecker", "identity"), big, [1.0, 0.0])
    assert ei.value.layer == 1
    assert p.L == 1


def test_json_round_trip(rng):
    for L in (1, 2, 5):
        p = DiscreteParams.random(3, L, rng, 1.0)
        q = from_json(to_json(p))
        assert q.L == L and q.n == 3
        np.testing.assert_array_equal(q.to_vector(), p.to_vector())
    with pytest.raises(InvalidInputError):
        from_json('{"format": "other"}')


def test_vector_round_trip_and_shapes(rng):
    p = DiscreteParams.random(2, 4, rng)
    np.testing.assert_array_equal(DiscreteParams.from_vector(p.to_vector(), 2, 4).to_vector(), p.to_vector())
    with pytest.raises(InvalidInputError):
        DiscreteParams.from_vector(np.zeros(3), 2, 4)
    with pytest.raises(InvalidInputError):
        p.replace(U=np.zeros((4, 2, 2)))
    assert p.tau == 0.25
    assert tri_index(1, 1) == 0 and tri_index(3, 2) == 4
    assert tri_row(3) == slice(3, 6)


def test_objective_examples():
    cfg = NetConfig("kronecker", "identity")
    zero = DiscreteParams.zeros(2, 3)
    data = Dataset(np.ones((4, 2)), np.zeros((4, 2)))
    assert objective(cfg, zero, data, LossSpec("mse")) == 0.0
    p = hand_params()
    one = Dataset([[1.0, 0.0]], [[2.0, 0.0]])
    # three T sequences, U, V contribute 1 each and the single W block another 1
    assert objective(cfg, p, one, LossSpec("mse"), reg_weight=0.0) == 0.0
    assert objective(cfg, p, one, LossSpec("mse")) == pytest.approx(6.0, rel=1e-12)


@given(seed=st.integers(0, 2**31), block=st.sampled_from(["T", "U", "a", "V", "b", "W", "c"]))
def test_states_depend_continuously_on_parameters(seed, block):
    r = np.random.default_rng(seed)
    cfg = NetConfig("scaled-dot-softmax", "tanh")
    p = DiscreteParams.random(3, 4, r, 0.8)
    d = r.uniform(-1, 1, 3)
    direction = r.normal(size=getattr(p, block).shape)
    x0 = forward(cfg, p, d).states
    slopes = []
    for delta in (1e-3, 1e-4, 1e-5):
        q = p.replace(**{block: getattr(p, block) + delta * direction})
        slopes.append(np.abs(forward(cfg, q, d).states - x0).max() / delta)
    assert max(slopes) <= 2 * min(slopes) + 1e-6
    assert max(slopes) < 1e3
