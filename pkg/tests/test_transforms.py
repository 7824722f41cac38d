import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnl.errors import InvalidInputError
from dnl.transforms import (
    KernelFamily, TransformParams, apply_transform, apply_transform_batch, growth_bound, lipschitz_bound,
    transform_vjp,
)
from oracles import transform_loop

KERNELS = list(KernelFamily)


def test_kronecker_identity_value_map(rng):
    z = rng.normal(size=4)
    I = np.eye(4)
    np.testing.assert_array_equal(apply_transform(KernelFamily.KRONECKER, TransformParams(I, I, I), z), z)


def test_kronecker_is_plain_linear_map(rng):
    T = rng.normal(size=(3, 5, 5))
    z = rng.normal(size=5)
    # equal up to summation order inside the matrix-vector product
    got = apply_transform(KernelFamily.KRONECKER, TransformParams(*T), z)
    assert np.max(np.abs(got - T[2] @ z)) <= 4 * np.finfo(float).eps * np.abs(T[2]).dot(np.abs(z)).max()


def test_single_position_softmax():
    p = TransformParams([[3.0]], [[-7.0]], [[2.5]])
    assert apply_transform(KernelFamily.SCALED_DOT, p, [1.3])[0] == pytest.approx(2.5 * 1.3, rel=1e-15)


def test_gaussian_seed11_matches_double_loop():
    r = np.random.default_rng(11)
    T = r.uniform(-1, 1, (3, 3, 3))
    z = r.uniform(-1, 1, 3)
    got = apply_transform(KernelFamily.GAUSSIAN, TransformParams(*T), z)
    np.testing.assert_allclose(got, transform_loop("gaussian-softmax", *T.tolist(), z.tolist()), rtol=1e-13)


@pytest.mark.parametrize("kernel", KERNELS)
def test_batch_matches_double_loop(kernel, rng):
    for n in (1, 2, 4, 6):
        T = rng.uniform(-1, 1, (3, n, n))
        Z = rng.uniform(-2, 2, (5, n))
        got = apply_transform_batch(kernel, *T, Z)
        for z, row in zip(Z, got):
            np.testing.assert_allclose(row, transform_loop(kernel.value, *T.tolist(), z.tolist()),
                                       rtol=1e-12, atol=1e-14)


def test_growth_examples():
    I4, I2 = np.eye(4), np.eye(2)
    assert growth_bound(KernelFamily.KRONECKER, TransformParams(I2, I2, 2 * I2)) == pytest.approx(2.0)
    assert growth_bound(KernelFamily.SCALED_DOT, TransformParams(I4, I4, I4)) == pytest.approx(2.0)
    Z = np.zeros((3, 3))
    assert growth_bound(KernelFamily.GAUSSIAN, TransformParams(np.eye(3), np.eye(3), Z)) == 0.0


def test_lipschitz_examples(rng):
    I3, Z3, Z4 = np.eye(3), np.zeros((3, 3)), np.zeros((4, 4))
    assert lipschitz_bound(KernelFamily.KRONECKER, TransformParams(I3, I3, I3), rng.normal(size=3),
                           np.zeros(3)) == pytest.approx(1.0)
    z2 = np.array([2.0, 0.0, 0.0, 0.0])
    assert lipschitz_bound(KernelFamily.GAUSSIAN, TransformParams(Z4, Z4, Z4), rng.normal(size=4),
                           z2) == pytest.approx(4.0)
    assert lipschitz_bound(KernelFamily.SCALED_DOT, TransformParams(Z3, Z3, Z3), rng.normal(size=3),
                           np.zeros(3)) == 0.0


@pytest.mark.parametrize("kernel", [KernelFamily.SCALED_DOT, KernelFamily.GAUSSIAN])
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-50, 50))
def test_row_shift_invariance(kernel, seed, shift):
    # adding a constant to every logit of a row leaves the normalized sum unchanged
    r = np.random.default_rng(seed)
    n = 4
    T = r.uniform(-1, 1, (3, n, n))
    z = r.uniform(-1, 1, n)
    if kernel is KernelFamily.SCALED_DOT:
        logits = np.outer(T[0] @ z, T[1] @ z) / math.sqrt(n)
    else:
        logits = np.outer(z, z)
    v = T[2] @ z

    def normalized(S):
        E = np.exp(S - S.max(axis=1, keepdims=True))
        return (E @ v) / E.sum(axis=1)

    base = apply_transform(kernel, TransformParams(*T), z)
    np.testing.assert_allclose(normalized(logits), base, atol=1e-12)
    np.testing.assert_allclose(normalized(logits + shift), base, atol=1e-12)


@pytest.mark.parametrize("kernel", KERNELS)
def test_large_states_do_not_overflow(kernel):
    n = 3
    T = np.full((3, n, n), 1.0)
    z = np.array([300.0, -200.0, 250.0])
    out = apply_transform(kernel, TransformParams(*T), z)
    assert np.all(np.isfinite(out))


@pytest.mark.parametrize("kernel", KERNELS)
def test_vjp_matches_finite_differences(kernel, rng):
    n, m = 3, 4
    T = rng.uniform(-1, 1, (3, n, n))
    Z = rng.uniform(-1, 1, (m, n))
    G = rng.normal(size=(m, n))
    grads = transform_vjp(kernel, *T, Z, G)

    def f(T, Z):
        return float(np.sum(G * apply_transform_batch(kernel, *T, Z)))

    h = 1e-6
    for j in range(3):
        fd = np.zeros((n, n))
        for idx in np.ndindex(n, n):
            E = np.zeros_like(T)
            E[(j,) + idx] = h
            fd[idx] = (f(T + E, Z) - f(T - E, Z)) / (2 * h)
        np.testing.assert_allclose(grads[j], fd, atol=1e-8)
    fd = np.zeros_like(Z)
    for idx in np.ndindex(*Z.shape):
        E = np.zeros_like(Z)
        E[idx] = h
        fd[idx] = (f(T, Z + E) - f(T, Z - E)) / (2 * h)
    np.testing.assert_allclose(grads[3], fd, atol=1e-8)


def test_envelopes_hold_on_random_instances(rng):
    for kernel in KERNELS:
        for n in (2, 3, 4, 8):
            for _ in range(25):
                T = rng.uniform(-1, 1, (3, n, n))
                T2 = rng.uniform(-1, 1, (3, n, n))
                z, z2 = rng.uniform(-1, 1, (2, n))
                p, q = TransformParams(*T), TransformParams(*T2)
                Az = apply_transform(kernel, p, z)
                assert np.linalg.norm(Az) <= growth_bound(kernel, p) * np.linalg.norm(z) + 1e-9
                dist = sum(np.linalg.norm(T[i] - T2[i], 2) for i in range(3)) + np.linalg.norm(z - z2)
                lhs = np.linalg.norm(Az - apply_transform(kernel, q, z2))
                assert lhs <= lipschitz_bound(kernel, p, z, z2) * dist + 1e-9


def test_bad_inputs():
    with pytest.raises(InvalidInputError):
        KernelFamily.parse("laplace")
    with pytest.raises(InvalidInputError):
        TransformParams(np.eye(2), np.eye(3), np.eye(2))
    with pytest.raises(InvalidInputError):
        apply_transform(KernelFamily.KRONECKER, TransformParams(np.eye(2), np.eye(2), np.eye(2)), [1.0, 2.0, 3.0])
