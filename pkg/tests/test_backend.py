import os
import subprocess
import sys

import numpy as np
import pytest

from dnl import _backend
from dnl.errors import DegenerateNormalizerError

BACKENDS = _backend.available()


def test_python_fallback_always_available():
    assert "python" in BACKENDS
    assert _backend.BACKEND in BACKENDS


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
@pytest.mark.parametrize("kind", [0, 1, 2])
def test_transform_parity(kind, rng):
    fast, slow = _backend.load("compiled"), _backend.load("python")
    n = 5
    T = rng.normal(size=(3, n, n))
    Z = rng.normal(size=(7, n))
    np.testing.assert_allclose(fast.transform_rows(kind, *T, Z), slow.transform_rows(kind, *T, Z),
                               rtol=1e-13, atol=1e-14)
    Ts = rng.normal(size=(3, 7, n, n))
    np.testing.assert_allclose(fast.transform_rows(kind, *Ts, Z), slow.transform_rows(kind, *Ts, Z),
                               rtol=1e-13, atol=1e-14)
    W = rng.normal(size=(7, n, n))
    c = rng.normal(size=(7, n))
    w = np.full(7, 0.25)
    np.testing.assert_allclose(fast.history_sum(kind, *T, Z, W, c, w), slow.history_sum(kind, *T, Z, W, c, w),
                               rtol=1e-12, atol=1e-13)


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
def test_spectral_parity(rng):
    fast, slow = _backend.load("compiled"), _backend.load("python")
    stack = rng.normal(size=(20, 4, 4))
    stack[3] = 0.0
    np.testing.assert_allclose(fast.spectral_norms(stack)[0], slow.spectral_norms(stack)[0], rtol=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
def test_nan_state_is_degenerate(name):
    mod = _backend.load(name)
    Z = np.array([[np.nan, 1.0]])
    with pytest.raises(DegenerateNormalizerError):
        mod.transform_rows(2, np.eye(2), np.eye(2), np.eye(2), Z)


def test_env_var_forces_python():
    env = dict(os.environ, DNL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import dnl; print(dnl.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.load("gpu")
