import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfomo import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")

dims = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(0, 5), st.integers(0, 2**31 - 1))


def _arrays(S, A, T, seed):
    rng = np.random.default_rng(seed)
    P = np.ascontiguousarray(rng.dirichlet(np.ones(S), size=(T, S, A)).transpose(0, 3, 1, 2))
    R = rng.normal(size=(T + 1, S, A))
    pi = rng.dirichlet(np.ones(A), size=(T + 1, S))
    mu0 = rng.dirichlet(np.ones(S))
    L = rng.dirichlet(np.ones(S * A), size=T + 1).reshape(T + 1, S, A)
    y = rng.normal(size=(T + 1, S))
    z = rng.uniform(size=(T + 1, S, A))
    dP = rng.normal(size=(T, S, S, A, S, A))
    dR = rng.normal(size=(T + 1, S, A, S, A))
    w = (rng.uniform(size=S), rng.uniform(size=(T, S)), rng.uniform(size=(T + 1, S, A)),
         rng.uniform(size=(T + 1, S, A)))
    return P, R, pi, mu0, L, y, z, dP, dR, w


@settings(max_examples=40, deadline=None)
@given(dims)
def test_recursions_agree(d):
    P, R, pi, mu0, *_ = _arrays(*d)
    for greedy in (True, False):
        a = K.backward_recursion_numpy(P, R, pi, greedy)
        b = K.backward_recursion_numba(P, R, pi, greedy)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(K.forward_occupation_numpy(P, mu0, pi), K.forward_occupation_numba(P, mu0, pi),
                               rtol=1e-12, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(dims, st.booleans())
def test_objective_kernels_agree(d, has_dP):
    P, R, pi, mu0, L, y, z, dP, dR, w = _arrays(*d)
    ra = K.mfomo_residuals_numpy(P, R, mu0, y, z, L)
    rb = K.mfomo_residuals_numba(P, R, mu0, y, z, L)
    for x, u in zip(ra, rb):
        np.testing.assert_allclose(x, u, rtol=1e-12, atol=1e-12)
    ga = K.mfomo_gradient_numpy(P, R, dP, dR, has_dP, y, z, L, *ra, *w)
    gb = K.mfomo_gradient_numba(P, R, dP, dR, has_dP, y, z, L, *ra, *w)
    for x, u in zip(ga, gb):
        np.testing.assert_allclose(x, u, rtol=1e-11, atol=1e-11)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 20), st.floats(0.1, 10.0), st.integers(0, 2**31 - 1))
def test_simplex_projection_kernels_agree(n, m, total, seed):
    V = np.random.default_rng(seed).normal(scale=3.0, size=(m, n))
    np.testing.assert_allclose(K.project_simplex_rows_numba(V, total), K.project_simplex_rows_numpy(V, total),
                               atol=1e-12)


def test_simplex_kernel_handles_ties_and_constant_rows():
    V = np.array([[1.0, 1.0, 1.0], [5.0, 5.0, -5.0], [0.0, 0.0, 0.0]])
    np.testing.assert_allclose(K.project_simplex_rows_numba(V, 1.0),
                               [[1 / 3, 1 / 3, 1 / 3], [0.5, 0.5, 0.0], [1 / 3, 1 / 3, 1 / 3]], atol=1e-15)


def test_env_flag_selects_numpy_backend():
    code = "from mfomo import _kernels as K; print(K.BACKEND, K.project_simplex_rows is K.project_simplex_rows_numpy)"
    env = dict(os.environ, MFOMO_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
    env["MFOMO_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numba", "False"]
