"""Hot inner loops, each in a numba and a pure-numpy flavour.

The backend is chosen once at import time.  Set ``MFOMO_DISABLE_NUMBA=1`` to
force the numpy path (useful for debugging and on platforms without numba).
Both flavours are always importable as ``<name>_numpy`` / ``<name>_numba`` so
tests and the benchmark can compare them directly.

Array conventions (shared by every caller):

* ``P``  : (T, S, S, A)  with ``P[t, s_next, s, a] = p_t(s_next | s, a)``
* ``R``  : (T+1, S, A)
* ``dP`` : (T, S, S, A, S, A), derivative of ``P[t]`` w.r.t. ``L[t]``
* ``dR`` : (T+1, S, A, S, A)
* ``y``  : (T+1, S) blocks of the dual vector, ``y[T]`` pairs with the
  initial-distribution rows of the system matrix
* ``z``, ``L``, ``pi`` : (T+1, S, A)
"""
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_DISABLED = os.environ.get("MFOMO_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
USE_NUMBA = HAVE_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# simplex projection of each row


def project_simplex_rows_numpy(V, total):
    V = np.asarray(V, dtype=np.float64)
    n = V.shape[-1]
    U = -np.sort(-V, axis=-1)
    css = np.cumsum(U, axis=-1) - total
    k = np.arange(1, n + 1, dtype=np.float64)
    cond = U - css / k > 0
    # cond is true on a prefix; rho is its length
    rho = cond.sum(axis=-1, keepdims=True)
    tau = np.take_along_axis(css, rho - 1, axis=-1) / rho
    return np.maximum(V - tau, 0.0)


@_njit
def project_simplex_rows_numba(V, total):
    # sort-free active-set iteration: tau only increases and stops at the exact
    # threshold after at most n passes (usually two or three)
    m, n = V.shape
    out = np.empty_like(V)
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += V[i, j]
        tau = (s - total) / n
        while True:
            s = 0.0
            cnt = 0
            for j in range(n):
                if V[i, j] > tau:
                    s += V[i, j]
                    cnt += 1
            new_tau = (s - total) / cnt
            if new_tau <= tau:
                break
            tau = new_tau
        for j in range(n):
            x = V[i, j] - tau
            out[i, j] = x if x > 0 else 0.0
    return out


# ---------------------------------------------------------------------------
# finite-horizon backward recursion


def backward_recursion_numpy(P, R, pi, greedy):
    T1, S, A = R.shape
    V = np.zeros((T1, S))
    Q = np.zeros((T1, S, A))
    for t in range(T1 - 1, -1, -1):
        q = R[t].copy()
        if t < T1 - 1:
            q += np.einsum("psa,p->sa", P[t], V[t + 1])
        Q[t] = q
        if greedy:
            V[t] = q.max(axis=1)
        else:
            V[t] = (pi[t] * q).sum(axis=1)
    return V, Q


@_njit
def backward_recursion_numba(P, R, pi, greedy):
    T1, S, A = R.shape
    V = np.zeros((T1, S))
    Q = np.zeros((T1, S, A))
    for t in range(T1 - 1, -1, -1):
        for s in range(S):
            for a in range(A):
                q = R[t, s, a]
                if t < T1 - 1:
                    for sp in range(S):
                        q += P[t, sp, s, a] * V[t + 1, sp]
                Q[t, s, a] = q
            if greedy:
                best = Q[t, s, 0]
                for a in range(1, A):
                    if Q[t, s, a] > best:
                        best = Q[t, s, a]
                V[t, s] = best
            else:
                acc = 0.0
                for a in range(A):
                    acc += pi[t, s, a] * Q[t, s, a]
                V[t, s] = acc
    return V, Q


# ---------------------------------------------------------------------------
# forward occupation propagation with fixed transitions


def forward_occupation_numpy(P, mu0, pi):
    T1, S, A = pi.shape
    d = np.zeros((T1, S, A))
    d[0] = mu0[:, None] * pi[0]
    for t in range(T1 - 1):
        nxt = np.einsum("psa,sa->p", P[t], d[t])
        d[t + 1] = nxt[:, None] * pi[t + 1]
    return d


@_njit
def forward_occupation_numba(P, mu0, pi):
    T1, S, A = pi.shape
    d = np.zeros((T1, S, A))
    for s in range(S):
        for a in range(A):
            d[0, s, a] = mu0[s] * pi[0, s, a]
    for t in range(T1 - 1):
        for sp in range(S):
            m = 0.0
            for s in range(S):
                for a in range(A):
                    m += P[t, sp, s, a] * d[t, s, a]
            for a in range(A):
                d[t + 1, sp, a] = m * pi[t + 1, sp, a]
    return d


# ---------------------------------------------------------------------------
# MF-OMO residuals:  e_init = Z L_0 - mu0,  e[t] = W_t L_t - Z L_{t+1},
# g = A^T y + z - c  (per time slice, S x A)


def mfomo_residuals_numpy(P, R, mu0, y, z, L):
    T1, S, A = L.shape
    T = T1 - 1
    e_init = L[0].sum(axis=1) - mu0
    e = np.zeros((T, S))
    g = z + R
    if T > 0:
        e = np.einsum("tpsa,tsa->tp", P, L[:T]) - L[1:].sum(axis=2)
        g[:T] += np.einsum("tpsa,tp->tsa", P, y[:T])
        g[1:] -= y[:T, :, None]
    g[0] += y[T][:, None]
    return e_init, e, g


@_njit
def mfomo_residuals_numba(P, R, mu0, y, z, L):
    T1, S, A = L.shape
    T = T1 - 1
    e_init = np.empty(S)
    for s in range(S):
        acc = 0.0
        for a in range(A):
            acc += L[0, s, a]
        e_init[s] = acc - mu0[s]
    e = np.zeros((T, S))
    g = np.empty((T1, S, A))
    for t in range(T1):
        for s in range(S):
            for a in range(A):
                g[t, s, a] = z[t, s, a] + R[t, s, a]
    for t in range(T):
        for sp in range(S):
            acc = 0.0
            for s in range(S):
                for a in range(A):
                    acc += P[t, sp, s, a] * L[t, s, a]
            for a in range(A):
                acc -= L[t + 1, sp, a]
            e[t, sp] = acc
        for s in range(S):
            for a in range(A):
                acc = 0.0
                for sp in range(S):
                    acc += P[t, sp, s, a] * y[t, sp]
                g[t, s, a] += acc
                g[t + 1, s, a] -= y[t, s]
    for s in range(S):
        for a in range(A):
            g[0, s, a] += y[T, s]
    return e_init, e, g


# ---------------------------------------------------------------------------
# gradient of the weighted objective
#   sum w_init*e_init^2 + sum w_cons*e^2 + sum w_bell*g^2 + sum w_comp*z*L


def mfomo_gradient_numpy(P, R, dP, dR, has_dP, y, z, L, e_init, e, g,
                         w_init, w_cons, w_bell, w_comp):
    T1, S, A = L.shape
    T = T1 - 1
    alpha = 2.0 * w_cons * e
    beta = 2.0 * w_bell * g
    gy = np.zeros((T1, S))
    if T > 0:
        gy[:T] = np.einsum("tpsa,tsa->tp", P, beta[:T]) - beta[1:].sum(axis=2)
    gy[T] = beta[0].sum(axis=1)
    gz = beta + w_comp * L
    gL = w_comp * z
    gL += np.einsum("tijsa,tij->tsa", dR, beta)
    gL[0] += (2.0 * w_init * e_init)[:, None]
    if T > 0:
        gL[:T] += np.einsum("tp,tpsa->tsa", alpha, P)
        gL[1:] -= alpha[:, :, None]
        if has_dP:
            coef = alpha[:, :, None, None] * L[:T, None, :, :] + beta[:T, None, :, :] * y[:T, :, None, None]
            gL[:T] += np.einsum("tpij,tpijsa->tsa", coef, dP)
    return gy, gz, gL


@_njit
def mfomo_gradient_numba(P, R, dP, dR, has_dP, y, z, L, e_init, e, g,
                         w_init, w_cons, w_bell, w_comp):
    T1, S, A = L.shape
    T = T1 - 1
    gy = np.zeros((T1, S))
    gz = np.empty((T1, S, A))
    gL = np.empty((T1, S, A))
    beta = np.empty((T1, S, A))
    for t in range(T1):
        for s in range(S):
            for a in range(A):
                beta[t, s, a] = 2.0 * w_bell[t, s, a] * g[t, s, a]
                gz[t, s, a] = beta[t, s, a] + w_comp[t, s, a] * L[t, s, a]
                gL[t, s, a] = w_comp[t, s, a] * z[t, s, a]
    alpha = np.zeros((T, S))
    for t in range(T):
        for sp in range(S):
            alpha[t, sp] = 2.0 * w_cons[t, sp] * e[t, sp]
    # y gradient
    for t in range(T):
        for sp in range(S):
            acc = 0.0
            for s in range(S):
                for a in range(A):
                    acc += P[t, sp, s, a] * beta[t, s, a]
            for a in range(A):
                acc -= beta[t + 1, sp, a]
            gy[t, sp] = acc
    for s in range(S):
        acc = 0.0
        for a in range(A):
            acc += beta[0, s, a]
        gy[T, s] = acc
    # L gradient
    for s in range(S):
        for a in range(A):
            gL[0, s, a] += 2.0 * w_init[s] * e_init[s]
    for t in range(T1):
        for s in range(S):
            for a in range(A):
                acc = 0.0
                for i in range(S):
                    for j in range(A):
                        acc += dR[t, i, j, s, a] * beta[t, i, j]
                gL[t, s, a] += acc
    for t in range(T):
        for s in range(S):
            for a in range(A):
                acc = 0.0
                for sp in range(S):
                    acc += alpha[t, sp] * P[t, sp, s, a]
                gL[t, s, a] += acc
                gL[t + 1, s, a] -= alpha[t, s]
        if has_dP:
            for sp in range(S):
                for i in range(S):
                    for j in range(A):
                        c = alpha[t, sp] * L[t, i, j] + beta[t, i, j] * y[t, sp]
                        if c != 0.0:
                            for s in range(S):
                                for a in range(A):
                                    gL[t, s, a] += c * dP[t, sp, i, j, s, a]
    return gy, gz, gL


if USE_NUMBA:
    project_simplex_rows = project_simplex_rows_numba
    backward_recursion = backward_recursion_numba
    forward_occupation = forward_occupation_numba
    mfomo_residuals = mfomo_residuals_numba
    mfomo_gradient = mfomo_gradient_numba
else:
    project_simplex_rows = project_simplex_rows_numpy
    backward_recursion = backward_recursion_numpy
    forward_occupation = forward_occupation_numpy
    mfomo_residuals = mfomo_residuals_numpy
    mfomo_gradient = mfomo_gradient_numpy
