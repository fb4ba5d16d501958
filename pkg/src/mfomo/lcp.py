"""Dense revised simplex (Bland's rule) and the support-enumeration LCP solver.

For games whose rewards are linear in the flow and whose dynamics do not
depend on it, the equilibrium conditions form a linear complementarity
problem.  Every solution has a support set D with ``z_D = 0`` and
``L_{D^c} = 0``; fixing D leaves a linear feasibility problem, so scanning all
supports finds every (basic) equilibrium in finite time.
"""
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CapExceededError, SolverInternalError, UnsupportedGameError
from .formulation import ThetaPoint, solution_modification, theta_bounds
from .mdp import occupation_constraints, unvec, vec


@dataclass(frozen=True)
class LpProblem:
    """minimize c^T x  subject to  A_eq x = b_eq,  0 <= x <= upper."""

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    upper: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        A = np.atleast_2d(np.asarray(self.A_eq, dtype=np.float64))
        b = np.asarray(self.b_eq, dtype=np.float64).reshape(-1)
        if A.shape != (b.size, c.size):
            raise ValueError(f"A_eq has shape {A.shape}, expected {(b.size, c.size)}")
        if self.upper is not None:
            u = np.asarray(self.upper, dtype=np.float64).reshape(-1)
            if u.size != c.size:
                raise ValueError("upper bounds must match the number of variables")
            object.__setattr__(self, "upper", u)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_eq", A)
        object.__setattr__(self, "b_eq", b)


@dataclass(frozen=True)
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray = None
    value: float = None
    duals: np.ndarray = None
    iterations: int = 0


_PIVOT_TOL = 1e-9
_COST_TOL = 1e-10
_MAX_COND = 1e13


def _solve(B, rhs, trans=False):
    try:
        return np.linalg.solve(B.T if trans else B, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverInternalError(f"singular basis: {exc}") from exc


def _simplex_core(A, b, c, basis, max_iter):
    """Bland-rule revised simplex from a feasible basis.  Returns (status, basis, iters)."""
    m, n = A.shape
    in_basis = np.zeros(n, dtype=bool)
    in_basis[basis] = True
    for it in range(max_iter):
        B = A[:, basis]
        xB = _solve(B, b)
        lam = _solve(B, c[basis], trans=True)
        reduced = c - A.T @ lam
        candidates = np.flatnonzero((reduced < -_COST_TOL) & ~in_basis)
        if candidates.size == 0:
            return "optimal", basis, it
        j = int(candidates[0])
        u = _solve(B, A[:, j])
        rows = np.flatnonzero(u > _PIVOT_TOL)
        if rows.size == 0:
            return "unbounded", basis, it
        ratios = np.maximum(xB[rows], 0.0) / u[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, best)]
        # Bland: among tied rows leave the variable with the smallest index
        leave_row = int(ties[np.argmin(np.asarray(basis)[ties])])
        in_basis[basis[leave_row]] = False
        basis[leave_row] = j
        in_basis[j] = True
    raise SolverInternalError(f"simplex did not terminate within {max_iter} pivots")


def simplex_lp(problem, max_iter=50_000):
    """Two-phase revised simplex with Bland's anti-cycling rule."""
    c, A, b = problem.c, problem.A_eq, problem.b_eq
    n_orig = c.size
    if problem.upper is not None:
        bounded = np.flatnonzero(np.isfinite(problem.upper))
        k = bounded.size
        A = np.block([[A, np.zeros((A.shape[0], k))],
                      [np.eye(n_orig)[bounded], np.eye(k)]])
        b = np.concatenate([b, problem.upper[bounded]])
        c = np.concatenate([c, np.zeros(k)])
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign

    # phase 1
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = list(range(n, n + m))
    status, basis, it1 = _simplex_core(A1, b, c1, basis, max_iter)
    xB = _solve(A1[:, basis], b)
    infeas = float(c1[basis] @ xB)
    if infeas > 1e-9 * max(1.0, np.abs(b).max(initial=0.0)):
        return LpResult("infeasible", iterations=it1)

    # drive artificial variables out of the basis, dropping redundant rows
    keep_rows = list(range(m))
    for row in range(m):
        var = basis[row]
        if var < n:
            continue
        B = A1[np.ix_(keep_rows, [basis[r] for r in keep_rows])]
        pos = keep_rows.index(row)
        e = np.zeros(len(keep_rows))
        e[pos] = 1.0
        tableau_row = _solve(B, e, trans=True) @ A[keep_rows]
        nonbasic = [j for j in range(n) if j not in basis]
        pivots = [j for j in nonbasic if abs(tableau_row[j]) > 1e-9]
        if pivots:
            basis[row] = pivots[0]
        else:
            keep_rows.remove(row)
    basis = [basis[r] for r in keep_rows]
    A2, b2 = A[keep_rows], b[keep_rows]

    if len(basis):
        cond = np.linalg.cond(A2[:, basis])
        if not np.isfinite(cond) or cond > _MAX_COND:
            raise SolverInternalError(f"ill-conditioned starting basis (cond={cond:.3g})")
    status, basis, it2 = _simplex_core(A2, b2, c, list(basis), max_iter)
    if status == "unbounded":
        return LpResult("unbounded", iterations=it1 + it2)
    x = np.zeros(n)
    if len(basis):
        B = A2[:, basis]
        x[basis] = _solve(B, b2)
        lam_kept = _solve(B, c[basis], trans=True)
    else:
        lam_kept = np.zeros(0)
    x = np.maximum(x, 0.0)
    duals = np.zeros(m)
    duals[keep_rows] = lam_kept
    duals *= sign
    x = x[:n_orig] if problem.upper is None else x[:n_orig]
    duals = duals[: problem.b_eq.size]
    return LpResult("optimal", x, float(problem.c @ x), duals, it1 + it2)


# ---------------------------------------------------------------------------
# LCP for linear-reward, mean-field-independent games


@dataclass(frozen=True)
class LcpSystem:
    A_bar: np.ndarray
    C_bar: np.ndarray
    c_bar: np.ndarray
    b: np.ndarray
    S: int
    A: int
    T: int

    def c_of(self, L):
        """c_L for a flow (array (T+1, S, A) or vector)."""
        Lv = L if np.ndim(L) == 1 else vec(L)
        return self.c_bar + self.C_bar @ Lv

    def residuals(self, theta):
        Lv, zv = vec(theta.L), vec(theta.z)
        primal = self.A_bar @ Lv - self.b
        dual = self.A_bar.T @ theta.y - self.C_bar @ Lv + zv - self.c_bar
        return primal, dual, float(zv @ Lv)


def assemble_lcp(game):
    if not (game.linear_rewards and game.mean_field_independent_dynamics):
        raise UnsupportedGameError("LCP assembly needs linear rewards and mean-field-independent dynamics")
    if game.r_bar is None or game.R_bar is None:
        raise UnsupportedGameError("linear-reward game lacks its r_bar / R_bar payload")
    S, A, T = game.S, game.A, game.T
    L_any = np.full((T + 1, S, A), 1.0 / (S * A))
    P = np.stack([np.asarray(game.transition(t, L_any[t]), dtype=np.float64) for t in range(T)]) if T else np.zeros((0, S, S, A))
    A_bar, b = occupation_constraints(game.mu0, P, S, A, T)
    n = S * A
    C_bar = np.zeros((n * (T + 1), n * (T + 1)))
    for t in range(T + 1):
        # row (s,a) in vec order, column (i,j) in vec order
        Rt = np.transpose(np.asarray(game.R_bar[t]), (1, 0, 3, 2)).reshape(n, n)
        C_bar[t * n:(t + 1) * n, t * n:(t + 1) * n] = -Rt
    c_bar = -vec(np.asarray(game.r_bar))
    return LcpSystem(A_bar, C_bar, c_bar, b, S, A, T)


def _support_lp(sys, support):
    """Feasibility LP for one support; returns (y, z, L) vectors or None."""
    m, N = sys.A_bar.shape
    D = np.flatnonzero(support)
    Dc = np.flatnonzero(~support)
    # variables: y+ (m), y- (m), L_D, z_Dc
    top = np.hstack([np.zeros((m, 2 * m)), sys.A_bar[:, D], np.zeros((m, Dc.size))])
    I = np.eye(N)
    bottom = np.hstack([sys.A_bar.T, -sys.A_bar.T, -sys.C_bar[:, D], I[:, Dc]])
    A_eq = np.vstack([top, bottom])
    b_eq = np.concatenate([sys.b, sys.c_bar])
    res = simplex_lp(LpProblem(np.zeros(A_eq.shape[1]), A_eq, b_eq))
    if res.status != "optimal":
        return None
    x = res.x
    y = x[:m] - x[m:2 * m]
    L = np.zeros(N)
    L[D] = x[2 * m:2 * m + D.size]
    z = np.zeros(N)
    z[Dc] = x[2 * m + D.size:]
    return y, z, L


def solve_by_enumeration(sys, cap=20, game=None, dedup_tol=1e-8, workers=1):
    """All distinct equilibria reachable from the 2^{SA(T+1)} support LPs.

    Supports that leave a whole time slice of L empty are skipped (each slice
    must carry unit mass).  When ``game`` is given, solutions whose ``y``
    leaves the bounded feasible set are replaced by their value-function form.
    """
    n = sys.S * sys.A
    N = n * (sys.T + 1)
    if N > cap:
        raise CapExceededError(
            f"support enumeration over 2^{N} subsets exceeds cap 2^{cap}; use the MF-OMO first-order solvers instead")

    def supports():
        for bits in itertools.product((False, True), repeat=N):
            support = np.array(bits[::-1])
            if support.reshape(sys.T + 1, n).any(axis=1).all():
                yield support

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(lambda s: _support_lp(sys, s), supports()))
    else:
        raw = [_support_lp(sys, s) for s in supports()]

    found = []
    for sol in raw:
        if sol is None:
            continue
        y, z, L = sol
        if any(np.abs(L - other[2]).max() <= dedup_tol for other in found):
            continue
        found.append((y, z, L))

    bounds = theta_bounds(game) if game is not None else None
    out = []
    for y, z, L in found:
        theta = ThetaPoint(y, unvec(z, sys.S, sys.A), unvec(L, sys.S, sys.A))
        if bounds is not None and not theta.is_feasible(bounds):
            theta = solution_modification(game, theta)
        out.append(theta)
    return out


# ---------------------------------------------------------------------------
# batched first-order sweep (cross-check for the enumeration)


def batch_objective(sys, Y, Z, Lv):
    """Objective and gradient at a batch of points given as rows (vec layout)."""
    r1 = Lv @ sys.A_bar.T - sys.b
    r2 = Y @ sys.A_bar - Lv @ sys.C_bar.T + Z - sys.c_bar
    f = (r1 * r1).sum(axis=1) + (r2 * r2).sum(axis=1) + (Z * Lv).sum(axis=1)
    gY = 2.0 * r2 @ sys.A_bar.T
    gZ = 2.0 * r2 + Lv
    gL = 2.0 * r1 @ sys.A_bar - 2.0 * r2 @ sys.C_bar + Z
    return f, gY, gZ, gL


def hessian_norm(sys):
    """Exact smoothness constant: the objective is quadratic for linear games."""
    m, N = sys.A_bar.shape
    J = np.block([[np.zeros((m, m)), np.zeros((m, N)), sys.A_bar],
                  [sys.A_bar.T, np.eye(N), -sys.C_bar]])
    H = 2.0 * J.T @ J
    H[m:m + N, m + N:] += np.eye(N)
    H[m + N:, m:m + N] += np.eye(N)
    return float(np.abs(np.linalg.eigvalsh(H)).max())


def _batch_project(Y, Z, Lv, bounds, n_slices):
    from .projections import project_simplex

    B, N = Lv.shape
    Lv = project_simplex(Lv.reshape(B, n_slices, -1)).reshape(B, N)
    Z = np.maximum(Z, 0.0)
    over = Z.sum(axis=1) > bounds.z_budget
    if over.any():
        Z[over] = project_simplex(Z[over], bounds.z_budget)
    nrm = np.linalg.norm(Y, axis=1, keepdims=True)
    Y = Y * np.minimum(1.0, bounds.y_radius / np.maximum(nrm, 1e-300))
    return Y, Z, Lv


def mfomo_sweep(sys, bounds, n_starts, iters=5000, seed=0, step=None):
    """Projected gradient descent from ``n_starts`` random points at once.

    Returns ``(Y, Z, Lv, f)`` with one row per start (flows in vec layout).
    """
    rng = np.random.default_rng(seed)
    m, N = sys.A_bar.shape
    n_slices = sys.T + 1
    n = sys.S * sys.A
    Lv = rng.dirichlet(np.ones(n), size=(n_starts, n_slices)).reshape(n_starts, N)
    Z = rng.dirichlet(np.ones(N + 1), size=n_starts)[:, :N] * bounds.z_budget * rng.uniform(size=(n_starts, 1))
    Y = rng.normal(size=(n_starts, m))
    Y *= bounds.y_radius * rng.uniform(size=(n_starts, 1)) / np.linalg.norm(Y, axis=1, keepdims=True)
    eta = 1.0 / hessian_norm(sys) if step is None else step
    for _ in range(iters):
        _, gY, gZ, gL = batch_objective(sys, Y, Z, Lv)
        Y, Z, Lv = _batch_project(Y - eta * gY, Z - eta * gZ, Lv - eta * gL, bounds, n_slices)
    f = batch_objective(sys, Y, Z, Lv)[0]
    return Y, Z, Lv, f
