"""Krylov solvers, bordered and saddle-point drivers, and a dense direct oracle.

The Krylov kernels (CG, BiCGSTAB, restarted GMRES) are implemented here;
scipy supplies only sparse storage, the incomplete LU preconditioner and the
dense LU used by the oracle. Every solve starts from x0 = 0.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import spilu

from .errors import ConvergenceError, ParameterError, SingularSystemError
from .operators import LinearSystem, SaddleSystem

logger = logging.getLogger(__name__)

METHODS = ("cg", "bicgstab", "gmres", "uzawa", "dense")
PRECONDITIONERS = ("none", "jacobi", "ilu")
DENSE_LIMIT = 20_000
DENSE_RESIDUAL = 1e-11

Operator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SolveOptions:
    """Tolerances and method selection for one linear solve."""

    tolerance: float = 1e-10
    max_iterations: int = 2000
    method: str = "gmres"
    restart: int = 50
    preconditioner: str = "ilu"
    inner_tolerance: float = 1e-13

    def __post_init__(self) -> None:
        if not (0.0 < self.tolerance < 1.0):
            raise ParameterError("tolerance", self.tolerance, "must lie in (0, 1)")
        if not (0.0 < self.inner_tolerance < 1.0):
            raise ParameterError(
                "inner_tolerance", self.inner_tolerance, "must lie in (0, 1)"
            )
        if self.max_iterations < 1:
            raise ParameterError("max_iterations", self.max_iterations, "must be >= 1")
        if self.restart < 1:
            raise ParameterError("restart", self.restart, "must be >= 1")
        if self.method not in METHODS:
            raise ParameterError("method", self.method, f"must be one of {METHODS}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ParameterError(
                "preconditioner",
                self.preconditioner,
                f"must be one of {PRECONDITIONERS}",
            )


@dataclass
class SolveStats:
    """Outcome of a solve; residual is always recomputed as ||b - A x|| / ||b||."""

    method: str
    iterations: int = 0
    residual: float = 0.0
    history: list[float] = field(default_factory=list)
    converged: bool = False
    inner_iterations: int = 0
    divergence_residual: float | None = None
    smallest_pivot: float | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "inner_iterations": self.inner_iterations,
            "divergence_residual": self.divergence_residual,
        }


def _relative_residual(matvec: Operator, b: np.ndarray, x: np.ndarray) -> float:
    bnorm = float(np.linalg.norm(b))
    res = float(np.linalg.norm(b - matvec(x)))
    return res / bnorm if bnorm > 0 else res


def _as_operator(A: sp.spmatrix | np.ndarray | Operator) -> Operator:
    if callable(A) and not hasattr(A, "shape"):
        return A  # type: ignore[return-value]
    return lambda v: A @ v  # type: ignore[operator]


# ============================================================================
# Preconditioners
# ============================================================================


def make_preconditioner(A: sp.spmatrix, kind: str, shift: float = 0.0) -> Operator:
    """Build M^-1 as a callable.

    Args:
        A: Sparse square matrix.
        kind: "none", "jacobi" or "ilu".
        shift: Added to the diagonal before an incomplete factorisation, as a
            fraction of the mean absolute diagonal.
    """
    if kind == "none":
        return lambda v: v
    diag = np.asarray(A.diagonal(), dtype=float)
    if kind == "jacobi":
        inv = np.where(diag != 0.0, 1.0 / np.where(diag != 0.0, diag, 1.0), 1.0)
        return lambda v: inv * v
    if kind == "ilu":
        mat = sp.csc_matrix(A)
        if shift:
            scale = shift * float(np.mean(np.abs(diag)))
            mat = (mat + scale * sp.identity(mat.shape[0])).tocsc()
        try:
            ilu = spilu(mat, drop_tol=1e-6, fill_factor=20)
        except RuntimeError as e:
            logger.warning(
                "incomplete factorisation failed (%s); falling back to Jacobi", e
            )
            return make_preconditioner(A, "jacobi")
        return ilu.solve
    raise ParameterError("preconditioner", kind, f"must be one of {PRECONDITIONERS}")


# ============================================================================
# Krylov kernels
# ============================================================================


def _cg(
    matvec: Operator, b: np.ndarray, precond: Operator, tol: float, maxiter: int
) -> tuple[np.ndarray, int, list[float], bool]:
    x = np.zeros_like(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, 0, [0.0], True
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    history = [1.0]
    for it in range(1, maxiter + 1):
        ap = matvec(p)
        pap = float(p @ ap)
        if pap <= 0.0:
            logger.debug("cg: non-positive curvature at iteration %d", it)
            return x, it, history, False
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rel = float(np.linalg.norm(r)) / bnorm
        history.append(rel)
        if rel <= tol:
            r = b - matvec(x)
            if float(np.linalg.norm(r)) / bnorm <= tol:
                return x, it, history, True
            # recursive residual drifted; restart the recurrence from the true one
            z = precond(r)
            p = z.copy()
            rz = float(r @ z)
            continue
        z = precond(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter, history, False


def _bicgstab(
    matvec: Operator, b: np.ndarray, precond: Operator, tol: float, maxiter: int
) -> tuple[np.ndarray, int, list[float], bool]:
    x = np.zeros_like(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, 0, [0.0], True
    r = b.copy()
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    history = [1.0]
    for it in range(1, maxiter + 1):
        rho_new = float(r_hat @ r)
        if rho_new == 0.0:
            return x, it, history, False
        if it == 1:
            p = r.copy()
        else:
            p = r + (rho_new / rho) * (alpha / omega) * (p - omega * v)
        p_hat = precond(p)
        v = matvec(p_hat)
        alpha = rho_new / float(r_hat @ v)
        s = r - alpha * v
        if float(np.linalg.norm(s)) / bnorm <= tol:
            x += alpha * p_hat
            history.append(float(np.linalg.norm(s)) / bnorm)
            if _relative_residual(matvec, b, x) <= tol:
                return x, it, history, True
            r = b - matvec(x)
            r_hat = r.copy()
            rho = alpha = omega = 1.0
            continue
        s_hat = precond(s)
        t = matvec(s_hat)
        tt = float(t @ t)
        omega = float(t @ s) / tt if tt > 0 else 0.0
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        rho = rho_new
        history.append(float(np.linalg.norm(r)) / bnorm)
        if history[-1] <= tol and _relative_residual(matvec, b, x) <= tol:
            return x, it, history, True
        if omega == 0.0:
            return x, it, history, False
    return x, maxiter, history, False


def _gmres(
    matvec: Operator,
    b: np.ndarray,
    precond: Operator,
    tol: float,
    maxiter: int,
    restart: int,
) -> tuple[np.ndarray, int, list[float], bool]:
    """Restarted GMRES with right preconditioning, MGS and Givens rotations."""
    x = np.zeros_like(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, 0, [0.0], True
    history = [1.0]
    total = 0
    m = min(restart, b.size)
    while total < maxiter:
        r = b - matvec(x)
        beta = float(np.linalg.norm(r))
        if beta / bnorm <= tol:
            return x, total, history, True
        basis = np.zeros((m + 1, b.size))
        z = np.zeros((m, b.size))
        hess = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        basis[0] = r / beta
        k = 0
        for j in range(m):
            z[j] = precond(basis[j])
            w = matvec(z[j])
            for i in range(j + 1):
                hess[i, j] = float(w @ basis[i])
                w -= hess[i, j] * basis[i]
            hess[j + 1, j] = float(np.linalg.norm(w))
            breakdown = hess[j + 1, j] <= 1e-14 * max(abs(hess[j, j]), 1e-300)
            if not breakdown:
                basis[j + 1] = w / hess[j + 1, j]
            for i in range(j):
                tmp = cs[i] * hess[i, j] + sn[i] * hess[i + 1, j]
                hess[i + 1, j] = -sn[i] * hess[i, j] + cs[i] * hess[i + 1, j]
                hess[i, j] = tmp
            denom = math.hypot(hess[j, j], hess[j + 1, j])
            if denom == 0.0:
                break
            cs[j] = hess[j, j] / denom
            sn[j] = hess[j + 1, j] / denom
            hess[j, j] = denom
            hess[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            k = j + 1
            history.append(abs(g[j + 1]) / bnorm)
            if history[-1] <= tol or breakdown or total >= maxiter:
                break
        if k == 0:
            break
        y = la.solve_triangular(hess[:k, :k], g[:k])
        x += z[:k].T @ y
    converged = _relative_residual(matvec, b, x) <= tol
    return x, total, history, converged


def _run_krylov(
    method: str,
    matvec: Operator,
    b: np.ndarray,
    precond: Operator,
    opts: SolveOptions,
    tol: float | None = None,
) -> tuple[np.ndarray, SolveStats]:
    tol = opts.tolerance if tol is None else tol
    if method == "cg":
        x, its, hist, ok = _cg(matvec, b, precond, tol, opts.max_iterations)
    elif method == "bicgstab":
        x, its, hist, ok = _bicgstab(matvec, b, precond, tol, opts.max_iterations)
    elif method == "gmres":
        x, its, hist, ok = _gmres(
            matvec, b, precond, tol, opts.max_iterations, opts.restart
        )
    else:
        raise ParameterError("method", method, "is not a Krylov method")
    stats = SolveStats(
        method=method,
        iterations=its,
        residual=_relative_residual(matvec, b, x),
        history=hist,
        converged=ok,
    )
    return x, stats


def _raise_unconverged(what: str, stats: SolveStats, tol: float) -> None:
    raise ConvergenceError(
        f"{what}: {stats.method} stopped after {stats.iterations} iterations "
        f"at relative residual {stats.residual:.3e} (tolerance {tol:.1e})",
        stats,
    )


# ============================================================================
# Public drivers
# ============================================================================


def solve_spd(
    A: sp.spmatrix | np.ndarray, b: np.ndarray, opts: SolveOptions | None = None
) -> tuple[np.ndarray, SolveStats]:
    """Preconditioned conjugate gradients for a symmetric positive (semi)definite A."""
    opts = opts or SolveOptions(method="cg", preconditioner="jacobi")
    precond = make_preconditioner(sp.csr_matrix(A), opts.preconditioner)
    b = np.asarray(b, dtype=float)
    x, stats = _run_krylov("cg", _as_operator(A), b, precond, opts)
    if not stats.converged:
        _raise_unconverged("solve_spd", stats, opts.tolerance)
    return x, stats


def solve_linear(
    A: sp.spmatrix | np.ndarray, b: np.ndarray, opts: SolveOptions | None = None
) -> tuple[np.ndarray, SolveStats]:
    """Solve a general square system with the method named in opts."""
    opts = opts or SolveOptions()
    b = np.asarray(b, dtype=float)
    if opts.method == "dense":
        return dense_direct(A, b)
    if opts.method == "uzawa":
        raise ParameterError("method", "uzawa", "applies to saddle systems only")
    precond = make_preconditioner(sp.csr_matrix(A), opts.preconditioner)
    x, stats = _run_krylov(opts.method, _as_operator(A), b, precond, opts)
    if not stats.converged:
        _raise_unconverged("solve_linear", stats, opts.tolerance)
    return x, stats


def _smallest_singular_value(mat: sp.spmatrix) -> float | None:
    if mat.shape[0] > 5000:
        return None
    return float(la.svdvals(mat.toarray()).min())


def solve_bordered(
    system: LinearSystem, opts: SolveOptions | None = None
) -> tuple[np.ndarray, float, SolveStats]:
    """Solve [K w; w^T 0][x; lam] = [b; 0].

    The block preconditioner pairs an incomplete factorisation of a slightly
    shifted K with the scalar Schur complement w^T K^-1 w.

    Returns:
        (x, lam, stats).
    """
    opts = opts or SolveOptions()
    mat, rhs = system.bordered()
    n = system.matrix.shape[0]
    if opts.method == "dense":
        sol, stats = dense_direct(mat, rhs)
        return sol[:n], float(sol[n]) if system.constraint is not None else 0.0, stats
    if system.constraint is None:
        x, stats = solve_linear(system.matrix, system.rhs, opts)
        return x, 0.0, stats

    w = system.constraint
    inner = make_preconditioner(system.matrix, opts.preconditioner, shift=1e-3)
    schur = float(w @ inner(w))
    if schur == 0.0 or not math.isfinite(schur):
        raise SingularSystemError(
            f"{system.kind}: degenerate mean constraint", _smallest_singular_value(mat)
        )

    def precond(v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[:n] = inner(v[:n])
        out[n] = -v[n] / schur
        return out

    method = "bicgstab" if opts.method == "bicgstab" else "gmres"
    sol, stats = _run_krylov(method, _as_operator(mat), rhs, precond, opts)
    if not stats.converged:
        sigma = _smallest_singular_value(mat)
        if sigma is not None and sigma < 1e-12 * max(abs(mat).max(), 1.0):
            raise SingularSystemError(
                f"{system.kind}: bordered system is singular", sigma
            )
        _raise_unconverged(f"{system.kind} solve", stats, opts.tolerance)
    return sol[:n], float(sol[n]), stats


class _InnerSolver:
    """Repeated solves with the velocity block, reusing one factorisation."""

    def __init__(self, A: sp.spmatrix, opts: SolveOptions):
        self.matvec = _as_operator(A)
        kind = "ilu" if opts.preconditioner == "none" else opts.preconditioner
        self.precond = make_preconditioner(A, kind)
        self.opts = opts
        self.iterations = 0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if not np.any(rhs):
            return np.zeros_like(rhs)
        x, stats = _run_krylov(
            "gmres",
            self.matvec,
            rhs,
            self.precond,
            self.opts,
            tol=self.opts.inner_tolerance,
        )
        self.iterations += stats.iterations
        if not stats.converged:
            raise ConvergenceError(
                f"inner velocity solve failed inside the Schur iteration "
                f"(residual {stats.residual:.3e} after {stats.iterations} iterations)",
                stats,
            )
        return x


def solve_saddle(
    A: sp.spmatrix,
    B: sp.spmatrix,
    f: np.ndarray,
    g: np.ndarray,
    opts: SolveOptions | None = None,
) -> tuple[np.ndarray, np.ndarray, SolveStats]:
    """Schur-complement (Uzawa type) solve of [A B^T; B 0][u; p] = [f; g].

    The pressure equation B A^-1 B^T p = B A^-1 f - g is solved with GMRES,
    each application using an inner preconditioned GMRES solve with A. The
    returned pressure has zero mean.
    """
    opts = opts or SolveOptions(method="uzawa", tolerance=1e-12)
    B = sp.csr_matrix(B)
    Bt = B.T.tocsr()
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    stats = SolveStats(method="uzawa")
    if not np.any(f) and not np.any(g):
        stats.converged = True
        stats.divergence_residual = 0.0
        return np.zeros_like(f), np.zeros(B.shape[0]), stats

    inner = _InnerSolver(sp.csr_matrix(A), opts)

    def schur(p: np.ndarray) -> np.ndarray:
        return B @ inner.solve(Bt @ p)

    rhs = B @ inner.solve(f) - g
    p, outer = _run_krylov("gmres", schur, rhs, lambda v: v, opts)
    if not outer.converged:
        _raise_unconverged("pressure Schur complement", outer, opts.tolerance)
    p -= p.mean()
    u = inner.solve(f - Bt @ p)

    unorm = float(np.linalg.norm(u))
    div_res = float(np.linalg.norm(B @ u - g))
    stats.iterations = outer.iterations
    stats.history = outer.history
    stats.inner_iterations = inner.iterations
    stats.divergence_residual = div_res / unorm if unorm > 0 else div_res
    res_mom = f - A @ u - Bt @ p
    scale = math.sqrt(float(f @ f) + float(g @ g))
    stats.residual = math.sqrt(float(res_mom @ res_mom) + div_res**2) / scale
    stats.converged = True
    if stats.divergence_residual > 1e-10:
        logger.warning(
            "saddle solve: relative divergence %.2e above 1e-10",
            stats.divergence_residual,
        )
    return u, p, stats


def saddle_dense_system(system: SaddleSystem) -> tuple[np.ndarray, np.ndarray]:
    """Monolithic matrix of a saddle system with the zero-mean pressure multiplier."""
    nu = system.A.shape[0]
    nc = system.Bt.shape[1]
    w = np.ones((nc, 1))
    mat = sp.bmat(
        [
            [system.A, system.Bt, None],
            [system.B, None, sp.csr_matrix(w)],
            [None, sp.csr_matrix(w.T), None],
        ],
        format="csr",
    )
    rhs = np.concatenate([system.f, system.g, [0.0]])
    assert mat.shape == (nu + nc + 1, nu + nc + 1)
    return mat.toarray(), rhs


def dense_direct(
    M: sp.spmatrix | np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, SolveStats]:
    """Partial-pivoting LU with one step of iterative refinement.

    Raises:
        ParameterError: more than 20,000 unknowns.
        SingularSystemError: a pivot is negligible; reports the smallest one.
        ConvergenceError: the relative residual exceeds 1e-11.
    """
    mat = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    n = mat.shape[0]
    if n > DENSE_LIMIT:
        raise ParameterError("unknowns", n, f"dense oracle limited to {DENSE_LIMIT}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(mat, check_finite=True)
    pivots = np.abs(np.diag(lu))
    smallest = float(pivots.min()) if n else 0.0
    if n and smallest <= n * np.finfo(float).eps * float(pivots.max()):
        raise SingularSystemError("dense system is singular", smallest)
    x = la.lu_solve((lu, piv), b)
    x += la.lu_solve((lu, piv), b - mat @ x)
    residual = _relative_residual(lambda v: mat @ v, b, x)
    stats = SolveStats(
        method="dense",
        iterations=1,
        residual=residual,
        history=[residual],
        converged=residual <= DENSE_RESIDUAL,
        smallest_pivot=smallest,
    )
    if residual > DENSE_RESIDUAL:
        raise ConvergenceError(
            f"dense residual {residual:.3e} exceeds {DENSE_RESIDUAL:.0e}", stats
        )
    return x, stats
