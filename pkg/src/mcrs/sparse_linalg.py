"""Direct (default) and Krylov solvers for SPD and saddle-point systems.

Every solve checks its own relative residual and raises when the bound is
not met, so callers never have to.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-10
_REFINEMENT_STEPS = 3


class SolverError(RuntimeError):
    pass


class ConfigurationError(SolverError):
    """Singular saddle system: missing mean-value row or unstable element pair."""


def _rel_residual(A, x, b) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        nb = np.linalg.norm(b)
        r = np.linalg.norm(A @ x - b)
        out = r / nb if nb > 0 else r
    return float(out) if np.isfinite(out) else np.inf


_PIVOT_RATIO = 1e-13


def _factorize(A: sp.spmatrix, what: str):
    try:
        lu = spla.splu(sp.csc_matrix(A), permc_spec="MMD_ATA")
    except RuntimeError as exc:  # SuperLU: "Factor is exactly singular"
        raise ConfigurationError(f"{what} is singular: {exc}") from exc
    # numerically singular (e.g. pressure constant left free) shows up as a tiny pivot
    d = np.abs(lu.U.diagonal())
    if d.size and d.min() <= _PIVOT_RATIO * d.max():
        raise ConfigurationError(
            f"{what} is numerically singular (pivot ratio {d.min() / d.max():.1e}); "
            "missing mean-zero row or unstable element pair?")
    return lu


def _direct_solve(lu, A, b, tol: float) -> np.ndarray:
    if not np.all(np.isfinite(b)):
        raise SolverError("right-hand side contains non-finite values")
    x = lu.solve(b)
    for _ in range(_REFINEMENT_STEPS):
        if not np.all(np.isfinite(x)):
            break
        if _rel_residual(A, x, b) <= tol:
            return x
        x = x + lu.solve(b - A @ x)
    res = _rel_residual(A, x, b) if np.all(np.isfinite(x)) else np.inf
    if not np.isfinite(res):
        raise SolverError("residual overflowed (solution growing without bound, unstable step?)")
    if not res <= tol:
        raise SolverError(f"relative residual {res:.3e} exceeds tolerance {tol:.1e}")
    return x


class SPDSolver:
    """Reusable solver for a fixed SPD matrix."""

    def __init__(self, K, method: str = "direct"):
        self.K = sp.csr_matrix(K)
        self.method = method
        if method == "direct":
            self._lu = _factorize(self.K, "SPD matrix")
        elif method == "iterative":
            d = self.K.diagonal()
            if np.any(d <= 0):
                raise SolverError("non-positive diagonal: matrix is not SPD")
            self._prec = sp.diags(1.0 / d)
        else:
            raise ValueError(f"unknown solver method {method!r}")

    def solve(self, rhs, tol: float = DEFAULT_TOL) -> np.ndarray:
        if not tol > 0:
            raise ValueError("tol must be positive")
        rhs = np.asarray(rhs, dtype=float)
        if not np.any(rhs):
            return np.zeros_like(rhs)
        if self.method == "direct":
            return _direct_solve(self._lu, self.K, rhs, tol)
        x, info = spla.cg(self.K, rhs, rtol=0.1 * tol, atol=0.0, M=self._prec,
                          maxiter=10 * self.K.shape[0])
        res = _rel_residual(self.K, x, rhs)
        if info != 0 or not res <= tol:
            raise SolverError(f"conjugate gradients failed (info={info}, residual {res:.3e}); matrix indefinite?")
        return x


def solve_spd(K, rhs, tol: float = DEFAULT_TOL, method: str = "direct") -> np.ndarray:
    return SPDSolver(K, method).solve(rhs, tol)


@dataclass
class SaddleSystem:
    """Block system for (velocity, pressure, mean multipliers).

        [ K   -B^T  0  ] [u]   [ rhs_u ]
        [ -B   0    C^T] [p] = [-rhs_p ]
        [ 0    C    0  ] [l]   [  0    ]

    i.e. K u - B^T p = rhs_u, B u = rhs_p and C p = 0.  Rows and columns of
    velocity DOFs flagged in ``dirichlet_mask`` are replaced by identity
    (homogeneous boundary values).
    """

    K: sp.spmatrix
    B: sp.spmatrix
    constraints: np.ndarray
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    dirichlet_mask: np.ndarray | None = None

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.K.shape[0], self.B.shape[0], np.atleast_2d(self.constraints).shape[0]

    def matrix(self) -> sp.csr_matrix:
        return _saddle_matrix(self.K, self.B, self.constraints, self.dirichlet_mask)

    def rhs(self) -> np.ndarray:
        nv, npr, k = self.sizes
        b = np.concatenate([np.asarray(self.rhs_u, float), -np.asarray(self.rhs_p, float), np.zeros(k)])
        if self.dirichlet_mask is not None:
            b[:nv][np.asarray(self.dirichlet_mask, bool)] = 0.0
        return b


def _saddle_matrix(K, B, C, mask) -> sp.csr_matrix:
    K = sp.csr_matrix(K)
    B = sp.csr_matrix(B)
    C = sp.csr_matrix(np.atleast_2d(C))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        keep = sp.diags((~mask).astype(float))
        K = keep @ K @ keep + sp.diags(mask.astype(float))
        B = B @ keep
    A = sp.bmat([[K, -B.T, None], [-B, None, C.T], [None, C, None]], format="csr")
    A.sort_indices()
    return A


class SaddleSolver:
    """Factorises a saddle matrix once and solves for many right-hand sides."""

    def __init__(self, K, B, constraints, dirichlet_mask=None, method: str = "direct",
                 pressure_mass=None):
        self.constraints = np.atleast_2d(np.asarray(constraints, dtype=float))
        self.dirichlet_mask = None if dirichlet_mask is None else np.asarray(dirichlet_mask, bool)
        self.nv, self.np = K.shape[0], B.shape[0]
        self.A = _saddle_matrix(K, B, self.constraints, self.dirichlet_mask)
        self.method = method
        if method == "direct":
            self._lu = _factorize(self.A, "saddle-point system")
        elif method == "iterative":
            # block-diagonal preconditioner: exact velocity block, lumped pressure mass
            Kd = self.A[:self.nv, :self.nv]
            self._klu = _factorize(Kd, "velocity block")
            if pressure_mass is None:
                pd = np.ones(self.np)
            else:
                pd = np.asarray(sp.csr_matrix(pressure_mass).sum(axis=1)).ravel()
            inv_p = 1.0 / pd
            n = self.A.shape[0]

            def apply(r):
                out = np.empty_like(r)
                out[:self.nv] = self._klu.solve(r[:self.nv])
                out[self.nv:self.nv + self.np] = inv_p * r[self.nv:self.nv + self.np]
                out[self.nv + self.np:] = r[self.nv + self.np:]
                return out

            self._prec = spla.LinearOperator((n, n), matvec=apply)
        else:
            raise ValueError(f"unknown solver method {method!r}")

    def solve(self, rhs_u, rhs_p=None, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
        if not tol > 0:
            raise ValueError("tol must be positive")
        k = self.constraints.shape[0]
        rhs_p = np.zeros(self.np) if rhs_p is None else np.asarray(rhs_p, dtype=float)
        b = np.concatenate([np.asarray(rhs_u, dtype=float), -rhs_p, np.zeros(k)])
        if self.dirichlet_mask is not None:
            b[:self.nv][self.dirichlet_mask] = 0.0
        if not np.any(b):
            return np.zeros(self.nv), np.zeros(self.np)
        if self.method == "direct":
            x = _direct_solve(self._lu, self.A, b, tol)
        else:
            x, info = spla.minres(self.A, b, M=self._prec, rtol=0.01 * tol, maxiter=20 * self.A.shape[0])
            res = _rel_residual(self.A, x, b)
            if not res <= tol:
                raise SolverError(f"MINRES failed (info={info}, residual {res:.3e})")
        u, p = x[:self.nv], x[self.nv:self.nv + self.np]
        mean = self.constraints @ p
        scale = max(1.0, float(np.max(np.abs(p), initial=0.0)))
        if np.max(np.abs(mean)) > tol * scale:
            raise SolverError(f"pressure mean {np.max(np.abs(mean)):.3e} violates zero-mean constraint")
        return u, p


def solve_saddle(system: SaddleSystem, tol: float = DEFAULT_TOL, method: str = "direct"):
    solver = SaddleSolver(system.K, system.B, system.constraints, system.dirichlet_mask, method)
    return solver.solve(system.rhs_u, system.rhs_p, tol)
