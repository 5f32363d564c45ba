"""Sparse linear solves: preconditioned CG, dense oracle, mean-zero periodic.

Every public solve verifies the residual contract ||A u - b|| <= tol ||b||
before returning; a failed contract raises SolverError carrying the final
residual.  A sparse-LU multi right-hand-side path (`FactorizedSolver`)
backs the experiment layer; it honours the same contract and is
cross-checked against CG by the oracle-equivalence tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import LinearSystem

DENSE_CAP = 4096


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class SingularSystemError(SolverError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-10
    max_iter: int | None = None  # default 20 sqrt(n) + 1000
    preconditioner: str = "diagonal"  # "none" | "diagonal"

    def validate(self) -> "SolveOptions":
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"tolerance must lie in (0,1), got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max iterations must be >= 1")
        if self.preconditioner not in ("none", "diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        return self

    def iterations_for(self, n: int) -> int:
        return self.max_iter if self.max_iter is not None else int(20 * math.sqrt(n)) + 1000


def _check_residual(A, x, b, tol, what: str) -> float:
    nb = float(np.linalg.norm(b))
    r = float(np.linalg.norm(A @ x - b))
    if nb == 0.0:
        if r > tol:
            raise SolverError(f"{what}: nonzero residual {r} for zero rhs", r)
        return r
    if r > tol * nb:
        raise SolverError(f"{what}: residual {r / nb:.3e} above tolerance {tol:.1e}", r / nb)
    return r / nb


def solve_cg(system: LinearSystem, rhs: np.ndarray, opts: SolveOptions | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients on a positive-definite system."""
    opts = (opts or SolveOptions()).validate()
    b = np.asarray(rhs, dtype=float).reshape(-1)
    if b.size != system.n:
        raise ValueError(f"rhs size {b.size} != system size {system.n}")
    if not np.any(b):
        return np.zeros_like(b)
    M = None
    if opts.preconditioner == "diagonal":
        inv = 1.0 / system.diag
        M = spla.LinearOperator(system.matrix.shape, matvec=lambda v: inv * v)
    x, info = spla.cg(
        system.matrix,
        b,
        rtol=opts.tol * 0.5,
        atol=0.0,
        maxiter=opts.iterations_for(system.n),
        M=M,
    )
    if info > 0:
        r = float(np.linalg.norm(system.matrix @ x - b) / np.linalg.norm(b))
        raise SolverError(f"CG did not converge in {info} iterations", r)
    _check_residual(system.matrix, x, b, opts.tol, "CG")
    return x


def solve_dense(system: LinearSystem, rhs: np.ndarray) -> np.ndarray:
    """Direct factorization oracle for small systems (<= 4096 unknowns)."""
    if system.n > DENSE_CAP:
        raise SolverError(f"dense oracle capped at {DENSE_CAP} unknowns, got {system.n}")
    if system.kind == "torus":
        raise SingularSystemError(
            "torus operator is singular (constants); use solve_periodic_mean_zero"
        )
    b = np.asarray(rhs, dtype=float).reshape(-1)
    A = system.matrix.toarray()
    x = np.linalg.solve(A, b)
    _check_residual(system.matrix, x, b, 1e-12, "dense solve")
    return x


def project_mean_zero(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def solve_periodic_mean_zero(
    system: LinearSystem, rhs: np.ndarray, opts: SolveOptions | None = None
) -> np.ndarray:
    """Solve the singular torus system on the mean-zero subspace.

    The rhs is projected to mean zero, CG runs on the consistent system, and
    the returned solution has node-mean zero.
    """
    if system.kind != "torus":
        raise SolverError("mean-zero solve applies to torus systems")
    opts = (opts or SolveOptions()).validate()
    b = project_mean_zero(np.asarray(rhs, dtype=float).reshape(-1))
    if not np.any(b):
        return np.zeros_like(b)
    M = None
    if opts.preconditioner == "diagonal":
        inv = 1.0 / system.diag
        M = spla.LinearOperator(system.matrix.shape, matvec=lambda v: inv * v)
    x, info = spla.cg(
        system.matrix,
        b,
        rtol=opts.tol * 0.5,
        atol=0.0,
        maxiter=opts.iterations_for(system.n),
        M=M,
    )
    if info > 0:
        r = float(np.linalg.norm(system.matrix @ x - b) / np.linalg.norm(b))
        raise SolverError(f"periodic CG did not converge in {info} iterations", r)
    x = project_mean_zero(x)
    _check_residual(system.matrix, x, b, opts.tol, "periodic CG")
    return x


class FactorizedSolver:
    """Sparse-LU factorization reused across right-hand sides.

    Torus systems are pinned at node 0 (drop row/column 0, solve the reduced
    SPD system for a mean-zero rhs, then re-center); box systems factorize
    the interior block directly.  Residuals are verified per solve.
    """

    def __init__(self, system: LinearSystem, tol: float = 1e-10):
        self.system = system
        self.tol = tol
        if system.kind == "torus":
            n = system.n
            keep = np.arange(1, n)
            self._reduced = system.matrix[keep][:, keep].tocsc()
            self._lu = spla.splu(self._reduced)
        else:
            self._lu = spla.splu(system.matrix.tocsc())

    def _raw_solve(self, b: np.ndarray) -> np.ndarray:
        if self.system.kind == "torus":
            x = np.empty_like(b)
            x[0] = 0.0
            x[1:] = self._lu.solve(b[1:])
            return project_mean_zero(x)
        return self._lu.solve(b)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = np.asarray(rhs, dtype=float).reshape(-1)
        if self.system.kind == "torus":
            b = project_mean_zero(b)
        if not np.any(b):
            return np.zeros_like(b)
        x = self._raw_solve(b)
        # one step of iterative refinement keeps the residual contract tight
        # even on ill-conditioned large grids
        r = b - self.system.matrix @ x
        if np.linalg.norm(r) > 0.1 * self.tol * np.linalg.norm(b):
            x = x + self._raw_solve(r)
            if self.system.kind == "torus":
                x = project_mean_zero(x)
        _check_residual(self.system.matrix, x, b, self.tol, "LU")
        return x


class _CgSolver:
    def __init__(self, system: LinearSystem, opts: SolveOptions):
        self.system = system
        self.opts = opts

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.system.kind == "torus":
            return solve_periodic_mean_zero(self.system, rhs, self.opts)
        return solve_cg(self.system, rhs, self.opts)


def make_solver(system: LinearSystem, opts: SolveOptions | None = None, lu_limit: int = 300_000):
    """Reusable solver for many right-hand sides on one system.

    Sparse LU for 1d/2d problems below `lu_limit` unknowns (fill stays
    near-linear there); CG for 3d or very large systems.
    """
    opts = (opts or SolveOptions()).validate()
    if system.domain.d <= 2 and system.n <= lu_limit:
        return FactorizedSolver(system, tol=opts.tol)
    return _CgSolver(system, opts)


def solve_auto(system: LinearSystem, rhs: np.ndarray, opts: SolveOptions | None = None) -> np.ndarray:
    """One-shot contract-checked solve through `make_solver`."""
    return make_solver(system, opts).solve(rhs)
