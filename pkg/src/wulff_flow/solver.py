"""Symmetric positive definite solves for the scalar system shared by all unknowns."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import IndefiniteDetected, NotConverged


@dataclass(frozen=True)
class SolverConfig:
    method: str = "conjugate_gradient"     # or "dense_cholesky" (debugging only)
    tol: float = 1e-10
    max_iter: int | None = None            # defaults to max(N, 1000)
    preconditioner: str = "jacobi"         # or "none"

    def __post_init__(self):
        if not 0 < self.tol <= 1e-4:
            raise ValueError("tol must lie in (0, 1e-4]")
        if self.method not in ("conjugate_gradient", "dense_cholesky"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.preconditioner not in ("jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float


def _pcg(S, b, tol, max_iter, dinv):
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveResult(x, 0, 0.0)
    r = b.copy()
    z = r * dinv if dinv is not None else r
    p = z.copy()
    rz = r @ z
    best_x, best_res = x.copy(), 1.0
    for it in range(1, max_iter + 1):
        Sp = S @ p
        curv = p @ Sp
        if not curv > 0:
            raise IndefiniteDetected(f"non-positive curvature p.Sp = {curv:.3e} at iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Sp
        res = np.linalg.norm(r) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            true_res = np.linalg.norm(b - S @ x) / bnorm
            if true_res <= tol:
                return SolveResult(x, it, true_res)
            r = b - S @ x       # drifted recurrence: restart from the true residual
            z = r * dinv if dinv is not None else r
            p = z.copy()
            rz = r @ z
            continue
        z = r * dinv if dinv is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NotConverged(f"CG did not reach tol {tol:.1e} in {max_iter} iterations "
                       f"(best residual {best_res:.3e})", x=best_x, iterations=max_iter,
                       residual=best_res)


def solve_spd(S, b, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Solve ``S x = b`` for symmetric positive definite ``S``."""
    b = np.asarray(b, float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side is not finite")
    if cfg.method == "dense_cholesky":
        Sd = S.toarray() if sp.issparse(S) else np.asarray(S, float)
        try:
            c = sla.cho_factor(Sd)
        except sla.LinAlgError as exc:
            raise IndefiniteDetected(f"Cholesky failed: {exc}") from None
        x = sla.cho_solve(c, b)
        bn = np.linalg.norm(b)
        return SolveResult(x, 1, float(np.linalg.norm(Sd @ x - b) / bn) if bn else 0.0)
    S = sp.csr_matrix(S)
    n = S.shape[0]
    max_iter = cfg.max_iter if cfg.max_iter is not None else max(n, 1000)
    dinv = None
    if cfg.preconditioner == "jacobi":
        d = S.diagonal()
        if np.any(d <= 0):
            raise IndefiniteDetected("non-positive diagonal entry in SPD system")
        dinv = 1.0 / d
    return _pcg(S, b, cfg.tol, max_iter, dinv)


def solve_block(S, B, cfg: SolverConfig = SolverConfig()):
    """Solve ``S X = B`` column by column with the same matrix; returns ``(X, results)``."""
    B = np.asarray(B, float)
    cols = B.reshape(B.shape[0], -1)
    results = [solve_spd(S, cols[:, j], cfg) for j in range(cols.shape[1])]
    X = np.stack([r.x for r in results], axis=1).reshape(B.shape)
    return X, results
