"""Conjugate gradient and multi-shift conjugate gradient.

The multi-shift solver runs CG on the smallest-shift ("seed") system and
carries every other shift along through the collinear-residual recurrences,
so the operator is applied once per iteration no matter how many shifts are
requested.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .sparse_linalg import LinearOperator


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iters: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def iteration_limit(self, dim):
        return self.max_iters if self.max_iters is not None else 10 * dim


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    final_relative_residual: float
    converged: bool
    applications: int = 0
    residual_history: tuple = field(default=(), repr=False)


def cg_solve(op: LinearOperator, b, cfg: SolverConfig = SolverConfig(), callback=None):
    """Solve ``op x = b`` for SPD ``op``.

    Returns ``(x, stats)``. On non-convergence the iterate with the smallest
    residual is returned and ``stats.converged`` is False. ``callback(x)`` is
    called after every iteration with the current iterate.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, SolveStats(0, 0.0, True, 0, (0.0,))
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    history = [1.0]
    best_x, best_res = x.copy(), 1.0
    limit = cfg.iteration_limit(b.size)
    it = 0
    while it < limit:
        q = op(p)
        alpha = rr / float(p @ q)
        x += alpha * p
        r -= alpha * q
        rr_new = float(r @ r)
        it += 1
        res = np.sqrt(rr_new) / bnorm
        history.append(res)
        if callback is not None:
            callback(x)
        if res <= cfg.tol:
            return x, SolveStats(it, res, True, it, tuple(history))
        if res < best_res:
            best_res = res
            best_x = x.copy()
        beta = rr_new / rr
        p = r + beta * p
        rr = rr_new
    return best_x, SolveStats(it, best_res, False, it, tuple(history))


def shifted_cg_solve(op: LinearOperator, b, shifts, cfg: SolverConfig = SolverConfig()):
    """Solve ``(op + s I) x_s = b`` for every shift ``s`` at once.

    ``shifts`` must be non-negative and ascending; convergence is monitored on
    the first (smallest) shift, whose system is the hardest. Returns an
    ``(len(shifts), n)`` array and the seed-system stats.
    """
    b = np.asarray(b, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.float64)
    if shifts.ndim != 1 or shifts.size == 0:
        raise ValueError("need a non-empty 1-D array of shifts")
    if np.any(shifts < 0) or np.any(np.diff(shifts) < 0):
        raise ValueError("shifts must be non-negative and sorted ascending")
    n, n_shift = b.size, shifts.size
    X = np.zeros((n_shift, n))
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return X, SolveStats(0, 0.0, True, 0, (0.0,))

    seed = shifts[0]
    delta = shifts - seed
    P = np.tile(b, (n_shift, 1))
    r = b.copy()
    rr = float(r @ r)
    zeta = np.ones(n_shift)
    zeta_old = np.ones(n_shift)
    alpha_old, beta_old = 1.0, 0.0
    active = np.ones(n_shift, dtype=np.uint8)
    history = [1.0]
    limit = cfg.iteration_limit(n)
    it = 0
    res = 1.0
    while it < limit:
        p = P[0]
        q = op(p)
        if seed != 0.0:
            q = q + seed * p
        alpha = rr / float(p @ q)
        r -= alpha * q
        rr_new = float(r @ r)
        beta = rr_new / rr

        denom = alpha * beta_old * (zeta_old - zeta) + zeta_old * alpha_old * (1.0 + delta * alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            zeta_new = np.where(active, zeta * zeta_old * alpha_old / denom, 0.0)
            ratio = np.where(active, zeta_new / zeta, 0.0)
        alpha_s = alpha * ratio
        beta_s = beta * ratio * ratio
        _backend.multishift_update(X, P, r, alpha_s, zeta_new, beta_s, active)

        it += 1
        res = np.sqrt(rr_new) / bnorm
        history.append(res)
        # shifts whose residual is far below target stop updating; avoids underflow
        settled = np.abs(zeta_new) * res < 1e-3 * cfg.tol
        settled[0] = False
        active[settled] = 0
        zeta_old, zeta = zeta, np.where(active, zeta_new, 1.0)
        alpha_old, beta_old = alpha, beta
        rr = rr_new
        if res <= cfg.tol:
            return X, SolveStats(it, res, True, it, tuple(history))
    return X, SolveStats(it, res, False, it, tuple(history))
