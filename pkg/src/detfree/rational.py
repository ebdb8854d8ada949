"""Rational approximation of ``x**-0.5`` and its action on vectors.

Starting from ``x**-0.5 = (2/pi) * int_0^inf dt / (t**2 + x)`` and the
substitution ``t = sqrt(m) * sc(u | k')`` with ``k'**2 = 1 - m/M``, the
midpoint rule on ``u in (0, K(k'))`` gives

    x**-0.5 ~= sum_j alpha_j / (x + sigma_j)

with real, strictly positive shifts ``sigma_j``. Every shifted system is
therefore SPD and all of them can be solved together by multi-shift CG.
The relative error on ``[m, M]`` decays like
``exp(-2 pi^2 N / (ln(M/m) + 3))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .krylov import SolverConfig, shifted_cg_solve
from .sparse_linalg import LinearOperator, SpectralBounds

DEFAULT_TARGET = 1e-12
MAX_AUTO_ORDER = 35

_AGM_TOL = 4 * np.finfo(float).eps
_AGM_MAX_STEPS = 64


def _check_modulus(k, kc):
    if kc is None:
        if not 0.0 <= k < 1.0:
            raise ValueError(f"modulus must lie in [0, 1), got {k}")
        kc = math.sqrt((1.0 - k) * (1.0 + k))
    elif not 0.0 < kc <= 1.0:
        raise ValueError(f"complementary modulus must lie in (0, 1], got {kc}")
    return kc


def complete_elliptic_K(k, kc=None):
    """Complete elliptic integral of the first kind, ``K(k)``.

    Pass the complementary modulus ``kc = sqrt(1 - k**2)`` directly when
    ``k`` is close to 1 to avoid cancellation.
    """
    a, b = 1.0, _check_modulus(k, kc)
    for _ in range(_AGM_MAX_STEPS):
        if abs(a - b) <= _AGM_TOL * a:
            break
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return math.pi / (a + b)


def jacobi_elliptic(u, k, kc=None):
    """Jacobi ``(sn, cn, dn)`` of real ``u`` via the descending Landen/AGM scheme."""
    kc = _check_modulus(k, kc)
    a, b, c = 1.0, kc, k
    a_s, c_s = [a], [c]
    while abs(c) > _AGM_TOL * a and len(a_s) < _AGM_MAX_STEPS:
        a, b, c = 0.5 * (a + b), math.sqrt(a * b), 0.5 * (a - b)
        a_s.append(a)
        c_s.append(c)
    steps = len(a_s) - 1
    phi = (2.0**steps) * a_s[-1] * u
    phi_next = phi
    for i in range(steps, 0, -1):
        phi_next = phi
        phi = 0.5 * (phi + math.asin(c_s[i] / a_s[i] * math.sin(phi)))
    sn, cn = math.sin(phi), math.cos(phi)
    dn = cn / math.cos(phi_next - phi) if steps else 1.0
    return sn, cn, dn


def error_bound(N, m, M):
    """Decay rate ``exp(-2 pi^2 N / (ln(M/m) + 3))`` of the quadrature error."""
    if not 0 < m < M:
        raise ValueError(f"need 0 < m < M, got m={m}, M={M}")
    if N < 0:
        raise ValueError("N must be non-negative")
    return math.exp(-2.0 * math.pi**2 * N / (math.log(M / m) + 3.0))


def auto_order(bounds: SpectralBounds, target=DEFAULT_TARGET, cap=MAX_AUTO_ORDER):
    """Smallest N whose error bound reaches ``target``, capped at ``cap``."""
    if bounds.m >= bounds.M:
        return 1
    need = math.log(1.0 / target) * (math.log(bounds.M) - math.log(bounds.m) + 3.0) / (2.0 * math.pi**2)
    return int(min(cap, max(1, math.ceil(need - 1e-12))))


@dataclass(frozen=True, eq=False)
class Quadrature:
    weights: np.ndarray
    shifts: np.ndarray
    bounds: SpectralBounds

    @property
    def N(self):
        return self.weights.size

    def evaluate(self, lam):
        """Scalar rational function ``r(lam) = sum_j w_j / (lam + s_j)``."""
        lam = np.asarray(lam, dtype=np.float64)
        return (self.weights / (lam[..., None] + self.shifts)).sum(axis=-1)

    def max_relative_error(self, points=1000):
        lam = np.geomspace(self.bounds.m, self.bounds.M, points)
        return float(np.max(np.abs(self.evaluate(lam) * np.sqrt(lam) - 1.0)))


def build_invsqrt_quadrature(bounds: SpectralBounds, N: int) -> Quadrature:
    m, M = bounds.m, bounds.M
    if not 0.0 < m <= M:
        raise ValueError("quadrature needs 0 < m <= M")
    if M == m:
        # a collapsed interval (scalar multiple of I) still needs a nonzero modulus
        M = m * (1.0 + 1e-6)
        bounds = SpectralBounds(m, M)
    if N < 1:
        raise ValueError("N must be >= 1")
    kc = math.sqrt(m / M)
    kp = math.sqrt((1.0 - kc) * (1.0 + kc))
    K = complete_elliptic_K(kp, kc=kc)
    u = (np.arange(N) + 0.5) * K / N
    sn, cn, dn = np.array([jacobi_elliptic(ui, kp, kc=kc) for ui in u]).T
    # near K, cn and dn are small; the quarter-period reflection keeps their
    # relative accuracy (u_j and K - u_j are both nodes)
    upper = u > 0.5 * K
    mirror = N - 1 - np.flatnonzero(upper)
    s_t, c_t, d_t = sn[mirror], cn[mirror], dn[mirror]
    sn[upper] = c_t / d_t
    cn[upper] = kc * s_t / d_t
    dn[upper] = kc / d_t
    shifts = m * (sn / cn) ** 2
    weights = 2.0 * K * math.sqrt(m) / (math.pi * N) * dn / cn**2
    order = np.argsort(shifts, kind="stable")
    w, s = weights[order], shifts[order]
    w.flags.writeable = False
    s.flags.writeable = False
    return Quadrature(w, s, bounds)


def apply_invsqrt(op: LinearOperator, w, quad: Quadrature, cfg: SolverConfig = SolverConfig()):
    """Approximate ``op**-0.5 @ w`` with one multi-shift CG solve."""
    X, stats = shifted_cg_solve(op, w, quad.shifts, cfg)
    if not stats.converged:
        raise ConvergenceError(
            f"multi-shift CG stopped at relative residual {stats.final_relative_residual:.3e} "
            f"after {stats.iterations} iterations",
            stats,
        )
    return quad.weights @ X
