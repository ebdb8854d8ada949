import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_spd, sample_cov_within
from detfree.errors import ConvergenceError
from detfree.krylov import SolverConfig
from detfree.rational import (
    apply_invsqrt,
    auto_order,
    build_invsqrt_quadrature,
    complete_elliptic_K,
    error_bound,
    jacobi_elliptic,
)
from detfree.sparse_linalg import SparseMatrix, SpectralBounds, as_operator, dense_operator


def invsqrt_dense(S):
    lam, V = np.linalg.eigh(S)
    return (V / np.sqrt(lam)) @ V.T


def test_error_bound_examples():
    assert error_bound(20, 1e-6, 1e6) == pytest.approx(math.exp(-394.784176 / 30.631021), rel=1e-6)
    assert error_bound(20, 1e-6, 1e6) == pytest.approx(2.5e-6, rel=0.02)
    assert error_bound(0, 1.0, 2.0) == 1.0
    assert error_bound(10, 1e-2, 1e2) ** 2 == pytest.approx(error_bound(20, 1e-2, 1e2), rel=1e-12)
    with pytest.raises(ValueError):
        error_bound(5, 1.0, 1.0)


def test_auto_order():
    b = SpectralBounds(1e-2, 1e2)
    N = auto_order(b)
    assert error_bound(N, b.m, b.M) <= 1e-12 < error_bound(N - 1, b.m, b.M)
    assert auto_order(SpectralBounds(1e-300, 1e300)) == 35


def test_elliptic_degenerate_modulus():
    for u in (0.0, 0.3, 1.2, 2.9):
        sn, cn, dn = jacobi_elliptic(u, 0.0)
        assert (sn, cn, dn) == pytest.approx((math.sin(u), math.cos(u), 1.0), abs=1e-15)
    assert complete_elliptic_K(0.0) == pytest.approx(math.pi / 2, abs=1e-15)
    with pytest.raises(ValueError):
        jacobi_elliptic(0.1, 1.0)
    with pytest.raises(ValueError):
        complete_elliptic_K(-0.1)


def _mp_jacobi(u, k):
    m = mpmath.mpf(k) ** 2
    return tuple(float(mpmath.ellipfun(f, u, m=m)) for f in ("sn", "cn", "dn"))


def test_elliptic_high_precision_oracle():
    mpmath.mp.dps = 40
    assert jacobi_elliptic(1.0, 0.5) == pytest.approx(_mp_jacobi(1.0, 0.5), abs=1e-12)
    for k in (0.1, 0.5, 0.9, 0.999999):
        K = float(mpmath.ellipk(mpmath.mpf(k) ** 2))
        assert complete_elliptic_K(k) == pytest.approx(K, rel=1e-13)
        for frac in (0.1, 0.5, 0.9):
            assert jacobi_elliptic(frac * K, k) == pytest.approx(_mp_jacobi(frac * K, k), abs=1e-13)


def test_elliptic_complementary_modulus_near_one():
    mpmath.mp.dps = 40
    kc = 1e-6
    k = math.sqrt((1 - kc) * (1 + kc))
    K = complete_elliptic_K(k, kc=kc)
    assert K == pytest.approx(float(mpmath.ellipk(1 - mpmath.mpf(kc) ** 2)), rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.99), st.floats(-5.0, 5.0))
def test_elliptic_identities(k, u):
    sn, cn, dn = jacobi_elliptic(u, k)
    assert sn * sn + cn * cn == pytest.approx(1.0, abs=1e-13)
    assert dn * dn + k * k * sn * sn == pytest.approx(1.0, abs=1e-13)


def test_quadrature_shape_and_sign():
    q = build_invsqrt_quadrature(SpectralBounds(0.1, 50.0), 12)
    assert q.N == 12 and q.weights.shape == q.shifts.shape == (12,)
    assert np.all(q.shifts > 0) and np.all(np.diff(q.shifts) > 0) and np.all(q.weights > 0)
    # collapsed interval: a scalar multiple of the identity
    q1 = build_invsqrt_quadrature(SpectralBounds(4.0, 4.0), 5)
    assert q1.evaluate(4.0) == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(ValueError):
        build_invsqrt_quadrature(SpectralBounds(1.0, 2.0), 0)


def test_quadrature_near_degenerate_interval():
    M = 3.0
    m = M * (1 - 1e-9)
    q = build_invsqrt_quadrature(SpectralBounds(m, M), 5)
    assert abs(q.evaluate(m) * math.sqrt(m) - 1.0) <= 1e-8


def test_quadrature_grid_error_example():
    q = build_invsqrt_quadrature(SpectralBounds(1e-2, 1e2), 10)
    assert q.max_relative_error() <= 10 * error_bound(10, 1e-2, 1e2)


ROUNDOFF = 1e-15


@pytest.mark.parametrize("m, M", [(1e-2, 1e2), (1.0, 1e4), (1e-6, 1e6), (0.5, 2.0)])
def test_quadrature_tracks_bound(m, M):
    errs = []
    for N in (5, 10, 15, 20, 25):
        e = build_invsqrt_quadrature(SpectralBounds(m, M), N).max_relative_error()
        b = error_bound(N, m, M)
        assert e <= 10 * max(b, ROUNDOFF)
        if b > 1e3 * ROUNDOFF:
            assert e >= b / 10
        errs.append(e)
    # monotone until the roundoff floor is reached
    for a, b in zip(errs, errs[1:]):
        assert b <= a or b <= 10 * ROUNDOFF


def test_floating_point_claim_not_reached_at_n20():
    # N=20 on [1e-6, 1e6] sits at the bound's level, far above double precision
    e = build_invsqrt_quadrature(SpectralBounds(1e-6, 1e6), 20).max_relative_error()
    assert 1e-7 < e < 10 * error_bound(20, 1e-6, 1e6)


def test_apply_invsqrt_trivial(rng):
    w = rng.standard_normal(7)
    I = as_operator(SparseMatrix.identity(7))
    q = build_invsqrt_quadrature(SpectralBounds(0.5, 2.0), 15)
    assert np.linalg.norm(apply_invsqrt(I, w, q) - w) <= 1e-8 * np.linalg.norm(w)
    D = as_operator(SparseMatrix.diag(np.full(7, 4.0)))
    q = build_invsqrt_quadrature(SpectralBounds(2.0, 8.0), 15)
    assert np.linalg.norm(apply_invsqrt(D, w, q) - w / 2) <= 1e-8 * np.linalg.norm(w)


def test_apply_invsqrt_dense_oracle(rng):
    S = random_spd(rng, 50, cond=1e3)
    lam = np.linalg.eigvalsh(S)
    q = build_invsqrt_quadrature(SpectralBounds(0.9 * lam[0], 1.1 * lam[-1]), 25)
    w = rng.standard_normal(50)
    ref = invsqrt_dense(S) @ w
    z = apply_invsqrt(dense_operator(S), w, q, SolverConfig(1e-12))
    assert np.linalg.norm(z - ref) <= 1e-8 * np.linalg.norm(ref)


def test_apply_invsqrt_twice_is_inverse(rng):
    S = random_spd(rng, 20, cond=100)
    q = build_invsqrt_quadrature(SpectralBounds(0.9, 110.0), auto_order(SpectralBounds(0.9, 110.0)))
    w = rng.standard_normal(20)
    op = dense_operator(S)
    z = apply_invsqrt(op, apply_invsqrt(op, w, q), q)
    assert np.linalg.norm(S @ z - w) <= 10 * (1e-10 + 1e-12) * 100 * np.linalg.norm(w)


def test_apply_invsqrt_nonconvergence(rng):
    S = random_spd(rng, 30, cond=1e4)
    q = build_invsqrt_quadrature(SpectralBounds(0.5, 2e4), 10)
    with pytest.raises(ConvergenceError) as info:
        apply_invsqrt(dense_operator(S), rng.standard_normal(30), q, SolverConfig(1e-12, max_iters=3))
    assert info.value.stats is not None and not info.value.stats.converged


def test_invsqrt_sampling_covariance():
    r = np.random.default_rng(5)
    S = random_spd(r, 12, cond=30)
    b = SpectralBounds(0.9, 33.0)
    q = build_invsqrt_quadrature(b, auto_order(b))
    k = 50_000
    # every draw is a linear map of w; apply it column by column through the solver
    Z = np.column_stack([apply_invsqrt(dense_operator(S), e, q) for e in np.eye(12)])
    W = r.standard_normal((k, 12))
    samples = W @ Z.T
    assert sample_cov_within(samples, np.linalg.inv(S)) <= 5.0
