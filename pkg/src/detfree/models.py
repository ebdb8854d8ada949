"""Linear Gaussian model families.

Each model observes ``y = A x + eps`` with latent ``x ~ N(mu, Sigma_theta)``
(or precision ``Q_theta``) and noise ``eps ~ N(0, tau^-1 I)``, so that
marginally ``y ~ N(A mu, S_theta)`` with ``S_theta = tau^-1 I + A Sigma A^T``.
Parameters live in log space; ``theta`` is a float array ordered as
``model.param_names``.

Models expose one of two routes for the auxiliary-variable sampler:

* ``"covariance"``: ``sparse_covariance(theta)`` and a matrix-free
  ``S_operator(theta)``;
* ``"precision"``: ``sparse_precision(theta)`` plus an exact latent sampler
  or spectral bounds for the Krylov one.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import _backend
from .errors import ConvergenceError, SizeGuardError
from .krylov import SolverConfig, cg_solve
from .sparse_linalg import (
    LinearOperator,
    SparseMatrix,
    SpectralBounds,
    as_operator,
    banded_factorize,
    dense_cholesky,
    gershgorin_bounds,
    spmv,
    symmetrize,
)

LOG2PI = math.log(2.0 * math.pi)
LOG_PARAM_BOUND = 20.0
LOGNORMAL_SCALE = 3.0
DENSE_GUARD = 20_000


def _bounded_uniform_logpdf(theta, names=None):
    theta = np.asarray(theta, dtype=float)
    if np.any(np.abs(theta) > LOG_PARAM_BOUND) or not np.all(np.isfinite(theta)):
        return -np.inf
    return -theta.size * math.log(2.0 * LOG_PARAM_BOUND)


def _check_guard(n, max_dim):
    if n > max_dim:
        raise SizeGuardError(f"dense computation on dimension {n} exceeds the guard {max_dim}")


class GaussianModel:
    """Shared plumbing for the three families."""

    family = "abstract"
    route = "covariance"
    param_names: tuple = ()

    def __init__(self, y, A: SparseMatrix | None = None):
        self.y = np.asarray(y, dtype=np.float64)
        self.A = A
        if A is not None and A.n_rows != self.y.size:
            raise ValueError("observation matrix rows do not match data length")

    @property
    def n(self):
        return self.y.size

    @property
    def latent_dim(self):
        return self.n if self.A is None else self.A.n_cols

    @property
    def n_params(self):
        return len(self.param_names)

    def params(self, **values):
        missing = set(self.param_names) - set(values)
        extra = set(values) - set(self.param_names)
        if missing or extra:
            raise KeyError(f"expected parameters {self.param_names}")
        return np.array([float(values[k]) for k in self.param_names])

    def as_dict(self, theta):
        return dict(zip(self.param_names, (float(t) for t in theta)))

    def with_data(self, y):
        raise NotImplementedError

    # observation operator
    def apply_A(self, x):
        return x if self.A is None else spmv(self.A, x)

    def apply_At(self, v):
        return v if self.A is None else spmv(self.A.T, v)

    def A_dense(self):
        return np.eye(self.n) if self.A is None else self.A.to_dense()

    def mean(self, theta):
        return np.zeros(self.latent_dim)

    def obs_mean(self, theta):
        return self.apply_A(self.mean(theta))

    def noise_precision(self, theta):
        return math.exp(self.as_dict(theta)["ln_tau"])

    def log_prior(self, theta):
        return _bounded_uniform_logpdf(theta)

    def prior_sample(self, rng):
        # the bounded log-uniform box is far wider than any posterior; start near the origin
        return rng.uniform(-1.0, 1.0, size=self.n_params)

    def S_operator(self, theta, cfg: SolverConfig | None = None) -> LinearOperator:
        raise NotImplementedError

    def S_dense(self, theta):
        raise NotImplementedError

    def exact_loglik(self, theta):
        """Marginal log-likelihood through Cholesky factorizations (baseline path)."""
        return marginal_loglik_dense(self, theta)

    def simulate_latent(self, theta, rng):
        raise NotImplementedError


# --- random-pattern precision --------------------------------------------------

@dataclass(frozen=True, eq=False)
class RandomPrecisionFactors:
    """``Q = U diag(d) U^T`` with ``U`` a product of Givens rotations."""

    Q: SparseMatrix
    diag: np.ndarray
    rot_i: np.ndarray
    rot_j: np.ndarray
    cos: np.ndarray
    sin: np.ndarray

    def apply_rotations(self, x):
        """Return ``U x``."""
        x = np.array(x, dtype=np.float64)
        _backend.givens_apply(x, self.rot_i, self.rot_j, self.cos, self.sin)
        return x


def random_precision_factors(n, seed=None, n_rotations=None, nnz_per_row=3.0):
    """Rotate a random diagonal by Givens rotations on random index pairs.

    Without ``n_rotations`` the loop stops once the pattern holds about
    ``nnz_per_row * n`` entries. The diagonal is drawn from ``(0, 1/2)``, so the
    spectrum of ``Q`` sits inside ``[0, 1/2]``.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.0, 0.5, size=n)
    rows = [{i: d[i]} for i in range(n)]
    nnz = n
    target = min(nnz_per_row * n, n * n)
    limit = n_rotations if n_rotations is not None else 50 * n
    rot_i, rot_j, cos_, sin_ = [], [], [], []
    batch = 4096
    k = 0
    while k < limit and (n_rotations is not None or nnz < target):
        if k % batch == 0:
            bi = rng.integers(0, n, size=batch)
            bj = rng.integers(0, n - 1, size=batch)
            bj = bj + (bj >= bi)
            phi = rng.uniform(0.0, 2.0 * math.pi, size=batch)
            bc, bs = np.cos(phi), np.sin(phi)
        i, j, c, s = int(bi[k % batch]), int(bj[k % batch]), bc[k % batch], bs[k % batch]
        k += 1
        ri, rj = rows[i], rows[j]
        a, b, dd = ri[i], ri.get(j), rj[j]
        if b is None:
            b = 0.0
            nnz += 2
        for col in (ri.keys() | rj.keys()) - {i, j}:
            qi = ri.get(col)
            qj = rj.get(col)
            if qi is None:
                qi = 0.0
                nnz += 2
            if qj is None:
                qj = 0.0
                nnz += 2
            ni, nj = c * qi - s * qj, s * qi + c * qj
            ri[col] = ni
            rj[col] = nj
            rows[col][i] = ni
            rows[col][j] = nj
        ri[i] = c * c * a - 2.0 * c * s * b + s * s * dd
        rj[j] = s * s * a + 2.0 * c * s * b + c * c * dd
        ri[j] = rj[i] = c * s * (a - dd) + (c * c - s * s) * b
        rot_i.append(i)
        rot_j.append(j)
        cos_.append(c)
        sin_.append(s)
    r_idx = np.repeat(np.arange(n), [len(r) for r in rows])
    c_idx = np.fromiter((col for r in rows for col in r), dtype=np.int64, count=r_idx.size)
    vals = np.fromiter((v for r in rows for v in r.values()), dtype=np.float64, count=r_idx.size)
    # rotations are applied in exactly mirrored arithmetic, so Q is symmetric bit for bit
    Q = SparseMatrix.from_coo(r_idx, c_idx, vals, (n, n), symmetric=True, sum_duplicates=False)
    return RandomPrecisionFactors(
        Q,
        d,
        np.array(rot_i, dtype=np.int64),
        np.array(rot_j, dtype=np.int64),
        np.array(cos_, dtype=np.float64),
        np.array(sin_, dtype=np.float64),
    )


def generate_random_precision(n, seed=None, n_rotations=None) -> SparseMatrix:
    return random_precision_factors(n, seed, n_rotations).Q


class RandomPrecisionModel(GaussianModel):
    """``y ~ N(0, (Q / gamma + gamma I)^-1)`` with a fixed sparse ``Q``.

    There is no observation noise, so ``S_theta = Q_theta^-1`` and
    ``S_theta^-1 = Q_theta`` is available by a single product.
    """

    family = "random_precision"
    route = "precision"
    param_names = ("ln_gamma",)

    def __init__(self, Q: SparseMatrix, y, factors: RandomPrecisionFactors | None = None):
        super().__init__(y, None)
        if Q.n_rows != self.y.size:
            raise ValueError("Q does not match the data length")
        self.Q = Q
        self.factors = factors
        gb = gershgorin_bounds(Q) if Q.nnz else SpectralBounds(1.0, 1.0)
        self._q_upper = gb.M
        if factors is not None:
            self._q_lower = max(0.0, float(factors.diag.min()))
            self._q_upper = min(self._q_upper, float(factors.diag.max()))
        else:
            # Q is positive semi-definite by construction
            self._q_lower = 0.0

    def with_data(self, y):
        return RandomPrecisionModel(self.Q, y, self.factors)

    def noise_precision(self, theta):
        return math.inf

    def _gamma(self, theta):
        return math.exp(theta[0])

    def sparse_precision(self, theta) -> SparseMatrix:
        g = self._gamma(theta)
        Qs = self.Q.to_scipy() / g + g * sp.identity(self.n, format="csr")
        return SparseMatrix.from_scipy(Qs, symmetric=True)

    def precision_operator(self, theta) -> LinearOperator:
        g = self._gamma(theta)
        return as_operator(self.Q, 1.0 / g, g)

    def precision_bounds(self, theta) -> SpectralBounds:
        g = self._gamma(theta)
        return SpectralBounds(g + self._q_lower / g, g + self._q_upper / g)

    def S_operator(self, theta, cfg=None):
        cfg = cfg or SolverConfig(tol=1e-12)
        Qop = self.precision_operator(theta)

        def apply(v):
            x, stats = cg_solve(Qop, v, cfg)
            if not stats.converged:
                raise ConvergenceError("CG on the precision did not converge", stats)
            return x

        return LinearOperator(self.n, apply)

    def S_dense(self, theta):
        _check_guard(self.n, DENSE_GUARD)
        return np.linalg.inv(self.sparse_precision(theta).to_dense())

    def exact_loglik(self, theta, max_dim=DENSE_GUARD):
        _check_guard(self.n, max_dim)
        F = dense_cholesky(self.sparse_precision(theta).to_dense())
        r = self.y - self.obs_mean(theta)
        Lr = F.lower.T @ r
        return 0.5 * F.logdet() - 0.5 * float(Lr @ Lr) - 0.5 * self.n * LOG2PI

    def simulate_latent(self, theta, rng):
        g = self._gamma(theta)
        w = rng.standard_normal(self.n)
        if self.factors is not None:
            return self.factors.apply_rotations(w / np.sqrt(self.factors.diag / g + g))
        _check_guard(self.n, DENSE_GUARD)
        F = dense_cholesky(self.sparse_precision(theta).to_dense())
        return np.linalg.solve(F.lower.T, w)


# --- Wendland-kernel GP ------------------------------------------------------

def wendland_kernel(r, s2, l):
    """``s2 * (1 - r/l)_+^4 * (4 r/l + 1)``."""
    r = np.asarray(r, dtype=np.float64)
    t = np.clip(1.0 - r / l, 0.0, None)
    out = s2 * t**4 * (4.0 * r / l + 1.0)
    return float(out) if out.ndim == 0 else out


def _cell_index(points, cell):
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    ncx = int(span[0] // cell) + 1
    ncy = int(span[1] // cell) + 1
    ix = np.minimum(((points[:, 0] - lo[0]) // cell).astype(np.int64), ncx - 1)
    iy = np.minimum(((points[:, 1] - lo[1]) // cell).astype(np.int64), ncy - 1)
    return ix, iy, ncx, ncy


def wendland_pairs(points, l, s2):
    """Upper-triangle pairs closer than ``l`` with their kernel values (spatial binning)."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, np.empty(0)
    return _backend.wendland_pairs(points, *spatial_bins(points, l), float(l), float(s2))


def spatial_bins(points, l):
    """Bucket points into square cells at least ``l`` wide.

    Returns ``(order, cell_start, cell_of, ncx, ncy)``: points sorted by cell,
    CSR-style cell offsets into ``order``, each point's cell and the grid shape.
    """
    n = points.shape[0]
    span = float((points.max(axis=0) - points.min(axis=0)).max())
    # cap the number of cells near n
    cell = max(l, span / max(1.0, math.sqrt(n)))
    ix, iy, ncx, ncy = _cell_index(points, cell)
    cell_of = iy * ncx + ix
    order = np.argsort(cell_of, kind="stable").astype(np.int64)
    cell_start = np.zeros(ncx * ncy + 1, dtype=np.int64)
    np.cumsum(np.bincount(cell_of, minlength=ncx * ncy), out=cell_start[1:])
    return order, cell_start, cell_of, ncx, ncy


def build_sparse_covariance(points, s2, l) -> SparseMatrix:
    if not l > 0:
        raise ValueError("support radius must be positive")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = points.shape[0]
    rows, cols, vals = wendland_pairs(points, l, s2)
    diag = np.arange(n)
    return SparseMatrix.from_coo(
        np.concatenate((rows, cols, diag)),
        np.concatenate((cols, rows, diag)),
        np.concatenate((vals, vals, np.full(n, float(s2)))),
        (n, n),
        symmetric=True,
        sum_duplicates=False,
    )


@dataclass(frozen=True, eq=False)
class MeanFunction:
    """``beta_0 + sum_h beta_h exp(-|s - c_h|^2 / (2 scale^2))``."""

    beta: np.ndarray
    centers: np.ndarray
    scale: float

    def design(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        d2 = ((points[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=-1)
        return np.column_stack((np.ones(points.shape[0]), np.exp(-0.5 * d2 / self.scale**2)))

    def __call__(self, points):
        return self.design(points) @ self.beta


def kmeans(points, H, seed=None, max_iter=100):
    """Lloyd's algorithm from ``H`` distinct random data points."""
    rng = np.random.default_rng(seed)
    uniq = np.unique(points, axis=0)
    if uniq.shape[0] < H:
        raise ValueError(f"need at least {H} distinct points")
    centers = uniq[rng.choice(uniq.shape[0], size=H, replace=False)].copy()
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        label = d2.argmin(axis=1)
        new = centers.copy()
        for h in range(H):
            members = points[label == h]
            if members.size:
                new[h] = members.mean(axis=0)
        if np.array_equal(new, centers):
            break
        centers = new
    return centers


def fit_mean_function(points, y, H=5, seed=None, centers=None) -> MeanFunction:
    """k-means centres, scale = smallest centre distance, least-squares coefficients."""
    if H < 1:
        raise ValueError("need H >= 1")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    y = np.asarray(y, dtype=np.float64)
    if centers is None:
        centers = kmeans(points, H, seed)
    centers = np.asarray(centers, dtype=np.float64)
    if H == 1:
        scale = 1.0
    else:
        cd = np.sqrt(((centers[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1))
        scale = float(cd[np.triu_indices(H, 1)].min())
        if scale <= 0:
            raise ValueError("duplicate basis centres")
    proto = MeanFunction(np.zeros(H + 1), centers, scale)
    X = proto.design(points)
    if np.linalg.matrix_rank(X) < H + 1:
        raise ValueError("rank-deficient mean-function design")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return MeanFunction(beta, centers, scale)


class WendlandGPModel(GaussianModel):
    """GP observed at its own locations with a compactly supported Wendland kernel."""

    family = "wendland_gp"
    route = "covariance"
    param_names = ("ln_tau", "ln_s2", "ln_l")
    # log-normal(0, 3) on tau, s, l; ln s^2 = 2 ln s doubles the scale
    _prior_scales = np.array([LOGNORMAL_SCALE, 2.0 * LOGNORMAL_SCALE, LOGNORMAL_SCALE])

    def __init__(self, points, y, mean_function: MeanFunction | None = None):
        super().__init__(y, None)
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if self.points.shape[0] != self.y.size:
            raise ValueError("points and data differ in length")
        self.mean_function = mean_function
        self._mu = mean_function(self.points) if mean_function is not None else np.zeros(self.n)

    def with_data(self, y):
        return WendlandGPModel(self.points, y, self.mean_function)

    def mean(self, theta):
        return self._mu

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            return -np.inf
        z = theta / self._prior_scales
        return float(-0.5 * z @ z - np.log(self._prior_scales).sum() - 0.5 * theta.size * LOG2PI)

    def prior_sample(self, rng):
        return rng.standard_normal(self.n_params) * self._prior_scales

    def _unpack(self, theta):
        d = self.as_dict(theta)
        return math.exp(d["ln_tau"]), math.exp(d["ln_s2"]), math.exp(d["ln_l"])

    def sparse_covariance(self, theta) -> SparseMatrix:
        _, s2, l = self._unpack(theta)
        return build_sparse_covariance(self.points, s2, l)

    def S_operator(self, theta, cfg=None, cov: SparseMatrix | None = None):
        tau = self._unpack(theta)[0]
        cov = cov if cov is not None else self.sparse_covariance(theta)
        return as_operator(cov, 1.0, 1.0 / tau)

    def S_bounds(self, theta, cov: SparseMatrix | None = None) -> SpectralBounds:
        tau = self._unpack(theta)[0]
        cov = cov if cov is not None else self.sparse_covariance(theta)
        upper = gershgorin_bounds(cov).M
        return SpectralBounds(1.0 / tau, 1.0 / tau + upper)

    def S_dense(self, theta):
        _check_guard(self.n, DENSE_GUARD)
        tau = self._unpack(theta)[0]
        return self.sparse_covariance(theta).to_dense() + np.eye(self.n) / tau

    def simulate_latent(self, theta, rng):
        _check_guard(self.n, DENSE_GUARD)
        F = dense_cholesky(self.sparse_covariance(theta).to_dense())
        return self._mu + F.lower @ rng.standard_normal(self.n)


# --- GMRF with a whitening matrix ---------------------------------------------

def build_grid_laplacian(nx, ny) -> SparseMatrix:
    """Five-point Laplacian (4 on the diagonal, -1 per in-grid neighbour), x-fastest ordering."""
    if nx < 1 or ny < 1:
        raise ValueError("grid dimensions must be >= 1")
    idx = np.arange(nx * ny).reshape(ny, nx)
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [np.full(nx * ny, 4.0)]
    for a, b in ((idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])):
        a, b = a.ravel(), b.ravel()
        rows += [a, b]
        cols += [b, a]
        vals += [np.full(a.size, -1.0)] * 2
    m = nx * ny
    return SparseMatrix.from_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                                 (m, m), symmetric=True, sum_duplicates=False)


def grid_nodes(nx, ny):
    """Node coordinates on ``[0, 1]^2`` in the Laplacian's ordering."""
    xs = np.linspace(0.0, 1.0, nx) if nx > 1 else np.zeros(1)
    ys = np.linspace(0.0, 1.0, ny) if ny > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack((gx.ravel(), gy.ravel()))


def build_interpolation(obs_points, nx, ny) -> SparseMatrix:
    """Bilinear interpolation from grid nodes to points in the unit square."""
    if nx < 2 or ny < 2:
        raise ValueError("interpolation needs at least 2 nodes per axis")
    pts = np.asarray(obs_points, dtype=np.float64).reshape(-1, 2)
    if np.any(pts < 0.0) or np.any(pts > 1.0) or not np.all(np.isfinite(pts)):
        raise ValueError("observation point outside the unit square")
    fx = pts[:, 0] * (nx - 1)
    fy = pts[:, 1] * (ny - 1)
    i0 = np.minimum(np.floor(fx).astype(np.int64), nx - 2)
    j0 = np.minimum(np.floor(fy).astype(np.int64), ny - 2)
    tx = fx - i0
    ty = fy - j0
    n = pts.shape[0]
    rows = np.repeat(np.arange(n), 4)
    cols = np.column_stack((j0 * nx + i0, j0 * nx + i0 + 1, (j0 + 1) * nx + i0, (j0 + 1) * nx + i0 + 1)).ravel()
    vals = np.column_stack(((1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty)).ravel()
    keep = vals != 0.0
    return SparseMatrix.from_coo(rows[keep], cols[keep], vals[keep], (n, nx * ny))


class GMRFWhiteningModel(GaussianModel):
    """Latent field on an ``nx x ny`` grid with whitening matrix ``L_D / gamma``.

    ``Q_theta = L_D^T L_D / gamma^2``; observations are bilinear
    interpolations of the field plus white noise of precision ``tau``.
    """

    family = "gmrf_whitening"
    route = "precision"
    whitening = True
    param_names = ("ln_tau", "ln_gamma")

    def __init__(self, nx, ny, obs_points, y):
        self.nx, self.ny = int(nx), int(ny)
        self.obs_points = np.asarray(obs_points, dtype=np.float64).reshape(-1, 2)
        A = build_interpolation(self.obs_points, nx, ny)
        super().__init__(y, A)
        self.L_D = build_grid_laplacian(nx, ny)
        self._L_factor = banded_factorize(self.L_D, self.nx)
        self._At = A.T
        self._LD2 = self.L_D.to_scipy() @ self.L_D.to_scipy()
        self._AtA = A.to_scipy().T @ A.to_scipy()

    def with_data(self, y):
        return GMRFWhiteningModel(self.nx, self.ny, self.obs_points, y)

    def apply_At(self, v):
        return spmv(self._At, v)

    def _unpack(self, theta):
        d = self.as_dict(theta)
        return math.exp(d["ln_tau"]), math.exp(d["ln_gamma"])

    def sparse_precision(self, theta) -> SparseMatrix:
        _, g = self._unpack(theta)
        return symmetrize(self._LD2 / g**2)

    def precision_operator(self, theta) -> LinearOperator:
        _, g = self._unpack(theta)
        return LinearOperator(self.latent_dim, lambda v: spmv(self.L_D, spmv(self.L_D, v)) / (g * g))

    def lemma_matrix(self, theta) -> SparseMatrix:
        """``Q_theta + tau A^T A``."""
        tau, g = self._unpack(theta)
        return symmetrize(self._LD2 / g**2 + tau * self._AtA)

    def whiten_solve(self, w):
        """``L_D^-1 w`` by the banded factorization of the fixed Laplacian."""
        return self._L_factor.solve(w)

    def simulate_latent(self, theta, rng):
        _, g = self._unpack(theta)
        return g * self.whiten_solve(rng.standard_normal(self.latent_dim))

    def S_operator(self, theta, cfg=None):
        tau, g = self._unpack(theta)

        def apply(v):
            u = self.whiten_solve(self.whiten_solve(self.apply_At(v)))
            return v / tau + g * g * self.apply_A(u)

        return LinearOperator(self.n, apply)

    def S_dense(self, theta):
        _check_guard(max(self.n, self.latent_dim), DENSE_GUARD)
        tau, g = self._unpack(theta)
        A = self.A_dense()
        Linv = np.linalg.inv(self.L_D.to_dense())
        return np.eye(self.n) / tau + g * g * A @ Linv @ Linv.T @ A.T

    def exact_loglik(self, theta):
        return marginal_loglik_gmrf(self, theta)


# --- exact likelihoods and simulation ------------------------------------------

def marginal_loglik_dense(model: GaussianModel, theta, max_dim=DENSE_GUARD) -> float:
    """``log N(y; A mu, S_theta)`` from a dense Cholesky factorization of ``S_theta``."""
    _check_guard(model.n, max_dim)
    F = dense_cholesky(model.S_dense(theta))
    r = model.y - model.obs_mean(theta)
    Lr = scipy.linalg.solve_triangular(F.lower, r, lower=True, check_finite=False)
    return -0.5 * float(Lr @ Lr) - 0.5 * F.logdet() - 0.5 * model.n * LOG2PI


def marginal_loglik_gmrf(model, theta) -> float:
    """Marginal log-likelihood of a sparse-precision model from two banded Cholesky factors.

    Uses ``log|S| = log|Q + tau A^T A| - log|Q| - n log tau`` and the matrix
    inversion lemma for the quadratic form.
    """
    tau = model.noise_precision(theta)
    Q = model.sparse_precision(theta)
    B = model.lemma_matrix(theta) if hasattr(model, "lemma_matrix") else _lemma_matrix(model, Q, tau)
    F_Q = banded_factorize(Q, Q.bandwidth())
    F_B = banded_factorize(B, B.bandwidth())
    r = model.y - model.obs_mean(theta)
    Atr = model.apply_At(r)
    u = F_B.solve(Atr)
    n = model.n
    return 0.5 * (
        F_Q.logdet() + n * math.log(tau) - F_B.logdet() - tau * float(r @ r) + tau**2 * float(Atr @ u)
    ) - 0.5 * n * LOG2PI


def _lemma_matrix(model, Q, tau):
    A = model.A.to_scipy() if model.A is not None else sp.identity(model.n, format="csr")
    return symmetrize(Q.to_scipy() + tau * (A.T @ A))


def simulate_data(model: GaussianModel, theta, seed=None, return_latent=False):
    """Draw ``y = A x + eps`` with ``x`` sampled exactly (no Krylov methods)."""
    rng = np.random.default_rng(seed)
    theta = np.asarray(theta, dtype=float)
    x = model.simulate_latent(theta, rng)
    y = model.apply_A(x)
    tau = model.noise_precision(theta)
    if math.isfinite(tau):
        y = y + rng.standard_normal(model.n) / math.sqrt(tau)
    return (y, x) if return_latent else y


# --- point data I/O ------------------------------------------------------------

def read_points_csv(path):
    """Read a CSV with header ``x,y,value``; returns ``(points, values)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "y", "value"]:
            raise ValueError(f"{path}: expected header x,y,value")
        data = [[float(v) for v in row] for row in reader if row]
    arr = np.array(data, dtype=np.float64).reshape(-1, 3)
    return arr[:, :2], arr[:, 2]


def write_points_csv(path, points, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for (px, py), v in zip(np.asarray(points), np.asarray(values)):
            w.writerow([repr(float(px)), repr(float(py)), repr(float(v))])


def read_vector_csv(path):
    """Read a CSV with header ``index,value``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "value"]:
            raise ValueError(f"{path}: expected header index,value")
        return np.array([float(row[1]) for row in reader if row])


def write_vector_csv(path, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "value"])
        for i, v in enumerate(np.asarray(values)):
            w.writerow([i, repr(float(v))])


def predict_gp_mean(model: WendlandGPModel, theta, new_points, cfg=SolverConfig()):
    """Posterior mean of the latent GP at ``new_points`` for fixed ``theta``."""
    new_points = np.asarray(new_points, dtype=np.float64).reshape(-1, 2)
    _, s2, l = model._unpack(theta)
    both = np.vstack((model.points, new_points))
    K = build_sparse_covariance(both, s2, l).to_scipy()[model.n:, : model.n]
    alpha, stats = cg_solve(model.S_operator(theta), model.y - model._mu, cfg)
    if not stats.converged:
        raise ConvergenceError("prediction solve did not converge", stats)
    mu_new = model.mean_function(new_points) if model.mean_function is not None else 0.0
    return mu_new + K @ alpha


def write_predictions_csv(path, model, theta, new_points, cfg=SolverConfig()):
    write_points_csv(path, new_points, predict_gp_mean(model, theta, new_points, cfg))
