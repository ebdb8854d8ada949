import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.stats

from conftest import sample_cov_within
from detfree.errors import SizeGuardError
from detfree.krylov import SolverConfig
from detfree.models import (
    LOG2PI,
    GaussianModel,
    GMRFWhiteningModel,
    RandomPrecisionModel,
    WendlandGPModel,
    build_grid_laplacian,
    build_interpolation,
    build_sparse_covariance,
    fit_mean_function,
    generate_random_precision,
    grid_nodes,
    marginal_loglik_dense,
    marginal_loglik_gmrf,
    predict_gp_mean,
    random_precision_factors,
    read_points_csv,
    read_vector_csv,
    simulate_data,
    wendland_kernel,
    write_points_csv,
    write_predictions_csv,
    write_vector_csv,
)
from detfree.sparse_linalg import SparseMatrix, dense_cholesky


def small_models(seed=0):
    r = np.random.default_rng(seed)
    f = random_precision_factors(15, seed)
    rp = RandomPrecisionModel(f.Q, r.standard_normal(15), f)
    pts = r.uniform(0, 1, (15, 2))
    wg = WendlandGPModel(pts, r.standard_normal(15))
    gm = GMRFWhiteningModel(4, 4, r.uniform(0, 1, (15, 2)), r.standard_normal(15))
    return [(rp, np.array([-0.4])), (wg, np.array([1.0, 0.2, math.log(0.5)])), (gm, np.array([0.5, -0.3]))]


# --- random precision -------------------------------------------------------------

def test_random_precision_no_rotation():
    f = random_precision_factors(20, 1, n_rotations=0)
    assert f.Q.nnz == 20
    assert np.array_equal(np.sort(np.linalg.eigvalsh(f.Q.to_dense())), np.sort(f.diag))


def test_random_precision_spectrum_and_fill():
    f = random_precision_factors(1000, 7)
    assert 2.5 <= f.Q.nnz / 1000 <= 3.5
    lam = np.linalg.eigvalsh(f.Q.to_dense())
    assert lam.min() >= -0.5 and lam.max() <= 0.5
    assert np.allclose(np.sort(lam), np.sort(f.diag), atol=1e-12)
    assert f.Q.symmetric
    dense = f.Q.to_dense()
    assert np.array_equal(dense, dense.T)


def test_random_precision_rotation_factors():
    f = random_precision_factors(60, 3)
    U = np.column_stack([f.apply_rotations(e) for e in np.eye(60)])
    assert np.allclose(U @ np.diag(f.diag) @ U.T, f.Q.to_dense(), atol=1e-13)


def test_generate_random_precision_deterministic():
    a, b = generate_random_precision(200, 11), generate_random_precision(200, 11)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.col_indices, b.col_indices)


@pytest.mark.parametrize("ln_g", [-3.0, -1.0, 0.0, 1.5])
def test_random_precision_diagonal_dominance_spectrum(ln_g):
    f = random_precision_factors(80, 2)
    m = RandomPrecisionModel(f.Q, np.zeros(80), f)
    g = math.exp(ln_g)
    lam = np.linalg.eigvalsh(m.sparse_precision([ln_g]).to_dense())
    assert lam.min() >= g - 0.5 / g - 1e-12 and lam.min() > 0
    b = m.precision_bounds([ln_g])
    assert b.m <= lam.min() * (1 + 1e-12) and lam.max() <= b.M * (1 + 1e-12)


# --- Wendland ---------------------------------------------------------------------

def test_wendland_kernel_examples():
    assert wendland_kernel(0.0, 2.5, 1.0) == 2.5
    assert wendland_kernel(1.0, 2.5, 1.0) == 0.0 and wendland_kernel(3.0, 2.5, 1.0) == 0.0
    assert wendland_kernel(0.5, 2.0, 1.0) == pytest.approx(3.0 / 16.0 * 2.0, rel=1e-15)


def test_covariance_small_cases():
    C = build_sparse_covariance(np.array([[0.0, 0.0], [1.0, 0.0]]), 1.5, 1.0)
    assert np.array_equal(C.to_dense(), np.diag([1.5, 1.5]))
    assert np.array_equal(build_sparse_covariance(np.array([[0.3, 0.4]]), 2.0, 0.1).to_dense(), [[2.0]])


def test_covariance_matches_all_pairs(rng):
    pts = rng.uniform(0, 1, (200, 2))
    for l in (0.05, 0.2, 2.0):
        C = build_sparse_covariance(pts, 1.3, l).to_dense()
        D = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        ref = wendland_kernel(D, 1.3, l)
        assert np.array_equal(C != 0, ref != 0)
        assert np.max(np.abs(C - ref)) <= 1e-15 * 1.3


def test_covariance_spd(rng):
    for n, l in ((100, 0.3), (500, 0.15)):
        pts = rng.uniform(0, 1, (n, 2))
        dense_cholesky(build_sparse_covariance(pts, 0.7, l).to_dense())


def test_mean_function_constant_and_recovery(rng):
    pts = rng.uniform(0, 1, (300, 2))
    mf = fit_mean_function(pts, np.full(300, 2.5), H=5, seed=1)
    assert mf.beta[0] == pytest.approx(2.5, abs=1e-10)
    assert np.allclose(mf.beta[1:], 0.0, atol=1e-10)
    assert mf.centers.shape == (5, 2)
    beta = np.array([0.3, 1.0, -2.0, 0.5, 0.7, -1.1])
    y = fit_mean_function(pts, np.zeros(300), 5, 1, centers=mf.centers).design(pts) @ beta
    got = fit_mean_function(pts, y, 5, centers=mf.centers)
    assert np.allclose(got.beta, beta, atol=1e-8)


def test_mean_function_rank_deficient():
    pts = np.array([[0.0, 0.0]] * 4 + [[1.0, 1.0]] * 4)
    with pytest.raises(ValueError):
        fit_mean_function(pts, np.ones(8), H=3, seed=0)


# --- GMRF -----------------------------------------------------------------------

def test_laplacian_examples():
    assert np.array_equal(build_grid_laplacian(1, 1).to_dense(), [[4.0]])
    assert np.array_equal(build_grid_laplacian(2, 1).to_dense(), [[4.0, -1], [-1, 4]])
    L = build_grid_laplacian(10, 10)
    dense_cholesky(L.to_dense())
    assert L.bandwidth() == 10


def test_interpolation_examples(rng):
    A = build_interpolation(np.array([[0.5, 0.25]]), 3, 5)
    nodes = grid_nodes(3, 5)
    (j,) = np.flatnonzero(A.to_dense()[0])
    assert A.to_dense()[0, j] == 1.0 and np.allclose(nodes[j], [0.5, 0.25])
    A = build_interpolation(np.array([[0.25, 0.125]]), 3, 5)
    assert np.allclose(np.sort(A.values), 0.25) and A.nnz == 4
    pts = rng.uniform(0, 1, (200, 2))
    A = build_interpolation(pts, 7, 9)
    lin = 0.3 + 1.7 * grid_nodes(7, 9)[:, 0] - 2.2 * grid_nodes(7, 9)[:, 1]
    assert np.allclose(A.to_scipy() @ lin, 0.3 + 1.7 * pts[:, 0] - 2.2 * pts[:, 1], atol=1e-12)
    rows = A.to_scipy()
    assert np.allclose(np.asarray(rows.sum(axis=1)).ravel(), 1.0)
    assert np.all(A.values >= 0) and np.all(np.diff(A.row_offsets) <= 4)
    with pytest.raises(ValueError):
        build_interpolation(np.array([[1.2, 0.5]]), 3, 3)


def test_gmrf_precision_route_pieces(rng):
    m = GMRFWhiteningModel(5, 4, rng.uniform(0, 1, (9, 2)), rng.standard_normal(9))
    th = np.array([0.2, -0.5])
    g = math.exp(-0.5)
    L = m.L_D.to_dense()
    assert np.allclose(m.sparse_precision(th).to_dense(), L.T @ L / g**2)
    v = rng.standard_normal(20)
    assert np.allclose(m.precision_operator(th)(v), L.T @ L @ v / g**2)
    assert np.allclose(m.whiten_solve(v), np.linalg.solve(L, v))


# --- shared contract ---------------------------------------------------------------

@pytest.mark.parametrize("idx", [0, 1, 2])
def test_S_operator_matches_dense(idx, rng):
    model, th = small_models()[idx]
    S = model.S_dense(th)
    if model.family == "random_precision":
        ref = np.linalg.inv(model.sparse_precision(th).to_dense())
    elif model.family == "wendland_gp":
        ref = model.sparse_covariance(th).to_dense() + np.eye(model.n) / math.exp(th[0])
    else:
        A = model.A_dense()
        Sigma = np.linalg.inv(model.sparse_precision(th).to_dense())
        ref = np.eye(model.n) / math.exp(th[0]) + A @ Sigma @ A.T
    assert np.allclose(S, ref, rtol=1e-10, atol=1e-12)
    op = model.S_operator(th, SolverConfig(1e-13))
    for _ in range(20):
        v = rng.standard_normal(model.n)
        assert np.linalg.norm(op(v) - ref @ v) <= 1e-10 * np.linalg.norm(ref @ v)


def test_params_helpers():
    model, _ = small_models()[2]
    th = model.params(ln_tau=1.0, ln_gamma=2.0)
    assert np.array_equal(th, [1.0, 2.0])
    assert model.as_dict(th) == {"ln_tau": 1.0, "ln_gamma": 2.0}
    with pytest.raises(KeyError):
        model.params(ln_tau=1.0)


def test_priors():
    gm, _ = small_models()[2]
    assert gm.log_prior([0.0, 0.0]) == pytest.approx(-2 * math.log(40.0))
    assert gm.log_prior([0.0, 20.5]) == -np.inf
    wg, _ = small_models()[1]
    th = np.array([0.4, -1.0, 2.0])
    ref = (scipy.stats.norm(0, 3).logpdf(0.4) + scipy.stats.norm(0, 6).logpdf(-1.0)
           + scipy.stats.norm(0, 3).logpdf(2.0))
    assert wg.log_prior(th) == pytest.approx(ref, rel=1e-12)


# --- simulation ---------------------------------------------------------------------

def test_simulate_vanishing_noise(rng):
    pts = rng.uniform(0, 1, (30, 2))
    m = WendlandGPModel(pts, np.zeros(30))
    y, x = simulate_data(m, np.array([20.0, 0.0, math.log(0.3)]), seed=3, return_latent=True)
    # noise sd is exp(-10) ~ 4.5e-5 per entry
    assert np.linalg.norm(y - x) <= 1e-4 * np.linalg.norm(x)


def test_simulate_deterministic():
    for model, th in small_models():
        assert np.array_equal(simulate_data(model, th, seed=9), simulate_data(model, th, seed=9))


@pytest.mark.parametrize("idx", [0, 1, 2])
def test_simulate_covariance(idx):
    model, th = small_models()[idx]
    ys = np.array([simulate_data(model, th, seed=s) for s in range(20_000)])
    assert sample_cov_within(ys, model.S_dense(th)) <= 5.0


# --- exact likelihoods ------------------------------------------------------------

class DenseModel(GaussianModel):
    family = "dense_test"
    param_names = ("unused",)

    def __init__(self, S, y, mu=None):
        super().__init__(y)
        self._S = np.asarray(S, dtype=float)
        self._mu = np.zeros(self.n) if mu is None else np.asarray(mu, dtype=float)

    def mean(self, theta):
        return self._mu

    def S_dense(self, theta):
        return self._S


def test_marginal_dense_examples(rng):
    assert marginal_loglik_dense(DenseModel([[1.0]], [0.0]), [0.0]) == pytest.approx(-0.5 * LOG2PI)
    d = np.array([0.5, 2.0, 3.0])
    y = np.array([0.1, -1.0, 2.0])
    ref = scipy.stats.norm(0, np.sqrt(d)).logpdf(y).sum()
    assert marginal_loglik_dense(DenseModel(np.diag(d), y), [0.0]) == pytest.approx(ref, rel=1e-13)
    B = rng.standard_normal((15, 15))
    S = B @ B.T + np.eye(15)
    y, mu = rng.standard_normal((2, 15))
    ref = scipy.stats.multivariate_normal(mu, S).logpdf(y)
    assert marginal_loglik_dense(DenseModel(S, y, mu), [0.0]) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(SizeGuardError):
        marginal_loglik_dense(DenseModel(S, y, mu), [0.0], max_dim=10)


class PrecisionModel(GaussianModel):
    """Duck-typed sparse-precision model for exercising the two-factor likelihood."""

    family = "precision_test"
    route = "precision"
    param_names = ("ln_tau",)

    def __init__(self, Q, A, y):
        super().__init__(y, A)
        self.Qm = Q

    def sparse_precision(self, theta):
        return self.Qm

    def S_dense(self, theta):
        A = self.A_dense()
        return np.eye(self.n) / math.exp(theta[0]) + A @ np.linalg.inv(self.Qm.to_dense()) @ A.T


def test_marginal_gmrf_against_dense(rng):
    for nx, ny, k in ((3, 3, 5), (4, 3, 20), (10, 10, 60)):
        m = GMRFWhiteningModel(nx, ny, rng.uniform(0, 1, (k, 2)), rng.standard_normal(k))
        for th in (np.array([-2.0, -1.0]), np.array([1.0, 0.5])):
            assert marginal_loglik_gmrf(m, th) == pytest.approx(marginal_loglik_dense(m, th), abs=1e-8)


def test_marginal_gmrf_decoupled(rng):
    Q = SparseMatrix.from_scipy(sp.csr_matrix(np.diag([2.0, 3.0, 1.0])), symmetric=True)
    A = SparseMatrix.from_scipy(sp.csr_matrix((4, 3)))
    y = rng.standard_normal(4)
    m = PrecisionModel(Q, A, y)
    tau = math.exp(0.7)
    ref = scipy.stats.norm(0, 1 / math.sqrt(tau)).logpdf(y).sum()
    assert marginal_loglik_gmrf(m, [0.7]) == pytest.approx(ref, rel=1e-12)


def test_marginal_gmrf_unobserved_node(rng):
    L = build_grid_laplacian(3, 3).to_scipy()
    A = build_interpolation(rng.uniform(0, 1, (6, 2)), 3, 3).to_scipy()
    y = rng.standard_normal(6)
    base = PrecisionModel(SparseMatrix.from_scipy((L @ L).tocsr(), symmetric=True),
                          SparseMatrix.from_scipy(A.tocsr()), y)
    Qx = sp.block_diag((L @ L, sp.csr_matrix([[2.5]]))).tocsr()
    Ax = sp.hstack((A, sp.csr_matrix((6, 1)))).tocsr()
    ext = PrecisionModel(SparseMatrix.from_scipy(Qx, symmetric=True), SparseMatrix.from_scipy(Ax), y)
    assert marginal_loglik_gmrf(ext, [0.3]) == pytest.approx(marginal_loglik_gmrf(base, [0.3]), abs=1e-12)
    assert marginal_loglik_gmrf(base, [0.3]) == pytest.approx(marginal_loglik_dense(base, [0.3]), abs=1e-8)


def test_random_precision_exact_loglik():
    model, th = small_models()[0]
    S = model.S_dense(th)
    ref = scipy.stats.multivariate_normal(np.zeros(model.n), S).logpdf(model.y)
    assert model.exact_loglik(th) == pytest.approx(ref, rel=1e-10)


# --- I/O and prediction --------------------------------------------------------------

def test_csv_round_trips(tmp_path, rng):
    pts, v = rng.uniform(0, 1, (10, 2)), rng.standard_normal(10)
    write_points_csv(tmp_path / "p.csv", pts, v)
    p2, v2 = read_points_csv(tmp_path / "p.csv")
    assert np.array_equal(p2, pts) and np.array_equal(v2, v)
    write_vector_csv(tmp_path / "v.csv", v)
    assert np.array_equal(read_vector_csv(tmp_path / "v.csv"), v)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_points_csv(tmp_path / "bad.csv")
    with pytest.raises(ValueError):
        read_vector_csv(tmp_path / "bad.csv")


def test_gp_prediction(tmp_path, rng):
    pts = rng.uniform(0, 1, (40, 2))
    m = WendlandGPModel(pts, rng.standard_normal(40))
    th = np.array([1.0, 0.0, math.log(0.4)])
    new = rng.uniform(0, 1, (5, 2))
    both = np.vstack((pts, new))
    K = build_sparse_covariance(both, 1.0, 0.4).to_dense()
    ref = K[40:, :40] @ np.linalg.solve(m.S_dense(th), m.y)
    assert np.allclose(predict_gp_mean(m, th, new), ref, atol=1e-8)
    write_predictions_csv(tmp_path / "pred.csv", m, th, new)
    p2, v2 = read_points_csv(tmp_path / "pred.csv")
    assert np.allclose(v2, ref, atol=1e-8)
