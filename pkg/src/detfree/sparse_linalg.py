"""Sparse and banded matrix substrate.

CSR storage with a compiled matrix-vector product, spectral bound
estimation (Gershgorin discs, Lanczos), dense and banded Cholesky helpers
and Matrix Market I/O.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import _backend
from .errors import LanczosBreakdown, NotPositiveDefiniteError

logger = logging.getLogger(__name__)

_SYM_RTOL = 1e-12


class DimensionError(ValueError):
    pass


class MatrixMarketError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix.

    Symmetric matrices store both triangles so the product stays branch free.
    Instances are treated as immutable; the arrays are made read-only.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        if ro.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows + 1")
        if ro[0] != 0 or np.any(np.diff(ro) < 0) or ro[-1] != ci.size:
            raise ValueError("row_offsets must start at 0, be non-decreasing and end at nnz")
        if ci.size != va.size:
            raise ValueError("col_indices and values differ in length")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise ValueError("column index out of range")
            starts = np.zeros(ci.size, dtype=bool)
            starts[ro[:-1][np.diff(ro) > 0]] = True
            if np.any(np.diff(ci)[~starts[1:]] <= 0):
                raise ValueError("column indices must be strictly increasing within rows")
        for arr in (ro, ci, va):
            arr.flags.writeable = False
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)
        if self.symmetric:
            if self.n_rows != self.n_cols:
                raise ValueError("a symmetric matrix must be square")
            if not _is_symmetric(self.to_scipy()):
                raise ValueError("matrix flagged symmetric is not symmetric")

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return int(self.values.size)

    def matvec(self, x):
        return spmv(self, x)

    def __matmul__(self, x):
        return spmv(self, x)

    def to_scipy(self):
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape, copy=False
        )

    def to_dense(self):
        return self.to_scipy().toarray()

    def diagonal(self):
        return self.to_scipy().diagonal()

    def bandwidth(self):
        """Largest |i - j| over stored entries."""
        if self.nnz == 0:
            return 0
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))
        return int(np.abs(rows - self.col_indices).max())

    def transpose(self):
        if self.symmetric:
            return self
        return SparseMatrix.from_scipy(self.to_scipy().T)

    T = property(transpose)

    @classmethod
    def from_scipy(cls, mat, symmetric=False):
        csr = sp.csr_matrix(mat, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data, symmetric)

    @classmethod
    def from_dense(cls, arr, symmetric=False, drop_zeros=True):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError("expected a 2-D array")
        mask = arr != 0 if drop_zeros else np.ones(arr.shape, dtype=bool)
        rows, cols = np.nonzero(mask)
        return cls.from_coo(rows, cols, arr[rows, cols], arr.shape, symmetric=symmetric)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape, symmetric=False, sum_duplicates=True):
        """Build from triplets; explicit zeros are kept."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        n_rows, n_cols = int(shape[0]), int(shape[1])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            new = np.ones(rows.size, dtype=bool)
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            if not new.all():
                if not sum_duplicates:
                    raise ValueError("duplicate entries")
                starts = np.flatnonzero(new)
                vals = np.add.reduceat(vals, starts)
                rows, cols = rows[starts], cols[starts]
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, cols, vals, symmetric)

    @classmethod
    def identity(cls, n):
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.ones(n), symmetric=True)

    @classmethod
    def diag(cls, d):
        d = np.asarray(d, dtype=np.float64)
        n = d.size
        return cls(n, n, np.arange(n + 1), np.arange(n), d, symmetric=True)


def _is_symmetric(csr):
    if csr.nnz == 0:
        return True
    diff = abs(csr - csr.T)
    scale = abs(csr).max()
    return diff.nnz == 0 or diff.max() <= _SYM_RTOL * scale


def symmetrize(mat):
    """Average a nearly symmetric scipy matrix with its transpose and flag it symmetric."""
    csr = sp.csr_matrix(mat)
    return SparseMatrix.from_scipy((csr + csr.T) * 0.5, symmetric=True)


def spmv(A: SparseMatrix, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != A.n_cols:
        raise DimensionError(f"vector of length {x.size} does not match {A.n_cols} columns")
    out = np.empty(A.n_rows)
    _backend.csr_matvec(A.row_offsets, A.col_indices, A.values, x, out)
    return out


@dataclass(frozen=True)
class LinearOperator:
    """A square operator known only through its action on vectors."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        return self.apply(x)

    def to_dense(self):
        eye = np.eye(self.dim)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.dim)])


def as_operator(A: SparseMatrix, scale=1.0, shift=0.0) -> LinearOperator:
    """Operator ``x -> scale * A x + shift * x``."""
    if A.n_rows != A.n_cols:
        raise DimensionError("operator must be square")
    if scale == 1.0 and shift == 0.0:
        return LinearOperator(A.n_rows, lambda x: spmv(A, x))
    return LinearOperator(A.n_rows, lambda x: scale * spmv(A, x) + shift * x)


def dense_operator(mat) -> LinearOperator:
    mat = np.asarray(mat, dtype=np.float64)
    return LinearOperator(mat.shape[0], lambda x: mat @ x)


@dataclass(frozen=True)
class SpectralBounds:
    m: float
    M: float

    def __post_init__(self):
        if not (np.isfinite(self.m) and np.isfinite(self.M)):
            raise ValueError("spectral bounds must be finite")
        if not 0 < self.m <= self.M:
            raise ValueError(f"need 0 < m <= M, got m={self.m}, M={self.M}")

    @property
    def condition(self):
        return self.M / self.m


def gershgorin_bounds(A: SparseMatrix, floor_rel=1e-10) -> SpectralBounds:
    if A.n_rows != A.n_cols or not (A.symmetric or _is_symmetric(A.to_scipy())):
        raise ValueError("Gershgorin bounds need a symmetric matrix")
    csr = A.to_scipy()
    diag = csr.diagonal()
    radius = np.asarray(abs(csr).sum(axis=1)).ravel() - np.abs(diag)
    upper = float(np.max(diag + radius))
    lower = float(np.min(diag - radius))
    if upper <= 0:
        raise ValueError("matrix has no positive Gershgorin upper bound")
    return SpectralBounds(max(floor_rel * upper, lower), upper)


def lanczos_extremes(op: LinearOperator, iters: int, seed=None, margin=0.1,
                     on_breakdown="stop") -> SpectralBounds:
    """Ritz estimates of the extreme eigenvalues of an SPD operator.

    No reorthogonalization; the returned interval is widened by ``margin``
    on both ends. On an invariant-subspace breakdown the Ritz values found so
    far are used unless ``on_breakdown="raise"``.
    """
    if iters < 2:
        raise ValueError("need at least 2 Lanczos iterations")
    n = op.dim
    iters = min(iters, n)
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    q_prev = np.zeros(n)
    alphas, betas = [], []
    beta = 0.0
    for j in range(iters):
        w = op(q) - beta * q_prev
        alpha = float(q @ w)
        w -= alpha * q
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        if j == iters - 1:
            break
        if beta <= 1e-12 * max(abs(alpha), 1.0):
            if on_breakdown == "raise":
                raise LanczosBreakdown(f"Lanczos breakdown at step {j + 1}")
            logger.info("Lanczos reached an invariant subspace at step %d", j + 1)
            break
        betas.append(beta)
        q_prev, q = q, w / beta
    if len(alphas) == 1:
        ritz = np.array(alphas)
    else:
        ritz = scipy.linalg.eigh_tridiagonal(
            np.array(alphas), np.array(betas[: len(alphas) - 1]), eigvals_only=True
        )
    lo, hi = float(ritz.min()), float(ritz.max())
    if lo <= 0:
        raise NotPositiveDefiniteError(f"operator has a non-positive Ritz value {lo:g}")
    return SpectralBounds((1.0 - margin) * lo, (1.0 + margin) * hi)


@dataclass(frozen=True, eq=False)
class DenseFactor:
    """Cholesky factor ``S = L L^T`` (``L`` lower triangular, ``R = L^T``)."""

    lower: np.ndarray

    @property
    def n(self):
        return self.lower.shape[0]

    @property
    def upper(self):
        return self.lower.T

    def solve(self, b):
        return scipy.linalg.cho_solve((self.lower, True), b)

    def logdet(self):
        return logdet_from_cholesky(self)


def dense_cholesky(S) -> DenseFactor:
    S = np.asarray(S, dtype=np.float64)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("not positive definite") from exc
    return DenseFactor(L)


def logdet_from_cholesky(R: DenseFactor) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(R.lower))))


@dataclass(frozen=True, eq=False)
class BandedFactor:
    """Lower banded Cholesky factor in LAPACK band storage."""

    n: int
    bandwidth: int
    band: np.ndarray = field(repr=False)

    def solve(self, b):
        return banded_solve(self, b)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(self.band[0])))


def _band_storage(A: SparseMatrix, bandwidth):
    csr = A.to_scipy().tocoo()
    if csr.nnz and np.abs(csr.row - csr.col).max() > bandwidth:
        raise ValueError(f"nonzero outside the declared bandwidth {bandwidth}")
    ab = np.zeros((bandwidth + 1, A.n_rows))
    low = csr.row >= csr.col
    ab[csr.row[low] - csr.col[low], csr.col[low]] = csr.data[low]
    return ab


def banded_factorize(A: SparseMatrix, bandwidth: int) -> BandedFactor:
    if A.n_rows != A.n_cols:
        raise DimensionError("banded factorization needs a square matrix")
    ab = _band_storage(A, bandwidth)
    try:
        band = scipy.linalg.cholesky_banded(ab, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("not positive definite") from exc
    return BandedFactor(A.n_rows, bandwidth, band)


def banded_solve(F: BandedFactor, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != F.n:
        raise DimensionError("right-hand side does not match factor size")
    return scipy.linalg.cho_solve_banded((F.band, True), b, check_finite=False)


# --- Matrix Market -----------------------------------------------------------

def write_matrix_market(A: SparseMatrix, path):
    """Coordinate real format; symmetric matrices are written as their lower triangle."""
    csr = A.to_scipy().tocoo()
    rows, cols, vals = csr.row, csr.col, csr.data
    kind = "symmetric" if A.symmetric else "general"
    if A.symmetric:
        keep = rows >= cols
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    lines = [f"%%MatrixMarket matrix coordinate real {kind}", f"{A.n_rows} {A.n_cols} {rows.size}"]
    lines.extend(f"{i + 1} {j + 1} {v:.17g}" for i, j, v in zip(rows, cols, vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_market(path) -> SparseMatrix:
    with open(path) as fh:
        text = fh.read().splitlines()
    if not text:
        raise MatrixMarketError("empty file", 1)
    header = text[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("missing %%MatrixMarket header", 1)
    obj, fmt, fld, sym = (h.lower() for h in header[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError("only coordinate matrices are supported", 1)
    if fld not in ("real", "integer", "double"):
        raise MatrixMarketError(f"unsupported field {fld!r}", 1)
    if sym not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry {sym!r}", 1)
    symmetric = sym == "symmetric"

    lineno = 1
    size = None
    rows, cols, vals = [], [], []
    for lineno, line in enumerate(text[1:], start=2):
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if size is None:
            if len(parts) != 3:
                raise MatrixMarketError("size line needs 'rows cols nnz'", lineno)
            try:
                size = tuple(int(p) for p in parts)
            except ValueError:
                raise MatrixMarketError("size line is not integer", lineno) from None
            continue
        if len(parts) != 3:
            raise MatrixMarketError("entry needs 'row col value'", lineno)
        try:
            i, j, v = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
        except ValueError:
            raise MatrixMarketError(f"cannot parse entry {s!r}", lineno) from None
        if not (0 <= i < size[0] and 0 <= j < size[1]):
            raise MatrixMarketError("index out of range", lineno)
        if symmetric and i < j:
            raise MatrixMarketError("symmetric file has an entry above the diagonal", lineno)
        rows.append(i)
        cols.append(j)
        vals.append(v)
    if size is None:
        raise MatrixMarketError("missing size line", lineno)
    if len(vals) != size[2]:
        raise MatrixMarketError(f"expected {size[2]} entries, found {len(vals)}", lineno)
    rows = np.array(rows, dtype=np.int64)
    cols = np.array(cols, dtype=np.int64)
    vals = np.array(vals, dtype=np.float64)
    if symmetric:
        off = rows != cols
        rows, cols, vals = (
            np.concatenate((rows, cols[off])),
            np.concatenate((cols, rows[off])),
            np.concatenate((vals, vals[off])),
        )
    try:
        return SparseMatrix.from_coo(rows, cols, vals, size[:2], symmetric=symmetric,
                                     sum_duplicates=False)
    except ValueError as exc:
        raise MatrixMarketError(str(exc)) from None
