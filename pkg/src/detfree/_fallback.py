"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def csr_matvec(indptr, indices, data, x, out, nthreads=1):
    rows = np.repeat(np.arange(out.size), np.diff(indptr))
    out[:] = np.bincount(rows, weights=data * x[indices], minlength=out.size)


def multishift_update(X, P, r, alpha, zeta, beta, active):
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return
    X[idx] += alpha[idx, None] * P[idx]
    P[idx] = zeta[idx, None] * r[None, :] + beta[idx, None] * P[idx]


def givens_apply(x, ii, jj, c, s):
    for k in range(ii.shape[0]):
        i = ii[k]
        j = jj[k]
        xi = x[i]
        xj = x[j]
        x[i] = c[k] * xi - s[k] * xj
        x[j] = s[k] * xi + c[k] * xj


def _wendland(r, s2, l):
    t = np.clip(1.0 - r / l, 0.0, None)
    return s2 * t**4 * (4.0 * r / l + 1.0)


def wendland_pairs(pts, order, cell_start, cell_of, ncx, ncy, l, s2):
    n = pts.shape[0]
    counts = np.diff(cell_start)
    rows_all, cols_all = [], []
    cx = cell_of % ncx
    cy = cell_of // ncx
    p_all = np.arange(n)
    for dyc in (-1, 0, 1):
        for dxc in (-1, 0, 1):
            nx_ = cx + dxc
            ny_ = cy + dyc
            ok = (nx_ >= 0) & (nx_ < ncx) & (ny_ >= 0) & (ny_ < ncy)
            p = p_all[ok]
            cell = ny_[ok] * ncx + nx_[ok]
            k = counts[cell]
            if k.sum() == 0:
                continue
            p_rep = np.repeat(p, k)
            # position of each candidate inside its cell
            offs = np.arange(k.sum()) - np.repeat(np.cumsum(k) - k, k)
            q = order[np.repeat(cell_start[cell], k) + offs]
            keep = q > p_rep
            rows_all.append(p_rep[keep])
            cols_all.append(q[keep])
    if rows_all:
        rows = np.concatenate(rows_all)
        cols = np.concatenate(cols_all)
    else:
        rows = np.empty(0, dtype=np.int64)
        cols = np.empty(0, dtype=np.int64)
    d2 = ((pts[rows] - pts[cols]) ** 2).sum(axis=1)
    keep = d2 < l * l
    rows, cols = rows[keep], cols[keep]
    vals = _wendland(np.sqrt(d2[keep]), s2, l)
    return rows.astype(np.int64), cols.astype(np.int64), vals
