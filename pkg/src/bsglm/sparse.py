"""Sparse symmetric storage, Cholesky factorization, IC(0), and PCG.

The factorization pipeline mirrors the classic GMRF recipe: reorder with
a fill-reducing permutation, factor the permuted matrix, then solve by
forward/backward substitution. The symbolic analysis (elimination tree
and per-row patterns) is separated from the numeric phase so callers
that refactor matrices with a fixed pattern, as the Gibbs sweep does,
can pay for the analysis once.

Numeric kernels are compiled with numba; the Python layer owns error
handling and the public contracts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.linalg import splu

__all__ = [
    "SparseSym",
    "Permutation",
    "TriangularFactor",
    "CholeskySymbolic",
    "NotPositiveDefiniteError",
    "PcgError",
    "PcgResult",
    "fill_reducing_order",
    "cholesky",
    "chol_symbolic",
    "chol_solve",
    "tri_solve",
    "ic0",
    "jacobi_factor",
    "pcg",
]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a factorization hits a non-positive pivot."""


class PcgError(RuntimeError):
    """PCG failed to reach the requested tolerance.

    Attributes carry the best iterate, iteration count, and the final
    true relative residual for diagnostics.
    """

    def __init__(self, message: str, x: np.ndarray, iters: int, relres: float):
        super().__init__(message)
        self.x = x
        self.iters = iters
        self.relres = relres


# ---------------------------------------------------------------------------
# storage


@dataclass(frozen=True)
class Permutation:
    """Symmetric permutation: permuted[i, j] = original[order[i], order[j]]."""

    order: np.ndarray
    inverse: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        object.__setattr__(self, "order", order)
        if self.inverse is None:
            object.__setattr__(self, "inverse", np.argsort(order).astype(np.int64))

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        idx = np.arange(n, dtype=np.int64)
        return cls(order=idx, inverse=idx.copy())

    @property
    def n(self) -> int:
        return self.order.shape[0]

    def permute_vec(self, v: np.ndarray) -> np.ndarray:
        return v[self.order]

    def unpermute_vec(self, v: np.ndarray) -> np.ndarray:
        return v[self.inverse]


class SparseSym:
    """Symmetric matrix stored as the lower triangle in CSR form.

    Row indices are sorted and every diagonal entry is stored explicitly
    (zeros included) so factorization kernels can rely on the layout.
    """

    def __init__(self, n: int, lower: sp.csr_matrix):
        self.n = int(n)
        self.lower = lower
        self._full: sp.csr_matrix | None = None

    # -- constructors

    @staticmethod
    def _with_explicit_diag(lower: sp.csr_matrix, n: int) -> sp.csr_matrix:
        lower = (lower + sp.csr_matrix((np.zeros(n), (np.arange(n), np.arange(n))), shape=(n, n))).tocsr()
        lower.sort_indices()
        return lower

    @classmethod
    def from_csr(cls, a: sp.spmatrix, check_symmetry: bool = True) -> "SparseSym":
        a = a.tocsr()
        n = a.shape[0]
        if a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        if check_symmetry:
            diff = abs(a - a.T)
            if diff.nnz and diff.max() > 1e-12 * max(abs(a).max(), 1.0):
                raise ValueError("matrix is not symmetric")
        lower = cls._with_explicit_diag(sp.tril(a, format="csr"), n)
        return cls(n, lower)

    @classmethod
    def from_lower_csr(cls, lower: sp.spmatrix) -> "SparseSym":
        lower = lower.tocsr()
        n = lower.shape[0]
        return cls(n, cls._with_explicit_diag(lower, n))

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SparseSym":
        return cls.from_csr(sp.csr_matrix(np.asarray(a, dtype=float)))

    # -- views

    @property
    def full(self) -> sp.csr_matrix:
        if self._full is None:
            d = sp.diags(self.lower.diagonal())
            full = (self.lower + self.lower.T - d).tocsr()
            full.sort_indices()
            self._full = full
        return self._full

    def to_dense(self) -> np.ndarray:
        return self.full.toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.full @ x

    def diagonal(self) -> np.ndarray:
        return self.lower.diagonal()

    @property
    def nnz_lower(self) -> int:
        return self.lower.nnz

    def max_abs(self) -> float:
        return float(abs(self.lower).max()) if self.lower.nnz else 0.0

    def permuted(self, perm: Permutation) -> "SparseSym":
        full = self.full[perm.order][:, perm.order].tocsr()
        lower = self._with_explicit_diag(sp.tril(full, format="csr"), self.n)
        return SparseSym(self.n, lower)

    def _lower_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.lower
        return (
            m.indptr.astype(np.int64),
            m.indices.astype(np.int64),
            m.data.astype(np.float64),
        )


@dataclass(frozen=True)
class TriangularFactor:
    """Lower-triangular factor in CSR form, row indices sorted, diagonal last."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    perm: Permutation

    @property
    def nnz(self) -> int:
        return int(self.data.shape[0])

    def diagonal(self) -> np.ndarray:
        return self.data[self.indptr[1:] - 1]

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))


@dataclass(frozen=True)
class CholeskySymbolic:
    """Reusable symbolic analysis: pattern of L for a fixed matrix pattern."""

    n: int
    perm: Permutation
    parent: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray


# ---------------------------------------------------------------------------
# numba kernels (lower-triangle CSR with sorted indices, diagonal last)


@njit(cache=True, nogil=True)
def _etree(n, ap, ai):
    parent = np.full(n, -1, np.int64)
    ancestor = np.full(n, -1, np.int64)
    for k in range(n):
        for p in range(ap[k], ap[k + 1]):
            i = ai[p]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent


@njit(cache=True, nogil=True)
def _row_counts(n, ap, ai, parent):
    w = np.full(n, -1, np.int64)
    counts = np.zeros(n, np.int64)
    for k in range(n):
        w[k] = k
        cnt = 0
        for p in range(ap[k], ap[k + 1]):
            i = ai[p]
            if i >= k:
                continue
            while w[i] != k:
                w[i] = k
                cnt += 1
                i = parent[i]
        counts[k] = cnt + 1  # strictly-lower pattern plus diagonal
    return counts


@njit(cache=True, nogil=True)
def _fill_pattern(n, ap, ai, parent, lp, li):
    w = np.full(n, -1, np.int64)
    for k in range(n):
        w[k] = k
        top = lp[k]
        for p in range(ap[k], ap[k + 1]):
            i = ai[p]
            if i >= k:
                continue
            while w[i] != k:
                w[i] = k
                li[top] = i
                top += 1
                i = parent[i]
        row = li[lp[k]:top]
        row.sort()
        li[top] = k  # diagonal last


@njit(cache=True, nogil=True)
def _chol_numeric(n, ap, ai, ax, lp, li, lx):
    """Up-looking Cholesky on a fixed pattern. Returns failing row or -1."""
    x = np.zeros(n)
    for k in range(n):
        d = 0.0
        for p in range(ap[k], ap[k + 1]):
            j = ai[p]
            if j < k:
                x[j] = ax[p]
            elif j == k:
                d = ax[p]
        for p in range(lp[k], lp[k + 1] - 1):
            j = li[p]
            acc = x[j]
            for q in range(lp[j], lp[j + 1] - 1):
                acc -= lx[q] * x[li[q]]
            x[j] = acc / lx[lp[j + 1] - 1]
        for p in range(lp[k], lp[k + 1] - 1):
            j = li[p]
            yj = x[j]
            lx[p] = yj
            d -= yj * yj
            x[j] = 0.0
        if d <= 0.0 or not np.isfinite(d):
            return k
        lx[lp[k + 1] - 1] = np.sqrt(d)
    return -1


@njit(cache=True, nogil=True)
def _lower_solve(n, lp, li, lx, b):
    x = b.copy()
    for i in range(n):
        acc = x[i]
        for p in range(lp[i], lp[i + 1] - 1):
            acc -= lx[p] * x[li[p]]
        x[i] = acc / lx[lp[i + 1] - 1]
    return x


@njit(cache=True, nogil=True)
def _upper_solve(n, lp, li, lx, b):
    x = b.copy()
    for i in range(n - 1, -1, -1):
        xi = x[i] / lx[lp[i + 1] - 1]
        x[i] = xi
        for p in range(lp[i], lp[i + 1] - 1):
            x[li[p]] -= lx[p] * xi
    return x


@njit(cache=True, nogil=True)
def _ic0_numeric(n, ap, ai, ax, lx):
    """Zero-fill incomplete Cholesky on A's lower pattern. Failing row or -1."""
    for i in range(n):
        for p in range(ap[i], ap[i + 1] - 1):
            j = ai[p]
            s = ax[p]
            pi = ap[i]
            pj = ap[j]
            pj_end = ap[j + 1] - 1
            while pi < p and pj < pj_end:
                ci = ai[pi]
                cj = ai[pj]
                if ci == cj:
                    s -= lx[pi] * lx[pj]
                    pi += 1
                    pj += 1
                elif ci < cj:
                    pi += 1
                else:
                    pj += 1
            lx[p] = s / lx[ap[j + 1] - 1]
        d = ax[ap[i + 1] - 1]
        for p in range(ap[i], ap[i + 1] - 1):
            d -= lx[p] * lx[p]
        if d <= 0.0 or not np.isfinite(d):
            return i
        lx[ap[i + 1] - 1] = np.sqrt(d)
    return -1


@njit(cache=True, nogil=True)
def _csr_matvec(n, ap, ai, ax, x, out):
    for i in range(n):
        acc = 0.0
        for p in range(ap[i], ap[i + 1]):
            acc += ax[p] * x[ai[p]]
        out[i] = acc


@njit(cache=True, nogil=True)
def _pcg_csr(n, ap, ai, ax, b, x0, mp, mi, mx, precond, jac, delta, maxit):
    """PCG on a full CSR matrix.

    precond: 0 none, 1 triangular factor (mp/mi/mx), 2 jacobi (jac).
    Returns (x, iters, true relres, status): status 0 converged,
    1 max_iter reached, 2 breakdown.
    """
    bnorm = np.sqrt(np.dot(b, b))
    x = x0.copy()
    q = np.empty(n)
    _csr_matvec(n, ap, ai, ax, x, q)
    r = b - q
    if np.sqrt(np.dot(r, r)) <= delta * bnorm:
        return x, 0, np.sqrt(np.dot(r, r)) / bnorm, 0
    if precond == 1:
        z = _upper_solve(n, mp, mi, mx, _lower_solve(n, mp, mi, mx, r))
    elif precond == 2:
        z = r / jac
    else:
        z = r.copy()
    p = z.copy()
    rz = np.dot(r, z)
    it = 0
    while it < maxit:
        it += 1
        _csr_matvec(n, ap, ai, ax, p, q)
        pq = np.dot(p, q)
        if pq <= 0.0 or not np.isfinite(pq):
            return x, it, np.sqrt(np.dot(r, r)) / bnorm, 2
        alpha = rz / pq
        x = x + alpha * p
        r = r - alpha * q
        if np.sqrt(np.dot(r, r)) <= delta * bnorm:
            _csr_matvec(n, ap, ai, ax, x, q)
            rt = b - q
            rtn = np.sqrt(np.dot(rt, rt))
            if rtn <= delta * bnorm:
                return x, it, rtn / bnorm, 0
            r = rt
        if precond == 1:
            z = _upper_solve(n, mp, mi, mx, _lower_solve(n, mp, mi, mx, r))
        elif precond == 2:
            z = r / jac
        else:
            z = r.copy()
        rz_new = np.dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return x, it, np.sqrt(np.dot(r, r)) / bnorm, 1


# ---------------------------------------------------------------------------
# public operations


def fill_reducing_order(a: SparseSym) -> Permutation:
    """Deterministic fill-reducing (minimum degree) ordering of A's pattern.

    The ordering is computed on a diagonally dominant proxy with A's
    pattern, so it depends on the pattern only and never fails on
    singular input.
    """
    n = a.n
    if a.lower.nnz == n:  # diagonal pattern: nothing to gain
        return Permutation.identity(n)
    lower = a.lower.tocoo()
    off = lower.row != lower.col
    rows = lower.row[off]
    cols = lower.col[off]
    deg = np.bincount(rows, minlength=n) + np.bincount(cols, minlength=n)
    data = np.concatenate([-np.ones(off.sum() * 2), deg + 1.0])
    r = np.concatenate([rows, cols, np.arange(n)])
    c = np.concatenate([cols, rows, np.arange(n)])
    proxy = sp.csc_matrix((data, (r, c)), shape=(n, n))
    lu = splu(
        proxy,
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )
    # perm_c maps old index -> new position; our convention gathers old
    # indices per new position, hence the argsort.
    return Permutation(order=np.argsort(lu.perm_c).astype(np.int64))


def chol_symbolic(a: SparseSym, perm: Permutation | None = None) -> CholeskySymbolic:
    """Symbolic analysis (elimination tree and L pattern) for A's pattern."""
    if perm is None:
        perm = fill_reducing_order(a)
    ap, ai, _ = a.permuted(perm)._lower_arrays()
    n = a.n
    parent = _etree(n, ap, ai)
    counts = _row_counts(n, ap, ai, parent)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int64)
    _fill_pattern(n, ap, ai, parent, indptr, indices)
    return CholeskySymbolic(n=n, perm=perm, parent=parent, indptr=indptr, indices=indices)


def cholesky(
    a: SparseSym,
    perm: Permutation | None = None,
    symbolic: CholeskySymbolic | None = None,
) -> TriangularFactor:
    """Sparse Cholesky of the permuted matrix: L L' = P A P'.

    Raises NotPositiveDefiniteError on a non-positive pivot, which is
    how a singular prior used without a data term surfaces.
    """
    if symbolic is None:
        symbolic = chol_symbolic(a, perm)
    ap, ai, ax = a.permuted(symbolic.perm)._lower_arrays()
    lx = np.zeros(symbolic.indices.shape[0])
    bad = _chol_numeric(a.n, ap, ai, ax, symbolic.indptr, symbolic.indices, lx)
    if bad >= 0:
        raise NotPositiveDefiniteError(f"not positive definite (pivot at permuted row {bad})")
    return TriangularFactor(
        n=a.n, indptr=symbolic.indptr, indices=symbolic.indices, data=lx, perm=symbolic.perm
    )


def tri_solve(factor: TriangularFactor, b: np.ndarray, direction: str) -> np.ndarray:
    """Solve L x = b ('forward') or L' x = b ('backward') in L's own ordering."""
    diag = factor.diagonal()
    if np.any(diag == 0.0):
        raise ZeroDivisionError("triangular factor has a zero diagonal entry")
    b = np.asarray(b, dtype=float)
    if direction == "forward":
        return _lower_solve(factor.n, factor.indptr, factor.indices, factor.data, b)
    if direction == "backward":
        return _upper_solve(factor.n, factor.indptr, factor.indices, factor.data, b)
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


def chol_solve(factor: TriangularFactor, b: np.ndarray) -> np.ndarray:
    """Solve A x = b given the factor of P A P', handling the permutation."""
    y = tri_solve(factor, factor.perm.permute_vec(np.asarray(b, dtype=float)), "forward")
    return factor.perm.unpermute_vec(tri_solve(factor, y, "backward"))


def ic0(a: SparseSym) -> TriangularFactor:
    """Zero-fill incomplete Cholesky of A, with diagonal-shift retries.

    On breakdown the factorization is retried on A + tau*diag(A) for
    tau in {1e-3, 1e-2, 1e-1, 1}; if all retries fail, a diagonal
    (Jacobi) factor is returned with a warning.
    """
    ap, ai, ax = a._lower_arrays()
    diag_pos = ap[1:] - 1
    for tau in (0.0, 1e-3, 1e-2, 1e-1, 1.0):
        vals = ax.copy()
        if tau:
            vals[diag_pos] += tau * ax[diag_pos]
        lx = np.zeros_like(vals)
        bad = _ic0_numeric(a.n, ap, ai, vals, lx)
        if bad < 0:
            return TriangularFactor(
                n=a.n, indptr=ap, indices=ai, data=lx, perm=Permutation.identity(a.n)
            )
    warnings.warn("IC(0) broke down at every shift; falling back to Jacobi", RuntimeWarning)
    return jacobi_factor(np.asarray(a.diagonal(), dtype=float), a.n)


def jacobi_factor(diag: np.ndarray, n: int) -> TriangularFactor:
    """Diagonal factor L = sqrt(diag), i.e. the Jacobi preconditioner."""
    d = np.where(diag > 0, diag, 1.0)
    return TriangularFactor(
        n=n,
        indptr=np.arange(n + 1, dtype=np.int64),
        indices=np.arange(n, dtype=np.int64),
        data=np.sqrt(d),
        perm=Permutation.identity(n),
    )


@dataclass(frozen=True)
class PcgResult:
    x: np.ndarray
    iters: int
    relres: float


def default_max_iter(n: int) -> int:
    return min(100_000, int(np.ceil(10.0 * np.sqrt(n))))


def pcg(
    apply_a,
    b: np.ndarray,
    m: TriangularFactor | np.ndarray | None = None,
    x0: np.ndarray | None = None,
    delta: float = 1e-8,
    max_iter: int | None = None,
) -> PcgResult:
    """Conjugate gradients on B x = b, stopped at true relative residual delta.

    ``apply_a`` is a SparseSym, or any object with ``n`` and ``apply(x)``
    realizing a symmetric positive (semi)definite action. ``m`` is a
    TriangularFactor preconditioner, a positive diagonal vector for
    Jacobi, or None. A zero right-hand side returns x = 0 immediately.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = default_max_iter(n)
    if not np.any(b):
        return PcgResult(x=np.zeros(n), iters=0, relres=0.0)
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()

    if isinstance(apply_a, SparseSym):
        full = apply_a.full
        ap = full.indptr.astype(np.int64)
        ai = full.indices.astype(np.int64)
        ax = full.data.astype(np.float64)
        if isinstance(m, TriangularFactor):
            args = (1, m.indptr, m.indices, m.data, np.ones(1))
        elif m is None:
            e = np.empty(0, dtype=np.int64)
            args = (0, e, e, np.empty(0), np.ones(1))
        else:
            e = np.empty(0, dtype=np.int64)
            args = (2, e, e, np.empty(0), np.asarray(m, dtype=float))
        precond, mp, mi, mx, jac = args
        x, iters, relres, status = _pcg_csr(n, ap, ai, ax, b, x0, mp, mi, mx, precond, jac, delta, max_iter)
    else:
        x, iters, relres, status = _pcg_generic(apply_a, b, x0, m, delta, max_iter)

    if status != 0:
        reason = "did not converge" if status == 1 else "breakdown (operator not SPD?)"
        raise PcgError(
            f"PCG {reason} after {iters} iterations (relres {relres:.3e}, delta {delta:.1e})",
            x=x,
            iters=iters,
            relres=relres,
        )
    return PcgResult(x=x, iters=iters, relres=relres)


def _precond_apply(m, r):
    if m is None:
        return r.copy()
    if isinstance(m, TriangularFactor):
        return tri_solve(m, tri_solve(m, r, "forward"), "backward")
    return r / m


def _pcg_generic(op, b, x0, m, delta, max_iter):
    bnorm = float(np.linalg.norm(b))
    x = x0
    r = b - op.apply(x)
    if np.linalg.norm(r) <= delta * bnorm:
        return x, 0, float(np.linalg.norm(r)) / bnorm, 0
    z = _precond_apply(m, r)
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < max_iter:
        it += 1
        q = op.apply(p)
        pq = float(p @ q)
        if pq <= 0.0 or not np.isfinite(pq):
            return x, it, float(np.linalg.norm(r)) / bnorm, 2
        alpha = rz / pq
        x = x + alpha * p
        r = r - alpha * q
        if np.linalg.norm(r) <= delta * bnorm:
            rt = b - op.apply(x)
            rtn = float(np.linalg.norm(rt))
            if rtn <= delta * bnorm:
                return x, it, rtn / bnorm, 0
            r = rt
        z = _precond_apply(m, r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return x, it, float(np.linalg.norm(b - op.apply(x))) / bnorm, 1
