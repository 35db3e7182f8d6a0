"""Sparse building blocks: SPD factorization, tridiagonal and PCG solvers,
and the Kronecker-sum operator acting on separated space-time vectors.

A space-time coefficient vector is stored as an ``(N_h, N_k)`` array ``U``
with row-major vectorization, so ``(S ⊗ T) vec(U) = vec(S U Tᵀ)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp


class NotSPDError(ValueError):
    pass


class SingularSystemError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def as_csr(a) -> sp.csr_matrix:
    m = sp.csr_matrix(a, dtype=float)
    m.sum_duplicates()
    m.eliminate_zeros()
    return m


def bandwidth(a) -> int:
    coo = sp.coo_matrix(a)
    if coo.nnz == 0:
        return 0
    return int(np.max(np.abs(coo.row - coo.col)))


class SpdFactorization:
    """Banded Cholesky factorization of a sparse SPD matrix.

    Lexicographic numbering on tensor meshes keeps the bandwidth at
    ``n + 1`` so the banded factor costs ``O(N n^2)`` once per mesh.
    """

    def __init__(self, K):
        K = as_csr(K)
        n, m = K.shape
        if n != m:
            raise ValueError(f"matrix must be square, got {K.shape}")
        coo = K.tocoo()
        coo.sum_duplicates()
        r, c, v = coo.row, coo.col, coo.data
        b = int(np.abs(c - r).max()) if v.size else 0
        # upper band and mirrored lower band share the LAPACK layout
        ab = np.zeros((b + 1, n))
        low = np.zeros((b + 1, n))
        up = r <= c
        ab[b + r[up] - c[up], c[up]] = v[up]
        lo = r >= c
        low[b + c[lo] - r[lo], r[lo]] = v[lo]
        scale = np.abs(v).max() if v.size else 0.0
        if np.abs(ab - low).max(initial=0.0) > 1e-12 * scale:
            raise NotSPDError("matrix not SPD: not symmetric")
        self.shape = K.shape
        self.matrix = K
        try:
            self._cb = scipy.linalg.cholesky_banded(ab, lower=False)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError("matrix not SPD: non-positive pivot") from exc
        self.bandwidth = b

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"dimension mismatch: {b.shape[0]} vs {self.shape[0]}")
        return scipy.linalg.cho_solve_banded((self._cb, False), b, check_finite=False)

    __call__ = solve


def spd_factorize(K) -> SpdFactorization:
    return SpdFactorization(K)


class Tridiagonal:
    """Tridiagonal matrix stored as LAPACK ``(1, 1)`` bands: rows upper, diagonal, lower."""

    def __init__(self, ab):
        self.ab = np.asarray(ab, dtype=float)
        n = self.ab.shape[1]
        self.shape = (n, n)

    @classmethod
    def from_matrix(cls, T):
        T = sp.dia_matrix(T)
        n = T.shape[0]
        if T.shape != (n, n):
            raise ValueError("matrix must be square")
        if bandwidth(T) > 1:
            raise ValueError("matrix is not tridiagonal")
        ab = np.zeros((3, n))
        ab[0, 1:] = T.diagonal(1)
        ab[1, :] = T.diagonal(0)
        ab[2, :-1] = T.diagonal(-1)
        return cls(ab)

    def __matmul__(self, x):
        up, d, lo = self.ab
        y = d * x
        y[:-1] += up[1:] * x[1:]
        y[1:] += lo[:-1] * x[:-1]
        return y

    def toarray(self):
        up, d, lo = self.ab
        return np.diag(d) + np.diag(up[1:], 1) + np.diag(lo[:-1], -1)


def solve_sym_tridiagonal(T, b):
    """Solve ``T x = b`` for a (numerically) symmetric tridiagonal ``T``.

    ``T`` is a sparse/dense matrix or a :class:`Tridiagonal`.
    """
    if not isinstance(T, Tridiagonal):
        T = Tridiagonal.from_matrix(T)
    ab = T.ab
    n = ab.shape[1]
    b = np.asarray(b, dtype=float)
    if b.shape[0] != n:
        raise ValueError("dimension mismatch")
    try:
        x = scipy.linalg.solve_banded((1, 1), ab, b, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("singular tridiagonal system") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("singular tridiagonal system")
    return x


def pcg_solve(apply: Callable, b, precond: Optional[Callable] = None, tol=1e-10,
              maxiter: Optional[int] = None, x0=None):
    """Preconditioned conjugate gradients.

    Returns ``(x, iterations)``. Raises :class:`ConvergenceError` if the
    relative residual does not reach ``tol`` within ``maxiter`` iterations.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if maxiter is None:
        maxiter = 2 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    if precond is None:
        precond = lambda r: r  # noqa: E731
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float)
        r = b - apply(x)
    if np.linalg.norm(r) <= tol * bnorm:
        return x, 0
    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        q = apply(p)
        pq = p @ q
        if pq <= 0.0:
            raise ConvergenceError("operator is not positive definite",
                                   np.linalg.norm(r) / bnorm, it)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, it
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"PCG did not converge in {maxiter} iterations (residual {res:.3e})",
        res, maxiter)


class SpaceFactor:
    """Space operator ``leftᵀ · middle(right · v)``.

    ``left=None`` stands for the identity, ``middle=None`` for the identity,
    otherwise ``middle`` is an :class:`SpdFactorization` (an implicit inverse).
    """

    def __init__(self, right, left=None, middle: Optional[SpdFactorization] = None):
        self.right = as_csr(right)
        self.left = None if left is None else as_csr(left)
        self.left_t = None if left is None else as_csr(self.left.T)
        self.middle = middle
        self._sparse = None
        n = self.right.shape[1]
        if self.left is not None and self.left.shape[0] != self.right.shape[0]:
            raise ValueError("left/right factors incompatible")
        self.shape = (n if self.left is None else self.left.shape[1], n)

    @classmethod
    def matrix(cls, S):
        return cls(S)

    def finish(self, w):
        """Apply ``leftᵀ middle(·)`` to an already computed ``right · v``."""
        if self.middle is not None:
            w = self.middle.solve(w)
        if self.left_t is not None:
            w = self.left_t @ w
        return w

    def apply(self, v):
        return self.finish(self.right @ v)

    __call__ = apply

    def quad(self, v, rv=None, mrv=None):
        """``vᵀ S v`` reusing ``rv = right v`` and ``mrv = middle(rv)`` if given."""
        if rv is None:
            rv = self.right @ v
        if mrv is None:
            mrv = rv if self.middle is None else self.middle.solve(rv)
        lv = v if self.left is None else self.left @ v
        return float(lv @ mrv)

    @property
    def is_explicit(self):
        return self.middle is None

    def to_sparse(self):
        if self.middle is not None:
            raise ValueError("factor with implicit inverse has no sparse form")
        if self._sparse is None:
            self._sparse = self.right if self.left is None else as_csr(self.left_t @ self.right)
        return self._sparse

    def to_dense(self):
        R = self.right.toarray()
        if self.middle is not None:
            R = self.middle.solve(R)
        if self.left is not None:
            R = self.left.T.toarray() @ R
        return R


@dataclass
class SeparatedVector:
    """``Σ_j space[:, j] ⊗ time[:, j]``."""

    space: np.ndarray
    time: np.ndarray

    def __post_init__(self):
        self.space = np.asarray(self.space, dtype=float)
        self.time = np.asarray(self.time, dtype=float)
        if self.space.ndim == 1:
            self.space = self.space[:, None]
        if self.time.ndim == 1:
            self.time = self.time[:, None]
        if self.space.shape[1] != self.time.shape[1]:
            raise ValueError("space and time factor counts differ")

    @classmethod
    def zeros(cls, nh, nk):
        return cls(np.zeros((nh, 0)), np.zeros((nk, 0)))

    @property
    def rank(self):
        return self.space.shape[1]

    @property
    def shape(self):
        return self.space.shape[0], self.time.shape[0]

    def to_dense(self):
        return self.space @ self.time.T

    def ravel(self):
        return self.to_dense().ravel()

    def __neg__(self):
        return SeparatedVector(-self.space, self.time)

    def __add__(self, other):
        if self.shape != other.shape:
            raise ValueError("dimension mismatch")
        return SeparatedVector(np.hstack([self.space, other.space]),
                               np.hstack([self.time, other.time]))

    def __sub__(self, other):
        return self + (-other)

    def scaled(self, c):
        return SeparatedVector(c * self.space, self.time)


@dataclass
class KronTerm:
    space: SpaceFactor
    time: sp.csr_matrix
    weight: float = 1.0
    tag: str = "pde"
    kind: str = ""


@dataclass
class KroneckerSumOperator:
    terms: list = field(default_factory=list)
    n_space: int = 0
    n_time: int = 0
    _bands: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _explicit: Optional[tuple] = field(default=None, repr=False, compare=False)

    def add(self, space, time, weight=1.0, tag="pde", kind=""):
        if not isinstance(space, SpaceFactor):
            space = SpaceFactor(space)
        time = as_csr(time)
        if space.shape != (self.n_space, self.n_space) or time.shape != (self.n_time, self.n_time):
            raise ValueError("dimension mismatch in Kronecker term")
        self.terms.append(KronTerm(space, time, float(weight), tag, kind))

    def time_bands(self):
        """``(R, 3, n_time)`` bands of the (tridiagonal) time matrices, cached."""
        if self._bands is None or len(self._bands) != len(self.terms):
            self._bands = np.stack([Tridiagonal.from_matrix(t.time).ab for t in self.terms])
        return self._bands

    def explicit_space(self):
        """Term indices with explicit space factors, their common CSR pattern and
        the factor values aligned to it (cached)."""
        if self._explicit is None or self._explicit[0] != len(self.terms):
            idx = [r for r, t in enumerate(self.terms) if t.space.is_explicit]
            mats = [self.terms[r].space.to_sparse().tocoo() for r in idx]
            n = self.n_space
            keys = np.unique(np.concatenate([m.row.astype(np.int64) * n + m.col for m in mats]
                                            or [np.zeros(0, np.int64)]))
            data = np.zeros((len(mats), keys.size))
            for j, m in enumerate(mats):
                pos = np.searchsorted(keys, m.row.astype(np.int64) * n + m.col)
                np.add.at(data[j], pos, m.data)
            # keys are sorted row-major, so they are already in CSR order
            indptr = np.searchsorted(keys // n, np.arange(n + 1))
            self._explicit = (len(self.terms), idx, (keys % n, indptr), data)
        return self._explicit[1:]

    def explicit_combination(self, coefs):
        """``Σ_r coefs[r] S_r`` over the explicit space factors as one CSR matrix."""
        idx, (indices, indptr), data = self.explicit_space()
        if not idx:
            return None
        vals = np.asarray(coefs, dtype=float)[idx] @ data
        return sp.csr_matrix((vals, indices, indptr), shape=(self.n_space, self.n_space))

    def space_products(self, V):
        """``[weight_r · S_r V for each term]`` sharing middle solves between terms."""
        cache = {}
        out = []
        for t in self.terms:
            S = t.space
            key = (id(S.right), id(S.middle))
            if key not in cache:
                rv = S.right @ V
                cache[key] = rv if S.middle is None else S.middle.solve(rv)
            w = cache[key]
            if S.left_t is not None:
                w = S.left_t @ w
            out.append(t.weight * w)
        return out

    def apply(self, x: SeparatedVector) -> SeparatedVector:
        if x.shape != (self.n_space, self.n_time):
            raise ValueError(f"dimension mismatch: {x.shape} vs {(self.n_space, self.n_time)}")
        if x.rank == 0:
            return SeparatedVector.zeros(self.n_space, self.n_time)
        sv = self.space_products(x.space)
        return SeparatedVector(np.hstack(sv), np.hstack([t.time @ x.time for t in self.terms]))

    __call__ = apply

    def to_dense(self, tags: Optional[Sequence[str]] = None):
        """Materialize ``Σ_r weight_r S_r ⊗ T_r`` (small instances only)."""
        n = self.n_space * self.n_time
        B = np.zeros((n, n))
        for t in self.terms:
            if tags is not None and t.tag not in tags:
                continue
            B += t.weight * np.kron(t.space.to_dense(), t.time.toarray())
        return B


def kron_apply(B: KroneckerSumOperator, x: SeparatedVector) -> SeparatedVector:
    return B.apply(x)


def _apply_weight(W, X):
    if W is None:
        return X
    if isinstance(W, SpaceFactor):
        return W.apply(X)
    return W @ X


def _clamp(val, scale, count):
    # cancellation in differences of nearly equal tensors
    tol = 1e-14 * max(scale, 0.0) * max(count, 1)
    if val < 0.0:
        if val >= -tol:
            return 0.0
        raise ValueError(f"Gram form is indefinite ({val:.3e})")
    return val


def gram_norm_sq(x: SeparatedVector, Ws=None, Wt=None) -> float:
    """``‖x‖²`` in the ``(Ws ⊗ Wt)`` inner product through factor Gram matrices."""
    if x.rank == 0:
        return 0.0
    A, B = x.space, x.time
    if Ws is not None and getattr(Ws, "shape", (A.shape[0],))[-1] != A.shape[0]:
        raise ValueError("dimension mismatch (space weight)")
    if Wt is not None and Wt.shape[-1] != B.shape[0]:
        raise ValueError("dimension mismatch (time weight)")
    GA = A.T @ _apply_weight(Ws, A)
    GB = B.T @ _apply_weight(Wt, B)
    prod = GA * GB
    return _clamp(float(prod.sum()), float(np.abs(prod).sum()), x.rank)


class GramAccumulator:
    """Running ``‖Σ_j a_j ⊗ b_j‖²`` in a sum of weighted products.

    ``components`` is a sequence of ``(space_weight, time_weight, coefficient)``;
    ``None`` weights mean the identity. Appending ``k`` columns costs
    ``O(k · J · (N_h + N_k))`` plus one weight application per new column.
    Columns carry a tag so partial sums (e.g. pde/ic residual parts) are cheap.
    """

    def __init__(self, nh, nk, components=((None, None, 1.0),), capacity=64):
        self.nh, self.nk = nh, nk
        self.components = [(ws, wt, float(c)) for ws, wt, c in components]
        self.count = 0
        self._A = np.zeros((nh, capacity))
        self._B = np.zeros((nk, capacity))
        self._WA = [np.zeros((nh, capacity)) if ws is not None else None
                    for ws, _, _ in self.components]
        self._WB = [np.zeros((nk, capacity)) if wt is not None else None
                    for _, wt, _ in self.components]
        self._GA = [np.zeros((capacity, capacity)) for _ in self.components]
        self._GB = [np.zeros((capacity, capacity)) for _ in self.components]
        self.tags = []

    def _grow(self, need):
        cap = self._A.shape[1]
        if need <= cap:
            return
        new = max(need, 2 * cap)

        def widen(X):
            Y = np.zeros((X.shape[0], new))
            Y[:, :cap] = X
            return Y

        def widen2(G):
            H = np.zeros((new, new))
            H[:cap, :cap] = G
            return H

        self._A, self._B = widen(self._A), widen(self._B)
        self._WA = [None if X is None else widen(X) for X in self._WA]
        self._WB = [None if X is None else widen(X) for X in self._WB]
        self._GA = [widen2(G) for G in self._GA]
        self._GB = [widen2(G) for G in self._GB]

    def append(self, space_cols, time_cols, tag="pde", space_weighted=None):
        """Add columns. ``space_weighted`` may supply precomputed ``Ws a`` per component."""
        a = np.asarray(space_cols, dtype=float)
        b = np.asarray(time_cols, dtype=float)
        if a.ndim == 1:
            a, b = a[:, None], b[:, None]
        k = a.shape[1]
        if k == 0:
            return
        j0, j1 = self.count, self.count + k
        self._grow(j1)
        self._A[:, j0:j1] = a
        self._B[:, j0:j1] = b
        for c, (ws, wt, _) in enumerate(self.components):
            if ws is None:
                wa = a
            elif space_weighted is not None and space_weighted[c] is not None:
                wa = space_weighted[c]
                self._WA[c][:, j0:j1] = wa
            else:
                wa = _apply_weight(ws, a)
                self._WA[c][:, j0:j1] = wa
            wb = b if wt is None else _apply_weight(wt, b)
            if wt is not None:
                self._WB[c][:, j0:j1] = wb
            colsA = self._A[:, :j1].T @ wa
            colsB = self._B[:, :j1].T @ wb
            GA, GB = self._GA[c], self._GB[c]
            GA[:j1, j0:j1] = colsA
            GA[j0:j1, :j1] = colsA.T
            GB[:j1, j0:j1] = colsB
            GB[j0:j1, :j1] = colsB.T
        self.count = j1
        self.tags.extend([tag] * k if isinstance(tag, str) else list(tag))

    def norm_sq(self, tags: Optional[Sequence[str]] = None) -> float:
        n = self.count
        if n == 0:
            return 0.0
        if tags is None:
            idx = slice(0, n)
        else:
            idx = np.array([i for i, t in enumerate(self.tags) if t in tags], dtype=int)
            if idx.size == 0:
                return 0.0
        total, scale = 0.0, 0.0
        for c, (_, _, coef) in enumerate(self.components):
            GA = self._GA[c][:n, :n][idx][:, idx] if tags is not None else self._GA[c][:n, :n]
            GB = self._GB[c][:n, :n][idx][:, idx] if tags is not None else self._GB[c][:n, :n]
            prod = GA * GB
            total += coef * float(prod.sum())
            scale += abs(coef) * float(np.abs(prod).sum())
        return _clamp(total, scale, n)

    @property
    def space(self):
        return self._A[:, :self.count]

    @property
    def time(self):
        return self._B[:, :self.count]

    def as_separated(self) -> SeparatedVector:
        return SeparatedVector(self.space.copy(), self.time.copy())
