"""Dense linear algebra for small symmetric positive definite matrices.

Everything here targets the scatter matrices of low-dimensional Student-t
fits (d of order 1 to 16), so the algorithms are plain O(d^3) loops over
rows with numpy doing the vector work.
"""

from __future__ import annotations

import numpy as np

PIVOT_TOL = 1e-300


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot is not strictly positive."""

    def __init__(self, pivot: int, value: float):
        super().__init__(f"matrix is not positive definite (pivot {pivot} = {value:.3e})")
        self.pivot = pivot
        self.value = value


def _cholesky_lower(a: np.ndarray) -> np.ndarray:
    d = a.shape[0]
    low = np.zeros_like(a)
    for j in range(d):
        row = low[j, :j]
        pivot = a[j, j] - row @ row
        if not pivot > PIVOT_TOL:
            raise NotPositiveDefinite(j, float(pivot))
        ljj = np.sqrt(pivot)
        low[j, j] = ljj
        if j + 1 < d:
            low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ row) / ljj
    return low


class SpdMatrix:
    """Symmetric positive definite matrix together with its Cholesky factor.

    The input is symmetrized as ``(M + M.T) / 2`` before factorization so
    that round-off from accumulated outer products does not break symmetry.
    Instances are treated as immutable; the arrays are flagged read-only.

    Parameters
    ----------
    entries : array_like, shape (d, d)
        Matrix to factorize.

    Raises
    ------
    NotPositiveDefinite
        If a pivot of the factorization is ``<= 1e-300``.
    ValueError
        If the input is not square or has non-finite entries.
    """

    __slots__ = ("entries", "chol")

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix has non-finite entries")
        a = 0.5 * (a + a.T)
        low = _cholesky_lower(a)
        a.flags.writeable = False
        low.flags.writeable = False
        self.entries = a
        self.chol = low

    @classmethod
    def from_cholesky(cls, low) -> "SpdMatrix":
        """Build ``low @ low.T`` from a lower-triangular factor with positive diagonal.

        The factor is kept as given instead of being recomputed.
        """
        low = np.tril(np.array(low, dtype=float))
        diag = np.diag(low)
        if not (np.all(np.isfinite(low)) and np.all(diag > 0.0)):
            bad = int(np.argmin(np.where(np.isfinite(diag), diag, -np.inf)))
            raise NotPositiveDefinite(bad, float(diag[bad]))
        a = low @ low.T
        a = 0.5 * (a + a.T)
        a.flags.writeable = False
        low.flags.writeable = False
        obj = cls.__new__(cls)
        obj.entries = a
        obj.chol = low
        return obj

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __repr__(self) -> str:
        return f"SpdMatrix({self.entries.tolist()!r})"

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """Solve ``chol @ z = v`` by forward substitution.

        ``v`` may be a single vector of length d or a batch of shape (n, d);
        the result has the same shape.
        """
        v = np.asarray(v, dtype=float)
        d = self.dim
        if v.shape[-1] != d:
            raise ValueError(f"dimension mismatch: matrix is {d}x{d}, vector has {v.shape[-1]}")
        low = self.chol
        z = np.empty_like(v)
        for i in range(d):
            acc = v[..., i] - z[..., :i] @ low[i, :i]
            z[..., i] = acc / low[i, i]
        return z

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Return ``M^{-1} v`` for a vector or a batch of row vectors."""
        z = self.whiten(v)
        low = self.chol
        d = self.dim
        x = np.empty_like(z)
        for i in reversed(range(d)):
            acc = z[..., i] - x[..., i + 1 :] @ low[i + 1 :, i]
            x[..., i] = acc / low[i, i]
        return x

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.dim))

    def quad_form(self, v: np.ndarray) -> np.ndarray | float:
        z = self.whiten(v)
        q = np.einsum("...i,...i->...", z, z)
        return float(q) if q.ndim == 0 else q

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def cholesky(m) -> SpdMatrix:
    """Factorize a symmetric matrix, raising ``NotPositiveDefinite`` on failure."""
    return SpdMatrix(m)


def quad_form(m: SpdMatrix, v) -> np.ndarray | float:
    """Return ``v^T M^{-1} v`` computed through the Cholesky factor.

    A batch of shape (n, d) yields n values.
    """
    return m.quad_form(v)


def log_det(m: SpdMatrix) -> float:
    return m.log_det()
