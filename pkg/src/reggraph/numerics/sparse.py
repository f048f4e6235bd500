"""CSR sparse matrices used as adjacency carriers for message passing."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class SparseMatrix:
    """Compressed sparse row matrix with validated structure.

    The arrays are owned by this object and must not be mutated after
    construction; the scipy view and the transpose are cached lazily.
    """

    def __init__(self, indptr, indices, data, shape, dtype=np.float64):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.shape = (int(shape[0]), int(shape[1]))
        self._validate()
        self._csr = None
        self._t = None

    def _validate(self):
        n_rows, n_cols = self.shape
        if self.indptr.shape != (n_rows + 1,):
            raise ValueError(f"indptr must have {n_rows + 1} entries, got {self.indptr.shape[0]}")
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise ValueError("indptr must start at 0 and be non-decreasing")
        nnz = int(self.indptr[-1])
        if self.indices.shape != (nnz,) or self.data.shape != (nnz,):
            raise ValueError("indices/data length must equal the last offset")
        if nnz:
            if self.indices.min() < 0 or self.indices.max() >= n_cols:
                raise ValueError("column index out of range")
            # sorted within each row: a decrease is only allowed at a row start
            drops = np.flatnonzero(np.diff(self.indices) <= 0) + 1
            row_starts = set(self.indptr[1:-1].tolist())
            if any(int(d) not in row_starts for d in drops):
                raise ValueError("column indices must be strictly increasing within a row")

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "SparseMatrix":
        """Build from triplets; duplicate coordinates are summed."""
        m = sp.coo_matrix(
            (np.asarray(vals, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
            shape=shape,
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls.from_scipy(m)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        dtype = m.dtype if m.dtype in (np.float32, np.float64) else np.float64
        return cls(m.indptr, m.indices, m.data, m.shape, dtype=dtype)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(np.arange(n + 1), np.arange(n), np.ones(n), (n, n))

    def to_scipy(self):
        if self._csr is None:
            self._csr = sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    @property
    def T(self) -> "SparseMatrix":
        if self._t is None:
            self._t = SparseMatrix.from_scipy(self.to_scipy().T.tocsr())
            self._t._t = self
        return self._t

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry (COO row array)."""
        return np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))

    def matmul(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.shape[1]:
            raise ValueError(f"shape mismatch: {self.shape} @ {x.shape}")
        return np.asarray(self.to_scipy() @ x)

    @property
    def dtype(self):
        return self.data.dtype

    def astype(self, dtype) -> "SparseMatrix":
        if self.data.dtype == dtype:
            return self
        return SparseMatrix(self.indptr, self.indices, self.data, self.shape, dtype=dtype)

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"
