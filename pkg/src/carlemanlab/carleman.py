"""Block-structured truncated Carleman matrix and its matrix-free action.

The linearised operator acts on stacked Kronecker levels ``y_1 .. y_N`` with
diagonal blocks built from ``F1`` and off-diagonal blocks built from the
rescaled nonlinearity ``gamma**(M-1) FM``.  Blocks are never materialised:
each level application touches one tensor factor at a time, so memory stays
at ``O(nnz(F1) + nnz(FM))`` plus the vector itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import NumericFailure, ValidationError
from .nonlinear_ode import (
    KRON_SIZE_CAP,
    NonlinearODE,
    RescaledODE,
    fm_spectral_norm,
    kron_power,
    lambda0,
    operator_spectral_norm,
    rescale,
)

#: default cap on the total dimension for dense materialisation
DENSE_TOTAL_CAP = 4096

#: switch from dense to power-iteration spectral norms above this dimension
_DENSE_NORM_DIM = 512


# ---------------------------------------------------------------------------
# vectors
# ---------------------------------------------------------------------------

@dataclass
class CarlemanVector:
    """Stacked Kronecker levels; block ``j`` (1-based) has length ``n**j``.

    Levels are stored contiguously.  Register layouts that pad every level to
    the same width belong to state-encoding bookkeeping and only show up in
    the measurement-probability formulas, never in memory.
    """

    blocks: list[np.ndarray]

    def __post_init__(self) -> None:
        if not self.blocks:
            raise ValidationError("a Carleman vector needs at least one level")
        n = self.blocks[0].size
        for j, b in enumerate(self.blocks, start=1):
            if b.size != n**j:
                raise ValidationError(
                    f"level {j} has length {b.size}, expected {n**j}"
                )

    @property
    def n(self) -> int:
        return self.blocks[0].size

    @property
    def order(self) -> int:
        return len(self.blocks)

    @property
    def total_size(self) -> int:
        return sum(b.size for b in self.blocks)

    def norm(self) -> float:
        return float(np.sqrt(sum(float(b @ b) for b in self.blocks)))

    def block_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(b) for b in self.blocks])

    def shares(self) -> np.ndarray:
        """Squared-norm weight of each level; a probability distribution."""
        sq = np.array([float(b @ b) for b in self.blocks])
        total = sq.sum()
        if total == 0.0:
            raise ValidationError("zero vector has no level shares")
        return sq / total

    def concatenate(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    def copy(self) -> "CarlemanVector":
        return CarlemanVector([b.copy() for b in self.blocks])

    def iadd(self, other: "CarlemanVector") -> "CarlemanVector":
        for mine, theirs in zip(self.blocks, other.blocks):
            mine += theirs
        return self

    def scale(self, factor: float) -> "CarlemanVector":
        for b in self.blocks:
            b *= factor
        return self

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(b)) for b in self.blocks)

    @classmethod
    def zeros(cls, n: int, N: int) -> "CarlemanVector":
        return cls([np.zeros(n**j) for j in range(1, N + 1)])

    @classmethod
    def from_flat(cls, flat: np.ndarray, n: int, N: int) -> "CarlemanVector":
        blocks, start = [], 0
        for j in range(1, N + 1):
            blocks.append(np.asarray(flat[start : start + n**j], dtype=float))
            start += n**j
        if start != flat.size:
            raise ValidationError("flat vector length does not match N levels")
        return cls(blocks)


def initial_vector(
    u_in: np.ndarray, gamma: float, N: int, cap: int = KRON_SIZE_CAP
) -> CarlemanVector:
    """Carleman lift of the initial state: level ``j`` is ``(u_in/gamma)^(x j)``."""
    if not gamma > 0:
        raise ValidationError(f"scaling factor must be positive, got {gamma}")
    u = np.asarray(u_in, dtype=float) / gamma
    return CarlemanVector([kron_power(u, j, cap=cap) for j in range(1, N + 1)])


# ---------------------------------------------------------------------------
# the matrix
# ---------------------------------------------------------------------------

@dataclass
class CarlemanMatrix:
    """Truncated, rescaled Carleman operator held in block-implicit form.

    Level ``j`` of the action is
    ``A_j^(1) y_j + gamma**(M-1) A_(j+M-1)^(M) y_(j+M-1)``
    with the second term absent when ``j+M-1 > N``; both block families are
    Kronecker sums referencing ``F1``/``FM`` once each.
    """

    rescaled: RescaledODE
    N: int
    dense_cap: int = DENSE_TOTAL_CAP
    _f1_dense: Optional[np.ndarray] = field(default=None, repr=False)
    _f1_sparse: Optional[sp.csr_matrix] = field(default=None, repr=False)
    _gather: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)
    _norms: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        n, M, N = self.n, self.M, self.N
        if N <= M:
            raise ValidationError(
                f"truncation order must exceed the nonlinearity order: N={N} <= M={M}"
            )
        if self.total_dimension >= 2**62:
            raise ValidationError("total Carleman dimension overflows the address space")
        F1 = self.rescaled.F1
        if sp.issparse(F1):
            self._f1_sparse = F1.tocsr()
            if n <= _DENSE_NORM_DIM:
                self._f1_dense = self._f1_sparse.toarray()
        else:
            self._f1_dense = np.asarray(F1, dtype=float)
        fm = self.rescaled.base.FM.tocsr()
        rows, cols, vals = (
            fm.tocoo().row,
            fm.tocoo().col.astype(np.int64),
            fm.tocoo().data,
        )
        if rows.size == np.unique(rows).size:
            col_of = np.zeros(n, dtype=np.int64)
            val_of = np.zeros(n)
            col_of[rows] = cols
            val_of[rows] = vals
            self._gather = (col_of, val_of)

    # -- shape bookkeeping --------------------------------------------------

    @property
    def n(self) -> int:
        return self.rescaled.n

    @property
    def M(self) -> int:
        return self.rescaled.M

    @property
    def gamma(self) -> float:
        return self.rescaled.gamma

    @property
    def total_dimension(self) -> int:
        """Exact ``sum_j n**j`` in arbitrary-precision integers."""
        return sum(self.n**j for j in range(1, self.N + 1))

    @property
    def coupling(self) -> float:
        """Off-diagonal prefactor ``gamma**(M-1)``."""
        return self.gamma ** (self.M - 1)

    # -- cached scalars -----------------------------------------------------

    @property
    def lambda0(self) -> float:
        if "lambda0" not in self._norms:
            self._norms["lambda0"] = lambda0(self.rescaled.F1)
        return self._norms["lambda0"]

    @property
    def f1_norm(self) -> float:
        if "f1" not in self._norms:
            if self._f1_dense is not None and self.n <= _DENSE_NORM_DIM:
                self._norms["f1"] = float(np.linalg.norm(self._f1_dense, 2))
            else:
                self._norms["f1"] = operator_spectral_norm(self._f1_sparse, tol=1e-10)
        return self._norms["f1"]

    @property
    def fm_norm(self) -> float:
        """Norm of the unscaled nonlinearity (the rescaling enters separately)."""
        if "fm" not in self._norms:
            self._norms["fm"] = fm_spectral_norm(self.rescaled.base)
        return self._norms["fm"]

    # -- matrix-free action -------------------------------------------------

    def _apply_f1_axis(self, y: np.ndarray, j: int, i: int) -> np.ndarray:
        """Apply F1 to tensor factor ``i`` (1-based) of the level-j vector."""
        n = self.n
        a, b = n ** (i - 1), n ** (j - i)
        y3 = y.reshape(a, n, b)
        if self._f1_dense is not None:
            return np.matmul(self._f1_dense, y3).reshape(-1)
        flat = y3.transpose(1, 0, 2).reshape(n, a * b)
        out = (self._f1_sparse @ flat).reshape(n, a, b)
        return out.transpose(1, 0, 2).reshape(-1)

    def _apply_fm_axis(self, y: np.ndarray, j: int, i: int) -> np.ndarray:
        """Contract FM over factors ``i..i+M-1`` of the level-(j+M-1) vector."""
        n, M = self.n, self.M
        a, b = n ** (i - 1), n ** (j - i)
        y3 = y.reshape(a, n**M, b)
        if self._gather is not None:
            col_of, val_of = self._gather
            return (val_of[None, :, None] * y3[:, col_of, :]).reshape(-1)
        flat = y3.transpose(1, 0, 2).reshape(n**M, a * b)
        out = (self.rescaled.base.FM @ flat).reshape(n, a, b)
        return out.transpose(1, 0, 2).reshape(-1)

    def apply(self, y: CarlemanVector) -> CarlemanVector:
        if y.order != self.N or y.n != self.n:
            raise ValidationError(
                f"vector levels ({y.n}, {y.order}) do not match matrix ({self.n}, {self.N})"
            )
        N, M = self.N, self.M
        out = []
        for j in range(1, N + 1):
            acc = np.zeros(self.n**j)
            for i in range(1, j + 1):
                acc += self._apply_f1_axis(y.blocks[j - 1], j, i)
            if j + M - 1 <= N:
                src = y.blocks[j + M - 2]
                fm_acc = np.zeros(self.n**j)
                for i in range(1, j + 1):
                    fm_acc += self._apply_fm_axis(src, j, i)
                acc += self.coupling * fm_acc
            out.append(acc)
        return CarlemanVector(out)

    # -- explicit assembly (small instances) ---------------------------------

    def _diag_block(self, j: int) -> sp.csr_matrix:
        n = self.n
        f1 = self._f1_sparse if self._f1_sparse is not None else sp.csr_matrix(self._f1_dense)
        total = sp.csr_matrix((n**j, n**j))
        for i in range(1, j + 1):
            left = sp.identity(n ** (i - 1), format="csr")
            right = sp.identity(n ** (j - i), format="csr")
            total = total + sp.kron(sp.kron(left, f1), right, format="csr")
        return total

    def _off_block(self, j: int) -> sp.csr_matrix:
        """Block coupling level ``j+M-1`` into level ``j`` (rescaling included)."""
        n, M = self.n, self.M
        fm = self.rescaled.base.FM
        total = sp.csr_matrix((n**j, n ** (j + M - 1)))
        for i in range(1, j + 1):
            left = sp.identity(n ** (i - 1), format="csr")
            right = sp.identity(n ** (j - i), format="csr")
            total = total + sp.kron(sp.kron(left, fm), right, format="csr")
        return self.coupling * total

    def to_sparse(self, cap: int | None = None) -> sp.csr_matrix:
        cap = self.dense_cap if cap is None else cap
        if self.total_dimension > cap:
            raise ValidationError(
                f"assembled dimension {self.total_dimension} exceeds cap {cap}"
            )
        N, M, n = self.N, self.M, self.n
        grid: list[list[object]] = [[None] * N for _ in range(N)]
        for j in range(1, N + 1):
            grid[j - 1][j - 1] = self._diag_block(j)
            if j + M - 1 <= N:
                grid[j - 1][j + M - 2] = self._off_block(j)
        out = sp.bmat(grid, format="csr")
        out.sum_duplicates()
        out.eliminate_zeros()
        return out

    def dense(self, cap: int | None = None) -> np.ndarray:
        return self.to_sparse(cap=cap).toarray()

    # -- spectral bookkeeping -------------------------------------------------

    def gershgorin_max_eig_bound(self) -> float:
        """Block-Gershgorin bound on the top eigenvalue of the symmetric part.

        Row ``j`` contributes ``j lambda0`` from the diagonal block plus half
        the spectral norms of whichever off-diagonal blocks are present.
        """
        lam, coupling, fm = self.lambda0, self.coupling, self.fm_norm
        best = -np.inf
        for j in range(1, self.N + 1):
            if j < self.M:
                off = j
            elif j <= self.N - self.M + 1:
                off = 2 * j - self.M + 1
            else:
                off = j - self.M + 1
            best = max(best, j * lam + off * coupling * fm / 2.0)
        return float(best)

    def spectral_norm_bound(self) -> float:
        """``N |F1| + (N-M+1) gamma**(M-1) |FM|``, from the block structure."""
        return self.N * self.f1_norm + (self.N - self.M + 1) * self.coupling * self.fm_norm

    def sparsity_count(self, cap: int = 2 * 10**7) -> int:
        """Measured maximum number of nonzeros in any assembled row."""
        if self.total_dimension > cap:
            raise ValidationError(
                f"sparsity count on dimension {self.total_dimension} exceeds cap {cap}"
            )
        worst = 0
        for j in range(1, self.N + 1):
            row_mat = self._diag_block(j)
            if j + self.M - 1 <= self.N:
                row_mat = sp.hstack([row_mat, self._off_block(j)], format="csr")
            row_mat.eliminate_zeros()
            worst = max(worst, int(row_mat.getnnz(axis=1).max()))
        return worst


def assemble(
    system: RescaledODE | NonlinearODE, N: int, dense_cap: int = DENSE_TOTAL_CAP
) -> CarlemanMatrix:
    """Build the truncated Carleman operator for a (rescaled) nonlinear ODE.

    An unscaled problem is treated as ``gamma = 1``.
    """
    if isinstance(system, NonlinearODE):
        system = rescale(system, 1.0)
    return CarlemanMatrix(rescaled=system, N=int(N), dense_cap=dense_cap)


def carleman_apply(mat: CarlemanMatrix, y: CarlemanVector) -> CarlemanVector:
    out = mat.apply(y)
    if not out.is_finite():
        raise NumericFailure("Carleman matvec produced non-finite values")
    return out


def lambda_value(N: int, M: int, gamma: float, lam_f1: float, lam_fm: float) -> float:
    """Block-encoding subnormalisation of the assembled operator.

    ``N lam_f1 + (N-M+1) gamma**(M-1) lam_fm``: the diagonal family stacks up
    to N copies of F1 and the off-diagonal family up to N-M+1 copies of the
    rescaled FM.
    """
    return N * lam_f1 + (N - M + 1) * gamma ** (M - 1) * lam_fm


def export_matrix_market(mat: CarlemanMatrix, path: str, cap: int | None = None) -> None:
    """Write the assembled operator in Matrix Market format (small instances)."""
    from scipy.io import mmwrite

    mmwrite(path, mat.to_sparse(cap=cap))
