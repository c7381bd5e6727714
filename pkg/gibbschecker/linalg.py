"""
Dense linear-algebra primitives: validated SPD and orthogonal matrices,
symmetric square roots, spectral norms, rank-revealing SVD and orthogonal
completion. Everything here is deterministic for a fixed input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
from scipy import stats

from .errors import DimMismatch, NotOrthogonal, NotOrthonormalRows, NotPD


SYMMETRY_RTOL = 1e-12
ORTHO_TOL = 1e-10
RANK_RTOL = 1e-10
# Entries smaller than this do not decide the sign of a vector
_SIGN_ATOL = 1e-12


def _check_square(entries: np.ndarray, what: str) -> None:
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise DimMismatch(f'{what} must be square, got shape {entries.shape}')


def _pd_floor(eigvals: np.ndarray) -> float:
    return len(eigvals) * np.finfo(float).eps * max(float(eigvals[-1]), 0.0)


@dataclass(frozen=True, eq=False)
class SymPD:
    """A symmetric positive definite matrix, checked on construction."""
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float, ndmin=2, copy=True)
        _check_square(entries, 'SymPD')
        scale = np.linalg.norm(entries)
        if np.linalg.norm(entries - entries.T) > SYMMETRY_RTOL * max(scale, 1.0):
            raise NotPD('Matrix is not symmetric')
        entries = (entries + entries.T) / 2
        eigvals = np.linalg.eigvalsh(entries)
        if not np.all(np.isfinite(eigvals)) or eigvals[0] <= _pd_floor(eigvals):
            raise NotPD(
                f'Matrix is not positive definite (smallest eigenvalue '
                f'{eigvals[0]:.3e}, largest {eigvals[-1]:.3e})'
            )
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @classmethod
    def symmetrized(cls, matrix: np.ndarray) -> SymPD:
        """Wrap a matrix that is symmetric up to floating point assembly error."""
        matrix = np.asarray(matrix, dtype=float)
        return cls((matrix + matrix.T) / 2)

    @classmethod
    def scalar(cls, value: float) -> SymPD:
        return cls(np.array([[float(value)]]))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def inverse(self) -> SymPD:
        inv = sla.solve(self.entries, np.eye(self.dim), assume_a='pos')
        return SymPD.symmetrized(inv)

    def scaled(self, factor: float) -> SymPD:
        return SymPD(self.entries * factor)

    def is_diagonal(self) -> bool:
        return not np.any(self.entries - np.diag(np.diag(self.entries)))

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __repr__(self):
        return f'SymPD({self.entries.tolist()})'


@dataclass(frozen=True, eq=False)
class OrthoMatrix:
    """A square matrix with AᵀA = I."""
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float, ndmin=2, copy=True)
        _check_square(entries, 'OrthoMatrix')
        err = np.linalg.norm(entries.T @ entries - np.eye(entries.shape[0]))
        if err > ORTHO_TOL:
            raise NotOrthogonal(f'AᵀA deviates from identity by {err:.3e}')
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def as_sympd(matrix: SymPD | np.ndarray | float) -> SymPD:
    if isinstance(matrix, SymPD):
        return matrix
    return SymPD(np.array(matrix, dtype=float, ndmin=2))


def sym_sqrt_pair(S: SymPD | np.ndarray) -> tuple[SymPD, SymPD]:
    """Return (S^{1/2}, S^{-1/2}), both symmetric."""
    S = as_sympd(S)
    eigvals, eigvecs = np.linalg.eigh(S.entries)
    if eigvals[0] <= _pd_floor(eigvals):
        raise NotPD(f'Cannot take square root, smallest eigenvalue {eigvals[0]:.3e}')
    root = np.sqrt(eigvals)
    return (
        SymPD.symmetrized((eigvecs * root) @ eigvecs.T),
        SymPD.symmetrized((eigvecs / root) @ eigvecs.T),
    )


def spectral_norm(M: np.ndarray) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


def _orient_columns(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so that its first non-negligible entry is positive."""
    signs = np.ones(vectors.shape[1])
    for col in range(vectors.shape[1]):
        significant = np.flatnonzero(np.abs(vectors[:, col]) > _SIGN_ATOL)
        if significant.size and vectors[significant[0], col] < 0:
            signs[col] = -1.0
    return signs


class RankSVD(NamedTuple):
    U: np.ndarray        # m×r, orthonormal columns
    singvals: np.ndarray # r, descending
    V: np.ndarray        # n×r, orthonormal columns
    r: int


def rank_svd(M: np.ndarray, rel_tol: float = RANK_RTOL) -> RankSVD:
    """
    Thin SVD truncated to the numerical rank. Singular vectors are oriented
    so that the first non-negligible entry of every column of U is positive.
    """
    if not 0 < rel_tol < 1:
        raise ValueError(f'rel_tol must lie in (0, 1), got {rel_tol}')
    M = np.atleast_2d(np.asarray(M, dtype=float))
    m, n = M.shape
    if M.size == 0 or not np.any(M):
        return RankSVD(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)), 0)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > rel_tol * s[0]))
    U, s, V = U[:, :r], s[:r], Vt[:r].T
    signs = _orient_columns(U)
    return RankSVD(U * signs, s, V * signs, r)


def orthogonal_complete(B: np.ndarray, tol: float = ORTHO_TOL) -> OrthoMatrix:
    """
    Extend r orthonormal rows B (r×p) to a p×p orthogonal matrix whose first
    r rows are B. The added rows span the null space of B and are produced
    by Gram-Schmidt over the standard basis in index order, so the result
    is fixed for a fixed B; each added row has a positive first nonzero
    entry.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[None, :]
    r, p = B.shape
    if r > p:
        raise NotOrthonormalRows(f'{r} rows cannot be orthonormal in dimension {p}')
    if np.linalg.norm(B @ B.T - np.eye(r)) > tol:
        raise NotOrthonormalRows('Rows of B are not orthonormal')

    basis = [row for row in B]
    for k in range(p):
        if len(basis) == p:
            break
        v = np.zeros(p)
        v[k] = 1.0
        for _ in range(2):
            for row in basis:
                v -= (row @ v) * row
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            v /= norm
            first = np.flatnonzero(np.abs(v) > _SIGN_ATOL)[0]
            basis.append(v if v[first] > 0 else -v)
    return OrthoMatrix(np.array(basis).reshape(p, p))


def random_sympd(rng: np.random.Generator, dim: int, condition: float = 10.0) -> SymPD:
    """A random SPD matrix with eigenvalues spread over [1, condition]."""
    Q = random_orthogonal(rng, dim).entries
    eigvals = np.exp(rng.uniform(0, np.log(condition), size=dim))
    return SymPD.symmetrized((Q * eigvals) @ Q.T)


def random_orthogonal(rng: np.random.Generator, dim: int) -> OrthoMatrix:
    if dim == 1:
        return OrthoMatrix(np.array([[rng.choice([-1.0, 1.0])]]))
    return OrthoMatrix(stats.ortho_group.rvs(dim, random_state=rng))
