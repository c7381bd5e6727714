"""
Multigrid decompositions: linear functionals of the chain state that evolve
as mutually independent Markov chains under the systematic-scan samplers.

Each model gets a FunctionalFrame, a bijective linear reparameterization of
its state split into families. One family is the slow part carrying the
whole convergence rate; the exact families are redrawn from their marginal
on every sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DimMismatch, NoSuchM, RankDeficient
from .gaussian import BlockedGaussian
from .linalg import OrthoMatrix, orthogonal_complete, rank_svd, sym_sqrt_pair, RANK_RTOL
from .models import (
    GeneralLMSpec, MixedEffectsSpec, ModelSpec, PartialTwoLevelSpec,
    ThreeLevelSpec, TwoLevelVectorSpec,
)


CONDITION_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Functional:
    name: str
    family: str
    matrix: np.ndarray  # rows × state dim


@dataclass(frozen=True, eq=False)
class FunctionalFrame:
    """
    Named linear maps from the full state to functional coordinates. Within a
    family, coordinates are listed in the order the sampler updates them.
    """
    functionals: tuple[Functional, ...]
    slow: str
    exact: tuple[str, ...] = ()

    def __post_init__(self):
        functionals = tuple(f for f in self.functionals if f.matrix.shape[0] > 0)
        object.__setattr__(self, 'functionals', functionals)
        stacked = self.matrix
        if stacked.shape[0] != stacked.shape[1]:
            raise DimMismatch(
                f'Frame has {stacked.shape[0]} coordinates for a {stacked.shape[1]}-dim state'
            )
        if rank_svd(stacked).r < stacked.shape[0]:
            raise RankDeficient('Frame maps do not form an invertible reparameterization')
        if self.slow not in self.families:
            raise ValueError(f'Slow family {self.slow!r} is not in the frame')

    @property
    def dim(self) -> int:
        return self.functionals[0].matrix.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([f.matrix for f in self.functionals])

    @property
    def layout(self) -> list[tuple[str, int]]:
        return [(f.name, f.matrix.shape[0]) for f in self.functionals]

    @property
    def families(self) -> dict[str, tuple[str, ...]]:
        families = {}
        for f in self.functionals:
            families.setdefault(f.family, ())
            families[f.family] += (f.name,)
        return families

    def family_matrix(self, family: str) -> np.ndarray:
        return np.vstack([f.matrix for f in self.functionals if f.family == family])

    def transform(self, target: BlockedGaussian) -> BlockedGaussian:
        """The target in frame coordinates, one block per functional."""
        return target.transform(self.matrix, self.layout)

    def max_cross_block(self, target: BlockedGaussian, first: str, second: str) -> float:
        """Largest precision entry coupling two families in frame coordinates."""
        transformed = self.transform(target)
        families = self.families
        cross = transformed.precision_block(families[first], families[second])
        return float(np.max(np.abs(cross))) if cross.size else 0.0

    def family_pairs(self) -> Iterator[tuple[str, str]]:
        names = list(self.families)
        for i, first in enumerate(names):
            for second in names[i + 1:]:
                yield first, second


def frame_apply(frame: FunctionalFrame, states) -> dict[str, np.ndarray]:
    """Per-family functional time series (T×k) of a trace or a T×dim state matrix."""
    states = np.atleast_2d(getattr(states, 'states', states))
    if states.shape[1] != frame.dim:
        raise DimMismatch(f'States have dimension {states.shape[1]}, frame expects {frame.dim}')
    return {
        family: states @ frame.family_matrix(family).T
        for family in frame.families
    }


# ------------------------- P / L CONSTRUCTION ------------------------- #

class OrthoPair(NamedTuple):
    P: np.ndarray  # p×I
    L: np.ndarray  # (I-p)×I


def build_PL(X_bar: np.ndarray) -> OrthoPair:
    """P = (X̄ᵀX̄)^{-1/2}X̄ᵀ and an orthonormal basis L of its complement."""
    X_bar = np.atleast_2d(np.asarray(X_bar, dtype=float))
    if X_bar.shape[0] == 1:
        X_bar = X_bar.T
    I, p = X_bar.shape
    if p >= I or rank_svd(X_bar).r < p:
        raise RankDeficient(f'X̄ ({I}×{p}) needs full column rank p < I')
    _, inv_root = sym_sqrt_pair(X_bar.T @ X_bar)
    P = inv_root.entries @ X_bar.T
    completion = orthogonal_complete(P).entries
    return OrthoPair(completion[:p].copy(), completion[p:].copy())


# ----------------------------- CROSS SVD ----------------------------- #

@dataclass(frozen=True, eq=False)
class CrossSVD:
    """
    B1ᵀ diag(Q) B2 reconstructs the cross-product coupling β1 and β2, and
    A_i completes B_i to an orthogonal matrix.
    """
    B1: np.ndarray  # r×p1
    B2: np.ndarray  # r×p2
    Q: np.ndarray   # r×r diagonal
    A1: OrthoMatrix
    A2: OrthoMatrix

    @property
    def r(self) -> int:
        return self.B1.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.B1.T @ self.Q @ self.B2


def _cross_from(product: np.ndarray, rel_tol: float) -> CrossSVD:
    U, s, V, r = rank_svd(product, rel_tol)
    B1, B2 = U.T, V.T
    return CrossSVD(B1, B2, np.diag(s), orthogonal_complete(B1), orthogonal_complete(B2))


def cross_svd(X1: np.ndarray, X2: np.ndarray, rel_tol: float = RANK_RTOL) -> CrossSVD:
    """SVD of the design cross-product X1X2ᵀ = B1ᵀQB2, with completions."""
    X1, X2 = np.atleast_2d(X1), np.atleast_2d(X2)
    if X1.size == 0 or X2.size == 0:
        raise DimMismatch('cross_svd needs nonempty designs')
    return _cross_from(X1 @ X2.T, rel_tol)


def m_svd(M: np.ndarray, rel_tol: float = RANK_RTOL) -> CrossSVD:
    """The same decomposition for the centering map, reconstructing Mᵀ (p1×p2)."""
    return _cross_from(np.atleast_2d(M).T, rel_tol)


def check_orthogonality_condition(
    X: np.ndarray,
    A: OrthoMatrix | np.ndarray,
    r: int,
    tol: float = CONDITION_TOL,
) -> tuple[bool, float]:
    """
    Whether the first r columns of XᵀAᵀ are orthogonal to the remaining ones.
    Inner products are normalized by the column norms.
    """
    W = np.atleast_2d(X).T @ np.asarray(A).T
    if r <= 0 or r >= W.shape[1]:
        return True, 0.0
    norms = np.linalg.norm(W, axis=0)
    norms = np.where(norms > 0, norms, np.inf)
    inner = np.abs(W[:, :r].T @ W[:, r:]) / np.outer(norms[:r], norms[r:])
    violation = float(np.max(inner))
    return violation <= tol, violation


def check_centering_condition(
    X2: np.ndarray,
    A2: OrthoMatrix | np.ndarray,
    r: int,
    tol: float = CONDITION_TOL,
) -> tuple[bool, float]:
    return check_orthogonality_condition(X2, A2, r, tol)


def solve_M(X1: np.ndarray, X2: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Least-squares M (p2×p1) with X1ᵀ = X2ᵀM, or NoSuchM."""
    X1, X2 = np.atleast_2d(X1), np.atleast_2d(X2)
    M, *_ = np.linalg.lstsq(X2.T, X1.T, rcond=None)
    residual = np.linalg.norm(X1.T - X2.T @ M)
    if residual > tol * max(np.linalg.norm(X1), np.finfo(float).tiny):
        raise NoSuchM(f'X1ᵀ is not in the column space of X2ᵀ (residual {residual:.3e})')
    return M


def lm_cross(spec: GeneralLMSpec) -> CrossSVD:
    return m_svd(spec.M) if spec.centered else cross_svd(spec.X1, spec.X2)


def lm_condition(spec: GeneralLMSpec) -> tuple[bool, float]:
    """
    The structural hypothesis under which the θ-families decouple: the
    orthogonality condition on both designs (non-centered) or the centering
    condition on X2 (centered).
    """
    cross = lm_cross(spec)
    if spec.centered:
        return check_centering_condition(spec.X2, cross.A2, cross.r)
    ok1, v1 = check_orthogonality_condition(spec.X1, cross.A1, cross.r)
    ok2, v2 = check_orthogonality_condition(spec.X2, cross.A2, cross.r)
    return ok1 and ok2, max(v1, v2)


# ------------------------------- FRAMES ------------------------------- #

def _place(width: int, offset: int, block: np.ndarray) -> np.ndarray:
    block = np.atleast_2d(block)
    out = np.zeros((block.shape[0], width))
    out[:, offset:offset + block.shape[1]] = block
    return out


def _deviation_rows(I: int) -> np.ndarray:
    """(I-1)×I rows x_i − x̄ for i < I; the last deviation is implied."""
    return np.eye(I)[:-1] - 1.0 / I


def _two_level_frame(I: int, ell: int) -> FunctionalFrame:
    width = (I + 1) * ell
    eye = np.eye(ell)
    mean = np.kron(np.full((1, I), 1.0 / I), eye)
    delta = np.kron(_deviation_rows(I), eye)
    return FunctionalFrame(
        (
            Functional('mu', 'bar', _place(width, 0, eye)),
            Functional('abar', 'bar', _place(width, ell, mean)),
            Functional('delta', 'delta', _place(width, ell, delta)),
        ),
        slow='bar',
        exact=('delta',),
    )


def frame_for(spec: ModelSpec) -> FunctionalFrame:
    match spec:
        case TwoLevelVectorSpec():
            return _two_level_frame(spec.I, spec.ell)
        case PartialTwoLevelSpec():
            return _two_level_frame(spec.I, 1)
        case MixedEffectsSpec():
            p, I = spec.p, spec.I
            width = p + I
            L = build_PL(spec.X_bar).L
            return FunctionalFrame(
                (
                    Functional('beta', 'upper', _place(width, 0, np.eye(p))),
                    Functional('xa', 'upper', _place(width, p, spec.X_bar.T)),
                    Functional('residual', 'residual', _place(width, p, L)),
                ),
                slow='upper',
                exact=('residual',),
            )
        case ThreeLevelSpec():
            I, J = spec.I, spec.J
            width = 1 + I + I * J
            b_mean_i = np.kron(np.eye(I), np.full((1, J), 1.0 / J))
            return FunctionalFrame(
                (
                    Functional('mu', 'delta0', _place(width, 0, np.ones((1, 1)))),
                    Functional('abar', 'delta0', _place(width, 1, np.full((1, I), 1.0 / I))),
                    Functional('bbar', 'delta0', _place(width, 1 + I, np.full((1, I * J), 1.0 / (I * J)))),
                    Functional('da', 'delta1', _place(width, 1, _deviation_rows(I))),
                    Functional('db', 'delta1', _place(width, 1 + I, _deviation_rows(I) @ b_mean_i)),
                    Functional('dd', 'delta2', _place(
                        width, 1 + I, np.kron(np.eye(I), _deviation_rows(J)) if J > 1 else np.zeros((0, I * J))
                    )),
                ),
                slow='delta0',
                exact=('delta2',) if J > 1 else (),
            )
        case GeneralLMSpec():
            cross = lm_cross(spec)
            r, p1, p2 = cross.r, spec.p1, spec.p2
            width = p1 + p2
            A1, A2 = cross.A1.entries, cross.A2.entries
            return FunctionalFrame(
                (
                    Functional('theta1', 'theta_joint', _place(width, 0, A1[:r])),
                    Functional('theta2', 'theta_joint', _place(width, p1, A2[:r])),
                    Functional('theta1_res', 'theta_res1', _place(width, 0, A1[r:])),
                    Functional('theta2_res', 'theta_res2', _place(width, p1, A2[r:])),
                ),
                slow='theta_joint' if r > 0 else ('theta_res1' if r < p1 else 'theta_res2'),
                exact=tuple(
                    name for name, size in (('theta_res1', p1 - r), ('theta_res2', p2 - r)) if size
                ),
            )
    raise TypeError(f'Unknown model spec {type(spec).__name__}')
