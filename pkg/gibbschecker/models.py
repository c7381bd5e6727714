"""
Model specifications, synthetic data and posterior construction for the
Gaussian hierarchical models: the vector two-level model in its
non-centered, centered and component-wise forms, the random-intercept
mixed-effects regression, the two-covariate linear model, and the partially
centered two- and three-level scalar models. A flat prior is placed on the
grand mean throughout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
import enum
from functools import cached_property
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, TypeAlias

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, DimMismatch, RankDeficient
from .gaussian import BlockedGaussian
from .linalg import SymPD, as_sympd, rank_svd


logger = logging.getLogger(__name__)


class Parameterization(enum.Enum):
    NON_CENTERED = 'non_centered'
    CENTERED = 'centered'
    COMPONENT_WISE = 'component_wise'


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f'{name} must be positive, got {value}')
    return value


@dataclass(frozen=True, eq=False)
class TwoLevelVectorSpec:
    """
    y_ij = μ + a_i + ε_ij with a_i ~ N(0, Σa), ε_ij ~ N(0, Σe), all in ℝ^ℓ.
    Centered form samples α_i = μ + a_i instead of a_i; the component-wise
    form centers only the components flagged in `indicator`.
    """
    I: int
    J: int
    Sigma_a: SymPD
    Sigma_e: SymPD
    parameterization: Parameterization = Parameterization.NON_CENTERED
    indicator: tuple[bool, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, 'Sigma_a', as_sympd(self.Sigma_a))
        object.__setattr__(self, 'Sigma_e', as_sympd(self.Sigma_e))
        object.__setattr__(self, 'parameterization', Parameterization(self.parameterization))
        if self.I < 2 or self.J < 1:
            raise ValueError(f'Need I >= 2 and J >= 1, got I={self.I}, J={self.J}')
        if self.Sigma_a.dim != self.Sigma_e.dim:
            raise DimMismatch('Sigma_a and Sigma_e must have the same dimension')
        if self.parameterization is Parameterization.COMPONENT_WISE:
            if self.indicator is None or len(self.indicator) != self.ell:
                raise ValueError(f'Component-wise centering needs {self.ell} indicator flags')
            if not (self.Sigma_a.is_diagonal() and self.Sigma_e.is_diagonal()):
                raise ValueError('Component-wise centering requires diagonal covariances')
            object.__setattr__(self, 'indicator', tuple(bool(c) for c in self.indicator))
        elif self.indicator is not None:
            raise ValueError('indicator is only used with component-wise centering')

    @property
    def ell(self) -> int:
        return self.Sigma_a.dim

    @property
    def centering(self) -> np.ndarray:
        """Diagonal of the 0/1 matrix D with latent z_i = a_i + Dμ."""
        match self.parameterization:
            case Parameterization.NON_CENTERED:
                return np.zeros(self.ell)
            case Parameterization.CENTERED:
                return np.ones(self.ell)
            case Parameterization.COMPONENT_WISE:
                return np.array(self.indicator, dtype=float)

    @property
    def latent_name(self) -> str:
        return 'a' if self.parameterization is Parameterization.NON_CENTERED else 'alpha'


@dataclass(frozen=True, eq=False)
class MixedEffectsSpec:
    """y_ij = X_ijᵀβ + a_i + ε_ij, β ~ N(0, Σ0) (flat if Sigma_0 is None)."""
    X: np.ndarray  # I×J×p
    sigma2_a: float
    sigma2_e: float
    Sigma_0: SymPD | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 2:
            X = X[:, :, None]
        if X.ndim != 3:
            raise DimMismatch(f'X must have shape (I, J, p), got {X.shape}')
        X.setflags(write=False)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'sigma2_a', _positive('sigma2_a', self.sigma2_a))
        object.__setattr__(self, 'sigma2_e', _positive('sigma2_e', self.sigma2_e))
        if self.Sigma_0 is not None:
            object.__setattr__(self, 'Sigma_0', as_sympd(self.Sigma_0))
            if self.Sigma_0.dim != self.p:
                raise DimMismatch(f'Sigma_0 must be {self.p}×{self.p}')
        if self.p >= self.I:
            raise RankDeficient(f'Need p < I, got p={self.p}, I={self.I}')
        if rank_svd(self.X_bar).r < self.p:
            raise RankDeficient('Row-mean matrix X̄ does not have full column rank')

    @property
    def I(self) -> int:
        return self.X.shape[0]

    @property
    def J(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    @property
    def X_bar(self) -> np.ndarray:
        """I×p matrix of group means of the covariates."""
        return self.X.mean(axis=1)

    @property
    def prior_precision(self) -> np.ndarray:
        if self.Sigma_0 is None:
            return np.zeros((self.p, self.p))
        return self.Sigma_0.inverse().entries

    @property
    def gram(self) -> np.ndarray:
        """Σ_ij X_ij X_ijᵀ."""
        flat = self.X.reshape(-1, self.p)
        return flat.T @ flat


@dataclass(frozen=True)
class PartialTwoLevelSpec:
    """y_ij ~ N((1-A)μ + a_i, σe²), a_i ~ N(Aμ, σa²)."""
    I: int
    J: int
    sigma2_a: float
    sigma2_e: float
    A: float = 0.0

    def __post_init__(self):
        if self.I < 2 or self.J < 1:
            raise ValueError(f'Need I >= 2 and J >= 1, got I={self.I}, J={self.J}')
        object.__setattr__(self, 'sigma2_a', _positive('sigma2_a', self.sigma2_a))
        object.__setattr__(self, 'sigma2_e', _positive('sigma2_e', self.sigma2_e))
        object.__setattr__(self, 'A', float(self.A))


@dataclass(frozen=True)
class ThreeLevelSpec:
    """
    y_ijk ~ N((1-A-C)μ + (1-B)a_i + b_ij, σe²),
    b_ij ~ N(Ba_i + Cμ, σb²), a_i ~ N(Aμ, σa²).
    """
    I: int
    J: int
    K: int
    sigma2_a: float
    sigma2_b: float
    sigma2_e: float
    A: float = 0.0
    B: float = 0.0
    C: float = 0.0

    def __post_init__(self):
        if self.I < 1 or self.J < 1 or self.K < 1:
            raise ValueError('I, J and K must be positive')
        for name in ('sigma2_a', 'sigma2_b', 'sigma2_e'):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))
        for name in ('A', 'B', 'C'):
            object.__setattr__(self, name, float(getattr(self, name)))


@dataclass(frozen=True, eq=False)
class GeneralLMSpec:
    """
    y = X1ᵀβ1 + X2ᵀβ2 + ε with β_i ~ N(0, τ_i⁻¹I) and ε ~ N(0, τe⁻¹I).
    τ1 = 0 or τ2 = 0 gives a flat prior on that block. The centered form
    samples β2' = Mβ1 + β2 ~ N(Mβ1, τ2⁻¹I) where X1ᵀ = X2ᵀM.
    """
    X1: np.ndarray  # p1×n
    X2: np.ndarray  # p2×n
    tau_1: float
    tau_2: float
    tau_e: float
    centered: bool = False
    M: np.ndarray | None = None

    def __post_init__(self):
        X1 = np.array(self.X1, dtype=float, ndmin=2, copy=True)
        X2 = np.array(self.X2, dtype=float, ndmin=2, copy=True)
        if X1.shape[1] != X2.shape[1]:
            raise DimMismatch(f'X1 and X2 need the same n, got {X1.shape} and {X2.shape}')
        X1.setflags(write=False)
        X2.setflags(write=False)
        object.__setattr__(self, 'X1', X1)
        object.__setattr__(self, 'X2', X2)
        for name in ('tau_1', 'tau_2'):
            value = float(getattr(self, name))
            if value < 0:
                raise ValueError(f'{name} must be non-negative, got {value}')
            object.__setattr__(self, name, value)
        object.__setattr__(self, 'tau_e', _positive('tau_e', self.tau_e))
        if self.centered and self.M is None:
            from .multigrid import solve_M
            object.__setattr__(self, 'M', solve_M(self.X1, self.X2))
        if self.M is not None:
            M = np.array(self.M, dtype=float, ndmin=2)
            if M.shape != (self.p2, self.p1):
                raise DimMismatch(f'M must be {self.p2}×{self.p1}, got {M.shape}')
            object.__setattr__(self, 'M', M)

    @property
    def n(self) -> int:
        return self.X1.shape[1]

    @property
    def p1(self) -> int:
        return self.X1.shape[0]

    @property
    def p2(self) -> int:
        return self.X2.shape[0]


ModelSpec: TypeAlias = (
    TwoLevelVectorSpec | MixedEffectsSpec | PartialTwoLevelSpec | ThreeLevelSpec | GeneralLMSpec
)


def two_level_design(I: int, J: int) -> tuple[np.ndarray, np.ndarray]:
    """
    The two-level model as a linear model: an intercept row X1 = 𝟙ᵀ and the
    group-indicator design X2 = (I_I ⊗ 𝟙_J)ᵀ, observations in (i, j) order.
    """
    X1 = np.ones((1, I * J))
    X2 = np.kron(np.eye(I), np.ones((1, J)))
    return X1, X2


# ------------------------------- DATA ------------------------------- #

@dataclass(frozen=True)
class SuffStats:
    grand_mean: np.ndarray         # ℓ
    group_means: np.ndarray        # I×ℓ
    cell_means: np.ndarray | None  # I×J for three-level data


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Observations stored flat in row-major order of their index tuple, so row
    r has index np.unravel_index(r, dims). `values` is n×ℓ.
    """
    dims: tuple[int, ...]
    values: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != int(np.prod(dims)):
            raise DimMismatch(f'{values.shape[0]} observations do not fill index grid {dims}')
        values.setflags(write=False)
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'values', values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def ell(self) -> int:
        return self.values.shape[1]

    @property
    def index(self) -> np.ndarray:
        """n×len(dims) array of zero-based (i, j[, k]) indices."""
        return np.stack(np.unravel_index(np.arange(self.n), self.dims), axis=1)

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.dims + (self.ell,))

    @cached_property
    def stats(self) -> SuffStats:
        grid = self.grid()
        within = tuple(range(1, len(self.dims)))
        cell_means = grid.mean(axis=2)[..., 0] if len(self.dims) == 3 else None
        return SuffStats(
            grand_mean=self.values.mean(axis=0),
            group_means=grid.mean(axis=within) if within else grid,
            cell_means=cell_means,
        )

    def scalar(self) -> np.ndarray:
        if self.ell != 1:
            raise DimMismatch(f'Expected scalar observations, got ℓ={self.ell}')
        return self.values[:, 0]

    def to_csv(self, path: str | Path) -> None:
        """One row per observation: 1-based indices i, j[, k] then y (or y_1..y_ℓ)."""
        index_names = ['i', 'j', 'k'][:len(self.dims)] if len(self.dims) > 1 else ['n']
        value_names = ['y'] if self.ell == 1 else [f'y_{c + 1}' for c in range(self.ell)]
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(index_names + value_names)
            for idx, row in zip((self.index + 1).tolist(), self.values.tolist()):
                writer.writerow(idx + [repr(x) for x in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> Dataset:
        """Read observations written by to_csv; rows must be complete and in index order."""
        try:
            with open(path, newline='', encoding='utf-8') as f:
                header, *rows = list(csv.reader(f))
            n_index = sum(1 for name in header if not name.startswith('y'))
            table = np.array([[float(x) for x in row] for row in rows], dtype=float)
            if table.ndim != 2 or table.shape[0] == 0 or n_index == 0:
                raise ValueError('no observations')
            index = table[:, :n_index].astype(int) - 1
            dims = tuple(int(d) for d in index.max(axis=0) + 1)
            data = cls(dims, table[:, n_index:])
        except (OSError, ValueError, DimMismatch) as exc:
            raise ConfigError(f'Cannot read observations from {path}: {exc}') from exc
        if not np.array_equal(data.index, index):
            raise ConfigError(f'Observations in {path} are not in complete row-major order')
        return data


def _expect_dims(data: Dataset, dims: tuple[int, ...], ell: int = 1) -> None:
    if data.dims != dims or data.ell != ell:
        raise DimMismatch(
            f'Data has index grid {data.dims} with ℓ={data.ell}, model expects '
            f'{dims} with ℓ={ell}'
        )


def _mvn(rng: np.random.Generator, cov: np.ndarray, size: tuple[int, ...]) -> np.ndarray:
    chol = sla.cholesky(np.atleast_2d(cov), lower=True)
    return rng.standard_normal(size + (chol.shape[0],)) @ chol.T


def synthesize(
    spec: ModelSpec,
    rng: np.random.Generator,
    true_params: dict[str, Any] | None = None,
) -> Dataset:
    """Draw one dataset from the model's generative law."""
    true_params = dict(true_params or {})
    match spec:
        case TwoLevelVectorSpec():
            mu = np.broadcast_to(np.asarray(true_params.get('mu', 0.0), float), (spec.ell,))
            a = _mvn(rng, spec.Sigma_a.entries, (spec.I,))
            eps = _mvn(rng, spec.Sigma_e.entries, (spec.I, spec.J))
            y = mu + a[:, None, :] + eps
            dims, params = (spec.I, spec.J), {'mu': mu, 'a': a}
        case PartialTwoLevelSpec():
            mu = float(true_params.get('mu', 0.0))
            a = rng.normal(0.0, np.sqrt(spec.sigma2_a), spec.I)
            eps = rng.normal(0.0, np.sqrt(spec.sigma2_e), (spec.I, spec.J))
            y = mu + a[:, None] + eps
            dims, params = (spec.I, spec.J), {'mu': mu, 'a': a}
        case ThreeLevelSpec():
            # Every (A, B, C) reparameterizes the same law of y
            mu = float(true_params.get('mu', 0.0))
            a = rng.normal(0.0, np.sqrt(spec.sigma2_a), spec.I)
            b = rng.normal(0.0, np.sqrt(spec.sigma2_b), (spec.I, spec.J))
            eps = rng.normal(0.0, np.sqrt(spec.sigma2_e), (spec.I, spec.J, spec.K))
            y = mu + a[:, None, None] + b[:, :, None] + eps
            dims, params = (spec.I, spec.J, spec.K), {'mu': mu, 'a': a, 'b': b}
        case MixedEffectsSpec():
            if 'beta' in true_params:
                beta = np.asarray(true_params['beta'], float).reshape(spec.p)
            elif spec.Sigma_0 is None:
                beta = np.zeros(spec.p)
            else:
                beta = _mvn(rng, spec.Sigma_0.entries, ())
            a = rng.normal(0.0, np.sqrt(spec.sigma2_a), spec.I)
            eps = rng.normal(0.0, np.sqrt(spec.sigma2_e), (spec.I, spec.J))
            y = spec.X @ beta + a[:, None] + eps
            dims, params = (spec.I, spec.J), {'beta': beta, 'a': a}
        case GeneralLMSpec():
            def prior_draw(tau, size, name):
                if name in true_params:
                    return np.asarray(true_params[name], float).reshape(size)
                return rng.normal(0.0, 1 / np.sqrt(tau), size) if tau > 0 else np.zeros(size)
            beta1 = prior_draw(spec.tau_1, spec.p1, 'beta1')
            beta2 = prior_draw(spec.tau_2, spec.p2, 'beta2')
            eps = rng.normal(0.0, 1 / np.sqrt(spec.tau_e), spec.n)
            y = spec.X1.T @ beta1 + spec.X2.T @ beta2 + eps
            dims, params = (spec.n,), {'beta1': beta1, 'beta2': beta2}
        case _:
            raise TypeError(f'Unknown model spec {type(spec).__name__}')
    metadata = {'true_params': {k: np.asarray(v).tolist() for k, v in params.items()}}
    return Dataset(dims, np.reshape(y, (int(np.prod(dims)), -1)), metadata)


# ---------------------------- POSTERIORS ---------------------------- #

def _two_level_canonical(
    I: int,
    J: int,
    P_a: np.ndarray,
    P_e: np.ndarray,
    D: np.ndarray,
    group_means: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Precision and linear term over (μ, z_1..z_I) for the model
    y_ij ~ N((I-D)μ + z_i, Σe), z_i ~ N(Dμ, Σa).
    """
    ell = P_a.shape[0]
    E = np.eye(ell) - D
    Q = np.zeros(((I + 1) * ell,) * 2)
    Q[:ell, :ell] = I * J * E.T @ P_e @ E + I * D.T @ P_a @ D
    cross = J * E.T @ P_e - D.T @ P_a
    latent = P_a + J * P_e
    for i in range(I):
        rows = slice((i + 1) * ell, (i + 2) * ell)
        Q[:ell, rows] = cross
        Q[rows, :ell] = cross.T
        Q[rows, rows] = latent
    h = np.concatenate([
        I * J * E.T @ P_e @ group_means.mean(axis=0),
        (J * group_means @ P_e.T).ravel(),
    ])
    return Q, h


def posterior_s2m(spec: TwoLevelVectorSpec, data: Dataset) -> BlockedGaussian:
    """Joint posterior of (μ, latent_1..latent_I); latent blocks are a_i or α_i."""
    _expect_dims(data, (spec.I, spec.J), spec.ell)
    Q, h = _two_level_canonical(
        spec.I, spec.J,
        spec.Sigma_a.inverse().entries,
        spec.Sigma_e.inverse().entries,
        np.diag(spec.centering),
        data.stats.group_means,
    )
    layout = [('mu', spec.ell)] + [
        (f'{spec.latent_name}_{i + 1}', spec.ell) for i in range(spec.I)
    ]
    return BlockedGaussian.from_canonical(Q, h, layout)


def posterior_bar_s2m(spec: TwoLevelVectorSpec, data: Dataset) -> BlockedGaussian:
    """Posterior of (μ, mean latent), the slow part of the two-level chain."""
    _expect_dims(data, (spec.I, spec.J), spec.ell)
    I, J = spec.I, spec.J
    P_a, P_e = spec.Sigma_a.inverse().entries, spec.Sigma_e.inverse().entries
    D = np.diag(spec.centering)
    E = np.eye(spec.ell) - D
    ybar = data.stats.grand_mean
    cross = I * (J * E.T @ P_e - D.T @ P_a)
    Q = np.block([
        [I * J * E.T @ P_e @ E + I * D.T @ P_a @ D, cross],
        [cross.T, I * (P_a + J * P_e)],
    ])
    h = np.concatenate([I * J * E.T @ P_e @ ybar, I * J * P_e @ ybar])
    return BlockedGaussian.from_canonical(Q, h, [('mu', spec.ell), ('abar', spec.ell)])


def posterior_partial2(spec: PartialTwoLevelSpec, data: Dataset) -> BlockedGaussian:
    _expect_dims(data, (spec.I, spec.J))
    Q, h = _two_level_canonical(
        spec.I, spec.J,
        np.array([[1 / spec.sigma2_a]]),
        np.array([[1 / spec.sigma2_e]]),
        np.array([[spec.A]]),
        data.stats.group_means,
    )
    return BlockedGaussian.from_canonical(Q, h, [('mu', 1), ('a', spec.I)])


def posterior_sr(spec: MixedEffectsSpec, data: Dataset) -> BlockedGaussian:
    _expect_dims(data, (spec.I, spec.J))
    se, sa = 1 / spec.sigma2_e, 1 / spec.sigma2_a
    I, J, p = spec.I, spec.J, spec.p
    y = data.grid()[..., 0]
    Q = np.zeros((p + I, p + I))
    Q[:p, :p] = spec.prior_precision + se * spec.gram
    Q[:p, p:] = J * se * spec.X_bar.T
    Q[p:, :p] = Q[:p, p:].T
    Q[p:, p:] = (sa + J * se) * np.eye(I)
    h = np.concatenate([se * np.einsum('ijp,ij->p', spec.X, y), J * se * y.mean(axis=1)])
    return BlockedGaussian.from_canonical(Q, h, [('beta', p), ('a', I)])


def posterior_lm(spec: GeneralLMSpec, data: Dataset) -> BlockedGaussian:
    _expect_dims(data, (spec.n,))
    y = data.scalar()
    X1, X2, te = spec.X1, spec.X2, spec.tau_e
    if not spec.centered:
        Q = np.block([
            [te * X1 @ X1.T + spec.tau_1 * np.eye(spec.p1), te * X1 @ X2.T],
            [te * X2 @ X1.T, te * X2 @ X2.T + spec.tau_2 * np.eye(spec.p2)],
        ])
        h = te * np.concatenate([X1 @ y, X2 @ y])
    else:
        M = spec.M
        Q = np.block([
            [spec.tau_2 * M.T @ M + spec.tau_1 * np.eye(spec.p1), -spec.tau_2 * M.T],
            [-spec.tau_2 * M, te * X2 @ X2.T + spec.tau_2 * np.eye(spec.p2)],
        ])
        h = np.concatenate([np.zeros(spec.p1), te * X2 @ y])
    return BlockedGaussian.from_canonical(Q, h, [('beta1', spec.p1), ('beta2', spec.p2)])


def posterior_s3(spec: ThreeLevelSpec, data: Dataset) -> BlockedGaussian:
    """Joint posterior of (μ, a_1..a_I, b_11..b_IJ) under the (A, B, C) parameterization."""
    _expect_dims(data, (spec.I, spec.J, spec.K))
    I, J, K = spec.I, spec.J, spec.K
    A, B, C = spec.A, spec.B, spec.C
    se, sb, sa = 1 / spec.sigma2_e, 1 / spec.sigma2_b, 1 / spec.sigma2_a
    alpha, beta = 1 - A - C, 1 - B
    dim = 1 + I + I * J
    a_idx, b_idx = slice(1, 1 + I), slice(1 + I, dim)

    Q = np.zeros((dim, dim))
    Q[0, 0] = alpha**2 * I * J * K * se + C**2 * I * J * sb + A**2 * I * sa
    Q[0, a_idx] = alpha * beta * J * K * se + B * C * J * sb - A * sa
    Q[0, b_idx] = alpha * K * se - C * sb
    Q[a_idx, a_idx] = (beta**2 * J * K * se + B**2 * J * sb + sa) * np.eye(I)
    Q[a_idx, b_idx] = (beta * K * se - B * sb) * np.kron(np.eye(I), np.ones((1, J)))
    Q[b_idx, b_idx] = (K * se + sb) * np.eye(I * J)
    Q = np.triu(Q) + np.triu(Q, 1).T

    stats = data.stats
    h = np.concatenate([
        [alpha * se * I * J * K * float(stats.grand_mean[0])],
        beta * se * J * K * stats.group_means[:, 0],
        se * K * stats.cell_means.ravel(),
    ])
    return BlockedGaussian.from_canonical(Q, h, [('mu', 1), ('a', I), ('b', I * J)])


def posterior_bar_s3(spec: ThreeLevelSpec, data: Dataset) -> BlockedGaussian:
    """Marginal posterior of the coarsest level (μ, ā, b̄)."""
    from .multigrid import frame_for
    frame = frame_for(spec)
    transformed = frame.transform(posterior_s3(spec, data))
    return transformed.marginal(['mu', 'abar', 'bbar'])


def rescaled_precisions(spec: ThreeLevelSpec) -> tuple[float, float, float]:
    return (
        spec.I / spec.sigma2_a,
        spec.I * spec.J / spec.sigma2_b,
        spec.I * spec.J * spec.K / spec.sigma2_e,
    )


def posterior_for(spec: ModelSpec, data: Dataset) -> BlockedGaussian:
    match spec:
        case TwoLevelVectorSpec():
            return posterior_s2m(spec, data)
        case PartialTwoLevelSpec():
            return posterior_partial2(spec, data)
        case ThreeLevelSpec():
            return posterior_s3(spec, data)
        case MixedEffectsSpec():
            return posterior_sr(spec, data)
        case GeneralLMSpec():
            return posterior_lm(spec, data)
    raise TypeError(f'Unknown model spec {type(spec).__name__}')


def prior_draw(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """
    An initial state drawn from the prior, laid out like the posterior.
    Flat-prior coordinates start at zero.
    """
    match spec:
        case TwoLevelVectorSpec():
            a = _mvn(rng, spec.Sigma_a.entries, (spec.I,))
            return np.concatenate([np.zeros(spec.ell), a.ravel()])
        case PartialTwoLevelSpec():
            return np.concatenate([[0.0], rng.normal(0.0, np.sqrt(spec.sigma2_a), spec.I)])
        case ThreeLevelSpec():
            a = rng.normal(0.0, np.sqrt(spec.sigma2_a), spec.I)
            b = spec.B * a[:, None] + rng.normal(0.0, np.sqrt(spec.sigma2_b), (spec.I, spec.J))
            return np.concatenate([[0.0], a, b.ravel()])
        case MixedEffectsSpec():
            beta = (
                np.zeros(spec.p) if spec.Sigma_0 is None
                else _mvn(rng, spec.Sigma_0.entries, ())
            )
            return np.concatenate([beta, rng.normal(0.0, np.sqrt(spec.sigma2_a), spec.I)])
        case GeneralLMSpec():
            def draw(tau, size):
                return rng.normal(0.0, 1 / np.sqrt(tau), size) if tau > 0 else np.zeros(size)
            beta1 = draw(spec.tau_1, spec.p1)
            beta2 = draw(spec.tau_2, spec.p2)
            if spec.centered:
                beta2 = beta2 + spec.M @ beta1
            return np.concatenate([beta1, beta2])
    raise TypeError(f'Unknown model spec {type(spec).__name__}')


# ---------------------------- DESCRIPTORS ---------------------------- #

MODEL_TYPES = {
    TwoLevelVectorSpec: 's2m',
    MixedEffectsSpec: 'sr',
    GeneralLMSpec: 'lm',
    PartialTwoLevelSpec: 's2',
    ThreeLevelSpec: 's3',
}


def _jsonable(value: Any) -> Any:
    if isinstance(value, SymPD):
        return value.entries.tolist()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return list(value)
    return value


def describe(spec: ModelSpec) -> dict[str, Any]:
    """A JSON-ready description of a model spec with stable key order."""
    desc = {'type': MODEL_TYPES[type(spec)]}
    for f in fields(spec):
        desc[f.name] = _jsonable(getattr(spec, f.name))
    return desc


def model_digest(spec: ModelSpec) -> str:
    text = json.dumps(describe(spec), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def empty_data(spec: ModelSpec) -> Dataset:
    """All-zero observations; enough for anything that only needs the precision."""
    match spec:
        case TwoLevelVectorSpec():
            return Dataset((spec.I, spec.J), np.zeros((spec.I * spec.J, spec.ell)))
        case PartialTwoLevelSpec() | MixedEffectsSpec():
            return Dataset((spec.I, spec.J), np.zeros(spec.I * spec.J))
        case ThreeLevelSpec():
            return Dataset((spec.I, spec.J, spec.K), np.zeros(spec.I * spec.J * spec.K))
        case GeneralLMSpec():
            return Dataset((spec.n,), np.zeros(spec.n))
    raise TypeError(f'Unknown model spec {type(spec).__name__}')
