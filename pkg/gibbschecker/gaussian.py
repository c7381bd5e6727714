"""
Blocked Gaussian targets and their systematic-scan Gibbs structure.

A target is held in canonical form (mean, precision) and partitioned into
named contiguous blocks. A Gibbs step on a block (or on a group of blocks
updated jointly) is an affine map of the remaining coordinates plus Gaussian
noise; composing the deterministic parts over one scan gives the AR(1)
operator B whose spectral radius is the L² convergence rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import itertools as it
from typing import Sequence, TypeAlias

import numpy as np
import scipy.linalg as sla

from .errors import DimMismatch, NotPD, UnknownBlock
from .linalg import SymPD, as_sympd, spectral_norm, sym_sqrt_pair


# A layout is an ordered list of (block name, block size)
Layout: TypeAlias = Sequence[tuple[str, int]]
# A scan step names one block or a group of blocks updated jointly
ScanStep: TypeAlias = str | Sequence[str]


@dataclass(frozen=True)
class Block:
    name: str
    start: int
    stop: int

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


def make_blocks(layout: Layout) -> tuple[Block, ...]:
    blocks, start = [], 0
    for name, size in layout:
        if size < 0:
            raise DimMismatch(f'Block {name} has negative size {size}')
        blocks.append(Block(name, start, start + size))
        start += size
    return tuple(blocks)


@dataclass(frozen=True, eq=False)
class BlockedGaussian:
    mean: np.ndarray
    precision: SymPD
    blocks: tuple[Block, ...]

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float, ndmin=1, copy=True)
        mean.setflags(write=False)
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'precision', as_sympd(self.precision))
        if mean.shape != (self.precision.dim,):
            raise DimMismatch(
                f'Mean of length {mean.size} does not match precision of '
                f'dimension {self.precision.dim}'
            )
        position = 0
        for block in self.blocks:
            if block.start != position or block.stop < block.start:
                raise DimMismatch(f'Block {block.name} breaks the partition')
            position = block.stop
        if position != self.dim:
            raise DimMismatch(f'Blocks cover {position} of {self.dim} coordinates')
        if len(set(self.names)) != len(self.names):
            raise DimMismatch(f'Duplicate block names in {self.names}')

    @classmethod
    def from_canonical(
        cls,
        precision: np.ndarray | SymPD,
        linear: np.ndarray,
        layout: Layout,
    ) -> BlockedGaussian:
        """Build from the exponent -½xᵀQx + hᵀx, i.e. mean = Q⁻¹h."""
        precision = precision if isinstance(precision, SymPD) else SymPD.symmetrized(precision)
        mean = sla.solve(precision.entries, np.asarray(linear, dtype=float), assume_a='pos')
        return cls(mean, precision, make_blocks(layout))

    @property
    def dim(self) -> int:
        return self.precision.dim

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(block.name for block in self.blocks)

    @property
    def layout(self) -> list[tuple[str, int]]:
        return [(block.name, block.size) for block in self.blocks]

    @cached_property
    def covariance(self) -> np.ndarray:
        return self.precision.inverse().entries

    def block(self, name: str) -> Block:
        for block in self.blocks:
            if block.name == name:
                return block
        raise UnknownBlock(f'No block named {name!r} (have {", ".join(self.names)})')

    def indices(self, names: ScanStep) -> np.ndarray:
        if isinstance(names, str):
            names = (names,)
        if not names:
            return np.zeros(0, dtype=int)
        return np.concatenate([np.arange(self.block(n).start, self.block(n).stop) for n in names])

    def transform(self, F: np.ndarray, layout: Layout) -> BlockedGaussian:
        """The law of z = Fx for invertible F, with z partitioned by `layout`."""
        F = np.asarray(F, dtype=float)
        if F.shape != (self.dim, self.dim):
            raise DimMismatch(f'Transform of shape {F.shape} on a {self.dim}-dim target')
        F_inv = np.linalg.inv(F)
        precision = F_inv.T @ self.precision.entries @ F_inv
        return BlockedGaussian(F @ self.mean, SymPD.symmetrized(precision), make_blocks(layout))

    def marginal(self, names: Sequence[str]) -> BlockedGaussian:
        idx = self.indices(names)
        cov = self.covariance[np.ix_(idx, idx)]
        layout = [(n, self.block(n).size) for n in names]
        return BlockedGaussian(
            self.mean[idx], SymPD.symmetrized(np.linalg.inv(cov)), make_blocks(layout)
        )

    def precision_block(self, rows: ScanStep, cols: ScanStep) -> np.ndarray:
        return self.precision.entries[np.ix_(self.indices(rows), self.indices(cols))]

    def covariance_block(self, rows: ScanStep, cols: ScanStep) -> np.ndarray:
        return self.covariance[np.ix_(self.indices(rows), self.indices(cols))]

    def partial_correlations(self) -> np.ndarray:
        """-Q_ij / sqrt(Q_ii Q_jj) off the diagonal, ones on it."""
        Q = self.precision.entries
        d = np.sqrt(np.diag(Q))
        corr = -Q / np.outer(d, d)
        np.fill_diagonal(corr, 1.0)
        return corr


@dataclass(frozen=True, eq=False)
class AffineUpdate:
    """
    The conditional law of one block (or joint group of blocks) given the
    rest: x_b | x_rest ~ N(offset + gain @ x_rest, noise_cov).
    """
    block: tuple[str, ...]
    indices: np.ndarray
    rest: np.ndarray
    gain: np.ndarray
    offset: np.ndarray
    noise_cov: SymPD

    @cached_property
    def noise_chol(self) -> np.ndarray:
        return sla.cholesky(self.noise_cov.entries, lower=True)

    def full_gain(self, dim: int) -> np.ndarray:
        """The gain as a |b|×dim matrix with zero columns for the block itself."""
        full = np.zeros((self.indices.size, dim))
        full[:, self.rest] = self.gain
        return full


def _as_step(step: ScanStep) -> tuple[str, ...]:
    return (step,) if isinstance(step, str) else tuple(step)


def normalize_order(target: BlockedGaussian, order: Sequence[ScanStep]) -> list[tuple[str, ...]]:
    """Check that a scan order visits every block exactly once."""
    steps = [_as_step(step) for step in order]
    visited = list(it.chain(*steps))
    for name in visited:
        target.block(name)
    if sorted(visited) != sorted(target.names):
        raise UnknownBlock(
            f'Scan order {visited} is not a permutation of blocks {list(target.names)}'
        )
    return steps


def conditional_update(target: BlockedGaussian, block: ScanStep) -> AffineUpdate:
    names = _as_step(block)
    idx = target.indices(names)
    rest = np.setdiff1d(np.arange(target.dim), idx)
    Q = target.precision.entries
    Q_bb = Q[np.ix_(idx, idx)]
    noise_cov = SymPD.symmetrized(np.linalg.inv(Q_bb))
    gain = -noise_cov.entries @ Q[np.ix_(idx, rest)]
    offset = target.mean[idx] - gain @ target.mean[rest]
    return AffineUpdate(names, idx, rest, gain, offset, noise_cov)


def scan_operator(target: BlockedGaussian, order: Sequence[ScanStep]) -> np.ndarray:
    """
    The linear part B of one systematic scan acting on deviations from the
    mean: after the scan, x - m = B (x_prev - m) + noise.
    """
    B = np.eye(target.dim)
    for step in normalize_order(target, order):
        update = conditional_update(target, step)
        U = np.eye(target.dim)
        U[update.indices, :] = update.full_gain(target.dim)
        B = U @ B
    return B


def l2_rate_oracle(target: BlockedGaussian, order: Sequence[ScanStep]) -> float:
    """Spectral radius of the scan operator, by full eigen-decomposition."""
    B = scan_operator(target, order)
    if B.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(B))))


def two_block_rate(S11: SymPD | np.ndarray, S12: np.ndarray, S22: SymPD | np.ndarray) -> float:
    """Squared top canonical correlation of a two-block Gaussian."""
    S11 = np.atleast_2d(np.asarray(S11, dtype=float))
    S22 = np.atleast_2d(np.asarray(S22, dtype=float))
    S12 = np.asarray(S12, dtype=float).reshape(S11.shape[0], S22.shape[0])
    joint = np.block([[S11, S12], [S12.T, S22]])
    try:
        SymPD.symmetrized(joint)
    except NotPD as exc:
        raise NotPD('Assembled joint covariance is not positive definite') from exc
    _, inv_root_11 = sym_sqrt_pair(SymPD.symmetrized(S11))
    _, inv_root_22 = sym_sqrt_pair(SymPD.symmetrized(S22))
    return spectral_norm(inv_root_11.entries @ S12 @ inv_root_22.entries) ** 2


def block_rate(target: BlockedGaussian, first: ScanStep, second: ScanStep) -> float:
    """two_block_rate on the covariance blocks of a target."""
    return two_block_rate(
        target.covariance_block(first, first),
        target.covariance_block(first, second),
        target.covariance_block(second, second),
    )


def exact_sample(
    target: BlockedGaussian,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Independent draws from the target via the Cholesky factor of its covariance."""
    try:
        chol = sla.cholesky(target.covariance, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPD('Covariance has no Cholesky factor') from exc
    if size is None:
        return target.mean + chol @ rng.standard_normal(target.dim)
    return target.mean + rng.standard_normal((size, target.dim)) @ chol.T
