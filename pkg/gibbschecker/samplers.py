"""
Systematic-scan Gibbs samplers for every model, trace recording, and the
adaptive sampler that picks a parameterization each sweep when the
variances are unknown.

Every sampler draws from one generator. Each sweep consumes exactly one
standard-normal vector of the state's dimension, split between blocks in
scan order, so a trace is a fixed function of (target, order, config).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import enum
import json
import logging
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import Stream, stream_rng
from .errors import DimMismatch, InvalidPrior, TraceFormatError
from .gaussian import BlockedGaussian, ScanStep, conditional_update, normalize_order
from .models import (
    Dataset, GeneralLMSpec, MixedEffectsSpec, ModelSpec, Parameterization, PartialTwoLevelSpec,
    ThreeLevelSpec, TwoLevelVectorSpec, describe, model_digest, posterior_lm, posterior_partial2,
    posterior_s2m, posterior_s3, posterior_sr, prior_draw,
)
from .rates import ParamKind, scalar_rates


logger = logging.getLogger(__name__)

# Sweeps worth of noise drawn from the generator at once
_NOISE_BATCH = 1024


class InitPolicy(enum.Enum):
    ZERO = 'zero'
    PRIOR = 'prior'
    GIVEN = 'given'


@dataclass(frozen=True, eq=False)
class SamplerConfig:
    iterations: int
    burn_in: int = 1000
    seed: int = 0
    thinning: int = 1
    init: InitPolicy = InitPolicy.ZERO
    initial_state: np.ndarray | None = None
    # Spawn keys of the chain stream under `seed`
    stream: tuple[int, ...] = (Stream.CHAIN,)

    def __post_init__(self):
        object.__setattr__(self, 'init', InitPolicy(self.init))
        if self.iterations < 1:
            raise ValueError(f'iterations must be positive, got {self.iterations}')
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError(
                f'burn_in must lie in [0, iterations), got {self.burn_in} of {self.iterations}'
            )
        if self.thinning < 1:
            raise ValueError(f'thinning must be positive, got {self.thinning}')
        if self.kept < 1:
            raise ValueError(
                f'no sweeps kept: {self.iterations - self.burn_in} after burn-in, thinned by {self.thinning}'
            )
        if (self.init is InitPolicy.GIVEN) != (self.initial_state is not None):
            raise ValueError('initial_state is required exactly when init is "given"')
        if self.initial_state is not None:
            state = np.array(self.initial_state, dtype=float, ndmin=1, copy=True)
            state.setflags(write=False)
            object.__setattr__(self, 'initial_state', state)

    @property
    def kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning

    def rng(self) -> np.random.Generator:
        return stream_rng(self.seed, *self.stream)

    def to_json(self) -> dict[str, Any]:
        return {
            'iterations': self.iterations,
            'burn_in': self.burn_in,
            'seed': self.seed,
            'thinning': self.thinning,
            'init': self.init.value if self.initial_state is None else self.initial_state.tolist(),
        }


# ------------------------------- TRACES ------------------------------- #

@dataclass(frozen=True, eq=False)
class ChainTrace:
    """Kept states of one chain, one row per recorded sweep."""
    states: np.ndarray
    layout: list[tuple[str, int]]
    seed: int
    burn_in: int
    thinning: int = 1
    sweeps: np.ndarray | None = None
    model: dict[str, Any] | None = None

    def __post_init__(self):
        states = np.array(self.states, dtype=float, ndmin=2, copy=True)
        layout = [(str(name), int(size)) for name, size in self.layout]
        if states.shape[0] < 1:
            raise DimMismatch('A trace needs at least one state')
        if sum(size for _, size in layout) != states.shape[1]:
            raise DimMismatch(f'Layout {layout} does not cover {states.shape[1]} columns')
        sweeps = self.sweeps
        if sweeps is None:
            sweeps = self.burn_in + self.thinning * np.arange(1, states.shape[0] + 1)
        sweeps = np.array(sweeps, dtype=np.int64)
        if sweeps.shape != (states.shape[0],):
            raise DimMismatch('One sweep index per state is required')
        states.setflags(write=False)
        sweeps.setflags(write=False)
        object.__setattr__(self, 'states', states)
        object.__setattr__(self, 'layout', layout)
        object.__setattr__(self, 'sweeps', sweeps)

    @property
    def T(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def columns(self) -> list[str]:
        return [f'{name}_{k + 1}' for name, size in self.layout for k in range(size)]

    def block(self, name: str) -> np.ndarray:
        start = 0
        for block_name, size in self.layout:
            if block_name == name:
                return self.states[:, start:start + size]
            start += size
        raise KeyError(name)

    def metadata(self) -> dict[str, Any]:
        return {
            'seed': self.seed,
            'burn_in': self.burn_in,
            'thinning': self.thinning,
            'layout': [[name, size] for name, size in self.layout],
            'model': self.model,
        }

    def to_csv(self, path: str | Path, extra: dict[str, Any] | None = None) -> Path:
        """Write the trace and its JSON sidecar (metadata plus `extra`); returns the sidecar path."""
        path = Path(path)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['sweep'] + self.columns())
            for sweep, row in zip(self.sweeps.tolist(), self.states.tolist()):
                writer.writerow([sweep] + [repr(x) for x in row])
        sidecar = sidecar_path(path)
        with open(sidecar, 'w', encoding='utf-8') as f:
            json.dump(self.metadata() | (extra or {}), f, indent=2)
            f.write('\n')
        return sidecar

    @classmethod
    def from_csv(cls, path: str | Path) -> ChainTrace:
        path = Path(path)
        try:
            with open(sidecar_path(path), encoding='utf-8') as f:
                meta = json.load(f)
            with open(path, newline='', encoding='utf-8') as f:
                rows = list(csv.reader(f))
            header, body = rows[0], rows[1:]
            trace = cls(
                states=np.array([[float(x) for x in row[1:]] for row in body], dtype=float),
                layout=[tuple(entry) for entry in meta['layout']],
                seed=int(meta['seed']),
                burn_in=int(meta['burn_in']),
                thinning=int(meta['thinning']),
                sweeps=np.array([int(row[0]) for row in body], dtype=np.int64),
                model=meta.get('model'),
            )
        except (OSError, ValueError, KeyError, IndexError, TypeError, DimMismatch) as exc:
            raise TraceFormatError(f'Cannot read trace {path}: {exc}') from exc
        if header != ['sweep'] + trace.columns():
            raise TraceFormatError(f'Trace header of {path} does not match its layout')
        return trace


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + '.json')


# ------------------------------- KERNEL ------------------------------- #

class SystematicScan:
    """
    One sweep of exact conditional updates in a fixed block order. Works on
    a single state or on a stack of states (last axis is the state).
    """

    def __init__(self, target: BlockedGaussian, order: Sequence[ScanStep]):
        self.target = target
        self.steps = normalize_order(target, order)
        self.updates = [conditional_update(target, step) for step in self.steps]
        offsets = np.cumsum([0] + [u.indices.size for u in self.updates])
        self._noise_slices = [slice(a, b) for a, b in zip(offsets[:-1], offsets[1:])]

    @property
    def dim(self) -> int:
        return self.target.dim

    def sweep(self, state: np.ndarray, noise: np.ndarray) -> np.ndarray:
        state = np.array(state, dtype=float, copy=True)
        for update, noise_slice in zip(self.updates, self._noise_slices):
            z = noise[..., noise_slice]
            state[..., update.indices] = (
                update.offset + state[..., update.rest] @ update.gain.T + z @ update.noise_chol.T
            )
        return state

    def run(
        self,
        cfg: SamplerConfig,
        initial: np.ndarray,
        rng: np.random.Generator,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Kept states and their sweep numbers."""
        state = np.array(initial, dtype=float)
        kept, sweeps = np.empty((cfg.kept, self.dim)), np.empty(cfg.kept, dtype=np.int64)
        row, sweep = 0, 0
        while sweep < cfg.iterations:
            batch = rng.standard_normal((min(_NOISE_BATCH, cfg.iterations - sweep), self.dim))
            for noise in batch:
                state = self.sweep(state, noise)
                sweep += 1
                if sweep > cfg.burn_in and (sweep - cfg.burn_in) % cfg.thinning == 0:
                    kept[row], sweeps[row] = state, sweep
                    row += 1
        return kept, sweeps


def _initial_state(
    cfg: SamplerConfig,
    dim: int,
    rng: np.random.Generator,
    spec: ModelSpec | None,
) -> np.ndarray:
    match cfg.init:
        case InitPolicy.ZERO:
            return np.zeros(dim)
        case InitPolicy.GIVEN:
            if cfg.initial_state.shape != (dim,):
                raise DimMismatch(
                    f'Initial state has length {cfg.initial_state.size}, chain dimension is {dim}'
                )
            return cfg.initial_state.copy()
        case InitPolicy.PRIOR:
            if spec is None:
                raise ValueError('Prior initialization needs a model spec')
            return prior_draw(spec, rng)


def _descriptor(spec: ModelSpec | None) -> dict[str, Any] | None:
    if spec is None:
        return None
    return {'description': describe(spec), 'digest': model_digest(spec)}


def run_generic(
    target: BlockedGaussian,
    order: Sequence[ScanStep],
    cfg: SamplerConfig,
    spec: ModelSpec | None = None,
) -> ChainTrace:
    """Systematic-scan Gibbs on any blocked Gaussian target."""
    scan = SystematicScan(target, order)
    rng = cfg.rng()
    initial = _initial_state(cfg, target.dim, rng, spec)
    logger.info(
        'Sampling %s: %d sweeps over %d blocks, seed %d',
        'generic target' if spec is None else type(spec).__name__,
        cfg.iterations, len(scan.steps), cfg.seed,
    )
    states, sweeps = scan.run(cfg, initial, rng)
    logger.info('Finished %d sweeps, kept %d states', cfg.iterations, states.shape[0])
    return ChainTrace(
        states, target.layout, cfg.seed, cfg.burn_in, cfg.thinning, sweeps, _descriptor(spec)
    )


def _require(spec: TwoLevelVectorSpec, parameterization: Parameterization) -> None:
    if spec.parameterization is not parameterization:
        raise ValueError(
            f'Sampler needs a {parameterization.value} spec, got {spec.parameterization.value}'
        )


def _run_two_level(spec: TwoLevelVectorSpec, data: Dataset, cfg: SamplerConfig) -> ChainTrace:
    target = posterior_s2m(spec, data)
    latents = tuple(name for name in target.names if name != 'mu')
    return run_generic(target, ['mu', latents], cfg, spec)


def run_gs0(spec: TwoLevelVectorSpec, data: Dataset, cfg: SamplerConfig) -> ChainTrace:
    """μ | a, then every a_i | μ jointly."""
    _require(spec, Parameterization.NON_CENTERED)
    return _run_two_level(spec, data, cfg)


def run_gs1(spec: TwoLevelVectorSpec, data: Dataset, cfg: SamplerConfig) -> ChainTrace:
    """μ | α, then every α_i | μ jointly."""
    _require(spec, Parameterization.CENTERED)
    return _run_two_level(spec, data, cfg)


def run_gs_mixed(spec: TwoLevelVectorSpec, data: Dataset, cfg: SamplerConfig) -> ChainTrace:
    _require(spec, Parameterization.COMPONENT_WISE)
    return _run_two_level(spec, data, cfg)


def run_gs_regression(spec: MixedEffectsSpec, data: Dataset, cfg: SamplerConfig) -> ChainTrace:
    return run_generic(posterior_sr(spec, data), ['beta', 'a'], cfg, spec)


def run_gs_partial2(spec: PartialTwoLevelSpec, data: Dataset, cfg: SamplerConfig) -> ChainTrace:
    return run_generic(posterior_partial2(spec, data), ['mu', 'a'], cfg, spec)


def run_gs_abc(spec: ThreeLevelSpec, data: Dataset, cfg: SamplerConfig) -> ChainTrace:
    return run_generic(posterior_s3(spec, data), ['mu', 'a', 'b'], cfg, spec)


def run_gs_lm(spec: GeneralLMSpec, data: Dataset, cfg: SamplerConfig) -> ChainTrace:
    return run_generic(posterior_lm(spec, data), ['beta1', 'beta2'], cfg, spec)


def run_model(spec: ModelSpec, data: Dataset, cfg: SamplerConfig) -> ChainTrace:
    """The sampler that matches a spec."""
    match spec:
        case TwoLevelVectorSpec():
            return _run_two_level(spec, data, cfg)
        case MixedEffectsSpec():
            return run_gs_regression(spec, data, cfg)
        case PartialTwoLevelSpec():
            return run_gs_partial2(spec, data, cfg)
        case ThreeLevelSpec():
            return run_gs_abc(spec, data, cfg)
        case GeneralLMSpec():
            return run_gs_lm(spec, data, cfg)
    raise TypeError(f'Unknown model spec {type(spec).__name__}')


def model_scan(spec: ModelSpec, data: Dataset) -> tuple[BlockedGaussian, list[ScanStep]]:
    """The posterior and scan order that run_model uses for a spec."""
    match spec:
        case TwoLevelVectorSpec():
            target = posterior_s2m(spec, data)
            return target, ['mu', tuple(n for n in target.names if n != 'mu')]
        case MixedEffectsSpec():
            return posterior_sr(spec, data), ['beta', 'a']
        case PartialTwoLevelSpec():
            return posterior_partial2(spec, data), ['mu', 'a']
        case ThreeLevelSpec():
            return posterior_s3(spec, data), ['mu', 'a', 'b']
        case GeneralLMSpec():
            return posterior_lm(spec, data), ['beta1', 'beta2']
    raise TypeError(f'Unknown model spec {type(spec).__name__}')


# ------------------------- UNKNOWN VARIANCES ------------------------- #

@dataclass(frozen=True)
class VariancePriors:
    """Inverse-gamma(shape, scale) priors on σa² and σe²."""
    shape_a: float = 0.01
    scale_a: float = 0.01
    shape_e: float = 0.01
    scale_e: float = 0.01

    def __post_init__(self):
        for name in ('shape_a', 'scale_a', 'shape_e', 'scale_e'):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidPrior(f'{name} must be positive, got {value}')


@dataclass(eq=False)
class DecisionLog:
    """Per-sweep variance draws, the two scalar rates, and the choice made."""
    sigma2_a: list[float] = field(default_factory=list)
    sigma2_e: list[float] = field(default_factory=list)
    rho0: list[float] = field(default_factory=list)
    rho1: list[float] = field(default_factory=list)
    kinds: list[ParamKind] = field(default_factory=list)

    def record(self, sigma2_a: float, sigma2_e: float, rho0: float, rho1: float, kind: ParamKind):
        self.sigma2_a.append(sigma2_a)
        self.sigma2_e.append(sigma2_e)
        self.rho0.append(rho0)
        self.rho1.append(rho1)
        self.kinds.append(kind)

    def __len__(self):
        return len(self.kinds)

    @property
    def bounds(self) -> np.ndarray:
        """The rate of the chosen parameterization at every sweep."""
        return np.minimum(self.rho0, self.rho1)

    @property
    def centered_fraction(self) -> float:
        if not self.kinds:
            return 0.0
        return sum(k is ParamKind.CENTERED for k in self.kinds) / len(self.kinds)

    def to_json(self) -> dict[str, Any]:
        return {
            'sweeps': len(self),
            'centered_fraction': self.centered_fraction,
            'max_bound': float(np.max(self.bounds)) if self.kinds else None,
        }


def _inverse_gamma(rng: np.random.Generator, shape: float, scale: float) -> float:
    return scale / rng.gamma(shape)


def run_adaptive_unknown_variance(
    data: Dataset,
    priors: VariancePriors | None = None,
    cfg: SamplerConfig | None = None,
) -> tuple[ChainTrace, DecisionLog]:
    """
    Scalar two-level model with unknown σa², σe². Each sweep draws both
    variances from their conjugate conditionals, then updates (μ, a) in
    whichever of the non-centered and centered forms has the smaller rate at
    the drawn variances. States are always recorded as (μ, a, σa², σe²).
    """
    priors = priors or VariancePriors()
    cfg = cfg or SamplerConfig(iterations=10_000)
    if len(data.dims) != 2 or data.ell != 1:
        raise DimMismatch(f'Adaptive sampler needs scalar (I, J) data, got {data.dims}, ℓ={data.ell}')
    I, J = data.dims
    y = data.grid()[..., 0]
    ybar_i = y.mean(axis=1)
    ybar = float(y.mean())
    within = float(np.sum((y - ybar_i[:, None]) ** 2))

    rng = cfg.rng()
    match cfg.init:
        case InitPolicy.ZERO:
            mu, a = 0.0, np.zeros(I)
        case InitPolicy.GIVEN:
            if cfg.initial_state.shape != (1 + I,):
                raise DimMismatch(f'Initial state needs length {1 + I} (μ, a)')
            mu, a = float(cfg.initial_state[0]), cfg.initial_state[1:].copy()
        case InitPolicy.PRIOR:
            raise ValueError('Prior initialization is undefined with unknown variances')

    log = DecisionLog()
    kept = np.empty((cfg.kept, I + 3))
    sweeps = np.empty(cfg.kept, dtype=np.int64)
    row = 0
    logger.info('Adaptive sampling: I=%d, J=%d, %d sweeps, seed %d', I, J, cfg.iterations, cfg.seed)
    for sweep in range(1, cfg.iterations + 1):
        sigma2_a = _inverse_gamma(rng, priors.shape_a + I / 2, priors.scale_a + np.sum(a**2) / 2)
        sse = within + J * np.sum((ybar_i - mu - a) ** 2)
        sigma2_e = _inverse_gamma(rng, priors.shape_e + I * J / 2, priors.scale_e + sse / 2)
        rho0, rho1 = scalar_rates(sigma2_a, sigma2_e, J)
        tau_a, tau_e = 1 / sigma2_a, 1 / sigma2_e
        prec = tau_a + J * tau_e
        z_mu, z_a = rng.standard_normal(), rng.standard_normal(I)
        if rho0 <= rho1:
            kind = ParamKind.NON_CENTERED
            mu = ybar - a.mean() + np.sqrt(sigma2_e / (I * J)) * z_mu
            a = J * tau_e * (ybar_i - mu) / prec + z_a / np.sqrt(prec)
        else:
            kind = ParamKind.CENTERED
            alpha = mu + a
            mu = alpha.mean() + np.sqrt(sigma2_a / I) * z_mu
            alpha = (tau_a * mu + J * tau_e * ybar_i) / prec + z_a / np.sqrt(prec)
            a = alpha - mu
        log.record(sigma2_a, sigma2_e, rho0, rho1, kind)
        logger.debug(
            'sweep %d: sigma2_a=%.4g sigma2_e=%.4g rho0=%.4g rho1=%.4g -> %s',
            sweep, sigma2_a, sigma2_e, rho0, rho1, kind.value,
        )
        if sweep > cfg.burn_in and (sweep - cfg.burn_in) % cfg.thinning == 0:
            kept[row] = np.concatenate([[mu], a, [sigma2_a, sigma2_e]])
            sweeps[row] = sweep
            row += 1

    logger.info(
        'Adaptive sampling done: centered on %.1f%% of sweeps',
        100 * log.centered_fraction,
    )
    layout = [('mu', 1), ('a', I), ('sigma2_a', 1), ('sigma2_e', 1)]
    model = {'description': {'type': 'adaptive_s2', 'I': I, 'J': J}, 'digest': None}
    return ChainTrace(kept, layout, cfg.seed, cfg.burn_in, cfg.thinning, sweeps, model), log
