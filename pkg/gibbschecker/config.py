"""
Run configurations: a TOML file with [model], [sampler], [analysis] and an
optional [sweep] section, checked against a strict schema. Unknown keys,
wrong types and out-of-range values raise ConfigError naming the key.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import itertools as it
from pathlib import Path
import tomllib
from typing import Any, Iterator

import numpy as np

from .core import Stream, stream_rng
from .errors import ConfigError, NumericalError
from .models import (
    Dataset, GeneralLMSpec, MixedEffectsSpec, ModelSpec, Parameterization, PartialTwoLevelSpec,
    ThreeLevelSpec, TwoLevelVectorSpec, two_level_design,
)
from .rates import optimal_A, optimal_ABC
from .samplers import InitPolicy, SamplerConfig


MAX_GRID_POINTS = 10_000

_INT, _FLOAT, _BOOL, _STR, _MATRIX, _ANY = 'int', 'float', 'bool', 'str', 'matrix', 'any'

# Keys accepted in [model] for each model type, with their kinds
MODEL_KEYS: dict[str, dict[str, str]] = {
    's2m': {
        'I': _INT, 'J': _INT, 'Sigma_a': _MATRIX, 'Sigma_e': _MATRIX,
        'parameterization': _STR, 'indicator': _ANY, 'mu': _ANY,
    },
    'sr': {
        'I': _INT, 'J': _INT, 'p': _INT, 'design': _ANY,
        'sigma2_a': _FLOAT, 'sigma2_e': _FLOAT, 'Sigma_0': _MATRIX,
    },
    'lm': {
        'I': _INT, 'J': _INT, 'n': _INT, 'p1': _INT, 'p2': _INT, 'design': _ANY,
        'tau_1': _FLOAT, 'tau_2': _FLOAT, 'tau_e': _FLOAT, 'centered': _BOOL,
    },
    's2': {
        'I': _INT, 'J': _INT, 'sigma2_a': _FLOAT, 'sigma2_e': _FLOAT, 'A': _ANY, 'mu': _FLOAT,
    },
    's3': {
        'I': _INT, 'J': _INT, 'K': _INT,
        'sigma2_a': _FLOAT, 'sigma2_b': _FLOAT, 'sigma2_e': _FLOAT,
        'tau_a': _FLOAT, 'tau_b': _FLOAT, 'tau_e': _FLOAT,
        'A': _ANY, 'B': _FLOAT, 'C': _FLOAT, 'mu': _FLOAT,
    },
}


def _check(value: Any, kind: str, path: str) -> Any:
    """Validate and convert one scalar or matrix config value."""
    match kind:
        case 'int':
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f'{path} must be an integer, got {value!r}')
            return value
        case 'float':
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f'{path} must be a number, got {value!r}')
            return float(value)
        case 'bool':
            if not isinstance(value, bool):
                raise ConfigError(f'{path} must be true or false, got {value!r}')
            return value
        case 'str':
            if not isinstance(value, str):
                raise ConfigError(f'{path} must be a string, got {value!r}')
            return value
        case 'matrix':
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return np.array([[float(value)]])
            try:
                matrix = np.array(value, dtype=float)
            except (TypeError, ValueError):
                raise ConfigError(f'{path} must be a number or a list of rows') from None
            if matrix.ndim == 1:
                matrix = np.diag(matrix)
            if matrix.ndim != 2:
                raise ConfigError(f'{path} must be a number or a list of rows')
            return matrix
        case _:
            return value


def _strict(table: Any, allowed: set[str], path: str) -> dict[str, Any]:
    if not isinstance(table, dict):
        raise ConfigError(f'[{path}] must be a table')
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f'Unknown key {path}.{unknown[0]}')
    return table


def _require(params: dict[str, Any], key: str, model_type: str) -> Any:
    if key not in params:
        raise ConfigError(f'model.{key} is required for model type {model_type!r}')
    return params[key]


@dataclass(frozen=True, eq=False)
class ModelSection:
    type: str
    params: dict[str, Any]

    @classmethod
    def from_dict(cls, table: Any) -> ModelSection:
        if not isinstance(table, dict) or 'type' not in table:
            raise ConfigError('[model] needs a type')
        model_type = table['type']
        if model_type not in MODEL_KEYS:
            raise ConfigError(
                f'model.type must be one of {", ".join(MODEL_KEYS)}, got {model_type!r}'
            )
        keys = MODEL_KEYS[model_type]
        _strict(table, set(keys) | {'type'}, 'model')
        params = {
            key: _check(value, keys[key], f'model.{key}')
            for key, value in table.items() if key != 'type'
        }
        return cls(model_type, params)

    def scalar_keys(self) -> dict[str, str]:
        return {k: v for k, v in MODEL_KEYS[self.type].items() if v in (_INT, _FLOAT)} | (
            {'A': _FLOAT} if self.type in ('s2', 's3') else {}
        )

    def true_params(self) -> dict[str, Any]:
        return {'mu': self.params['mu']} if 'mu' in self.params else {}

    def build(
        self,
        seed: int = 0,
        overrides: dict[str, Any] | None = None,
        printed: bool = False,
    ) -> ModelSpec:
        """
        The model spec, with `overrides` replacing config values. Random
        designs come from the design stream of `seed`.
        """
        params = self.params | (overrides or {})
        try:
            return self._build(params, seed, printed)
        except (ConfigError, NumericalError):
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f'Invalid [model] section: {exc}') from exc

    def _build(self, params: dict[str, Any], seed: int, printed: bool) -> ModelSpec:
        def get(key: str) -> Any:
            return _require(params, key, self.type)

        match self.type:
            case 's2m':
                parameterization = Parameterization(params.get('parameterization', 'non_centered'))
                indicator = params.get('indicator')
                return TwoLevelVectorSpec(
                    get('I'), get('J'), get('Sigma_a'), get('Sigma_e'), parameterization,
                    None if indicator is None else tuple(indicator),
                )
            case 'sr':
                X = self._sr_design(params, seed)
                Sigma_0 = params.get('Sigma_0')
                return MixedEffectsSpec(X, get('sigma2_a'), get('sigma2_e'), Sigma_0)
            case 'lm':
                X1, X2 = self._lm_design(params, seed)
                return GeneralLMSpec(
                    X1, X2, get('tau_1'), get('tau_2'), get('tau_e'),
                    centered=params.get('centered', False),
                )
            case 's2':
                A = params.get('A', 0.0)
                if A == 'optimal':
                    A = optimal_A(get('sigma2_a'), get('sigma2_e'), get('J'))
                return PartialTwoLevelSpec(
                    get('I'), get('J'), get('sigma2_a'), get('sigma2_e'), _check(A, _FLOAT, 'model.A')
                )
            case 's3':
                I, J, K = get('I'), get('J'), get('K')
                variances = self._s3_variances(params, I, J, K)
                spec = ThreeLevelSpec(I, J, K, *variances)
                A = params.get('A', 0.0)
                if A == 'optimal':
                    if 'B' in params or 'C' in params:
                        raise ConfigError('model.B and model.C must be absent when A = "optimal"')
                    taus = (I / variances[0], I * J / variances[1], I * J * K / variances[2])
                    A, B, C = optimal_ABC(*taus, printed=printed)
                else:
                    A = _check(A, _FLOAT, 'model.A')
                    B, C = params.get('B', 0.0), params.get('C', 0.0)
                return replace(spec, A=A, B=B, C=C)
        raise ConfigError(f'Unknown model type {self.type!r}')

    @staticmethod
    def _s3_variances(params: dict[str, Any], I: int, J: int, K: int) -> tuple[float, float, float]:
        given_sigma = [k for k in ('sigma2_a', 'sigma2_b', 'sigma2_e') if k in params]
        given_tau = [k for k in ('tau_a', 'tau_b', 'tau_e') if k in params]
        if len(given_sigma) == 3 and not given_tau:
            return params['sigma2_a'], params['sigma2_b'], params['sigma2_e']
        if len(given_tau) == 3 and not given_sigma:
            for key in given_tau:
                if not params[key] > 0:
                    raise ConfigError(f'model.{key} must be positive')
            return I / params['tau_a'], I * J / params['tau_b'], I * J * K / params['tau_e']
        raise ConfigError('Give either sigma2_a, sigma2_b, sigma2_e or tau_a, tau_b, tau_e')

    def _sr_design(self, params: dict[str, Any], seed: int) -> np.ndarray:
        I, J = _require(params, 'I', 'sr'), _require(params, 'J', 'sr')
        design = params.get('design', 'ones')
        match design:
            case 'ones':
                return np.ones((I, J, 1))
            case 'random':
                p = _require(params, 'p', 'sr')
                return stream_rng(seed, Stream.DESIGN).standard_normal((I, J, p))
            case list():
                X = np.array(design, dtype=float)
                if X.ndim == 2:
                    X = X[:, :, None]
                if X.shape[:2] != (I, J):
                    raise ConfigError(f'model.design has shape {X.shape}, expected ({I}, {J}, p)')
                return X
        raise ConfigError('model.design must be "ones", "random" or an I×J×p array')

    def _lm_design(self, params: dict[str, Any], seed: int) -> tuple[np.ndarray, np.ndarray]:
        design = params.get('design', 'two_level')
        match design:
            case 'two_level':
                return two_level_design(_require(params, 'I', 'lm'), _require(params, 'J', 'lm'))
            case 'random':
                n, p1, p2 = (_require(params, key, 'lm') for key in ('n', 'p1', 'p2'))
                rng = stream_rng(seed, Stream.DESIGN)
                return rng.standard_normal((p1, n)), rng.standard_normal((p2, n))
            case {'X1': X1, 'X2': X2, **rest} if not rest:
                return np.array(X1, dtype=float, ndmin=2), np.array(X2, dtype=float, ndmin=2)
        raise ConfigError('model.design must be "two_level", "random" or a table {X1, X2}')


@dataclass(frozen=True)
class SamplerSection:
    iterations: int = 10_000
    burn_in: int = 1000
    thinning: int = 1
    seed: int = 0
    init: str | tuple[float, ...] = 'zero'
    data: str | None = None

    @classmethod
    def from_dict(cls, table: Any) -> SamplerSection:
        _strict(table, {'iterations', 'burn_in', 'thinning', 'seed', 'init', 'data'}, 'sampler')
        kwargs = {
            key: _check(table[key], _INT, f'sampler.{key}')
            for key in ('iterations', 'burn_in', 'thinning', 'seed') if key in table
        }
        if 'init' in table:
            init = table['init']
            if isinstance(init, list):
                kwargs['init'] = tuple(_check(x, _FLOAT, 'sampler.init') for x in init)
            elif init in ('zero', 'prior'):
                kwargs['init'] = init
            else:
                raise ConfigError('sampler.init must be "zero", "prior" or a list of numbers')
        if 'data' in table:
            kwargs['data'] = _check(table['data'], _STR, 'sampler.data')
        section = cls(**kwargs)
        section.sampler_config()
        return section

    def sampler_config(self, seed: int | None = None, **overrides: Any) -> SamplerConfig:
        if isinstance(self.init, tuple):
            init, initial_state = InitPolicy.GIVEN, np.array(self.init)
        else:
            init, initial_state = InitPolicy(self.init), None
        try:
            return SamplerConfig(
                iterations=self.iterations,
                burn_in=self.burn_in,
                seed=self.seed if seed is None else seed,
                thinning=self.thinning,
                init=init,
                initial_state=initial_state,
                **overrides,
            )
        except ValueError as exc:
            raise ConfigError(f'Invalid [sampler] section: {exc}') from exc

    def load_data(self, base: Path) -> Dataset | None:
        if self.data is None:
            return None
        return Dataset.from_csv(base / self.data)


@dataclass(frozen=True)
class AnalysisSection:
    empirical: bool = False
    one_step: bool = False
    z: float = 4.0
    max_lag: int = 5
    formula: str = 'exact'
    trace: str | None = None

    @classmethod
    def from_dict(cls, table: Any) -> AnalysisSection:
        kinds = {
            'empirical': _BOOL, 'one_step': _BOOL, 'z': _FLOAT,
            'max_lag': _INT, 'formula': _STR, 'trace': _STR,
        }
        _strict(table, set(kinds), 'analysis')
        section = cls(**{k: _check(v, kinds[k], f'analysis.{k}') for k, v in table.items()})
        if section.formula not in ('exact', 'printed'):
            raise ConfigError(f'analysis.formula must be "exact" or "printed", got {section.formula!r}')
        if not section.z > 0 or section.max_lag < 0:
            raise ConfigError('analysis.z must be positive and analysis.max_lag non-negative')
        return section

    @property
    def printed(self) -> bool:
        return self.formula == 'printed'


@dataclass(frozen=True)
class SweepSection:
    """Named axes of a grid; points are the cartesian product in key order."""
    axes: tuple[tuple[str, tuple[Any, ...]], ...] = ()

    @classmethod
    def from_dict(cls, table: Any, model: ModelSection) -> SweepSection:
        if not isinstance(table, dict):
            raise ConfigError('[sweep] must be a table')
        scalar_keys = model.scalar_keys()
        axes = []
        for key, spec in table.items():
            if key not in scalar_keys:
                raise ConfigError(f'Unknown key sweep.{key} (not a scalar of model type {model.type!r})')
            kind = scalar_keys[key]
            axes.append((key, tuple(_check(v, kind, f'sweep.{key}') for v in _axis_values(spec, key, kind))))
        section = cls(tuple(axes))
        if section.size > MAX_GRID_POINTS:
            raise ConfigError(f'Sweep grid has {section.size} points, the limit is {MAX_GRID_POINTS}')
        return section

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(key for key, _ in self.axes)

    @property
    def size(self) -> int:
        if not self.axes:
            return 0
        return int(np.prod([len(values) for _, values in self.axes]))

    def points(self) -> Iterator[tuple[int, dict[str, Any]]]:
        if not self.axes:
            return
        for index, values in enumerate(it.product(*(values for _, values in self.axes))):
            yield index, dict(zip(self.keys, values))


def _axis_values(spec: Any, key: str, kind: str = _FLOAT) -> list[Any]:
    if isinstance(spec, list):
        return spec
    if not isinstance(spec, dict):
        raise ConfigError(f'sweep.{key} must be a list or a table {{start, stop, num}}')
    _strict(spec, {'start', 'stop', 'num', 'log'}, f'sweep.{key}')
    try:
        start, stop = float(spec['start']), float(spec['stop'])
        num = _check(spec['num'], _INT, f'sweep.{key}.num')
    except KeyError as exc:
        raise ConfigError(f'sweep.{key} is missing {exc.args[0]}') from None
    if num < 0:
        raise ConfigError(f'sweep.{key}.num must be non-negative')
    if spec.get('log', False):
        if not (start > 0 and stop > 0):
            raise ConfigError(f'sweep.{key} needs positive bounds on a log scale')
        values = np.geomspace(start, stop, num)
    else:
        values = np.linspace(start, stop, num)
    if kind == _INT:
        # Ranges over counts are rounded to the nearest integer
        values = np.rint(values).astype(int)
        if len(np.unique(values)) < len(values):
            raise ConfigError(
                f'sweep.{key} rounds to repeated integers {values.tolist()}; use a list instead'
            )
    return values.tolist()


@dataclass(frozen=True, eq=False)
class RunConfig:
    model: ModelSection
    sampler: SamplerSection = field(default_factory=SamplerSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    source: Path | None = None

    @classmethod
    def from_dict(cls, table: dict[str, Any], source: Path | None = None) -> RunConfig:
        _strict(table, {'model', 'sampler', 'analysis', 'sweep'}, 'config')
        if 'model' not in table:
            raise ConfigError('Config needs a [model] section')
        model = ModelSection.from_dict(table['model'])
        return cls(
            model=model,
            sampler=SamplerSection.from_dict(table.get('sampler', {})),
            analysis=AnalysisSection.from_dict(table.get('analysis', {})),
            sweep=SweepSection.from_dict(table.get('sweep', {}), model),
            source=source,
        )

    @property
    def base_dir(self) -> Path:
        return Path('.') if self.source is None else self.source.parent

    @property
    def seed(self) -> int:
        return self.sampler.seed

    def with_seed(self, seed: int | None) -> RunConfig:
        if seed is None:
            return self
        return replace(self, sampler=replace(self.sampler, seed=seed))

    def build_model(self, overrides: dict[str, Any] | None = None) -> ModelSpec:
        return self.model.build(self.seed, overrides, printed=self.analysis.printed)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            table = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f'Cannot read config {path}: {exc}') from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f'Config {path} is not valid TOML: {exc}') from exc
    return RunConfig.from_dict(table, source=path)
