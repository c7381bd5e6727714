"""
Command line front end.

    gibbschecker analyze|sample|verify|optimize|sweep --config run.toml
        [--out DIR] [--seed N] [--threads N] [--trace FILE]

Exit codes: 0 success, 1 a structural verification check failed,
2 configuration error, 3 numerical or runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
from pathlib import Path
import sys
from typing import Any

import numpy as np

from . import core
from .config import RunConfig, load_config
from .core import Stream, stream_rng
from .diagnostics import decomposition_verify, fit_ar1, one_step_exactness
from .errors import ConfigError, DegenerateCondition, GibbsCheckerError, TraceFormatError
from .models import (
    MODEL_TYPES, Dataset, ModelSpec, PartialTwoLevelSpec, ThreeLevelSpec, describe,
    rescaled_precisions, synthesize,
)
from .multigrid import frame_apply, frame_for
from .rates import analyze, optimal_A, optimal_ABC, recommend
from .samplers import ChainTrace, SystematicScan, model_scan, run_model
from .sweep import run_sweep, write_sweep_csv


logger = logging.getLogger(__name__)

EXIT_OK, EXIT_STRUCTURAL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _clean(value: Any) -> Any:
    """Plain JSON values: numpy scalars unwrapped, non-finite floats as None."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_clean(v) for v in value]
    return value


def _emit(report: dict[str, Any], out: Path | None, name: str) -> None:
    text = json.dumps(_clean(report), indent=2, ensure_ascii=False) + '\n'
    sys.stdout.write(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding='utf-8')


def _data(config: RunConfig, spec: ModelSpec) -> tuple[Dataset, bool]:
    """Observations from the config's data file, or synthesized ones."""
    data = config.sampler.load_data(config.base_dir)
    if data is not None:
        return data, False
    rng = stream_rng(config.seed, Stream.DATA)
    return synthesize(spec, rng, config.model.true_params()), True


def cmd_analyze(config: RunConfig, out: Path | None) -> int:
    spec = config.build_model()
    report = analyze(spec, printed=config.analysis.printed)
    if config.analysis.empirical:
        data, _ = _data(config, spec)
        trace = run_model(spec, data, config.sampler.sampler_config())
        frame = frame_for(spec)
        _, report.empirical = fit_ar1(frame_apply(frame, trace)[frame.slow])
    _emit(report.to_json(), out, 'analyze.json')
    return EXIT_OK


def cmd_sample(config: RunConfig, out: Path | None) -> int:
    if out is None:
        raise ConfigError('sample needs --out')
    out.mkdir(parents=True, exist_ok=True)
    spec = config.build_model()
    data, synthesized = _data(config, spec)
    if synthesized:
        data.to_csv(out / 'data.csv')
        data_path = str(out / 'data.csv')
    else:
        data_path = str(config.base_dir / config.sampler.data)
    cfg = config.sampler.sampler_config()
    trace = run_model(spec, data, cfg)
    trace_path = out / 'trace.csv'
    trace.to_csv(trace_path, extra={
        'sampler': cfg.to_json(),
        'data': data_path,
        'data_synthesized': synthesized,
    })
    _emit({'trace': str(trace_path), 'rows': trace.T, 'data': data_path}, out, 'sample.json')
    return EXIT_OK


def cmd_verify(config: RunConfig, out: Path | None, trace_path: str | None = None) -> int:
    spec = config.build_model()
    data, _ = _data(config, spec)
    cfg = config.sampler.sampler_config()
    trace_path = trace_path or config.analysis.trace
    trace = None
    if trace_path is not None:
        trace = ChainTrace.from_csv(trace_path)
        logger.info('Verifying trace %s with %d states', trace_path, trace.T)
    report = decomposition_verify(
        spec, cfg, data, config.analysis.z, config.analysis.max_lag, trace=trace
    )
    if config.analysis.one_step:
        target, order = model_scan(spec, data)
        frame = frame_for(spec)
        report.statistical['one_step'] = one_step_exactness(
            SystematicScan(target, order), seed=config.seed, monitor=frame.family_matrix(frame.slow)
        )
    _emit(report.to_json(), out, 'verify.json')
    return EXIT_OK if report.structural_passed else EXIT_STRUCTURAL


def cmd_optimize(config: RunConfig, out: Path | None) -> int:
    spec = config.build_model()
    printed = config.analysis.printed
    choice, notes = recommend(spec, printed=printed)
    report: dict[str, Any] = {
        'model': MODEL_TYPES[type(spec)],
        'recommendation': None if choice is None else choice.to_json(),
    }
    match spec:
        case PartialTwoLevelSpec():
            report['optimal_A'] = optimal_A(spec.sigma2_a, spec.sigma2_e, spec.J)
        case ThreeLevelSpec():
            taus = rescaled_precisions(spec)
            try:
                shown = list(optimal_ABC(*taus, printed=True))
            except DegenerateCondition:
                if printed:
                    raise
                shown = None
            report['optimal_ABC'] = {'exact': list(optimal_ABC(*taus)), 'printed': shown}
    if choice is None:
        notes.append('no parameterization family is defined for this model')
    report['notes'] = notes
    _emit(report, out, 'optimize.json')
    return EXIT_OK


def cmd_sweep(config: RunConfig, out: Path | None, threads: int | None) -> int:
    rows = run_sweep(config, threads)
    if out is None:
        write_sweep_csv(config, rows, sys.stdout)
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    with open(out / 'sweep.csv', 'w', newline='', encoding='utf-8') as f:
        count = write_sweep_csv(config, rows, f)
    logger.info('Wrote %d sweep rows to %s', count, out / 'sweep.csv')
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', required=True, type=Path, help='TOML run configuration')
    common.add_argument('--out', type=Path, default=None, help='Directory for output files')
    common.add_argument('--seed', type=int, default=None, help='Override sampler.seed')
    common.add_argument('--threads', type=int, default=None, help='Sweep worker processes')
    common.add_argument('--trace', default=None, help='Trace CSV to verify instead of sampling')

    parser = argparse.ArgumentParser(
        prog='gibbschecker',
        description='Convergence rates of Gibbs samplers for Gaussian hierarchical models',
    )
    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('analyze', parents=[common], help='Analytic and oracle rates')
    commands.add_parser('sample', parents=[common], help='Run the sampler and write its trace')
    commands.add_parser('verify', parents=[common], help='Check the multigrid decomposition')
    commands.add_parser('optimize', parents=[common], help='Recommend a parameterization')
    commands.add_parser('sweep', parents=[common], help='Rates over a parameter grid')
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    core.configure_logging()
    try:
        config = load_config(args.config).with_seed(args.seed)
        logger.info('Running %s on %s', args.command, describe(config.build_model())['type'])
        match args.command:
            case 'analyze':
                return cmd_analyze(config, args.out)
            case 'sample':
                return cmd_sample(config, args.out)
            case 'verify':
                return cmd_verify(config, args.out, args.trace)
            case 'optimize':
                return cmd_optimize(config, args.out)
            case 'sweep':
                return cmd_sweep(config, args.out, args.threads)
    except ConfigError as exc:
        print(f'gibbschecker: configuration error: {exc}', file=sys.stderr)
        return EXIT_CONFIG
    except (GibbsCheckerError, TraceFormatError, RuntimeError) as exc:
        print(f'gibbschecker: {type(exc).__name__}: {exc}', file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK
