"""Parameter sweeps: evaluate rates at every point of a config's grid."""

from __future__ import annotations

import csv
import io
import logging
import traceback
from typing import Any, Iterator

from . import core
from .config import RunConfig
from .core import Stream, stream_rng
from .diagnostics import fit_ar1
from .errors import TooShort
from .models import synthesize
from .multigrid import frame_apply, frame_for
from .rates import analytic_rate, oracle_rate
from .samplers import run_model

try:
    from multiprocessing import Queue, Process
    MULTIPROCESSING_AVAILABLE = True
except ModuleNotFoundError:
    MULTIPROCESSING_AVAILABLE = False


logger = logging.getLogger(__name__)

SweepRow = dict[str, Any]


def evaluate_point(config: RunConfig, index: int, point: dict[str, Any]) -> SweepRow:
    """
    Analytic and oracle rates at one grid point, plus an empirical estimate
    when the config asks for one. The point's data and chain use their own
    streams, keyed by the grid index.
    """
    spec = config.build_model(point)
    row = dict(point) | {
        'index': index,
        'analytic': analytic_rate(spec),
        'oracle': oracle_rate(spec),
    }
    if config.analysis.empirical:
        data = synthesize(spec, stream_rng(config.seed, Stream.SWEEP, index, 0), config.model.true_params())
        cfg = config.sampler.sampler_config(stream=(Stream.SWEEP, index, 1))
        frame = frame_for(spec)
        try:
            _, estimate = fit_ar1(frame_apply(frame, run_model(spec, data, cfg))[frame.slow])
            row['empirical'] = estimate.estimate
        except TooShort:
            row['empirical'] = float('nan')
    return row


def _sweep_worker(config: RunConfig, points_q: Queue, results_q: Queue):
    def points_gen():
        while (item := points_q.get()) is not None:
            yield item
    try:
        for index, point in points_gen():
            results_q.put((index, evaluate_point(config, index, point)))
    except Exception:
        results_q.put(traceback.format_exc())
        return
    results_q.put(None)  # Finished Sentinel


def _collect(results_q: Queue, num_procs: int, total: int) -> dict[int, SweepRow]:
    results, finish_count, err_str = {}, 0, None
    while finish_count < num_procs:
        recvd = results_q.get()
        if isinstance(recvd, tuple):
            index, row = recvd
            results[index] = row
            logger.info('Sweep point %d done (%d/%d)', index, len(results), total)
        else:  # Finished. Maybe sentinel, maybe error
            if recvd is not None:
                err_str = recvd
            finish_count += 1
    if err_str is not None:
        exc = RuntimeError('Exception during sweep, see below')
        exc.add_note(f'\n{err_str}')
        raise exc
    return results


def run_sweep(config: RunConfig, num_processes: int | None = None) -> Iterator[SweepRow]:
    """Rows of the sweep in grid order, however the workers finish."""
    if num_processes is None:
        num_processes = core.default_num_processes()
    points = list(config.sweep.points())
    num_processes = max(1, min(num_processes, len(points)))

    if num_processes == 1 or not MULTIPROCESSING_AVAILABLE:
        for index, point in points:
            row = evaluate_point(config, index, point)
            logger.info('Sweep point %d done (%d/%d)', index, index + 1, len(points))
            yield row
        return

    points_q, results_q = Queue(), Queue()
    for item in points:
        points_q.put(item)
    for _ in range(num_processes):
        points_q.put(None)  # Finished Sentinel

    workers = [
        Process(target=_sweep_worker, daemon=True, args=(config, points_q, results_q))
        for _ in range(num_processes)
    ]
    for worker in workers:
        worker.start()
    results = _collect(results_q, num_processes, len(points))
    for worker in workers:
        worker.join()
    for index, _ in points:
        yield results[index]


def sweep_columns(config: RunConfig) -> list[str]:
    columns = list(config.sweep.keys) + ['index', 'analytic', 'oracle']
    if config.analysis.empirical:
        columns.append('empirical')
    return columns


def _format(value: Any) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_sweep_csv(config: RunConfig, rows, out: io.TextIOBase) -> int:
    """Long-format CSV of the sweep, one line per grid point; returns the row count."""
    columns = sweep_columns(config)
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(columns)
    count = 0
    for row in rows:
        writer.writerow([_format(row[column]) for column in columns])
        count += 1
    return count
