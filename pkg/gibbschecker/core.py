"""Process-wide switches, logging setup and random stream derivation."""

import enum
import logging
import os
import sys

import numpy as np


# Set DEBUG=1 in the environment for verbose logging from every module
_DEBUG = os.environ.get('DEBUG', False)

# Default number of sweep worker processes
_NUM_PROC = os.environ.get('NUM_PROC', None)

_LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s: %(message)s'


def configure_logging(level: int | None = None) -> None:
    """Attach a stderr handler to the package logger. Called once by the CLI."""
    if level is None:
        level = logging.DEBUG if _DEBUG else logging.WARNING
    logger = logging.getLogger('gibbschecker')
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(_LOG_FORMAT))
        logger.addHandler(handler)
    logger.setLevel(level)


def default_num_processes() -> int:
    if _NUM_PROC is not None:
        return max(1, int(_NUM_PROC))
    return os.cpu_count() or 1


class Stream(enum.IntEnum):
    """First spawn key of every random stream derived from the top-level seed."""
    DATA = 0
    CHAIN = 1
    REPLICATES = 2
    SWEEP = 3
    DESIGN = 4


def stream_rng(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    """
    The generator for one consumer of randomness. Streams with different
    (stream, *keys) are statistically independent for the same seed.
    """
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, keys)))
    return np.random.Generator(np.random.PCG64(sequence))
