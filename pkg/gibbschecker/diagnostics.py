"""
Empirical checks of the rate theory on sampled chains: AR(1) and
autocovariance rate estimates, whiteness and cross-correlation tests
between functional families, one-sweep exactness, and the composite
decomposition check behind `gibbschecker verify`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import enum
import logging
from typing import Any, Callable

import numpy as np
from scipy import stats

from .core import Stream, stream_rng
from .errors import LengthMismatch, TooShort
from .gaussian import exact_sample
from .models import MODEL_TYPES, Dataset, GeneralLMSpec, ModelSpec, ThreeLevelSpec, synthesize
from .multigrid import frame_apply, frame_for, lm_condition
from .rates import analytic_rate, oracle_rate, rate_s3_full
from .samplers import ChainTrace, SamplerConfig, SystematicScan, model_scan, run_generic


logger = logging.getLogger(__name__)

N_BATCHES = 20
EXACT_CROSS_TOL = 1e-10
RATE_AGREEMENT_TOL = 1e-10
EMPIRICAL_TOL = 0.03
LAG1_Z = 3.0
KS_ALPHA = 0.01


class RateMethod(enum.Enum):
    AR1_FIT = 'ar1_fit'
    AUTOCOV_SLOPE = 'autocov_slope'


@dataclass(frozen=True)
class RateEstimate:
    estimate: float
    se: float
    lag_window: int
    method: RateMethod

    @property
    def ci_low(self) -> float:
        return self.estimate - 1.96 * self.se

    @property
    def ci_high(self) -> float:
        return self.estimate + 1.96 * self.se

    @property
    def above_one(self) -> bool:
        """Monte Carlo noise can push an estimate of a rate near 1 past it."""
        return self.estimate > 1

    def to_json(self) -> dict[str, Any]:
        return {
            'estimate': self.estimate,
            'se': self.se,
            'ci_low': self.ci_low,
            'ci_high': self.ci_high,
            'method': self.method.value,
            'lag_window': self.lag_window,
        }


def _as_series(trace) -> np.ndarray:
    series = np.asarray(getattr(trace, 'states', trace), dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    return series


def _batch_se(estimator: Callable[[np.ndarray], float], series: np.ndarray) -> float:
    batches = np.array_split(series, N_BATCHES)
    values = [estimator(batch) for batch in batches]
    return float(np.std(values, ddof=1) / np.sqrt(N_BATCHES))


def _ar1_operator(series: np.ndarray) -> np.ndarray:
    centered = series - series.mean(axis=0)
    solution, *_ = np.linalg.lstsq(centered[:-1], centered[1:], rcond=None)
    return solution.T


def _spectral_radius(B: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(B))))


def fit_ar1(trace) -> tuple[np.ndarray, RateEstimate]:
    """
    Least-squares fit of x(s+1) = B x(s) + noise on the centered series.
    The rate is the spectral radius of B̂; its standard error comes from
    refitting on 20 contiguous batches.
    """
    series = _as_series(trace)
    T, d = series.shape
    if T < 10 * d:
        raise TooShort(f'AR(1) fit of a {d}-dim series needs at least {10 * d} states, got {T}')
    B_hat = _ar1_operator(series)
    if T // N_BATCHES >= 10 * d:
        se = _batch_se(lambda batch: _spectral_radius(_ar1_operator(batch)), series)
    else:
        se = float('nan')
    return B_hat, RateEstimate(_spectral_radius(B_hat), se, 1, RateMethod.AR1_FIT)


def autocorrelation(chains, max_lag: int) -> np.ndarray:
    """
    Autocorrelation of each column at lags 0..max_lag, (max_lag+1)×p,
    normalized by (N-1) times the sample variance. Constant columns have
    autocorrelation 1.
    """
    chains = _as_series(chains)
    n_samples = chains.shape[0]
    max_lag = min(max_lag, n_samples - 1)
    std = np.std(chains, axis=0, ddof=1)
    safe = np.where(std > 0, std, 1.0)
    standard = (chains - chains.mean(axis=0)) / safe
    autocorr = np.empty((max_lag + 1, chains.shape[1]))
    for lag in range(max_lag + 1):
        autocorr[lag] = np.sum(standard[:n_samples - lag] * standard[lag:], axis=0) / (n_samples - 1)
    autocorr[:, std == 0] = 1.0
    return autocorr


def _slope_rate(series: np.ndarray, max_lag: int) -> tuple[float, int]:
    threshold = 3 / np.sqrt(series.shape[0])
    autocorr = autocorrelation(series, max_lag)
    best, window = 0.0, 1
    for column in autocorr.T:
        significant = np.flatnonzero(column[1:] <= threshold)
        cutoff = significant[0] if significant.size else max_lag
        if cutoff == 0:
            rate = max(float(column[1]), 0.0)
        else:
            lags = np.arange(1, cutoff + 1)
            slope = np.sum(lags * np.log(column[1:cutoff + 1])) / np.sum(lags**2)
            rate = float(np.exp(slope))
        if rate > best:
            best, window = rate, max(int(cutoff), 1)
    return best, window


def fit_autocov_slope(trace, max_lag: int = 50) -> RateEstimate:
    """
    exp of the least-squares slope of log autocorrelation against lag, over
    the lags before the autocorrelation becomes insignificant; the largest
    over coordinates.
    """
    series = _as_series(trace)
    if series.shape[0] < 10 * max(series.shape[1], max_lag):
        raise TooShort(f'Autocovariance fit needs at least {10 * max_lag} states')
    rate, window = _slope_rate(series, max_lag)
    se = _batch_se(lambda batch: _slope_rate(batch, max_lag)[0], series)
    return RateEstimate(rate, se, window, RateMethod.AUTOCOV_SLOPE)


def bonferroni_z(z: float, comparisons: int) -> float:
    """The threshold holding the one-sided tail mass of z over `comparisons` tests."""
    return float(stats.norm.isf(stats.norm.sf(z) / max(comparisons, 1)))


# --------------------------- WHITENESS TESTS --------------------------- #

@dataclass(frozen=True)
class IidReport:
    max_abs_lag1: float
    threshold: float
    n: int

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_lag1 <= self.threshold)

    def to_json(self) -> dict[str, Any]:
        return {
            'max_abs_lag1': self.max_abs_lag1,
            'threshold': self.threshold,
            'n': self.n,
            'passed': self.passed,
        }


def residual_iid_check(functionals, z: float = 4.0) -> IidReport:
    """Lag-1 whiteness of every column, Bonferroni-corrected over columns."""
    series = _as_series(functionals)
    N, k = series.shape
    lag1 = autocorrelation(series, 1)[1]
    threshold = bonferroni_z(z, k) / np.sqrt(N)
    return IidReport(float(np.max(np.abs(lag1))), threshold, N)


@dataclass(frozen=True)
class IndependenceReport:
    max_abs_cross: float
    threshold: float
    z: float
    comparisons: int
    lag_at_max: int

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_cross <= self.threshold)

    def to_json(self) -> dict[str, Any]:
        return {
            'max_abs_cross': self.max_abs_cross,
            'threshold': self.threshold,
            'z': self.z,
            'comparisons': self.comparisons,
            'lag_at_max': self.lag_at_max,
            'passed': self.passed,
        }


def _standardize(series: np.ndarray) -> np.ndarray:
    std = np.std(series, axis=0, ddof=1)
    return (series - series.mean(axis=0)) / np.where(std > 0, std, np.inf)


def independence_test(traces_a, traces_b, max_lag: int = 5, z: float = 4.0) -> IndependenceReport:
    """
    Cross-correlations between every column of A and every column of B at
    lags -max_lag..max_lag, against z/√N with a Bonferroni correction over
    pairs and lags. A positive lag pairs A at time t with B at t + lag.
    """
    a, b = _standardize(_as_series(traces_a)), _standardize(_as_series(traces_b))
    if a.shape[0] != b.shape[0]:
        raise LengthMismatch(f'Traces have {a.shape[0]} and {b.shape[0]} states')
    N = a.shape[0]
    worst, worst_lag = 0.0, 0
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            cross = a[:N - lag].T @ b[lag:]
        else:
            cross = a[-lag:].T @ b[:N + lag]
        value = float(np.max(np.abs(cross))) / (N - 1) if cross.size else 0.0
        if value > worst:
            worst, worst_lag = value, lag
    comparisons = a.shape[1] * b.shape[1] * (2 * max_lag + 1)
    z_eff = bonferroni_z(z, comparisons)
    return IndependenceReport(worst, z_eff / np.sqrt(N), z, comparisons, worst_lag)


# ----------------------------- EXACTNESS ----------------------------- #

@dataclass(frozen=True, eq=False)
class ExactnessReport:
    lag1: np.ndarray
    lag1_threshold: float
    ks_pvalues: np.ndarray
    ks_threshold: float

    @property
    def passed_lag1(self) -> bool:
        return bool(np.all(np.abs(self.lag1) <= self.lag1_threshold))

    @property
    def passed_ks(self) -> bool:
        return bool(np.all(self.ks_pvalues >= self.ks_threshold))

    @property
    def passed(self) -> bool:
        return self.passed_lag1 and self.passed_ks

    def to_json(self) -> dict[str, Any]:
        return {
            'lag1': self.lag1.tolist(),
            'lag1_threshold': self.lag1_threshold,
            'ks_pvalues': self.ks_pvalues.tolist(),
            'ks_threshold': self.ks_threshold,
            'passed': self.passed,
        }


def one_step_exactness(
    scan: SystematicScan,
    N: int = 10_000,
    seed: int = 0,
    monitor: np.ndarray | None = None,
    start: np.ndarray | None = None,
) -> ExactnessReport:
    """
    Whether one sweep of `scan` yields an independent draw of its target, on
    the linear functionals in the rows of `monitor` (every coordinate by
    default). Checks lag-1 autocorrelation of a stationary chain of N sweeps
    against 3/√N, and runs a KS test of N independent single sweeps from
    `start` against the standardized target marginals.
    The target is the one `scan` was built for, so it is not passed separately.
    """
    target = scan.target
    F = np.eye(target.dim) if monitor is None else np.atleast_2d(monitor)
    rng = stream_rng(seed, Stream.REPLICATES)

    state = exact_sample(target, rng)
    chain = np.empty((N, target.dim))
    for row, noise in enumerate(rng.standard_normal((N, target.dim))):
        state = scan.sweep(state, noise)
        chain[row] = state
    lag1 = autocorrelation(chain @ F.T, 1)[1]

    if start is None:
        start = target.mean + 3 * np.sqrt(np.diag(target.covariance))
    outputs = scan.sweep(np.tile(start, (N, 1)), rng.standard_normal((N, target.dim))) @ F.T
    centre = F @ target.mean
    scale = np.sqrt(np.einsum('ij,jk,ik->i', F, target.covariance, F))
    pvalues = np.array([
        stats.kstest((outputs[:, k] - centre[k]) / scale[k], 'norm').pvalue
        for k in range(F.shape[0])
    ])
    return ExactnessReport(lag1, LAG1_Z / np.sqrt(N), pvalues, KS_ALPHA / F.shape[0])


# --------------------------- VERIFICATION --------------------------- #

@dataclass(frozen=True)
class CheckResult:
    passed: bool
    value: float
    threshold: float
    informational: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            'passed': self.passed,
            'value': self.value,
            'threshold': self.threshold,
            'informational': self.informational,
        }


@dataclass(eq=False)
class VerificationReport:
    model: str
    structural: dict[str, CheckResult] = field(default_factory=dict)
    statistical: dict[str, Any] = field(default_factory=dict)
    rates: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def structural_passed(self) -> bool:
        return all(c.passed for c in self.structural.values() if not c.informational)

    @property
    def statistical_passed(self) -> bool:
        return all(report.passed for report in self.statistical.values())

    def to_json(self) -> dict[str, Any]:
        return {
            'model': self.model,
            'structural_passed': self.structural_passed,
            'statistical_passed': self.statistical_passed,
            'structural': {k: v.to_json() for k, v in self.structural.items()},
            'statistical': {k: v.to_json() for k, v in self.statistical.items()},
            'rates': self.rates,
            'notes': list(self.notes),
        }


def decomposition_verify(
    spec: ModelSpec,
    cfg: SamplerConfig,
    data: Dataset | None = None,
    z: float = 4.0,
    max_lag: int = 5,
    trace: ChainTrace | None = None,
) -> VerificationReport:
    """
    Run the model's sampler, map the trace through the model's functional
    frame, and check that the families decouple: structurally on the
    posterior precision, statistically on the trace. Also compares the
    analytic, oracle and empirical rates. A given `trace` is checked instead
    of a freshly sampled one.
    """
    report = VerificationReport(MODEL_TYPES[type(spec)])
    if data is None:
        data = synthesize(spec, stream_rng(cfg.seed, Stream.DATA))
    frame = frame_for(spec)
    target, order = model_scan(spec, data)

    decoupled = True
    if isinstance(spec, GeneralLMSpec):
        holds, violation = lm_condition(spec)
        report.structural['design_condition'] = CheckResult(holds, violation, 1e-8, informational=True)
        if not holds:
            decoupled = False
            report.notes.append(
                f'design condition violated by {violation:.3e}; family tests skipped'
            )

    if decoupled:
        worst = 0.0
        for exact in frame.exact:
            for other in frame.families:
                if other != exact:
                    worst = max(worst, frame.max_cross_block(target, exact, other))
        report.structural['factorization'] = CheckResult(
            worst <= EXACT_CROSS_TOL, worst, EXACT_CROSS_TOL
        )

    analytic, oracle = analytic_rate(spec), oracle_rate(spec)
    report.rates = {'analytic': analytic, 'oracle': oracle, 'empirical': None}
    if isinstance(spec, ThreeLevelSpec):
        full = rate_s3_full(spec)
        report.structural['level_ordering'] = CheckResult(
            abs(full - analytic) <= RATE_AGREEMENT_TOL, abs(full - analytic),
            RATE_AGREEMENT_TOL, informational=True,
        )
    else:
        report.structural['analytic_vs_oracle'] = CheckResult(
            abs(analytic - oracle) <= RATE_AGREEMENT_TOL, abs(analytic - oracle), RATE_AGREEMENT_TOL
        )

    if trace is None:
        trace = run_generic(target, order, cfg, spec)
    functionals = frame_apply(frame, trace)
    if decoupled:
        for exact in frame.exact:
            report.statistical[f'iid_{exact}'] = residual_iid_check(functionals[exact], z)
            for other in frame.families:
                if other != exact:
                    report.statistical[f'independence_{exact}_{other}'] = independence_test(
                        functionals[exact], functionals[other], max_lag, z
                    )
    try:
        _, estimate = fit_ar1(functionals[frame.slow])
    except TooShort as exc:
        report.notes.append(f'empirical rate skipped: {exc}')
    else:
        report.rates['empirical'] = estimate.to_json()
        report.statistical['empirical_rate'] = CheckResult(
            abs(estimate.estimate - analytic) <= EMPIRICAL_TOL,
            abs(estimate.estimate - analytic), EMPIRICAL_TOL,
        )
    logger.info(
        'Verified %s: structural %s, statistical %s',
        report.model,
        'pass' if report.structural_passed else 'FAIL',
        'pass' if report.statistical_passed else 'FAIL',
    )
    return report
