from dataclasses import dataclass
from typing import Callable

import numpy as np

from gibbschecker import *


@dataclass
class BenchmarkDef:
    # The model whose sampler is analysed
    spec: ModelSpec
    # Expected analytic rate, when known in closed form
    rate: float | None = None
    # Expected kind of the recommended parameterization, if any
    recommendation: ParamKind | None = None
    # An extra validation function, runs on the analysis report
    condition: Callable[[RateReport], bool] | None = None
    # Whether the oracle describes the same chain as the analytic rate
    oracle_matches: bool = True


def benchmark_scalar_noncentered():
    # σa² = σe² = 1 and J = 4: the data dominate, so centering wins
    return BenchmarkDef(
        spec=TwoLevelVectorSpec(I=50, J=4, Sigma_a=1.0, Sigma_e=1.0),
        rate=0.8,
        recommendation=ParamKind.CENTERED,
    )


def benchmark_scalar_centered():
    return BenchmarkDef(
        spec=TwoLevelVectorSpec(
            I=50, J=4, Sigma_a=1.0, Sigma_e=1.0, parameterization=Parameterization.CENTERED,
        ),
        rate=0.2,
        recommendation=ParamKind.CENTERED,
    )


def benchmark_diagonal_tie():
    # Both global forms run at 2/3, centering only the first component gives 1/3
    return BenchmarkDef(
        spec=TwoLevelVectorSpec(I=10, J=2, Sigma_a=np.diag([1.0, 0.25]), Sigma_e=np.eye(2)),
        rate=2 / 3,
        condition=lambda report: (
            report.recommendation.indicator == (True, False)
            and abs(report.recommendation.component_wise_rate - 1 / 3) <= 1e-12
            and abs(report.recommendation.rates['centered'] - 2 / 3) <= 1e-12
        ),
    )


def benchmark_diagonal_component_wise():
    return BenchmarkDef(
        spec=TwoLevelVectorSpec(
            I=10, J=2, Sigma_a=np.diag([1.0, 0.25]), Sigma_e=np.eye(2),
            parameterization=Parameterization.COMPONENT_WISE, indicator=(True, False),
        ),
        rate=1 / 3,
    )


def benchmark_regression_hand_instance():
    # Two groups of one observation with covariates +1 and -1, unit variances
    return BenchmarkDef(
        spec=MixedEffectsSpec(
            X=np.array([[[1.0]], [[-1.0]]]), sigma2_a=1.0, sigma2_e=1.0, Sigma_0=1.0,
        ),
        rate=1 / 3,
    )


def benchmark_regression_intercept_only():
    # An intercept-only design with a flat prior is the non-centered two-level chain
    return BenchmarkDef(
        spec=MixedEffectsSpec(X=np.ones((50, 4, 1)), sigma2_a=1.0, sigma2_e=1.0),
        rate=0.8,
    )


def benchmark_partial_optimal():
    return BenchmarkDef(
        spec=PartialTwoLevelSpec(I=50, J=4, sigma2_a=1.0, sigma2_e=1.0, A=0.8),
        rate=0.0,
        recommendation=ParamKind.PARTIAL,
        condition=lambda report: abs(report.recommendation.A - 0.8) <= 1e-12,
    )


def benchmark_partial_midpoint():
    # (0.5 - 2)² / (5 · (0.25 + 1)) = 0.36
    return BenchmarkDef(
        spec=PartialTwoLevelSpec(I=20, J=4, sigma2_a=1.0, sigma2_e=1.0, A=0.5),
        rate=0.36,
        recommendation=ParamKind.PARTIAL,
    )


def benchmark_linear_model_two_level():
    X1, X2 = two_level_design(6, 3)
    return BenchmarkDef(
        spec=GeneralLMSpec(X1, X2, tau_1=0.0, tau_2=1.0, tau_e=1.0),
        rate=0.75,
    )


def benchmark_linear_model_two_level_centered():
    X1, X2 = two_level_design(6, 3)
    return BenchmarkDef(
        spec=GeneralLMSpec(X1, X2, tau_1=0.0, tau_2=1.0, tau_e=1.0, centered=True),
        rate=0.25,
    )


def benchmark_three_level_exact_optimum():
    # Rescaled precisions (1, 1, 1)
    return BenchmarkDef(
        spec=ThreeLevelSpec(
            I=2, J=2, K=2, sigma2_a=2.0, sigma2_b=4.0, sigma2_e=8.0, A=1 / 3, B=0.5, C=1 / 3,
        ),
        rate=0.0,
        recommendation=ParamKind.PARTIAL3,
        condition=lambda report: np.allclose(report.recommendation.ABC, (1 / 3, 1 / 2, 1 / 3), atol=1e-12),
        oracle_matches=False,
    )


def benchmark_three_level_unequal():
    # Rescaled precisions (1, 2, 1)
    return BenchmarkDef(
        spec=ThreeLevelSpec(I=2, J=2, K=2, sigma2_a=2.0, sigma2_b=2.0, sigma2_e=8.0),
        recommendation=ParamKind.PARTIAL3,
        condition=lambda report: (
            report.analytic_rate > 1e-3
            and np.allclose(report.recommendation.ABC, (2 / 5, 1 / 3, 1 / 5), atol=1e-12)
        ),
        oracle_matches=False,
    )
