"""
Closed-form L² convergence rates of the two-level, mixed-effects, linear and
partially centered samplers, the optimal parameterizations, and the
invariance utilities. Every closed form here has a numerical counterpart in
gaussian.l2_rate_oracle; `analyze` reports both.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import enum
import logging
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np

from .errors import DegenerateCondition, DegenerateDenominator, DegenerateMarginal, DimMismatch
from .gaussian import block_rate, l2_rate_oracle
from .linalg import OrthoMatrix, SymPD, as_sympd, spectral_norm, sym_sqrt_pair
from .models import (
    GeneralLMSpec, MixedEffectsSpec, ModelSpec, Parameterization, PartialTwoLevelSpec,
    ThreeLevelSpec, TwoLevelVectorSpec, MODEL_TYPES, empty_data, posterior_bar_s2m,
    posterior_bar_s3, posterior_lm, posterior_partial2, posterior_s3, posterior_sr,
    rescaled_precisions,
)

if TYPE_CHECKING:
    from .diagnostics import RateEstimate


logger = logging.getLogger(__name__)

INVARIANCE_TOL = 1e-10
# Relative floor on |D| for the printed three-level optimum
DEGENERACY_RTOL = 1e-12

PARTIAL_RATE_NOTE = (
    'rate_A uses the J-corrected denominator (A²/σa² + (1-A)²J/σe²); '
    'the uncorrected display gives {printed:.6g} here'
)
S3_FORMULA_NOTE = (
    'exact (A*, B*, C*) = ({0:.6g}, {1:.6g}, {2:.6g}); the printed closed form '
    'gives ({3:.6g}, {4:.6g}, {5:.6g}) with oracle rate {6:.6g}'
)


class ParamKind(enum.Enum):
    NON_CENTERED = 'non_centered'
    CENTERED = 'centered'
    PARTIAL = 'partial'
    PARTIAL3 = 'partial3'
    COMPONENT_WISE = 'component_wise'


@dataclass(frozen=True)
class ParamChoice:
    """A recommended parameterization and the rates it was chosen from."""
    kind: ParamKind
    rates: dict[str, float] = field(default_factory=dict)
    A: float | None = None
    ABC: tuple[float, float, float] | None = None
    indicator: tuple[bool, ...] | None = None
    component_rates: tuple[float, ...] | None = None

    @property
    def component_wise_rate(self) -> float | None:
        if self.component_rates is None:
            return None
        return max(self.component_rates)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {'kind': self.kind.value, 'rates': dict(self.rates)}
        if self.A is not None:
            out['A'] = self.A
        if self.ABC is not None:
            out['ABC'] = list(self.ABC)
        if self.indicator is not None:
            out['indicator'] = list(self.indicator)
            out['component_rates'] = list(self.component_rates)
            out['component_wise_rate'] = self.component_wise_rate
        return out


@dataclass
class RateReport:
    model: str
    analytic_rate: float
    oracle_rate: float
    empirical: RateEstimate | None = None
    recommendation: ParamChoice | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def abs_diff(self) -> float:
        return abs(self.analytic_rate - self.oracle_rate)

    def to_json(self) -> dict[str, Any]:
        return {
            'model': self.model,
            'analytic': self.analytic_rate,
            'oracle': self.oracle_rate,
            'abs_diff': self.abs_diff,
            'empirical': None if self.empirical is None else self.empirical.to_json(),
            'recommendation': None if self.recommendation is None else self.recommendation.to_json(),
            'notes': list(self.notes),
        }


# ------------------------- TWO-LEVEL VECTOR MODEL ------------------------- #

def _check_J(J: int) -> int:
    if int(J) != J or J < 1:
        raise ValueError(f'J must be a positive integer, got {J}')
    return int(J)


def _precisions(Sigma_a, Sigma_e) -> tuple[np.ndarray, np.ndarray]:
    Sigma_a, Sigma_e = as_sympd(Sigma_a), as_sympd(Sigma_e)
    if Sigma_a.dim != Sigma_e.dim:
        raise DimMismatch(f'Sigma_a is {Sigma_a.dim}-dim but Sigma_e is {Sigma_e.dim}-dim')
    return Sigma_a.inverse().entries, Sigma_e.inverse().entries


def _relative_rate(numerator: np.ndarray, total: np.ndarray) -> float:
    """‖N^{1/2} T^{-1/2}‖² for SPD N ≤ T."""
    root, _ = sym_sqrt_pair(numerator)
    _, inv_root = sym_sqrt_pair(total)
    return spectral_norm(root.entries @ inv_root.entries) ** 2


def rate_noncentered(Sigma_a: SymPD | np.ndarray | float, Sigma_e: SymPD | np.ndarray | float, J: int) -> float:
    J = _check_J(J)
    P_a, P_e = _precisions(Sigma_a, Sigma_e)
    return _relative_rate(J * P_e, P_a + J * P_e)


def rate_centered(Sigma_a: SymPD | np.ndarray | float, Sigma_e: SymPD | np.ndarray | float, J: int) -> float:
    J = _check_J(J)
    P_a, P_e = _precisions(Sigma_a, Sigma_e)
    return _relative_rate(P_a, P_a + J * P_e)


def _component_rates(Sigma_a, Sigma_e, J: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-component (ρ₀, ρ₁) for diagonal covariances."""
    Sigma_a, Sigma_e = as_sympd(Sigma_a), as_sympd(Sigma_e)
    if not (Sigma_a.is_diagonal() and Sigma_e.is_diagonal()):
        raise ValueError('Per-component rates need diagonal Sigma_a and Sigma_e')
    tau_a = 1 / np.diag(Sigma_a.entries)
    tau_e = J / np.diag(Sigma_e.entries)
    return tau_e / (tau_a + tau_e), tau_a / (tau_a + tau_e)


def rate_component_wise(
    Sigma_a: SymPD | np.ndarray,
    Sigma_e: SymPD | np.ndarray,
    J: int,
    indicator: Sequence[bool],
) -> float:
    """Rate of the sampler centering exactly the flagged components."""
    J = _check_J(J)
    rho0, rho1 = _component_rates(Sigma_a, Sigma_e, J)
    indicator = np.asarray(indicator, dtype=bool)
    if indicator.shape != rho0.shape:
        raise DimMismatch(f'{indicator.size} indicator flags for {rho0.size} components')
    return float(np.max(np.where(indicator, rho1, rho0)))


def scalar_rates(sigma2_a: float, sigma2_e: float, J: int) -> tuple[float, float]:
    """(ρ₀, ρ₁) of the scalar two-level model; they always sum to one."""
    tau_a, tau_e = 1 / sigma2_a, J / sigma2_e
    return tau_e / (tau_a + tau_e), tau_a / (tau_a + tau_e)


def choose_parametrization(
    Sigma_a: SymPD | np.ndarray | float,
    Sigma_e: SymPD | np.ndarray | float,
    J: int,
) -> ParamChoice:
    """
    Non-centered when ρ₀ <= ρ₁, centered otherwise. With diagonal covariances
    the per-component choice is attached as well; each component then runs
    at min(ρ₀ₖ, ρ₁ₖ) <= 1/2.
    """
    Sigma_a, Sigma_e = as_sympd(Sigma_a), as_sympd(Sigma_e)
    rho0 = rate_noncentered(Sigma_a, Sigma_e, J)
    rho1 = rate_centered(Sigma_a, Sigma_e, J)
    kind = ParamKind.NON_CENTERED if rho0 <= rho1 else ParamKind.CENTERED
    rates = {'non_centered': rho0, 'centered': rho1}
    if not (Sigma_a.is_diagonal() and Sigma_e.is_diagonal()):
        return ParamChoice(kind, rates)
    comp0, comp1 = _component_rates(Sigma_a, Sigma_e, _check_J(J))
    indicator = tuple(bool(c1 < c0) for c0, c1 in zip(comp0, comp1))
    component_rates = tuple(float(min(c0, c1)) for c0, c1 in zip(comp0, comp1))
    return ParamChoice(kind, rates, indicator=indicator, component_rates=component_rates)


# --------------------------- MIXED EFFECTS --------------------------- #

def rate_mixed_effects(spec: MixedEffectsSpec) -> float:
    se, sa = 1 / spec.sigma2_e, 1 / spec.sigma2_a
    factor = spec.J**2 * se**2 / (sa + spec.J * se)
    X_bar = spec.X_bar
    root, _ = sym_sqrt_pair(X_bar.T @ X_bar)
    _, inv_root = sym_sqrt_pair(spec.prior_precision + se * spec.gram)
    return factor * spectral_norm(root.entries @ inv_root.entries) ** 2


@dataclass(frozen=True)
class InvarianceReport:
    base: float
    scaled: float
    rotated: float
    tol: float = INVARIANCE_TOL

    @property
    def scale_violation(self) -> float:
        return abs(self.base - self.scaled)

    @property
    def rotation_violation(self) -> float:
        return abs(self.base - self.rotated)

    @property
    def passed(self) -> bool:
        return max(self.scale_violation, self.rotation_violation) <= self.tol

    def to_json(self) -> dict[str, Any]:
        return {
            'base': self.base,
            'scaled': self.scaled,
            'rotated': self.rotated,
            'scale_violation': self.scale_violation,
            'rotation_violation': self.rotation_violation,
            'passed': self.passed,
        }


def invariance_checks(
    spec: MixedEffectsSpec,
    r: float,
    R: OrthoMatrix | np.ndarray,
) -> InvarianceReport:
    """
    Rate of `spec`, of `spec` with (Σ0, σa², σe²) scaled by r, and of the
    spec under β ↦ Rβ, i.e. (RΣ0Rᵀ, RX_ij).
    """
    if not r > 0:
        raise ValueError(f'Scale factor must be positive, got {r}')
    R = R if isinstance(R, OrthoMatrix) else OrthoMatrix(R)
    if R.dim != spec.p:
        raise DimMismatch(f'Rotation is {R.dim}×{R.dim} but p = {spec.p}')
    scaled = replace(
        spec,
        sigma2_a=r * spec.sigma2_a,
        sigma2_e=r * spec.sigma2_e,
        Sigma_0=None if spec.Sigma_0 is None else spec.Sigma_0.scaled(r),
    )
    Rm = R.entries
    rotated = replace(
        spec,
        X=spec.X @ Rm.T,
        Sigma_0=None if spec.Sigma_0 is None else SymPD.symmetrized(Rm @ spec.Sigma_0.entries @ Rm.T),
    )
    return InvarianceReport(
        rate_mixed_effects(spec), rate_mixed_effects(scaled), rate_mixed_effects(rotated)
    )


# ------------------------- PARTIAL CENTERING ------------------------- #

def _positive(*values: float) -> None:
    for value in values:
        if not value > 0:
            raise ValueError(f'Variances and precisions must be positive, got {value}')


def rate_partial_two_level(
    sigma2_a: float,
    sigma2_e: float,
    J: int,
    A: float,
    printed: bool = False,
) -> float:
    """
    Rate of the scalar two-level sampler with centering fraction A. A = 0 is
    the non-centered rate and A = 1 the centered one. `printed` drops the
    factor J from the second denominator term.
    """
    _positive(sigma2_a, sigma2_e)
    J = _check_J(J)
    sa, se = 1 / sigma2_a, 1 / sigma2_e
    numerator = (A * sa - (1 - A) * J * se) ** 2
    denominator = (sa + J * se) * (A**2 * sa + (1 - A) ** 2 * (1 if printed else J) * se)
    if not denominator > 0:
        raise DegenerateDenominator(f'rate_A denominator vanishes at A={A}')
    return numerator / denominator


def optimal_A(sigma2_a: float, sigma2_e: float, J: int) -> float:
    _positive(sigma2_a, sigma2_e)
    J = _check_J(J)
    sa, se = 1 / sigma2_a, 1 / sigma2_e
    return J * se / (sa + J * se)


def optimal_ABC(
    tau_a: float,
    tau_b: float,
    tau_e: float,
    printed: bool = False,
) -> tuple[float, float, float]:
    """
    (A, B, C) making the coarse-level posterior of (μ, ā, b̄) independent,
    in rescaled precisions. The printed closed form needs
    D = (τb+τe)²τa + τbτe(τb−τe) away from zero.
    """
    _positive(tau_a, tau_b, tau_e)
    B = tau_e / (tau_b + tau_e)
    if printed:
        D = (tau_b + tau_e) ** 2 * tau_a + tau_b * tau_e * (tau_b - tau_e)
        if abs(D) <= DEGENERACY_RTOL * max(tau_a, tau_b, tau_e) ** 3:
            raise DegenerateCondition(f'D = {D:.3e} is numerically zero')
        return tau_b * tau_e * (tau_b - tau_e) / D, B, tau_a * tau_e * (tau_b + tau_e) / D
    denominator = tau_a * (tau_b + tau_e) + tau_b * tau_e
    return tau_b * tau_e / denominator, B, tau_a * tau_e / denominator


def pairwise_correlations_s3(
    tau_a: float,
    tau_b: float,
    tau_e: float,
    A: float,
    B: float,
    C: float,
    printed: bool = False,
) -> tuple[float, float, float]:
    """
    Partial correlations (μ, ā), (μ, b̄), (ā, b̄) of the coarse-level
    posterior. With `printed`, the BCτb term of the first one enters with
    a plus sign.
    """
    _positive(tau_a, tau_b, tau_e)
    alpha, beta = 1 - A - C, 1 - B
    q_mm = alpha**2 * tau_e + C**2 * tau_b + A**2 * tau_a
    q_aa = beta**2 * tau_e + B**2 * tau_b + tau_a
    q_bb = tau_e + tau_b
    if min(q_mm, q_aa, q_bb) <= 0:
        raise DegenerateMarginal(f'Coarse-level precision has a zero diagonal at (A,B,C)=({A},{B},{C})')
    bc = -B * C * tau_b if printed else B * C * tau_b
    q_ma = alpha * beta * tau_e + bc - A * tau_a
    q_mb = alpha * tau_e - C * tau_b
    q_ab = beta * tau_e - B * tau_b
    return (
        -q_ma / np.sqrt(q_mm * q_aa),
        -q_mb / np.sqrt(q_mm * q_bb),
        -q_ab / np.sqrt(q_aa * q_bb),
    )


def rate_s3(spec: ThreeLevelSpec) -> float:
    """Rate of the coarse level (μ, ā, b̄) under the scan μ → ā → b̄."""
    target = posterior_bar_s3(spec, empty_data(spec))
    return l2_rate_oracle(target, ['mu', 'abar', 'bbar'])


def rate_s3_full(spec: ThreeLevelSpec) -> float:
    """Rate of the whole μ → a → b scan over every coordinate."""
    return l2_rate_oracle(posterior_s3(spec, empty_data(spec)), ['mu', 'a', 'b'])


def optimal_s3_spec(spec: ThreeLevelSpec, printed: bool = False) -> ThreeLevelSpec:
    A, B, C = optimal_ABC(*rescaled_precisions(spec), printed=printed)
    return replace(spec, A=A, B=B, C=C)


# ---------------------------- LINEAR MODEL ---------------------------- #

def rate_linear_model(spec: GeneralLMSpec) -> float:
    """Two-block rate of the β1 / β2 sampler in the model's parameterization."""
    return block_rate(posterior_lm(spec, empty_data(spec)), 'beta1', 'beta2')


# ------------------------------ ANALYSIS ------------------------------ #

def oracle_rate(spec: ModelSpec) -> float:
    """l2_rate_oracle on the target the analytic rate of `spec` describes."""
    data = empty_data(spec)
    match spec:
        case TwoLevelVectorSpec():
            return l2_rate_oracle(posterior_bar_s2m(spec, data), ['mu', 'abar'])
        case PartialTwoLevelSpec():
            return l2_rate_oracle(posterior_partial2(spec, data), ['mu', 'a'])
        case MixedEffectsSpec():
            return l2_rate_oracle(posterior_sr(spec, data), ['beta', 'a'])
        case GeneralLMSpec():
            return l2_rate_oracle(posterior_lm(spec, data), ['beta1', 'beta2'])
        case ThreeLevelSpec():
            return rate_s3_full(spec)
    raise TypeError(f'Unknown model spec {type(spec).__name__}')


def analytic_rate(spec: ModelSpec) -> float:
    match spec:
        case TwoLevelVectorSpec():
            match spec.parameterization:
                case Parameterization.NON_CENTERED:
                    return rate_noncentered(spec.Sigma_a, spec.Sigma_e, spec.J)
                case Parameterization.CENTERED:
                    return rate_centered(spec.Sigma_a, spec.Sigma_e, spec.J)
                case Parameterization.COMPONENT_WISE:
                    return rate_component_wise(spec.Sigma_a, spec.Sigma_e, spec.J, spec.indicator)
        case PartialTwoLevelSpec():
            return rate_partial_two_level(spec.sigma2_a, spec.sigma2_e, spec.J, spec.A)
        case MixedEffectsSpec():
            return rate_mixed_effects(spec)
        case GeneralLMSpec():
            return rate_linear_model(spec)
        case ThreeLevelSpec():
            return rate_s3(spec)
    raise TypeError(f'Unknown model spec {type(spec).__name__}')


def recommend(spec: ModelSpec, printed: bool = False) -> tuple[ParamChoice | None, list[str]]:
    """The optimal parameterization for a spec, with notes on formula variants."""
    notes = []
    match spec:
        case TwoLevelVectorSpec():
            return choose_parametrization(spec.Sigma_a, spec.Sigma_e, spec.J), notes
        case PartialTwoLevelSpec():
            A = optimal_A(spec.sigma2_a, spec.sigma2_e, spec.J)
            rho0, rho1 = scalar_rates(spec.sigma2_a, spec.sigma2_e, spec.J)
            rates = {
                'partial': rate_partial_two_level(spec.sigma2_a, spec.sigma2_e, spec.J, A),
                'non_centered': rho0,
                'centered': rho1,
            }
            printed_rate = rate_partial_two_level(
                spec.sigma2_a, spec.sigma2_e, spec.J, spec.A, printed=True
            )
            notes.append(PARTIAL_RATE_NOTE.format(printed=printed_rate))
            return ParamChoice(ParamKind.PARTIAL, rates, A=A), notes
        case ThreeLevelSpec():
            exact = optimal_s3_spec(spec)
            choice = ParamChoice(
                ParamKind.PARTIAL3, {'partial3': rate_s3(exact)},
                ABC=(exact.A, exact.B, exact.C),
            )
            try:
                shown = optimal_s3_spec(spec, printed=True)
            except DegenerateCondition as exc:
                if printed:
                    raise
                notes.append(f'printed (A*, B*, C*) undefined: {exc}')
                return choice, notes
            notes.append(S3_FORMULA_NOTE.format(
                exact.A, exact.B, exact.C, shown.A, shown.B, shown.C, rate_s3(shown)
            ))
            if printed:
                choice = ParamChoice(
                    ParamKind.PARTIAL3, {'partial3': rate_s3(shown)},
                    ABC=(shown.A, shown.B, shown.C),
                )
            return choice, notes
    return None, notes


def analyze(spec: ModelSpec, printed: bool = False) -> RateReport:
    """Analytic and oracle rates of a spec plus its recommended parameterization."""
    recommendation, notes = recommend(spec, printed=printed)
    report = RateReport(
        model=MODEL_TYPES[type(spec)],
        analytic_rate=analytic_rate(spec),
        oracle_rate=oracle_rate(spec),
        recommendation=recommendation,
        notes=notes,
    )
    if isinstance(spec, ThreeLevelSpec):
        report.notes.append(
            f'coarse-level rate {report.analytic_rate:.6g}, full-scan rate {report.oracle_rate:.6g}'
        )
    for note in report.notes:
        logger.info(note)
    return report
