import contextlib
import csv
import io
import json
import os
from pathlib import Path
import tempfile
import time
import unittest

import numpy as np

from gibbschecker import *
from gibbschecker.cli import main
import benchmarks


# Suppress test stack frames in assertion errors. We never care which line
# raised the error
__unittest = True


def assert_close(
    testcase: unittest.TestCase,
    actual: float,
    expected: float,
    tol: float,
    what: str = 'value',
):
    testcase.assertTrue(
        abs(actual - expected) <= tol,
        msg=(
            f'\033[31;1m{what}\033[0m differs by {abs(actual - expected):.3e} (tol {tol:.0e})\n'
            f'\033[31;1mEXPECTED:\033[0m {expected!r}\n'
            f'\033[31;1mACTUAL:\033[0m   {actual!r}'
        )
    )


def assert_passes(testcase: unittest.TestCase, report, what: str):
    testcase.assertTrue(
        report.passed,
        msg=f'\n\033[31;1mFailed {what}:\033[0m {json.dumps(report.to_json(), default=str)}'
    )


def random_two_level_spec(rng: np.random.Generator, parameterization: Parameterization):
    ell = int(rng.integers(1, 4))
    return TwoLevelVectorSpec(
        I=int(rng.integers(2, 8)),
        J=int(rng.integers(1, 7)),
        Sigma_a=random_sympd(rng, ell),
        Sigma_e=random_sympd(rng, ell),
        parameterization=parameterization,
    )


def three_level_from_taus(tau_a, tau_b, tau_e, I=2, J=2, K=2, A=0.0, B=0.0, C=0.0):
    return ThreeLevelSpec(
        I, J, K, I / tau_a, I * J / tau_b, I * J * K / tau_e, A=A, B=B, C=C,
    )


def run_cli(*argv: str) -> tuple[int, str]:
    out = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(io.StringIO()):
        code = main(list(argv))
    return code, out.getvalue()


class TestBenchmarks(unittest.TestCase):
    """Analyse every named benchmark as an integration test."""

    def test_benchmarks(self):
        all_benchmarks = {
            name: getattr(benchmarks, name)
            for name in dir(benchmarks)
            if name.startswith('benchmark_')
        }
        print(f'Test 1: analyse all {len(all_benchmarks)} benchmarks')
        verbose = os.environ.get('VERBOSE', False)

        for name in all_benchmarks:
            with self.subTest(msg=name):
                print(f'\033[31;1m.', end='', flush=True)
                if verbose:
                    print(f'\n{name}', end='')

                bench = all_benchmarks[name]()
                start = time.perf_counter()
                report = analyze(bench.spec)
                duration = time.perf_counter() - start

                if bench.rate is not None:
                    assert_close(self, report.analytic_rate, bench.rate, 1e-10, 'analytic rate')
                if bench.oracle_matches:
                    assert_close(self, report.oracle_rate, report.analytic_rate, 1e-10, 'oracle rate')
                if bench.recommendation is not None:
                    self.assertIs(report.recommendation.kind, bench.recommendation)
                if bench.condition is not None:
                    self.assertTrue(bench.condition(report))
                json.dumps(report.to_json())

                if verbose:
                    print(f' {duration:0.2f}s  ', end='')
                print('\033[32;1m\b✓', end='')
        print('\033[0m')
        print('Starting unit tests')


class TestLinalg(unittest.TestCase):
    def test_sympd_rejects(self):
        with self.assertRaises(NotPD):
            SymPD(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with self.assertRaises(NotPD):
            SymPD(np.array([[1.0, 0.5], [0.0, 1.0]]))
        with self.assertRaises(DimMismatch):
            SymPD(np.ones((2, 3)))

    def test_sym_sqrt_pair(self):
        rng = np.random.default_rng(1)
        for trial in range(10):
            with self.subTest(trial=trial):
                S = random_sympd(rng, 4, condition=100.0)
                root, inv_root = sym_sqrt_pair(S)
                np.testing.assert_allclose(root.entries @ root.entries, S.entries, atol=1e-10)
                np.testing.assert_allclose(root.entries @ inv_root.entries, np.eye(4), atol=1e-10)

    def test_rank_svd(self):
        M = np.outer([1.0, 2.0, 3.0], [1.0, -1.0])
        svd = rank_svd(M)
        self.assertEqual(svd.r, 1)
        self.assertGreater(svd.U[0, 0], 0)
        np.testing.assert_allclose(svd.U * svd.singvals @ svd.V.T, M, atol=1e-12)
        self.assertEqual(rank_svd(np.zeros((3, 2))).r, 0)
        with self.assertRaises(ValueError):
            rank_svd(M, rel_tol=0.0)

    def test_orthogonal_complete(self):
        B = np.array([[1.0, 1.0, 1.0]]) / np.sqrt(3)
        A = orthogonal_complete(B).entries
        np.testing.assert_allclose(A @ A.T, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(A[0], B[0])
        np.testing.assert_array_equal(A, orthogonal_complete(B).entries)
        with self.assertRaises(NotOrthonormalRows):
            orthogonal_complete(np.array([[1.0, 1.0, 0.0]]))

    def test_spectral_norm(self):
        assert_close(self, spectral_norm(np.diag([3.0, -5.0])), 5.0, 1e-12)
        self.assertEqual(spectral_norm(np.zeros((0, 3))), 0.0)


class TestGaussianKernel(unittest.TestCase):
    def test_two_block_rate_matches_oracle(self):
        rng = np.random.default_rng(2)
        for trial in range(100):
            with self.subTest(trial=trial):
                d1, d2 = (int(d) for d in rng.integers(1, 5, size=2))
                cov = random_sympd(rng, d1 + d2).entries
                target = BlockedGaussian(
                    np.zeros(d1 + d2),
                    SymPD.symmetrized(np.linalg.inv(cov)),
                    make_blocks([('x', d1), ('y', d2)]),
                )
                rate = two_block_rate(cov[:d1, :d1], cov[:d1, d1:], cov[d1:, d1:])
                assert_close(self, rate, l2_rate_oracle(target, ['x', 'y']), 1e-10, 'two_block_rate')

    def test_scan_order_must_cover_blocks(self):
        target = BlockedGaussian(np.zeros(3), np.eye(3), make_blocks([('x', 1), ('y', 2)]))
        with self.assertRaises(UnknownBlock):
            scan_operator(target, ['x'])
        with self.assertRaises(UnknownBlock):
            scan_operator(target, ['x', 'z'])
        self.assertLessEqual(l2_rate_oracle(target, ['x', 'y']), 1e-12)

    def test_joint_update_is_exact(self):
        rng = np.random.default_rng(3)
        precision = random_sympd(rng, 4)
        target = BlockedGaussian(np.zeros(4), precision, make_blocks([('x', 1), ('y', 3)]))
        self.assertLess(l2_rate_oracle(target, [('x', 'y')]), 1e-12)

    def test_conditional_update(self):
        target = BlockedGaussian.from_canonical(
            np.array([[2.0, -1.0], [-1.0, 2.0]]), np.array([1.0, 1.0]), [('x', 1), ('y', 1)],
        )
        np.testing.assert_allclose(target.mean, [1.0, 1.0])
        update = conditional_update(target, 'x')
        np.testing.assert_allclose(update.gain, [[0.5]])
        np.testing.assert_allclose(update.offset, [0.5])
        np.testing.assert_allclose(update.noise_cov.entries, [[0.5]])
        np.testing.assert_allclose(target.partial_correlations()[0, 1], 0.5)

    def test_exact_sample_moments(self):
        rng = np.random.default_rng(4)
        cov = random_sympd(rng, 3).entries
        target = BlockedGaussian(np.arange(3.0), SymPD.symmetrized(np.linalg.inv(cov)), make_blocks([('x', 3)]))
        draws = exact_sample(target, rng, 200_000)
        np.testing.assert_allclose(draws.mean(axis=0), target.mean, atol=0.05)
        np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.1)


class TestTwoLevelRates(unittest.TestCase):
    def test_formulas_match_oracle(self):
        rng = np.random.default_rng(5)
        for parameterization in (Parameterization.NON_CENTERED, Parameterization.CENTERED):
            for trial in range(50):
                with self.subTest(parameterization=parameterization.value, trial=trial):
                    spec = random_two_level_spec(rng, parameterization)
                    assert_close(self, analytic_rate(spec), oracle_rate(spec), 1e-10, 'rate')

    def test_scalar_rates_sum_to_one(self):
        rng = np.random.default_rng(6)
        for trial in range(50):
            with self.subTest(trial=trial):
                sigma2_a, sigma2_e = np.exp(rng.uniform(-3, 3, size=2))
                J = int(rng.integers(1, 10))
                rho0 = rate_noncentered(sigma2_a, sigma2_e, J)
                rho1 = rate_centered(sigma2_a, sigma2_e, J)
                assert_close(self, rho0 + rho1, 1.0, 1e-12, 'rho0 + rho1')
                assert_close(self, rho0, scalar_rates(sigma2_a, sigma2_e, J)[0], 1e-12, 'rho0')

    def test_scalar_benchmark(self):
        self.assertEqual(scalar_rates(1.0, 1.0, 4), (0.8, 0.2))
        choice = choose_parametrization(1.0, 1.0, 4)
        self.assertIs(choice.kind, ParamKind.CENTERED)

    def test_tie_goes_to_non_centered(self):
        self.assertIs(choose_parametrization(1.0, 2.0, 2).kind, ParamKind.NON_CENTERED)

    def test_component_wise(self):
        Sigma_a, Sigma_e = np.diag([1.0, 0.25]), np.eye(2)
        assert_close(self, rate_noncentered(Sigma_a, Sigma_e, 2), 2 / 3, 1e-12, 'rho0')
        assert_close(self, rate_centered(Sigma_a, Sigma_e, 2), 2 / 3, 1e-12, 'rho1')
        choice = choose_parametrization(Sigma_a, Sigma_e, 2)
        self.assertEqual(choice.indicator, (True, False))
        assert_close(self, choice.component_wise_rate, 1 / 3, 1e-12, 'component-wise rate')
        self.assertLessEqual(choice.component_wise_rate, 0.5)
        assert_close(self, rate_component_wise(Sigma_a, Sigma_e, 2, (True, False)), 1 / 3, 1e-12)
        assert_close(self, rate_component_wise(Sigma_a, Sigma_e, 2, (False, True)), 2 / 3, 1e-12)
        with self.assertRaises(ValueError):
            rate_component_wise(np.array([[1.0, 0.5], [0.5, 1.0]]), Sigma_e, 2, (True, False))

    def test_invalid_inputs(self):
        with self.assertRaises(ValueError):
            rate_noncentered(1.0, 1.0, 0)
        with self.assertRaises(DimMismatch):
            rate_centered(np.eye(2), 1.0, 3)
        with self.assertRaises(ValueError):
            TwoLevelVectorSpec(I=1, J=2, Sigma_a=1.0, Sigma_e=1.0)


class TestMixedEffects(unittest.TestCase):
    def random_spec(self, rng: np.random.Generator) -> MixedEffectsSpec:
        p = int(rng.integers(1, 4))
        I = int(rng.integers(p + 1, 9))
        J = int(rng.integers(1, 5))
        return MixedEffectsSpec(
            X=rng.standard_normal((I, J, p)),
            sigma2_a=float(np.exp(rng.uniform(-1, 1))),
            sigma2_e=float(np.exp(rng.uniform(-1, 1))),
            Sigma_0=random_sympd(rng, p),
        )

    def test_formula_matches_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            with self.subTest(trial=trial):
                spec = self.random_spec(rng)
                assert_close(self, rate_mixed_effects(spec), oracle_rate(spec), 1e-10, 'rate')

    def test_intercept_only_reduces_to_two_level(self):
        rng = np.random.default_rng(8)
        for trial in range(10):
            with self.subTest(trial=trial):
                sigma2_a, sigma2_e = np.exp(rng.uniform(-2, 2, size=2))
                I, J = int(rng.integers(2, 9)), int(rng.integers(1, 6))
                spec = MixedEffectsSpec(np.ones((I, J, 1)), sigma2_a, sigma2_e)
                rho0, _ = scalar_rates(sigma2_a, sigma2_e, J)
                assert_close(self, rate_mixed_effects(spec), rho0, 1e-12, 'reduced rate')

    def test_scale_and_rotation_invariance(self):
        rng = np.random.default_rng(9)
        for trial in range(20):
            with self.subTest(trial=trial):
                spec = self.random_spec(rng)
                report = invariance_checks(
                    spec, float(np.exp(rng.uniform(-2, 2))), random_orthogonal(rng, spec.p)
                )
                assert_passes(self, report, 'invariance checks')

    def test_hand_instance(self):
        spec = MixedEffectsSpec(np.array([[[1.0]], [[-1.0]]]), 1.0, 1.0, Sigma_0=1.0)
        assert_close(self, rate_mixed_effects(spec), 1 / 3, 1e-12, 'hand instance')

    def test_rank_checks(self):
        with self.assertRaises(RankDeficient):
            MixedEffectsSpec(np.ones((4, 3, 2)), 1.0, 1.0)
        with self.assertRaises(NotOrthogonal):
            invariance_checks(
                MixedEffectsSpec(np.random.default_rng(0).standard_normal((5, 2, 2)), 1.0, 1.0),
                2.0, np.array([[1.0, 1.0], [0.0, 1.0]]),
            )


class TestMultigrid(unittest.TestCase):
    def test_build_PL(self):
        rng = np.random.default_rng(10)
        X_bar = rng.standard_normal((6, 2))
        P, L = build_PL(X_bar)
        np.testing.assert_allclose(P @ P.T, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(L @ L.T, np.eye(4), atol=1e-12)
        np.testing.assert_allclose(P @ L.T, np.zeros((2, 4)), atol=1e-12)
        np.testing.assert_allclose(L @ X_bar, np.zeros((4, 2)), atol=1e-12)
        with self.assertRaises(RankDeficient):
            build_PL(np.ones((3, 3)))

    def test_cross_svd(self):
        rng = np.random.default_rng(11)
        X1, X2 = rng.standard_normal((2, 10)), rng.standard_normal((3, 10))
        cross = cross_svd(X1, X2)
        self.assertEqual(cross.r, 2)
        np.testing.assert_allclose(cross.reconstruct(), X1 @ X2.T, atol=1e-12)
        np.testing.assert_allclose(cross.A2.entries[:cross.r], cross.B2, atol=1e-12)

    def test_kronecker_design_decouples(self):
        X1, X2 = two_level_design(6, 3)
        for centered in (False, True):
            with self.subTest(centered=centered):
                spec = GeneralLMSpec(X1, X2, tau_1=0.5, tau_2=1.0, tau_e=2.0, centered=centered)
                holds, violation = lm_condition(spec)
                self.assertTrue(holds)
                self.assertLessEqual(violation, 1e-12)
                frame = frame_for(spec)
                target = posterior_lm(spec, empty_data(spec))
                for first, second in frame.family_pairs():
                    self.assertLessEqual(frame.max_cross_block(target, first, second), 1e-10)

    def test_random_design_violates_condition(self):
        # Cross product (1, 0): the second X2 row shares the first observation's neighbour
        spec = GeneralLMSpec(
            np.array([[1.0, 0.0, 0.0]]), np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]), 1.0, 1.0, 1.0,
        )
        holds, violation = lm_condition(spec)
        self.assertFalse(holds)
        self.assertGreater(violation, 0.1)
        rng = np.random.default_rng(12)
        for trial in range(10):
            with self.subTest(trial=trial):
                spec = GeneralLMSpec(rng.standard_normal((2, 8)), rng.standard_normal((3, 8)), 1.0, 1.0, 1.0)
                holds, violation = lm_condition(spec)
                self.assertFalse(holds)
                self.assertGreater(violation, 1e-6)

    def test_solve_M(self):
        X1, X2 = two_level_design(4, 2)
        np.testing.assert_allclose(solve_M(X1, X2), np.ones((4, 1)), atol=1e-12)
        rng = np.random.default_rng(13)
        with self.assertRaises(NoSuchM):
            solve_M(rng.standard_normal((1, 6)), rng.standard_normal((2, 6)))

    def test_two_level_frame_decouples(self):
        rng = np.random.default_rng(14)
        for parameterization in (Parameterization.NON_CENTERED, Parameterization.CENTERED):
            with self.subTest(parameterization=parameterization.value):
                spec = random_two_level_spec(rng, parameterization)
                frame = frame_for(spec)
                target = posterior_s2m(spec, synthesize(spec, rng))
                self.assertLessEqual(frame.max_cross_block(target, 'bar', 'delta'), 1e-10)

    def test_frame_apply(self):
        spec = TwoLevelVectorSpec(I=3, J=2, Sigma_a=1.0, Sigma_e=1.0)
        frame = frame_for(spec)
        states = np.array([[1.0, 2.0, 3.0, 7.0]])
        functionals = frame_apply(frame, states)
        np.testing.assert_allclose(functionals['bar'], [[1.0, 4.0]])
        np.testing.assert_allclose(functionals['delta'], [[-2.0, -1.0]])
        with self.assertRaises(DimMismatch):
            frame_apply(frame, np.zeros((2, 5)))


class TestPartialCentering(unittest.TestCase):
    def test_formula_matches_oracle(self):
        rng = np.random.default_rng(15)
        for trial in range(10):
            sigma2_a, sigma2_e = np.exp(rng.uniform(-1.5, 1.5, size=2))
            I, J = int(rng.integers(2, 10)), int(rng.integers(1, 8))
            for A in np.linspace(0, 1, 21):
                with self.subTest(trial=trial, A=A):
                    spec = PartialTwoLevelSpec(I, J, sigma2_a, sigma2_e, A)
                    assert_close(self, analytic_rate(spec), oracle_rate(spec), 1e-10, 'rate_A')

    def test_endpoints(self):
        rng = np.random.default_rng(16)
        for trial in range(10):
            with self.subTest(trial=trial):
                sigma2_a, sigma2_e = np.exp(rng.uniform(-1.5, 1.5, size=2))
                J = int(rng.integers(1, 8))
                rho0, rho1 = scalar_rates(sigma2_a, sigma2_e, J)
                assert_close(self, rate_partial_two_level(sigma2_a, sigma2_e, J, 0.0), rho0, 1e-12)
                assert_close(self, rate_partial_two_level(sigma2_a, sigma2_e, J, 1.0), rho1, 1e-12)
                A = optimal_A(sigma2_a, sigma2_e, J)
                assert_close(self, rate_partial_two_level(sigma2_a, sigma2_e, J, A), 0.0, 1e-12)

    def test_uncorrected_display(self):
        assert_close(self, rate_partial_two_level(1.0, 1.0, 4, 0.0, printed=True), 3.2, 1e-12)
        assert_close(self, optimal_A(1.0, 1.0, 4), 0.8, 1e-12)

    def test_one_step_exact_at_optimum(self):
        spec = PartialTwoLevelSpec(10, 4, 1.0, 1.0, A=optimal_A(1.0, 1.0, 4))
        data = synthesize(spec, stream_rng(0, Stream.DATA))
        scan = SystematicScan(posterior_partial2(spec, data), ['mu', 'a'])
        monitor = frame_for(spec).family_matrix('bar')
        passes = 0
        for seed in range(20):
            report = one_step_exactness(scan, N=10_000, seed=seed, monitor=monitor)
            passes += report.passed
        self.assertGreaterEqual(passes, 19)

    def test_one_step_not_exact_when_non_centered(self):
        spec = PartialTwoLevelSpec(10, 4, 1.0, 1.0, A=0.0)
        data = synthesize(spec, stream_rng(0, Stream.DATA))
        scan = SystematicScan(posterior_partial2(spec, data), ['mu', 'a'])
        report = one_step_exactness(scan, N=10_000, monitor=frame_for(spec).family_matrix('bar'))
        self.assertFalse(report.passed_lag1)


class TestThreeLevel(unittest.TestCase):
    def test_exact_optimum_decouples(self):
        rng = np.random.default_rng(17)
        for trial in range(20):
            with self.subTest(trial=trial):
                taus = np.exp(rng.uniform(-1.5, 1.5, size=3))
                A, B, C = optimal_ABC(*taus)
                for r in pairwise_correlations_s3(*taus, A, B, C):
                    self.assertLessEqual(abs(r), 1e-12)
                spec = three_level_from_taus(*taus, A=A, B=B, C=C)
                self.assertLessEqual(rate_s3(spec), 1e-10)

    def test_printed_optimum_matches_printed_correlations(self):
        rng = np.random.default_rng(18)
        for trial in range(20):
            with self.subTest(trial=trial):
                taus = np.exp(rng.uniform(-1.5, 1.5, size=3))
                A, B, C = optimal_ABC(*taus, printed=True)
                for r in pairwise_correlations_s3(*taus, A, B, C, printed=True):
                    self.assertLessEqual(abs(r), 1e-12)

    def test_known_optima(self):
        np.testing.assert_allclose(optimal_ABC(1.0, 1.0, 1.0), (1 / 3, 1 / 2, 1 / 3), atol=1e-12)
        np.testing.assert_allclose(optimal_ABC(1.0, 2.0, 1.0), (2 / 5, 1 / 3, 1 / 5), atol=1e-12)
        np.testing.assert_allclose(optimal_ABC(1.0, 1.0, 1.0, printed=True), (0, 1 / 2, 1 / 2), atol=1e-12)
        np.testing.assert_allclose(optimal_ABC(1.0, 2.0, 1.0, printed=True), (2 / 11, 1 / 3, 3 / 11), atol=1e-12)

    def test_printed_optimum_degenerate(self):
        with self.assertRaises(DegenerateCondition):
            optimal_ABC(2 / 9, 1.0, 2.0, printed=True)
        # The exact optimum exists for every positive precision
        optimal_ABC(2 / 9, 1.0, 2.0)

    def test_correlation_example(self):
        # (0, 1/2, 1/2) zeroes the printed correlations but leaves (μ, ā) coupled
        r1, r2, r3 = pairwise_correlations_s3(1.0, 1.0, 1.0, 0.0, 0.5, 0.5)
        assert_close(self, r1, -1 / np.sqrt(3), 1e-12, 'r1')
        assert_close(self, r2, 0.0, 1e-12, 'r2')
        assert_close(self, r3, 0.0, 1e-12, 'r3')
        for r in pairwise_correlations_s3(1.0, 1.0, 1.0, 0.0, 0.5, 0.5, printed=True):
            assert_close(self, r, 0.0, 1e-12, 'printed correlation')
        r1, r2, r3 = pairwise_correlations_s3(1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
        assert_close(self, r3, -0.5, 1e-12, 'r3')

    def test_one_step_exact_at_optimum(self):
        spec = optimal_s3_spec(three_level_from_taus(1.0, 2.0, 1.0))
        data = synthesize(spec, stream_rng(0, Stream.DATA))
        scan = SystematicScan(posterior_s3(spec, data), ['mu', 'a', 'b'])
        monitor = frame_for(spec).family_matrix('delta0')
        passes = 0
        for seed in range(20):
            report = one_step_exactness(scan, N=10_000, seed=seed, monitor=monitor)
            passes += report.passed
        self.assertGreaterEqual(passes, 19)

    def test_full_scan_at_optimum(self):
        spec = optimal_s3_spec(three_level_from_taus(0.5, 3.0, 2.0))
        self.assertLessEqual(rate_s3_full(spec), 1e-6)
        frame = frame_for(spec)
        target = posterior_s3(spec, empty_data(spec))
        self.assertLessEqual(frame.max_cross_block(target, 'delta2', 'delta0'), 1e-10)

    def test_recommend_notes_printed_form(self):
        spec = three_level_from_taus(1.0, 2.0, 1.0)
        choice, notes = recommend(spec)
        np.testing.assert_allclose(choice.ABC, (2 / 5, 1 / 3, 1 / 5), atol=1e-12)
        self.assertEqual(len(notes), 1)
        choice, _ = recommend(spec, printed=True)
        np.testing.assert_allclose(choice.ABC, (2 / 11, 1 / 3, 3 / 11), atol=1e-12)
        self.assertGreater(choice.rates['partial3'], 1e-6)


class TestSamplers(unittest.TestCase):
    spec = TwoLevelVectorSpec(I=5, J=3, Sigma_a=1.0, Sigma_e=2.0)

    def test_deterministic(self):
        data = synthesize(self.spec, stream_rng(3, Stream.DATA))
        cfg = SamplerConfig(iterations=500, burn_in=100, seed=3)
        first, second = run_gs0(self.spec, data, cfg), run_gs0(self.spec, data, cfg)
        np.testing.assert_array_equal(first.states, second.states)
        third = run_gs0(self.spec, data, SamplerConfig(iterations=500, burn_in=100, seed=4))
        self.assertFalse(np.array_equal(first.states, third.states))

    def test_burn_in_and_thinning(self):
        data = synthesize(self.spec, stream_rng(0, Stream.DATA))
        trace = run_gs0(self.spec, data, SamplerConfig(iterations=1000, burn_in=100, thinning=3))
        self.assertEqual(trace.T, 300)
        self.assertEqual(trace.sweeps[0], 103)
        self.assertEqual(trace.columns()[:2], ['mu_1', 'a_1_1'])
        self.assertEqual(trace.block('a_5').shape, (300, 1))

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            SamplerConfig(iterations=100, burn_in=100)
        with self.assertRaises(ValueError):
            SamplerConfig(iterations=100, burn_in=0, thinning=0)
        with self.assertRaises(ValueError):
            SamplerConfig(iterations=10, burn_in=5, thinning=10)
        with self.assertRaises(ValueError):
            SamplerConfig(iterations=100, init=InitPolicy.GIVEN)

    def test_sampler_needs_matching_parameterization(self):
        data = synthesize(self.spec, stream_rng(0, Stream.DATA))
        with self.assertRaises(ValueError):
            run_gs1(self.spec, data, SamplerConfig(iterations=10, burn_in=0))

    def test_initial_states(self):
        data = synthesize(self.spec, stream_rng(0, Stream.DATA))
        cfg = SamplerConfig(
            iterations=1, burn_in=0, init=InitPolicy.GIVEN, initial_state=np.zeros(3),
        )
        with self.assertRaises(DimMismatch):
            run_gs0(self.spec, data, cfg)
        trace = run_gs0(self.spec, data, SamplerConfig(iterations=5, burn_in=0, init=InitPolicy.PRIOR))
        self.assertEqual(trace.T, 5)

    def test_trace_csv(self):
        data = synthesize(self.spec, stream_rng(0, Stream.DATA))
        trace = run_gs0(self.spec, data, SamplerConfig(iterations=50, burn_in=10))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'trace.csv'
            sidecar = trace.to_csv(path, extra={'note': 'test'})
            self.assertEqual(json.loads(sidecar.read_text())['note'], 'test')
            loaded = ChainTrace.from_csv(path)
            np.testing.assert_array_equal(loaded.states, trace.states)
            np.testing.assert_array_equal(loaded.sweeps, trace.sweeps)
            self.assertEqual(loaded.layout, trace.layout)

            lines = path.read_text().splitlines()
            lines[3] = lines[3].replace(',', ',x', 1)
            path.write_text('\n'.join(lines) + '\n')
            with self.assertRaises(TraceFormatError):
                ChainTrace.from_csv(path)
            sidecar.unlink()
            with self.assertRaises(TraceFormatError):
                ChainTrace.from_csv(path)

    def test_dataset_csv(self):
        spec = three_level_from_taus(1.0, 1.0, 1.0)
        data = synthesize(spec, stream_rng(0, Stream.DATA))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'data.csv'
            data.to_csv(path)
            self.assertEqual(path.read_text().splitlines()[0], 'i,j,k,y')
            loaded = Dataset.from_csv(path)
            self.assertEqual(loaded.dims, (2, 2, 2))
            np.testing.assert_array_equal(loaded.values, data.values)
            lines = path.read_text().splitlines()
            path.write_text('\n'.join([lines[0], lines[2], lines[1]] + lines[3:]) + '\n')
            with self.assertRaises(ConfigError):
                Dataset.from_csv(path)

    def test_adaptive_unknown_variance(self):
        data = synthesize(
            TwoLevelVectorSpec(I=20, J=4, Sigma_a=1.0, Sigma_e=1.0), stream_rng(5, Stream.DATA)
        )
        trace, log = run_adaptive_unknown_variance(
            data, cfg=SamplerConfig(iterations=2000, burn_in=100, seed=5)
        )
        self.assertEqual(len(log), 2000)
        self.assertEqual(trace.T, 1900)
        self.assertEqual(trace.layout, [('mu', 1), ('a', 20), ('sigma2_a', 1), ('sigma2_e', 1)])
        self.assertTrue(np.all(log.bounds <= 0.5 + 1e-12))
        self.assertTrue(np.all(trace.block('sigma2_e') > 0))
        # With σa² ≈ σe² and J = 4 the centered form should dominate
        self.assertGreater(log.centered_fraction, 0.5)
        with self.assertRaises(InvalidPrior):
            VariancePriors(shape_a=0.0)
        with self.assertRaises(ValueError):
            run_adaptive_unknown_variance(
                data, cfg=SamplerConfig(iterations=10, burn_in=0, init=InitPolicy.PRIOR)
            )


class TestDiagnostics(unittest.TestCase):
    @staticmethod
    def ar1_series(rho: float, T: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(T)
        series = np.empty(T)
        series[0] = noise[0] / np.sqrt(1 - rho**2)
        for t in range(1, T):
            series[t] = rho * series[t - 1] + noise[t]
        return series

    def test_fit_ar1(self):
        _, estimate = fit_ar1(self.ar1_series(0.7, 50_000, 0))
        assert_close(self, estimate.estimate, 0.7, 0.02, 'AR(1) estimate')
        self.assertTrue(0 < estimate.se < 0.02)
        self.assertIs(estimate.method, RateMethod.AR1_FIT)
        with self.assertRaises(TooShort):
            fit_ar1(np.zeros((15, 2)))

    def test_fit_autocov_slope(self):
        estimate = fit_autocov_slope(self.ar1_series(0.5, 20_000, 1))
        assert_close(self, estimate.estimate, 0.5, 0.05, 'autocovariance estimate')
        self.assertIs(estimate.method, RateMethod.AUTOCOV_SLOPE)

    def test_autocorrelation(self):
        series = self.ar1_series(0.5, 10_000, 2)
        autocorr = autocorrelation(series, 3)
        self.assertEqual(autocorr.shape, (4, 1))
        assert_close(self, autocorr[0, 0], 1.0, 1e-12, 'lag-0 autocorrelation')
        assert_close(self, autocorr[2, 0], 0.25, 0.05, 'lag-2 autocorrelation')

    def test_whiteness(self):
        rng = np.random.default_rng(3)
        white = rng.standard_normal((20_000, 3))
        assert_passes(self, residual_iid_check(white), 'whiteness of white noise')
        self.assertFalse(residual_iid_check(self.ar1_series(0.5, 20_000, 4)).passed)

    def test_independence(self):
        rng = np.random.default_rng(5)
        a, b = rng.standard_normal((20_000, 2)), rng.standard_normal((20_000, 3))
        assert_passes(self, independence_test(a, b), 'independence of independent noise')
        lagged = np.roll(a[:, :1], 2, axis=0) + 0.1 * rng.standard_normal((20_000, 1))
        report = independence_test(a, lagged)
        self.assertFalse(report.passed)
        self.assertEqual(report.lag_at_max, 2)
        with self.assertRaises(LengthMismatch):
            independence_test(a, b[:-1])

    def test_bonferroni(self):
        assert_close(self, bonferroni_z(4.0, 1), 4.0, 1e-9, 'uncorrected z')
        self.assertGreater(bonferroni_z(4.0, 100), 4.0)


class TestEmpiricalRates(unittest.TestCase):
    def test_scalar_benchmark(self):
        for parameterization, expected in (
            (Parameterization.NON_CENTERED, 0.8),
            (Parameterization.CENTERED, 0.2),
        ):
            with self.subTest(parameterization=parameterization.value):
                spec = TwoLevelVectorSpec(
                    I=50, J=4, Sigma_a=1.0, Sigma_e=1.0, parameterization=parameterization,
                )
                data = synthesize(spec, stream_rng(0, Stream.DATA))
                trace = run_model(spec, data, SamplerConfig(iterations=200_000, burn_in=1000))
                frame = frame_for(spec)
                _, estimate = fit_ar1(frame_apply(frame, trace)['bar'])
                assert_close(self, estimate.estimate, expected, 0.03, 'empirical rate')

    def test_multigrid_independence(self):
        spec = TwoLevelVectorSpec(I=10, J=4, Sigma_a=1.0, Sigma_e=1.0)
        report = decomposition_verify(spec, SamplerConfig(iterations=101_000, burn_in=1000))
        self.assertTrue(report.structural_passed)
        self.assertLessEqual(report.structural['factorization'].value, 1e-10)
        assert_passes(self, report.statistical['iid_delta'], 'whiteness of δa')
        assert_passes(self, report.statistical['independence_delta_bar'], 'independence of δa and (μ, ā)')
        assert_passes(self, report.statistical['empirical_rate'], 'empirical rate')

    def test_verify_linear_model(self):
        X1, X2 = two_level_design(5, 3)
        spec = GeneralLMSpec(X1, X2, tau_1=0.0, tau_2=1.0, tau_e=1.0)
        report = decomposition_verify(spec, SamplerConfig(iterations=20_000, burn_in=1000))
        self.assertTrue(report.structural_passed)
        self.assertTrue(report.structural['design_condition'].passed)

        rng = np.random.default_rng(0)
        spec = GeneralLMSpec(rng.standard_normal((2, 8)), rng.standard_normal((3, 8)), 1.0, 1.0, 1.0)
        report = decomposition_verify(spec, SamplerConfig(iterations=5000, burn_in=100))
        self.assertTrue(report.structural_passed)
        self.assertFalse(report.structural['design_condition'].passed)
        self.assertNotIn('factorization', report.structural)

    def test_verify_three_level(self):
        spec = optimal_s3_spec(three_level_from_taus(1.0, 2.0, 1.0, I=3, J=3, K=2))
        report = decomposition_verify(spec, SamplerConfig(iterations=20_000, burn_in=1000))
        self.assertTrue(report.structural_passed)
        self.assertTrue(report.structural['level_ordering'].informational)


class TestConfig(unittest.TestCase):
    def load(self, text: str) -> RunConfig:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.toml'
            path.write_text(text)
            return load_config(path)

    def test_scalar_model(self):
        config = self.load(
            '[model]\ntype = "s2m"\nI = 50\nJ = 4\nSigma_a = 1.0\nSigma_e = 1.0\n'
            '[sampler]\niterations = 500\nburn_in = 50\nseed = 7\n'
        )
        spec = config.build_model()
        self.assertIsInstance(spec, TwoLevelVectorSpec)
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.with_seed(9).seed, 9)
        self.assertEqual(config.sampler.sampler_config().kept, 450)

    def test_schema_errors(self):
        for text in (
            '[model]\ntype = "s2m"\nI = 5\nJ = 2\nSigma_a = 1\nSigma_e = 1\ncolour = 1\n',
            '[model]\ntype = "s9"\n',
            '[model]\ntype = "s2"\nI = "five"\nJ = 2\nsigma2_a = 1\nsigma2_e = 1\n',
            '[model]\ntype = "s2"\nI = 5\nJ = 2\nsigma2_a = 1\nsigma2_e = 1\n[sampler]\nburn_in = 20000\n',
            '[model]\ntype = "s3"\nI = 2\nJ = 2\nK = 2\ntau_a = 1\ntau_b = 1\ntau_e = 1\nA = "optimal"\nB = 0.5\n',
            '[model]\ntype = "s2"\nI = 5\nJ = 2\nsigma2_a = 1\nsigma2_e = 1\n[sweep]\nI = [2, 3]\nJ = {start = 1, stop = 20000, num = 20000}\n',
            '[model]\ntype = "s2"\nI = 5\nJ = 2\nsigma2_a = 1\nsigma2_e = 1\n[analysis]\nformula = "guess"\n',
            '[model]\ntype = "s2"\nI = 5\nJ = 2\nsigma2_a = 1\nsigma2_e = 1\n[sampler]\niterations = 10\nburn_in = 5\nthinning = 10\n',
            '[model]\ntype = "s2"\nI = 5\nJ = 2\nsigma2_a = 1\nsigma2_e = 1\n[sweep]\nI = {start = 2, stop = 3, num = 5}\n',
            '[model\n',
        ):
            with self.subTest(text=text):
                with self.assertRaises(ConfigError):
                    self.load(text).build_model()
        with self.assertRaises(ConfigError):
            load_config('/nonexistent/run.toml')

    def test_invalid_values_are_config_errors(self):
        config = self.load('[model]\ntype = "s2"\nI = 1\nJ = 2\nsigma2_a = 1\nsigma2_e = 1\n')
        with self.assertRaises(ConfigError):
            config.build_model()

    def test_three_level_precisions(self):
        config = self.load(
            '[model]\ntype = "s3"\nI = 2\nJ = 2\nK = 2\ntau_a = 1\ntau_b = 2\ntau_e = 1\nA = "optimal"\n'
        )
        spec = config.build_model()
        np.testing.assert_allclose(rescaled_precisions(spec), (1.0, 2.0, 1.0), atol=1e-12)
        np.testing.assert_allclose((spec.A, spec.B, spec.C), (2 / 5, 1 / 3, 1 / 5), atol=1e-12)

    def test_shipped_configs(self):
        expected = {
            'scalar_two_level.toml': 0.8,
            'diagonal_component_wise.toml': 1 / 3,
            'mixed_effects_hand.toml': 1 / 3,
            'partial_sweep.toml': 0.8,
            'three_level_optimal.toml': 0.0,
            'linear_model_two_level.toml': 0.75,
        }
        paths = sorted(Path(__file__).parent.joinpath('configs').glob('*.toml'))
        self.assertGreaterEqual(len(paths), len(expected))
        for path in paths:
            with self.subTest(config=path.name):
                report = analyze(load_config(path).build_model())
                if path.name in expected:
                    assert_close(self, report.analytic_rate, expected[path.name], 1e-10, 'analytic rate')

    def test_sweep_points(self):
        config = self.load(
            '[model]\ntype = "s2"\nI = 5\nJ = 2\nsigma2_a = 1\nsigma2_e = 1\n'
            '[sweep]\nA = {start = 0, stop = 1, num = 3}\nJ = [2, 4]\n'
        )
        self.assertEqual(config.sweep.size, 6)
        points = list(config.sweep.points())
        self.assertEqual(points[0], (0, {'A': 0.0, 'J': 2}))
        self.assertEqual(points[-1], (5, {'A': 1.0, 'J': 4}))
        self.assertEqual(config.build_model(points[3][1]).J, 4)

        config = self.load(
            '[model]\ntype = "s2"\nI = 5\nJ = 2\nsigma2_a = 1\nsigma2_e = 1\n'
            '[sweep]\nI = {start = 2, stop = 10, num = 5}\n'
        )
        self.assertEqual([point['I'] for _, point in config.sweep.points()], [2, 4, 6, 8, 10])
        self.assertTrue(all(type(point['I']) is int for _, point in config.sweep.points()))
        self.assertEqual(config.build_model({'I': 8}).I, 8)


class TestCLI(unittest.TestCase):
    SCALAR = (
        '[model]\ntype = "s2m"\nI = 50\nJ = 4\nSigma_a = 1.0\nSigma_e = 1.0\n'
        '[sampler]\niterations = 600\nburn_in = 100\nseed = 11\n'
    )

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, text: str, name: str = 'run.toml') -> str:
        path = self.dir / name
        path.write_text(text)
        return str(path)

    def test_analyze(self):
        code, out = run_cli('analyze', '--config', self.config(self.SCALAR))
        self.assertEqual(code, 0)
        report = json.loads(out)
        assert_close(self, report['analytic'], 0.8, 1e-10, 'analytic')
        assert_close(self, report['oracle'], 0.8, 1e-10, 'oracle')
        self.assertEqual(report['recommendation']['kind'], 'centered')
        self.assertEqual(list(report), ['model', 'analytic', 'oracle', 'abs_diff', 'empirical', 'recommendation', 'notes'])

    def test_analyze_three_level_optimum(self):
        path = self.config(
            '[model]\ntype = "s3"\nI = 2\nJ = 2\nK = 2\ntau_a = 1\ntau_b = 2\ntau_e = 1\nA = "optimal"\n'
        )
        code, out = run_cli('analyze', '--config', path)
        self.assertEqual(code, 0)
        self.assertLessEqual(json.loads(out)['analytic'], 1e-10)

    def test_config_error_exit_code(self):
        code, _ = run_cli('analyze', '--config', self.config('[model]\ntype = "s2m"\nI = 50\n'))
        self.assertEqual(code, 2)
        code, _ = run_cli('sample', '--config', self.config(self.SCALAR))
        self.assertEqual(code, 2)

    def test_sample_is_reproducible(self):
        path = self.config(self.SCALAR)
        out = self.dir / 'out'
        outputs = []
        for _ in range(2):
            code, _ = run_cli('sample', '--config', path, '--out', str(out))
            self.assertEqual(code, 0)
            outputs.append({
                name: (out / name).read_bytes()
                for name in ('trace.csv', 'trace.csv.json', 'data.csv', 'sample.json')
            })
        self.assertEqual(outputs[0], outputs[1])
        self.assertEqual(len(outputs[0]['trace.csv'].splitlines()), 1 + 500)
        sidecar = json.loads(outputs[0]['trace.csv.json'])
        self.assertEqual(sidecar['data'], str(out / 'data.csv'))
        self.assertTrue(sidecar['data_synthesized'])

        code, _ = run_cli('sample', '--config', path, '--out', str(self.dir / 'other'), '--seed', '12')
        self.assertEqual(code, 0)
        self.assertNotEqual((self.dir / 'other' / 'trace.csv').read_bytes(), outputs[0]['trace.csv'])

    def test_verify(self):
        path = self.config(self.SCALAR.replace('iterations = 600', 'iterations = 20000'))
        code, out = run_cli('verify', '--config', path)
        self.assertEqual(code, 0)
        report = json.loads(out)
        self.assertTrue(report['structural_passed'])

        code, _ = run_cli('sample', '--config', path, '--out', str(self.dir / 'out'))
        self.assertEqual(code, 0)
        trace = self.dir / 'out' / 'trace.csv'
        code, _ = run_cli('verify', '--config', path, '--trace', str(trace))
        self.assertEqual(code, 0)
        lines = trace.read_text().splitlines()
        trace.write_text('\n'.join(lines[:3] + ['garbage']) + '\n')
        code, _ = run_cli('verify', '--config', path, '--trace', str(trace))
        self.assertEqual(code, 3)

    def test_verify_random_linear_model(self):
        path = self.config(
            '[model]\ntype = "lm"\nn = 12\np1 = 2\np2 = 3\ndesign = "random"\n'
            'tau_1 = 1.0\ntau_2 = 1.0\ntau_e = 1.0\n'
            '[sampler]\niterations = 3000\nburn_in = 100\n'
        )
        code, out = run_cli('verify', '--config', path)
        self.assertEqual(code, 0)
        condition = json.loads(out)['structural']['design_condition']
        self.assertFalse(condition['passed'])
        self.assertTrue(condition['informational'])
        self.assertGreater(condition['value'], 1e-6)

    def test_optimize(self):
        code, out = run_cli('optimize', '--config', self.config(self.SCALAR))
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(out)['recommendation']['kind'], 'centered')

        three_level = '[model]\ntype = "s3"\nI = 2\nJ = 2\nK = 2\ntau_a = 1\ntau_b = 2\ntau_e = 1\n'
        code, out = run_cli('optimize', '--config', self.config(three_level))
        self.assertEqual(code, 0)
        optima = json.loads(out)['optimal_ABC']
        np.testing.assert_allclose(optima['exact'], (2 / 5, 1 / 3, 1 / 5), atol=1e-12)
        np.testing.assert_allclose(optima['printed'], (2 / 11, 1 / 3, 3 / 11), atol=1e-12)

        code, out = run_cli(
            'optimize', '--config', self.config(three_level + '[analysis]\nformula = "printed"\n')
        )
        self.assertEqual(code, 0)
        np.testing.assert_allclose(json.loads(out)['recommendation']['ABC'], (2 / 11, 1 / 3, 3 / 11), atol=1e-12)

        degenerate = (
            '[model]\ntype = "s3"\nI = 2\nJ = 2\nK = 2\n'
            f'tau_a = {2 / 9!r}\ntau_b = 1.0\ntau_e = 2.0\n'
        )
        code, out = run_cli('optimize', '--config', self.config(degenerate))
        self.assertEqual(code, 0)
        self.assertIsNone(json.loads(out)['optimal_ABC']['printed'])
        code, _ = run_cli(
            'optimize', '--config', self.config(degenerate + '[analysis]\nformula = "printed"\n')
        )
        self.assertEqual(code, 3)

    def test_sweep(self):
        path = self.config(
            '[model]\ntype = "s2"\nI = 20\nJ = 4\nsigma2_a = 1.0\nsigma2_e = 1.0\n'
            '[sweep]\nA = {start = 0.0, stop = 1.0, num = 11}\n'
        )
        code, out = run_cli('sweep', '--config', path, '--threads', '1')
        self.assertEqual(code, 0)
        rows = list(csv.DictReader(io.StringIO(out)))
        self.assertEqual(len(rows), 11)
        self.assertEqual([int(row['index']) for row in rows], list(range(11)))
        rates = [float(row['analytic']) for row in rows]
        self.assertEqual(int(np.argmin(rates)), 8)
        self.assertLessEqual(min(rates), 1e-12)
        for row in rows:
            assert_close(self, float(row['oracle']), float(row['analytic']), 1e-10, 'oracle')

        code, parallel = run_cli('sweep', '--config', path, '--threads', '3')
        self.assertEqual(code, 0)
        self.assertEqual(parallel, out)

    def test_empty_sweep(self):
        path = self.config(
            '[model]\ntype = "s2"\nI = 20\nJ = 4\nsigma2_a = 1.0\nsigma2_e = 1.0\n[sweep]\nA = []\n'
        )
        code, out = run_cli('sweep', '--config', path, '--out', str(self.dir / 'out'))
        self.assertEqual(code, 0)
        self.assertEqual((self.dir / 'out' / 'sweep.csv').read_text(), 'A,index,analytic,oracle\n')


class TestStreams(unittest.TestCase):
    def test_streams(self):
        first = stream_rng(1, Stream.CHAIN).standard_normal(5)
        np.testing.assert_array_equal(first, stream_rng(1, Stream.CHAIN).standard_normal(5))
        self.assertFalse(np.array_equal(first, stream_rng(1, Stream.DATA).standard_normal(5)))
        self.assertFalse(np.array_equal(first, stream_rng(2, Stream.CHAIN).standard_normal(5)))
        self.assertFalse(np.array_equal(
            stream_rng(1, Stream.SWEEP, 0, 1).standard_normal(5),
            stream_rng(1, Stream.SWEEP, 1, 1).standard_normal(5),
        ))


if __name__ == '__main__':
    unittest.main()
