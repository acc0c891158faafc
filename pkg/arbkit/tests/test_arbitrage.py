import numpy as np
from django.test import SimpleTestCase

from arbkit.arbitrage import (
    Certificate, CertificateKind, Condition, StepDecomposition, Thresholds, Verdict, VerdictState, check_na,
    check_na1, check_nip, check_nsa, mean_variance_tradeoff, nflvr_summary, verify_certificate,
)
from arbkit.exceptions import ContractViolation, ShapeMismatch
from arbkit.market_models import build_model
from arbkit.numerics import symmetrize
from arbkit.paths import GridProcess, PathBundle, TimeGrid


def bundle_of(rows):
    values = np.asarray(rows, dtype=float)[:, :, None]
    return PathBundle(grid=TimeGrid.uniform(1.0, values.shape[1] - 1), values=values)


def classify_p(kind, params=None, n_paths=200, steps=64, seed=1):
    model = build_model({'kind': kind, 'params': params or {}})
    bundle = model.simulate(TimeGrid.uniform(1.0, steps), n_paths, seed)
    decomp = model.decompose(bundle)
    nip = check_nip(decomp, bundle)
    tradeoff = mean_variance_tradeoff(decomp)
    return nip, check_nsa(tradeoff, nip), check_na1(tradeoff, nip)


class ThresholdTests(SimpleTestCase):
    def test_defaults(self):
        data = Thresholds().as_dict()
        self.assertEqual(data['ladder'][0], 2)
        self.assertEqual(data['v_ladder'], [1.0, 0.5, 0.25, 0.125])
        self.assertIsNone(data['eps_jump'])

    def test_non_positive_threshold(self):
        with self.assertRaises(ContractViolation):
            Thresholds(tol_nu=-1.0)
        with self.assertRaises(ContractViolation):
            Thresholds(rho_div=0.0)


class TradeoffTests(SimpleTestCase):
    def setUp(self):
        self.coarse = StepDecomposition.build(TimeGrid.uniform(1.0, 2), np.ones((1, 2, 1)), np.ones((1, 2, 1, 1)))

    def test_cumulative_tradeoff(self):
        report = mean_variance_tradeoff(self.coarse)
        np.testing.assert_allclose(report.K_hat.values[0, :, 0], [0.0, 0.5, 1.0])
        self.assertFalse(report.refined)
        self.assertEqual(report.sigma_finite_fraction(), 0.0)

    def test_tradeoff_ignores_the_price_unit(self):
        rng = np.random.default_rng(17)
        grid = TimeGrid.uniform(1.0, 8)
        a = rng.standard_normal((3, 8, 2))
        root = rng.standard_normal((3, 8, 2, 2))
        c = symmetrize(root @ np.swapaxes(root, -1, -2) + 0.1 * np.eye(2))
        base = mean_variance_tradeoff(StepDecomposition.build(grid, a, c)).K_hat.values
        for alpha in (1e-3, 0.5, 40.0):
            scaled = mean_variance_tradeoff(StepDecomposition.build(grid, alpha * a, alpha ** 2 * c)).K_hat.values
            np.testing.assert_allclose(scaled, base, rtol=1e-10, atol=1e-12)

    def test_refinement_flags_an_exploding_cell(self):
        a = np.ones((1, 4, 1))
        a[0, 0, 0] = 10.0
        fine = StepDecomposition.build(TimeGrid.uniform(1.0, 4), a, np.ones((1, 4, 1, 1)))
        report = mean_variance_tradeoff(self.coarse, fine=fine, thresholds=Thresholds(k_max=1.0))
        self.assertTrue(report.divergence[0])
        self.assertEqual(report.sigma_estimate[0], 0.0)
        self.assertEqual(report.divergence_fraction(), 1.0)

    def test_refinement_must_be_coupled(self):
        fine = StepDecomposition.build(TimeGrid.uniform(1.0, 3), np.ones((1, 3, 1)), np.ones((1, 3, 1, 1)))
        with self.assertRaises(ShapeMismatch):
            mean_variance_tradeoff(self.coarse, fine=fine)

    def test_misaligned_characteristics(self):
        with self.assertRaises(ShapeMismatch):
            StepDecomposition.build(TimeGrid.uniform(1.0, 2), np.ones((1, 2, 2)), np.ones((1, 2, 1, 1)))


class CertificateTests(SimpleTestCase):
    def test_increasing_profit_needs_monotone_gains(self):
        bundle = bundle_of([[0.0, 1.0, 2.0], [0.0, 2.0, 1.0]])
        cert = Certificate(CertificateKind.INCREASING_PROFIT, strategy=GridProcess.constant(bundle.grid, 1, [1.0]))
        result = verify_certificate(cert, bundle)
        self.assertFalse(result.verified)
        self.assertEqual(result.reason, 'gains decrease on some path')

    def test_null_paths_are_ignored(self):
        bundle = bundle_of([[0.0, 1.0, 2.0], [0.0, 2.0, 1.0]])
        cert = Certificate(CertificateKind.INCREASING_PROFIT, strategy=GridProcess.constant(bundle.grid, 1, [1.0]))
        result = verify_certificate(cert, bundle, weights=np.array([1.0, 0.0]))
        self.assertTrue(result.verified)
        self.assertEqual(result.stats['n_support'], 1)

    def test_arbitrage_opportunity_respects_its_bound(self):
        bundle = bundle_of([[0.0, 1.0, 2.0], [0.0, -1.0, -0.5]])
        cert = Certificate(
            CertificateKind.ARBITRAGE_OPPORTUNITY, strategy=GridProcess.constant(bundle.grid, 1, [1.0]),
            admissibility_bound=0.0,
        )
        self.assertFalse(verify_certificate(cert, bundle).verified)

    def test_first_kind_family(self):
        bundle = bundle_of([[0.0, 1.0, 2.0], [0.0, -1.0, -0.5]])
        zero = GridProcess.constant(bundle.grid, 1, [0.0])
        cert = Certificate(
            CertificateKind.FIRST_KIND, family={1.0: zero, 0.5: zero}, claim=np.array([0.5, 0.5]),
        )
        result = verify_certificate(cert, bundle)
        self.assertTrue(result.verified)
        self.assertEqual(result.stats['v_ladder'], [1.0, 0.5])

        nip = Verdict(Condition.NIP, VerdictState.INCONCLUSIVE, {}, {})
        tradeoff = mean_variance_tradeoff(
            StepDecomposition.build(bundle.grid, np.zeros((2, 2, 1)), np.ones((2, 2, 1, 1)))
        )
        na1 = check_na1(tradeoff, nip, first_kind=result)
        self.assertEqual(na1.state, VerdictState.FAILS_WITH_CERTIFICATE)
        self.assertIs(na1.certificate, result)

    def test_first_kind_without_claim(self):
        bundle = bundle_of([[0.0, 1.0]])
        with self.assertRaises(ContractViolation):
            verify_certificate(Certificate(CertificateKind.FIRST_KIND), bundle)

    def test_failing_verdict_needs_a_certificate(self):
        with self.assertRaises(ContractViolation):
            Verdict(Condition.NIP, VerdictState.FAILS_WITH_CERTIFICATE, {}, {})
        with self.assertRaises(ContractViolation):
            Verdict(
                Condition.NIP, VerdictState.FAILS_WITH_CERTIFICATE, {}, {},
                Certificate(CertificateKind.INCREASING_PROFIT),
            )


class ClassifierTests(SimpleTestCase):
    def test_kernel_drift_is_an_increasing_profit(self):
        nip, nsa, na1 = classify_p('kernel_drift', {'rate': 2.0})
        self.assertEqual(nip.state, VerdictState.FAILS_WITH_CERTIFICATE)
        stats = nip.certificate.stats
        self.assertLess(abs(stats['min_terminal'] - 4.0), 1e-12)
        self.assertLess(abs(stats['max_terminal'] - 4.0), 1e-12)
        self.assertEqual(stats['monotone_fraction'], 1.0)
        self.assertAlmostEqual(stats['expected_gain'], 4.0)
        for verdict in (nsa, na1):
            self.assertEqual(verdict.state, VerdictState.FAILS_WITH_CERTIFICATE)
            self.assertEqual(verdict.evidence['inherited_from'], 'NIP')

    def test_drifted_brownian_motion_holds(self):
        for verdict in classify_p('drifted_bm', {'mu': [0.5]}):
            self.assertEqual(verdict.state, VerdictState.HOLDS_NUMERICALLY, verdict.condition)

    def test_na_is_decided_by_certificates_only(self):
        na = check_na([])
        self.assertEqual(na.state, VerdictState.INCONCLUSIVE)
        nip, _, na1 = classify_p('kernel_drift')
        failing = check_na([None, nip.certificate])
        self.assertEqual(failing.state, VerdictState.FAILS_WITH_CERTIFICATE)
        self.assertEqual(failing.evidence['witness'], 'INCREASING_PROFIT')
        self.assertEqual(nflvr_summary(na1, failing)['state'], 'FAILS_WITH_CERTIFICATE')

    def test_nflvr_needs_both_parts(self):
        _, _, na1 = classify_p('drifted_bm')
        summary = nflvr_summary(na1, check_na([]))
        self.assertEqual(summary['state'], 'INCONCLUSIVE')
        self.assertEqual(summary['components'], {'NA1': 'HOLDS_NUMERICALLY', 'NA': 'INCONCLUSIVE'})
