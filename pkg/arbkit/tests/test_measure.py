import numpy as np
from django.test import SimpleTestCase

from arbkit.arbitrage import DEFAULT_THRESHOLDS, StepDecomposition
from arbkit.exceptions import ContractViolation, ShapeMismatch
from arbkit.market_models import build_model
from arbkit.measure import (
    Approach, DensityProcess, QDecomposition, exponential_density, girsanov, inverse_density_profile,
    jump_to_zero_probability, mvt_under_q, reweight, smd_under_q, stopping_times, weighted_products,
)
from arbkit.paths import GridProcess, TimeGrid


def density(rows, **kwargs):
    rows = np.asarray(rows, dtype=float)
    grid = TimeGrid.uniform(1.0, rows.shape[1] - 1)
    return DensityProcess(Z=GridProcess(grid, rows), **kwargs)


def unit_deflator(grid):
    return GridProcess(grid, np.ones((1, grid.times.size, 1)))


class DensityProcessTests(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(ContractViolation):
            density([[1.0, -0.1, 0.0]])
        with self.assertRaises(ContractViolation):
            density([[0.9, 1.0, 1.0]])
        with self.assertRaises(ContractViolation):
            density([[1.0, 0.0, 0.5]])
        with self.assertRaises(ShapeMismatch):
            density([[1.0, 1.0]], exact_zero_time=np.array([1.0, 2.0]))

    def test_unit_density(self):
        z = DensityProcess.unit(TimeGrid.uniform(1.0, 4), 3, dim=2)
        np.testing.assert_array_equal(z.terminal, np.ones(3))
        self.assertEqual(z.cov_rate.shape, (3, 5, 2))

    def test_restriction(self):
        z = density([[1.0, 2.0], [1.0, 0.0]], exact_zero_time=np.array([np.inf, 0.5]))
        sub = z.restricted(np.array([False, True]))
        self.assertEqual(sub.n_paths, 1)
        np.testing.assert_array_equal(sub.exact_zero_time, [0.5])


class StoppingTimeTests(SimpleTestCase):
    def setUp(self):
        self.z = density([
            [1.0, 0.8, 0.5, 0.0],
            [1.0, 0.05, 0.0, 0.0],
            [1.0, 1.2, 0.9, 1.1],
        ])

    def test_hitting_times_and_approach(self):
        report = stopping_times(self.z, ladder=(2, 4), eps_jump=0.1)
        np.testing.assert_allclose(report.tau[:2], [1.0, 2 / 3])
        self.assertTrue(np.isinf(report.tau[2]))
        self.assertEqual(list(report.approach), [Approach.JUMP.value, Approach.CONTINUOUS.value, Approach.NONE.value])
        np.testing.assert_allclose(report.tau_n[0], [1.0, 1 / 3, 1.0])
        np.testing.assert_allclose(report.tau_n[1], [1.0, 1 / 3, 1.0])

    def test_survival_ladder(self):
        report = stopping_times(self.z, ladder=(2, 4), eps_jump=0.1)
        rows = report.survival_ladder()
        # the jump is not announced by tau_2; paths that never hit zero count too
        self.assertAlmostEqual(rows[0]['estimate'], 2 / 3)
        self.assertTrue(rows[0]['resolved'])
        self.assertEqual(report.counts(), {'CONTINUOUS': 1, 'JUMP': 1, 'NONE': 1})

    def test_exact_zero_times_take_precedence(self):
        z = density([[1.0, 1.5, 0.0]], exact_zero_time=np.array([0.7]), left_limit=np.array([1.6]))
        report = stopping_times(z, ladder=(2,), eps_jump=0.1)
        self.assertEqual(report.tau[0], 0.7)
        self.assertEqual(report.z_before_zero[0], 1.6)
        self.assertEqual(report.tau_n[0, 0], 0.7)

    def test_jump_probability(self):
        estimate = jump_to_zero_probability(stopping_times(self.z, ladder=(2,), eps_jump=0.1))
        self.assertAlmostEqual(estimate.estimate, 1 / 3)
        self.assertEqual(estimate.trials, 3)
        self.assertLessEqual(estimate.lower, estimate.estimate)

    def test_empty_ladder(self):
        with self.assertRaises(ContractViolation):
            stopping_times(self.z, ladder=())


class ReweightTests(SimpleTestCase):
    def test_null_paths_are_not_read(self):
        z_t = np.array([0.0, 2.0])
        product = weighted_products(np.array([np.inf, 3.0]), z_t)
        np.testing.assert_array_equal(product, [0.0, 6.0])

    def test_weighted_mean(self):
        result = reweight(np.array([2.0, 2.0, 2.0, 2.0]), np.array([0.0, 2.0, 1.0, 1.0]))
        self.assertEqual(result.estimate, 2.0)
        self.assertLess(result.effective_sample_size, 4.0)
        self.assertTrue(result.within(2.0))

    def test_non_finite_payoff_on_weighted_path(self):
        with self.assertRaises(ContractViolation):
            weighted_products(np.array([np.nan]), np.array([1.0]))


class GirsanovTests(SimpleTestCase):
    grid = TimeGrid.uniform(1.0, 64)

    def test_exponential_density_shifts_the_price_of_risk(self):
        model = build_model({'kind': 'drifted_bm'})
        bundle = model.simulate(self.grid, 50, 1)
        w, loading = model.driving_noise(bundle)
        z = exponential_density(w, loading, (0.3,), self.grid)
        q = girsanov(model.decompose(bundle), z, bundle)
        np.testing.assert_allclose(q.lambda_bar[..., 0], 0.3)
        np.testing.assert_array_equal(q.nu_bar, 0.0)

    def test_estimated_mode_recovers_the_shift(self):
        model = build_model({'kind': 'drifted_bm'})
        bundle = model.simulate(self.grid, 2000, 2)
        w, loading = model.driving_noise(bundle)
        z = exponential_density(w, loading, (0.3,), self.grid)
        q = girsanov(model.decompose(bundle), z, bundle, mode='estimated')
        self.assertFalse(q.variance_warning)
        self.assertAlmostEqual(float(q.lambda_bar.mean()), 0.3, delta=0.05)

    def test_estimated_mode_warns_on_few_paths(self):
        model = build_model({'kind': 'drifted_bm'})
        bundle = model.simulate(self.grid, 10, 2)
        w, loading = model.driving_noise(bundle)
        z = exponential_density(w, loading, (0.3,), self.grid)
        self.assertTrue(girsanov(model.decompose(bundle), z, bundle, mode='estimated').variance_warning)

    def test_analytic_mode_needs_a_covariation(self):
        model = build_model({'kind': 'drifted_bm'})
        bundle = model.simulate(self.grid, 3, 2)
        z = DensityProcess(Z=GridProcess(self.grid, np.ones((3, 65))))
        with self.assertRaises(ContractViolation):
            girsanov(model.decompose(bundle), z, bundle)

    def test_stopped_bm_under_its_own_price(self):
        model = build_model({'kind': 'stopped_bm'})
        bundle = model.simulate(self.grid, 200, 3)
        z = model.density_process(bundle)
        q = girsanov(model.decompose(bundle), z, bundle)
        s = bundle.values[:, :-1, 0]
        np.testing.assert_allclose(q.lambda_bar[..., 0][q.active], 1.0 / s[q.active])
        report, bound = mvt_under_q(q, z, DEFAULT_THRESHOLDS)
        self.assertTrue(bound.holds)
        self.assertTrue(np.all(np.isfinite(report.terminal)))

    def test_bound_is_checked_at_every_grid_time(self):
        # K^Q = [0.5, 0.5] against 2K^P = [0, 4]: only the first step breaks the bound
        grid = TimeGrid.uniform(1.0, 2)
        base = StepDecomposition.build(grid, np.array([[[0.0], [2.0]]]), np.ones((1, 2, 1, 1)))
        lam_q = np.array([[[1.0], [0.0]]])
        q = QDecomposition(
            base=base, theta=np.zeros((1, 2, 1)), lambda_bar=lam_q, nu_bar=np.zeros((1, 2, 1)), a_bar=lam_q,
            m_bar_increments=np.zeros((1, 2, 1)), active=np.ones((1, 2), dtype=bool), mode='analytic',
        )
        report, bound = mvt_under_q(q, DensityProcess.unit(grid, 1))
        np.testing.assert_allclose(report.K_hat.values[0], [0.0, 0.5, 0.5])
        self.assertLess(bound.lhs[0], bound.rhs[0])
        self.assertFalse(bound.holds)
        self.assertEqual(bound.summary()['violations'], 1)

    def test_density_killed_at_the_jump(self):
        model = build_model({'kind': 'exp_default', 'params': {'rate': 2.0}})
        bundle = model.simulate(self.grid, 100, 4)
        z = model.density_process(bundle)
        q = girsanov(model.decompose(bundle), z, bundle, jump_drift=model.jump_drift(bundle))
        s = bundle.values[:, :-1, 0]
        np.testing.assert_allclose(q.nu_bar[..., 0][q.active], 2.0 * s[q.active])

    def test_bounded_density_freezes_on_exit(self):
        model = build_model({'kind': 'drifted_bm'})
        bundle = model.simulate(self.grid, 300, 5)
        w, loading = model.driving_noise(bundle)
        z = exponential_density(w, loading, (1.5,), self.grid, bounds=(0.5, 2.0)).values
        out = (z <= 0.5) | (z >= 2.0)
        for row, flags in zip(z, out):
            if flags.any():
                first = int(np.argmax(flags))
                self.assertTrue(np.all(row[first:] == row[first]))
        self.assertTrue(np.all(z > 0))

    def test_bounds_must_bracket_one(self):
        model = build_model({'kind': 'drifted_bm'})
        bundle = model.simulate(self.grid, 2, 5)
        w, loading = model.driving_noise(bundle)
        with self.assertRaises(ContractViolation):
            exponential_density(w, loading, (0.3,), self.grid, bounds=(1.5, 2.0))


class DiagnosticTests(SimpleTestCase):
    grid = TimeGrid.uniform(1.0, 128)

    def test_identity_change_passes(self):
        model = build_model({'kind': 'drifted_bm'})
        bundle = model.simulate(self.grid, 2000, 6)
        z = DensityProcess.unit(self.grid, bundle.n_paths)
        self.assertTrue(smd_under_q(unit_deflator(self.grid), z, bundle).passed)

    def test_jump_to_zero_fails(self):
        model = build_model({'kind': 'exp_default'})
        bundle = model.simulate(self.grid, 2000, 7)
        result = smd_under_q(unit_deflator(self.grid), model.density_process(bundle), bundle)
        self.assertFalse(result.passed)
        self.assertEqual(result.blocks, 16)

    def test_inverse_density_profile_decreases(self):
        model = build_model({'kind': 'exp_default'})
        bundle = model.simulate(self.grid, 4000, 8)
        profile = inverse_density_profile(model.density_process(bundle))
        self.assertTrue(profile.non_increasing)
        self.assertAlmostEqual(profile.values[0], 1.0, delta=4 * profile.stderr[0] + 1e-12)
        self.assertAlmostEqual(profile.values[-1], np.exp(-1.0), delta=4 * profile.stderr[-1] + 1e-12)

    def test_deflator_must_be_positive(self):
        bundle = build_model({'kind': 'drifted_bm'}).simulate(self.grid, 2, 6)
        z = DensityProcess.unit(self.grid, 2)
        with self.assertRaises(ContractViolation):
            smd_under_q(GridProcess(self.grid, np.zeros((1, 129, 1))), z, bundle)
