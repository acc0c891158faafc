import numpy as np
from django.test import SimpleTestCase

from arbkit.paths import TimeGrid
from arbkit.scenarios import (
    SCENARIOS, Check, ScenarioReport, freeze_index, scenario_bessel, scenario_compensator, scenario_equivalent,
    scenario_exp_default, scenario_girsanov_shift, scenario_preservation_matrix, survival_delta, survival_value,
)


class CheckTests(SimpleTestCase):
    def test_relations(self):
        self.assertTrue(Check('x', 'within', 1.0, 0.1, '', 1.05).passed)
        self.assertFalse(Check('x', 'within', 1.0, 0.01, '', 1.05).passed)
        self.assertTrue(Check('x', 'at_least', 0.25, 0.0, '', 0.3).passed)
        self.assertFalse(Check('x', 'at_most', 1e-12, 0.0, '', 1e-9).passed)
        self.assertTrue(Check('x', 'equals', 'HOLDS_NUMERICALLY', 0.0, '', 'HOLDS_NUMERICALLY').passed)

    def test_report_passes_iff_every_check_passes(self):
        report = ScenarioReport('demo', 7, TimeGrid.uniform(2.0, 8), 10)
        report.within('a', 1.0, 1.0, 0.0, 'exact')
        self.assertTrue(report.passed)
        report.equals('b', False, True, 'flag')
        self.assertFalse(report.passed)

        data = report.to_dict()
        self.assertEqual(data['grid'], {'T': 2.0, 'N': 8})
        self.assertEqual([e['quantity'] for e in data['expected']], ['a', 'b'])
        self.assertEqual([o['passed'] for o in data['observed']], [True, False])
        self.assertFalse(data['pass'])


class BesselHelperTests(SimpleTestCase):
    def test_survival_value(self):
        self.assertAlmostEqual(float(survival_value(0.0, 1.0, 1.0)), 2 * 0.8413447460685429 - 1, places=12)
        self.assertEqual(float(survival_value(1.0, 0.5, 1.0)), 1.0)

    def test_delta_is_the_derivative(self):
        x, h = 0.7, 1e-6
        numeric = (survival_value(0.2, x + h, 1.0) - survival_value(0.2, x - h, 1.0)) / (2 * h)
        self.assertAlmostEqual(float(survival_delta(0.2, x, 1.0)), float(numeric), places=6)

    def test_hedge_stops_before_the_horizon(self):
        grid = TimeGrid.uniform(1.0, 64)
        k = freeze_index(grid)
        self.assertLess(grid.times[k], 1.0)
        self.assertGreaterEqual(grid.times[k], 1.0 - 2 * grid.dt.max() - 1e-12)


class ScenarioTests(SimpleTestCase):
    grid = TimeGrid.uniform(1.0, 64)

    def test_catalog(self):
        self.assertEqual(
            sorted(SCENARIOS), ['bessel', 'compensator', 'equivalent', 'exp-default', 'girsanov', 'preservation'],
        )

    def test_exp_default(self):
        report = scenario_exp_default(self.grid, 2000, 20240101)
        failed = [c.quantity for c in report.checks if not c.passed]
        self.assertEqual(failed, [])
        self.assertIn('change_of_measure', report.details)

    def test_compensator(self):
        report = scenario_compensator(self.grid, 2000, 20240102)
        observed = {c.quantity: c for c in report.checks}
        self.assertTrue(observed['certificate_verified'].passed)
        self.assertTrue(observed['gain_deviation'].passed)
        self.assertTrue(observed['nip_under_q'].passed)
        self.assertLess(abs(observed['weighted_gain'].value - 1.0), 0.2)

    def test_girsanov_shift(self):
        report = scenario_girsanov_shift(self.grid, 4000, 20240103)
        self.assertTrue(report.passed, [c for c in report.checks if not c.passed])
        self.assertTrue(np.isclose(report.details['mean_shift']['analytic'], 0.3))

    def test_bessel(self):
        report = scenario_bessel(TimeGrid.uniform(1.0, 256), 2000, 20240104)
        self.assertEqual([c.quantity for c in report.checks if not c.passed], [])
        observed = {c.quantity: c for c in report.checks}
        self.assertLess(observed['tracking_error'].value, observed['tracking_error'].target)
        self.assertEqual(report.details['certificate']['measure'], 'Q')

    def test_preservation_matrix(self):
        report = scenario_preservation_matrix(self.grid, 500, 20240105)
        self.assertEqual([c.quantity for c in report.checks if not c.passed], [])
        rows = {row['row']: row for row in report.details['rows']}
        self.assertEqual(rows['stopped_bm']['na1_under_q'], 'HOLDS_NUMERICALLY')
        self.assertEqual(rows['exp_default']['na1_under_q'], 'FAILS_WITH_CERTIFICATE')
        self.assertEqual(rows['unit']['states_under_p'], rows['unit']['states_under_q'])

    def test_equivalent(self):
        report = scenario_equivalent(self.grid, 300, 20240106)
        self.assertTrue(report.passed, [c.quantity for c in report.checks if not c.passed])
        rows = report.details['rows']
        self.assertEqual(sorted(rows), ['drifted_bm', 'kernel_drift', 'stopped_bm'])
        for row in rows.values():
            self.assertEqual(row['under_p'], row['under_q'])
        self.assertEqual(rows['kernel_drift']['under_q']['NIP'], 'FAILS_WITH_CERTIFICATE')
