import numpy as np
from django.test import SimpleTestCase
from scipy.stats import norm

from arbkit.exceptions import DensityAbsent, InvalidModelSpec
from arbkit.market_models import ModelSpec, alive_mask, build_model, characteristics, density_process, simulate
from arbkit.paths import TimeGrid


class ModelSpecTests(SimpleTestCase):
    def test_defaults(self):
        spec = ModelSpec('drifted_bm')
        self.assertEqual(spec.params, {'d': 1, 'mu': [0.0], 'sigma': [1.0], 's0': [0.0]})
        self.assertEqual(ModelSpec('stopped_bm').params, {'s0': 1.0})
        self.assertEqual(ModelSpec('kernel_drift').dim, 2)

    def test_dimension_follows_mu(self):
        spec = ModelSpec('drifted_bm', {'mu': [0.1, 0.2]})
        self.assertEqual(spec.dim, 2)
        self.assertEqual(spec.params['sigma'], [1.0, 0.0, 0.0, 1.0])

    def test_string_parameters_are_converted(self):
        self.assertEqual(ModelSpec('exp_default', {'rate': '2.5'}).params['rate'], 2.5)

    def test_invalid_specs(self):
        with self.assertRaises(InvalidModelSpec):
            ModelSpec('garch')
        with self.assertRaises(InvalidModelSpec):
            ModelSpec('stopped_bm', {'x0': 1.0})
        with self.assertRaises(InvalidModelSpec):
            ModelSpec('exp_default', {'rate': 0.0})
        with self.assertRaises(InvalidModelSpec):
            ModelSpec('drifted_bm', {'d': 2, 'sigma': [1.0]})


class SimulationTests(SimpleTestCase):
    grid = TimeGrid.uniform(1.0, 32)

    def test_threads_do_not_change_paths(self):
        model = build_model({'kind': 'stopped_bm'})
        one = model.simulate(self.grid, 7, 123, threads=1)
        many = model.simulate(self.grid, 7, 123, threads=3)
        np.testing.assert_array_equal(one.values, many.values)

    def test_chunks_reproduce_the_full_run(self):
        model = build_model({'kind': 'drifted_bm', 'params': {'mu': [0.5]}})
        full = model.simulate(self.grid, 6, 5)
        tail = model.simulate(self.grid, 3, 5, path_offset=3)
        np.testing.assert_array_equal(full.values[3:], tail.values)

    def test_module_level_simulate(self):
        bundle = simulate(ModelSpec('bes3'), self.grid, 3, 1)
        self.assertEqual(bundle.model, 'bes3')
        self.assertTrue(np.all(bundle.values > 0))

    def test_stopped_paths_stay_at_zero(self):
        bundle = build_model({'kind': 'stopped_bm'}).simulate(self.grid, 200, 9)
        s = bundle.values[:, :, 0]
        alive = alive_mask(bundle)
        self.assertTrue(np.all(s >= 0))
        self.assertTrue(np.all(s[~alive] == 0.0))
        # once dead, always dead
        self.assertTrue(np.all(np.diff(alive.astype(int), axis=1) <= 0))

    def test_absorption_probability(self):
        grid = TimeGrid.uniform(1.0, 256)
        bundle = build_model({'kind': 'stopped_bm'}).simulate(grid, 4000, 20240001)
        p = float(np.mean(bundle.values[:, -1, 0] == 0.0))
        target = 2 * norm.cdf(-1.0)
        self.assertLess(abs(p - target), 4 * np.sqrt(target * (1 - target) / 4000))

    def test_bessel_inverse_moment(self):
        bundle = build_model({'kind': 'bes3'}).simulate(TimeGrid.uniform(1.0, 4), 20000, 20240002)
        inverse = 1.0 / bundle.values[:, -1, 0]
        stderr = inverse.std(ddof=1) / np.sqrt(inverse.size)
        self.assertLess(abs(inverse.mean() - (2 * norm.cdf(1.0) - 1)), 4 * stderr)

    def test_martingale_models_keep_their_mean(self):
        grid = TimeGrid.uniform(1.0, 16)
        for kind in ('stopped_bm', 'exp_default'):
            s_t = build_model({'kind': kind}).simulate(grid, 10000, 20240003).values[:, -1, 0]
            stderr = s_t.std(ddof=1) / np.sqrt(s_t.size)
            self.assertLess(abs(s_t.mean() - 1.0), 4 * stderr, kind)

    def test_exp_default_paths(self):
        bundle = build_model({'kind': 'exp_default'}).simulate(self.grid, 50, 4)
        xi = bundle.aux['xi']
        times = self.grid.times
        expected = np.where(times[None, :] < xi[:, None], np.exp(times)[None, :], 0.0)
        np.testing.assert_allclose(bundle.values[:, :, 0], expected)

    def test_compensated_jump_is_centred(self):
        bundle = build_model({'kind': 'compensator_model'}).simulate(TimeGrid.uniform(1.0, 4), 4000, 8)
        s_t = bundle.values[:, -1, 0]
        self.assertLess(abs(s_t.mean()), 4 * s_t.std(ddof=1) / np.sqrt(s_t.size))
        np.testing.assert_allclose(bundle.aux['B'][:, -1], np.minimum(1.0, bundle.aux['xi']))


class RefinementTests(SimpleTestCase):
    grid = TimeGrid.uniform(1.0, 16)

    def test_refined_paths_pass_through_coarse_points(self):
        for kind in ('drifted_bm', 'bes3', 'kernel_drift', 'exp_default', 'compensator_model'):
            model = build_model({'kind': kind})
            coarse = model.simulate(self.grid, 5, 3)
            fine = model.refine(coarse, 2)
            self.assertEqual(fine.level, 1)
            self.assertEqual(fine.grid.n_steps, 32)
            np.testing.assert_allclose(fine.values[:, ::2], coarse.values, err_msg=kind)

    def test_refinement_is_reproducible(self):
        model = build_model({'kind': 'drifted_bm'})
        coarse = model.simulate(self.grid, 4, 3)
        np.testing.assert_array_equal(model.refine(coarse, 4).values, model.refine(coarse, 4).values)

    def test_stopped_paths_are_absorbed_no_later_on_the_fine_grid(self):
        model = build_model({'kind': 'stopped_bm'})
        coarse = model.simulate(self.grid, 100, 12)
        fine = model.refine(coarse, 2)
        self.assertTrue(np.all(fine.aux['absorbed_at'] <= coarse.aux['absorbed_at']))
        np.testing.assert_allclose(fine.aux['W'][:, ::2], coarse.aux['W'])


class CharacteristicsTests(SimpleTestCase):
    grid = TimeGrid.uniform(1.0, 8)

    def test_kernel_drift_has_kernel_part(self):
        model = build_model({'kind': 'kernel_drift', 'params': {'rate': 2.0}})
        decomp = model.decompose(model.simulate(self.grid, 3, 0))
        np.testing.assert_allclose(decomp.nu[..., 1], 2.0)
        np.testing.assert_allclose(decomp.nu[..., 0], 0.0)

    def test_kernel_drift_gains_have_no_martingale_part(self):
        model = build_model({'kind': 'kernel_drift'})
        bundle = model.simulate(self.grid, 200, 6)
        decomp = model.decompose(bundle)
        martingale = np.diff(bundle.values, axis=1) - decomp.a * decomp.db[None, :, None]
        part = (decomp.nu * martingale).sum(axis=(1, 2))
        self.assertLess(float(part.var()), 1e-20)
        np.testing.assert_allclose(bundle.values[:, :, 1], np.broadcast_to(self.grid.times, (200, 9)))

    def test_drifted_bm_price_of_risk(self):
        model = build_model({'kind': 'drifted_bm', 'params': {'mu': [0.5], 'sigma': [2.0]}})
        decomp = model.decompose(model.simulate(self.grid, 2, 0))
        np.testing.assert_allclose(decomp.lam, 0.125)
        np.testing.assert_allclose(decomp.nu, 0.0)

    def test_bessel_drift(self):
        model = build_model({'kind': 'bes3'})
        bundle = model.simulate(self.grid, 3, 0)
        decomp = model.decompose(bundle)
        np.testing.assert_allclose(decomp.a[..., 0], 1.0 / bundle.values[:, :-1, 0])

    def test_jump_models_publish_their_compensator(self):
        chars = characteristics(ModelSpec('exp_default'))
        self.assertIsNotNone(chars.jump_spec)
        model = build_model({'kind': 'exp_default'})
        bundle = model.simulate(self.grid, 10, 1)
        drift = model.jump_drift(bundle)[..., 0]
        alive = alive_mask(bundle)[:, :-1]
        np.testing.assert_allclose(drift, np.where(alive, -bundle.values[:, :-1, 0], 0.0))

    def test_continuous_models_have_no_jump_drift(self):
        model = build_model({'kind': 'drifted_bm'})
        self.assertIsNone(model.characteristics().jump_spec)
        np.testing.assert_array_equal(model.jump_drift(model.simulate(self.grid, 2, 0)), 0.0)


class DensityTests(SimpleTestCase):
    grid = TimeGrid.uniform(1.0, 16)

    def test_stopped_bm_density_is_the_price(self):
        spec = ModelSpec('stopped_bm', {'s0': 2.0})
        bundle = simulate(spec, self.grid, 20, 2)
        z = density_process(spec, bundle)
        np.testing.assert_allclose(z.values, bundle.values[:, :, 0] / 2.0)

    def test_exp_default_density_knows_its_jump(self):
        model = build_model({'kind': 'exp_default'})
        bundle = model.simulate(self.grid, 200, 3)
        z = model.density_process(bundle)
        xi = bundle.aux['xi']
        hit = xi <= 1.0
        self.assertTrue(z.kills_at_jump)
        np.testing.assert_array_equal(np.isfinite(z.exact_zero_time), hit)
        np.testing.assert_allclose(z.left_limit[hit], np.exp(xi[hit]))

    def test_models_without_density(self):
        model = build_model({'kind': 'drifted_bm'})
        with self.assertRaises(DensityAbsent):
            model.density_process(model.simulate(self.grid, 1, 0))
        model = build_model({'kind': 'exp_default'})
        with self.assertRaises(DensityAbsent):
            model.driving_noise(model.simulate(self.grid, 1, 0))
