import csv
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from ReconCore.coil import back_project, build_model, forward_multicoil, synth_sensitivities
from ReconCore.dcomp import DcWeights
from ReconCore.exceptions import DataError, DivergenceError, NonFiniteError, NumericalError
from ReconCore.nn import Architecture, init_params
from ReconCore.nufft import make_plan
from ReconCore.r2d2 import (
    CONTINUE, STOP, TRACE_HEADER, ModuleSeries, TrainingConfig, check_telescoping, dataset_loss, initial_state,
    magnitude_residual, module_input, normalization_factor, r2d2_infer, residual, stage_batch,
    stopping_check, train_series, train_stage, write_trace_csv,
)
from ReconCore.simulate import load_manifest, load_problem, make_phantom, simulate_acquisition
from ReconCore.storage import file_hash
from ReconCore.trajectory import cartesian_grid

from .utils import random_image, small_model, tiny_dataset


def make_series(n_modules=2, residual_mode='magnitude', zero_head=True, arch='unet'):
    channels = 3 if residual_mode == 'magnitude' else 4
    architecture = Architecture(arch=arch, in_channels=channels, base_channels=4, depth=2, n_blocks=1)
    modules = [init_params(architecture, seed=k, zero_head=zero_head) for k in range(n_modules)]
    return ModuleSeries(modules, residual_mode)


class ResidualTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(4)
        self.model = small_model(side=16, n_spokes=6, n_coils=2)
        self.x_b = back_project(self.model, forward_multicoil(self.model, random_image(self.rng, 16)))

    def test_zero_estimate_leaves_back_projection(self):
        zero = np.zeros((16, 16), dtype=complex)
        assert_allclose(residual(self.x_b, self.model, zero), self.x_b, rtol=0, atol=0)
        assert_allclose(magnitude_residual(self.x_b, self.model, zero), np.abs(self.x_b))

    def test_noiseless_truth_has_zero_residual(self):
        x = random_image(self.rng, 16)
        x_b = back_project(self.model, forward_multicoil(self.model, x))
        r = residual(x_b, self.model, x)
        self.assertLess(np.linalg.norm(r), 1e-12 * np.linalg.norm(x_b))

    def test_fully_sampled_cartesian_residual_vanishes(self):
        plan = make_plan(cartesian_grid(16), 16)
        model = build_model(synth_sensitivities(1, 16), plan, DcWeights.uniform(plan.n_samples))
        x = random_image(self.rng, 16)
        x_b = back_project(model, forward_multicoil(model, x))
        self.assertLess(np.linalg.norm(residual(x_b, model, x)), 1e-10 * np.linalg.norm(x_b))

    def test_residual_is_affine_in_estimate(self):
        x1, x2 = random_image(self.rng, 16), random_image(self.rng, 16)
        zero = np.zeros((16, 16), dtype=complex)
        lhs = residual(self.x_b, self.model, x1 + x2)
        rhs = residual(self.x_b, self.model, x1) + residual(self.x_b, self.model, x2) - residual(self.x_b, self.model, zero)
        self.assertLess(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs), 1e-12)

    def test_magnitude_residual_is_real(self):
        r = magnitude_residual(self.x_b, self.model, random_image(self.rng, 16))
        self.assertTrue(np.isrealobj(r))
        self.assertEqual(r.shape, (16, 16))

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            residual(self.x_b, self.model, np.zeros((8, 8)))
        with self.assertRaises(ValueError):
            magnitude_residual(self.x_b, self.model, np.zeros((8, 8)))


class NormalizationTests(SimpleTestCase):

    def test_first_iteration_uses_back_projection(self):
        x_b = np.full((4, 4), 2.0 + 0j)
        x = np.full((4, 4), 5.0 + 0j)
        self.assertEqual(normalization_factor(x_b, x, 1), 2.0)
        self.assertEqual(normalization_factor(x_b, x, 2), 5.0)

    def test_zero_estimate_falls_back(self):
        x_b = np.full((4, 4), 1j)
        self.assertEqual(normalization_factor(x_b, np.zeros((4, 4)), 3), 1.0)
        with self.assertRaises(ValueError):
            normalization_factor(np.zeros((4, 4)), np.zeros((4, 4)), 1)

    def test_module_input_layouts(self):
        x_b = np.full((4, 4), 1 + 2j)
        x = np.full((4, 4), 3 - 1j)
        r_mag = np.full((4, 4), 0.5)
        first = module_input(x_b, x, r_mag, 1, 'magnitude')
        self.assertEqual(first.shape, (3, 4, 4))
        self.assertFalse(np.any(first[0]))
        assert_allclose(first[1:, 0, 0], [1, 2])
        later = module_input(x_b, x, r_mag, 2, 'magnitude')
        assert_allclose(later[:, 0, 0], [3, -1, 0.5])
        r_cplx = np.full((4, 4), 0.5 - 0.25j)
        self.assertEqual(module_input(x_b, x, r_cplx, 1, 'complex').shape, (4, 4, 4))
        assert_allclose(module_input(x_b, x, r_cplx, 2, 'complex')[:, 0, 0], [3, -1, 0.5, -0.25])
        with self.assertRaises(ValueError):
            module_input(x_b, x, r_mag, 2, 'phase')


class InferenceTests(SimpleTestCase):

    def setUp(self):
        self.model = small_model(side=16, n_spokes=6, n_coils=2)
        self.phantom = make_phantom(16, n_ellipses=4, seed=2)
        self.problem = simulate_acquisition(self.phantom, self.model, seed=1)

    def test_zero_modules_keep_full_residual(self):
        result = r2d2_infer(make_series(3), self.problem.x_b, self.model)
        self.assertEqual([row.iteration for row in result.trace], [0, 1, 2, 3])
        for row in result.trace:
            self.assertAlmostEqual(row.rdr, 1.0, places=12)
        self.assertIsNone(result.trace[0].alpha)
        self.assertAlmostEqual(result.trace[1].alpha, float(np.mean(np.abs(self.problem.x_b))))
        self.assertFalse(np.any(result.x))

    def test_telescoping_identity(self):
        for mode in ('magnitude', 'complex'):
            series = make_series(3, mode, zero_head=False)
            result = r2d2_infer(series, self.problem.x_b, self.model)
            self.assertEqual(len(result.updates), 3)
            self.assertLessEqual(check_telescoping(result.x, result.updates), 1e-12 * np.max(np.abs(result.x)))

    def test_telescoping_violation_detected(self):
        updates = [np.ones((2, 2)), np.ones((2, 2))]
        with self.assertRaises(NumericalError):
            check_telescoping(np.full((2, 2), 2.5), updates)

    def test_scale_equivariance(self):
        series = make_series(2, zero_head=False, arch='uwdsr')
        base = r2d2_infer(series, self.problem.x_b, self.model)
        scaled = r2d2_infer(series, 1e3 * self.problem.x_b, self.model)
        assert_allclose(scaled.x, 1e3 * base.x, rtol=1e-9, atol=1e-9 * np.max(np.abs(scaled.x)))
        for a, b in zip(base.trace, scaled.trace):
            self.assertAlmostEqual(a.rdr, b.rdr, places=9)

    def test_max_iters_zero_returns_back_projection(self):
        result = r2d2_infer(make_series(2), self.problem.x_b, self.model, max_iters=0)
        self.assertIs(result.x, self.problem.x_b)
        self.assertEqual(len(result.trace), 1)

    def test_max_iters_bounds(self):
        with self.assertRaises(ValueError):
            r2d2_infer(make_series(2), self.problem.x_b, self.model, max_iters=3)
        with self.assertRaises(ValueError):
            r2d2_infer(make_series(2), self.problem.x_b, self.model, max_iters=-1)

    def test_side_must_match_depth(self):
        model = small_model(side=18, n_spokes=4, n_coils=1)
        with self.assertRaises(ValueError):
            r2d2_infer(make_series(1), np.ones((18, 18), dtype=complex), model)

    def test_overflow_raises_non_finite(self):
        series = make_series(1)
        series.modules[0].tensors['head.b'][0] = 1e300
        with self.assertRaises(NonFiniteError) as ctx:
            r2d2_infer(series, 1e10 * self.problem.x_b, self.model)
        self.assertIn('1', ctx.exception.name)

    def test_metrics_in_trace_with_ground_truth(self):
        result = r2d2_infer(make_series(2), self.problem.x_b, self.model, gt=self.phantom.image)
        self.assertIsNotNone(result.trace[0].psnr)
        self.assertIsNotNone(result.trace[-1].ssim)
        self.assertIn(result.best_iteration, (0, 1, 2))

    def test_trace_csv(self):
        result = r2d2_infer(make_series(2), self.problem.x_b, self.model, gt=self.phantom.image)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_trace_csv(Path(tmp) / 'trace.csv', result)
            with open(path, newline='') as fh:
                rows = list(csv.reader(fh))
        self.assertEqual(tuple(rows[0]), TRACE_HEADER)
        self.assertEqual(len(rows), 4)
        self.assertEqual(rows[1][4], '')
        self.assertEqual(float(rows[1][3]), 1.0)


class SeriesTests(SimpleTestCase):

    def test_save_and_load(self):
        series = make_series(2, 'complex', zero_head=False)
        series.dataset_hash = 'abc'
        with tempfile.TemporaryDirectory() as tmp:
            series.save(tmp)
            self.assertTrue((Path(tmp) / 'stage_02.npz').exists())
            loaded = ModuleSeries.load(tmp)
        self.assertEqual(loaded.n_stages, 2)
        self.assertEqual(loaded.residual_mode, 'complex')
        self.assertEqual(loaded.dataset_hash, 'abc')
        for a, b in zip(series.modules, loaded.modules):
            for name in a.tensors:
                self.assertEqual(a.tensors[name].tobytes(), b.tensors[name].tobytes())

    def test_missing_manifest(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(DataError):
                ModuleSeries.load(tmp)

    def test_consistency_checks(self):
        with self.assertRaises(ValueError):
            ModuleSeries([])
        magnitude = make_series(1).modules
        with self.assertRaises(ValueError):
            ModuleSeries(magnitude, 'complex')
        mixed = make_series(1).modules + make_series(1, arch='uwdsr').modules
        with self.assertRaises(ValueError):
            ModuleSeries(mixed)


class StoppingRuleTests(SimpleTestCase):

    def test_improving_series_continues(self):
        self.assertEqual(stopping_check([(20.0, 0.6), (21.0, 0.65), (22.0, 0.7)]), CONTINUE)

    def test_two_stalled_stages_stop(self):
        history = [(25.0, 0.80), (25.02, 0.8005), (25.04, 0.8008)]
        self.assertEqual(stopping_check(history), STOP)

    def test_single_stall_continues(self):
        self.assertEqual(stopping_check([(25.0, 0.8), (25.01, 0.8)]), CONTINUE)

    def test_improvement_in_either_metric_resets(self):
        history = [(25.0, 0.8), (25.0, 0.8), (25.0, 0.81), (25.0, 0.81)]
        self.assertEqual(stopping_check(history), CONTINUE)
        self.assertEqual(stopping_check(history + [(25.0, 0.81)]), STOP)

    def test_needs_history(self):
        with self.assertRaises(ValueError):
            stopping_check([])


class TrainingTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.dataset = self.root / 'data'
        tiny_dataset(self.dataset)
        self.architecture = Architecture(arch='unet', base_channels=4, depth=2)
        self.config = TrainingConfig(epochs=1, batch_size=2, seed=3, residual_mode='magnitude', workers=1)

    def tearDown(self):
        self.tmp.cleanup()

    def problems(self, split='train'):
        manifest = load_manifest(self.dataset)
        return [load_problem(self.dataset, r) for r in manifest['items'] if r['split'] == split]

    def test_train_and_resume(self):
        out = self.root / 'series'
        series = train_series(self.dataset, self.architecture, 2, self.config, out)
        self.assertEqual(series.n_stages, 2)
        self.assertEqual(series.dataset_hash, file_hash(self.dataset / 'manifest.json'))
        self.assertEqual(series.architecture.in_channels, 3)
        self.assertTrue((out / 'stages.csv').exists())
        self.assertTrue((out / 'training_log.json').exists())
        self.assertIsNotNone(series.stages[-1]['val_psnr'])
        first_stage = file_hash(out / 'stage_01.npz')

        resumed = train_series(self.dataset, self.architecture, 3, self.config, out, resume=True)
        self.assertEqual(resumed.n_stages, 3)
        self.assertEqual(file_hash(out / 'stage_01.npz'), first_stage)

    def test_training_is_deterministic(self):
        a = train_series(self.dataset, self.architecture, 1, self.config, self.root / 'a')
        b = train_series(self.dataset, self.architecture, 1, self.config, self.root / 'b')
        for name, tensor in a.modules[0].tensors.items():
            self.assertEqual(tensor.tobytes(), b.modules[0].tensors[name].tobytes())

    def test_resume_rejects_other_dataset(self):
        out = self.root / 'series'
        train_series(self.dataset, self.architecture, 1, self.config, out)
        other = self.root / 'other'
        tiny_dataset(other, seed=8)
        with self.assertRaises(DataError):
            train_series(other, self.architecture, 2, self.config, out, resume=True)

    def test_first_stage_targets_and_zero_head_loss(self):
        problems = self.problems()
        states = [initial_state(p, 'magnitude') for p in problems]
        inputs, targets, alphas = stage_batch(problems, states, 1, 'magnitude')
        self.assertEqual(inputs.shape, (3, 3, 16, 16))
        for k, problem in enumerate(problems):
            self.assertAlmostEqual(alphas[k], float(np.mean(np.abs(problem.x_b))))
            assert_allclose(targets[k, 0] * alphas[k], problem.phantom.image.real)
        params = init_params(replace_channels(self.architecture, 3))
        expected = float(np.mean([np.abs(t).sum() for t in targets]))
        self.assertLess(abs(dataset_loss(params, inputs, targets) - expected) / expected, 1e-12)

    def test_divergence_saves_last_good(self):
        params = init_params(replace_channels(self.architecture, 3))
        inputs = np.zeros((2, 3, 16, 16))
        targets = np.full((2, 2, 16, 16), np.nan)
        with self.assertRaises(DivergenceError) as ctx:
            train_stage(params, inputs, targets, self.config, 1, self.root)
        self.assertEqual(ctx.exception.stage, 1)
        self.assertTrue(Path(ctx.exception.checkpoint).exists())

    def test_needs_training_items(self):
        empty = self.root / 'val_only'
        tiny_dataset(empty, train_count=0, val_count=2)
        with self.assertRaises(DataError):
            train_series(empty, self.architecture, 1, self.config, self.root / 'series')


def replace_channels(architecture, channels):
    return Architecture(**{**architecture.to_dict(), 'in_channels': channels})
