'''
Test module for haze synthesis and the corpus builder
'''
import json
import tempfile
import unittest
import sys
from pathlib import Path

import numpy as np

sys.path.append("..")     # to run tests from tests directory directly

from src.hazegen import ConstantTransmission, DepthTransmission, HazeParams, HazeLevel
from src.hazegen import synthesize, invert, default_levels, load_levels
from src.hazegen import build_corpus, read_manifest, DatasetManifest, ManifestRecord, MANIFEST_NAME
from src.hazegen import TransmissionRangeError, HazeParamsError, ImageRangeError
from src.hazegen import EmptyLevelsError, EmptyClearDirError, ManifestError, DuplicateStemError
import src.imageio as imageio


class TestSynthesis(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(11)
        self.clear = self.rng.uniform(size=(8, 6, 3))

    def test_scattering_model(self):
        params = HazeParams(0.8, ConstantTransmission(0.5))
        hazy = synthesize(self.clear, params)
        np.testing.assert_allclose(hazy, 0.5 * self.clear + 0.4)
        self.assertEqual(params.A, (0.8, 0.8, 0.8))

    def test_limits(self):
        np.testing.assert_array_equal(synthesize(self.clear, HazeParams(0.9, ConstantTransmission(1.0))),
                                      self.clear)
        colored = HazeParams((0.2, 0.5, 0.9), ConstantTransmission(0.05))
        hazy = synthesize(np.zeros((2, 2, 3)), colored)
        np.testing.assert_allclose(hazy[0, 0], [0.19, 0.475, 0.855])

    def test_round_trip(self):
        for t in (0.05, 0.3, 0.77, 1.0):
            for a in (0.0, 0.85, (1.0, 0.9, 0.6)):
                params = HazeParams(a, ConstantTransmission(t))
                recovered = invert(synthesize(self.clear, params), params)
                self.assertLess(np.abs(recovered - self.clear).max(), 1e-6)

    def test_round_trip_with_depth(self):
        depth = self.rng.uniform(0, 20, size=(8, 6))
        params = HazeParams(0.9, DepthTransmission(0.1, depth))
        hazy = synthesize(self.clear, params)
        np.testing.assert_allclose(params.transmission_map(8, 6), np.exp(-0.1 * depth))
        self.assertLess(np.abs(invert(hazy, params) - self.clear).max(), 1e-6)

    def test_dtype_preserved(self):
        clear = self.clear.astype(np.float32)
        self.assertEqual(synthesize(clear, HazeParams(1.0, ConstantTransmission(0.5))).dtype, np.float32)

    def test_round_trip_single_precision(self):
        clear = self.clear.astype(np.float32)
        for t in (0.05, 0.2, 0.6, 1.0):
            params = HazeParams((0.95, 0.8, 1.0), ConstantTransmission(t))
            recovered = invert(synthesize(clear, params), params)
            self.assertEqual(recovered.dtype, np.float32)
            error = np.abs(recovered.astype(np.float64) - clear.astype(np.float64)).max()
            self.assertLess(error, 1e-6)

    def test_thicker_haze_moves_toward_airlight(self):
        clear = self.rng.uniform(0.0, 0.5, size=(5, 7, 3))
        a_values = np.array([0.9, 0.85, 1.0])
        previous = clear
        for t in (0.9, 0.7, 0.5, 0.3, 0.1, 0.05):
            hazy = synthesize(clear, HazeParams(tuple(a_values), ConstantTransmission(t)))
            self.assertTrue((hazy > previous).all())
            self.assertTrue((hazy <= a_values).all())
            previous = hazy

    def test_output_stays_in_unit_range(self):
        for _ in range(20):
            clear = self.rng.uniform(size=(4, 4, 3))
            params = HazeParams(tuple(self.rng.uniform(size=3)), ConstantTransmission(self.rng.uniform(0.01, 1.0)))
            hazy = synthesize(clear, params)
            self.assertGreaterEqual(hazy.min(), 0.0)
            self.assertLessEqual(hazy.max(), 1.0)

    def test_errors(self):
        self.assertRaises(TransmissionRangeError, ConstantTransmission, 0.0)
        self.assertRaises(TransmissionRangeError, ConstantTransmission, 1.5)
        self.assertRaises(HazeParamsError, HazeParams, 1.2, ConstantTransmission(0.5))
        self.assertRaises(HazeParamsError, DepthTransmission, -0.1, np.ones((2, 2)))
        self.assertRaises(HazeParamsError, DepthTransmission, 0.1, -np.ones((2, 2)))
        self.assertRaises(ImageRangeError, synthesize, self.clear + 1.0,
                          HazeParams(1.0, ConstantTransmission(0.5)))
        params = HazeParams(0.8, DepthTransmission(0.1, np.ones((3, 3))))
        self.assertRaises(HazeParamsError, synthesize, self.clear, params)
        thin = HazeParams(0.8, ConstantTransmission(0.01))
        self.assertRaises(TransmissionRangeError, invert, self.clear, thin)


class TestLevels(unittest.TestCase):
    def test_default_levels(self):
        levels = default_levels()
        self.assertEqual(len(levels), 35)
        self.assertEqual(len(set(levels)), 35)
        params = levels[0].params()
        self.assertEqual(params.A, (0.8, 0.8, 0.8))
        self.assertAlmostEqual(params.transmission.t, np.exp(-0.4))
        self.assertIsInstance(levels[0].params(np.ones((2, 2))).transmission, DepthTransmission)

    def test_level_needs_one_mode(self):
        self.assertRaises(HazeParamsError, HazeLevel, 0.8)
        self.assertRaises(HazeParamsError, HazeLevel, 0.8, t=0.5, beta=0.1)

    def test_load_levels(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'levels.json'
            path.write_text(json.dumps([{'A': 0.9, 't': 0.6}, {'A': [1, 0.9, 0.8], 'beta': 0.1}]))
            levels = load_levels(path)
            self.assertEqual(levels[0], HazeLevel(A=0.9, t=0.6))
            self.assertEqual(levels[1].A, (1.0, 0.9, 0.8))

            path.write_text('{"A": 1}')
            self.assertRaises(HazeParamsError, load_levels, path)
            path.write_text('[{"t": 0.5}]')
            self.assertRaises(HazeParamsError, load_levels, path)
            path.write_text('not json')
            self.assertRaises(HazeParamsError, load_levels, path)


class TestCorpus(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.clear_dir = self.root / 'clear'
        self.clear_dir.mkdir()
        rng = np.random.default_rng(2)
        for name in ('b', 'a', 'c', 'd'):
            imageio.write(rng.uniform(size=(8, 8, 3)), self.clear_dir / f'{name}.png')

    def tearDown(self):
        self.tmp.cleanup()

    def test_default_corpus(self):
        out = self.root / 'hazy'
        manifest = build_corpus(self.clear_dir, out)
        self.assertEqual(len(manifest), 35 * 4)
        self.assertTrue((out / MANIFEST_NAME).is_file())
        self.assertEqual(len(list(out.glob('*.png'))), 140)
        self.assertEqual(manifest.records[0].hazy_path, 'a_L00.png')
        self.assertEqual(manifest.records[0].clear_path, '../clear/a.png')
        self.assertEqual(manifest.records[35].hazy_path, 'b_L00.png')
        self.assertEqual(manifest.records[0].t_mode, 'const')

        loaded = read_manifest(out / MANIFEST_NAME)
        self.assertEqual(loaded.records, manifest.records)
        _, hazy_path, clear_path = next(loaded.pairs())
        self.assertTrue(hazy_path.is_file() and clear_path.is_file())

    def test_split_and_determinism(self):
        levels = [HazeLevel(0.9, t=0.5), HazeLevel(1.0, beta=0.1)]
        first = build_corpus(self.clear_dir, self.root / 'one', levels, seed=4, test_fraction=0.5, threads=2)
        second = build_corpus(self.clear_dir, self.root / 'two', levels, seed=4, test_fraction=0.5)
        self.assertEqual(first.records, second.records)
        self.assertEqual(len(first.split('test')), 4)
        self.assertEqual(len(first.split('train')), 4)
        test_clear = {r.clear_path for r in first.split('test')}
        train_clear = {r.clear_path for r in first.split('train')}
        self.assertFalse(test_clear & train_clear)
        self.assertEqual(len(read_manifest(self.root / 'one' / MANIFEST_NAME, 'test')), 4)
        self.assertEqual((self.root / 'one' / 'a_L00.png').read_bytes(),
                         (self.root / 'two' / 'a_L00.png').read_bytes())

    def test_depth_maps(self):
        depth_dir = self.root / 'depth'
        depth_dir.mkdir()
        np.save(depth_dir / 'a.npy', np.full((8, 8), 5.0))
        manifest = build_corpus(self.clear_dir, self.root / 'hazy', [HazeLevel(0.9, beta=0.2)],
                                depth_dir=depth_dir, image_format='ppm')
        by_clear = {Path(r.clear_path).stem: r for r in manifest}
        self.assertEqual(by_clear['a'].t_mode, 'depth')
        self.assertEqual(by_clear['a'].beta, 0.2)
        self.assertIsNone(by_clear['a'].t)
        self.assertEqual(by_clear['b'].t_mode, 'const')
        self.assertTrue(by_clear['a'].hazy_path.endswith('.ppm'))

    def test_corpus_errors(self):
        self.assertRaises(EmptyLevelsError, build_corpus, self.clear_dir, self.root / 'x', [])
        empty = self.root / 'empty'
        empty.mkdir()
        self.assertRaises(EmptyClearDirError, build_corpus, empty, self.root / 'x')
        self.assertRaises(HazeParamsError, build_corpus, self.clear_dir, self.root / 'x',
                          test_fraction=1.0)

    def test_duplicate_stems(self):
        imageio.write(np.zeros((8, 8, 3)), self.clear_dir / 'a.ppm')
        out = self.root / 'hazy'
        with self.assertRaises(DuplicateStemError) as context:
            build_corpus(self.clear_dir, out, [HazeLevel(0.9, t=0.5)])
        self.assertIn('a.png', str(context.exception))
        self.assertIn('a.ppm', str(context.exception))
        self.assertFalse(out.exists())

    def test_manifest_errors(self):
        record = ManifestRecord('h.png', 'c.png', [1.0, 1.0, 1.0], 'const', t=0.5)
        self.assertRaises(ManifestError, DatasetManifest, [record, record])
        path = self.root / MANIFEST_NAME
        path.write_text('{"hazy_path": "h.png"}\n')
        self.assertRaises(ManifestError, read_manifest, path)
        path.write_text(record.to_json().replace('const', 'fog') + '\n')
        self.assertRaises(ManifestError, read_manifest, path)
        path.write_text(record.to_json() + '\n\n')
        self.assertEqual(len(read_manifest(path)), 1)


if __name__ == '__main__':
    unittest.main()
