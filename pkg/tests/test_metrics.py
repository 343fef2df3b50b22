'''
Test module for metrics and evaluation reports
'''
import json
import math
import tempfile
import unittest
import sys
from pathlib import Path

import numpy as np
import pandas as pd

sys.path.append("..")     # to run tests from tests directory directly

from src.metrics import psnr, ssim, luma, time_dehaze, aggregate, report_frame, write_report
from src.metrics import EvalRecord, reference_frame, reference_time, REFERENCE_METHODS
from src.metrics import WindowTooLargeError, UnknownSSIMModeError
from src.tensor import ShapeError


class TestMetrics(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(5)
        self.image = self.rng.uniform(size=(16, 16, 3))

    def test_psnr(self):
        a = np.full((8, 8, 3), 0.5)
        self.assertAlmostEqual(psnr(a, a + 0.1), 20.0, delta=1e-3)
        self.assertEqual(psnr(self.image, self.image), math.inf)
        self.assertAlmostEqual(psnr(np.zeros((2, 2, 3)), np.ones((2, 2, 3))), 0.0)
        self.assertRaises(ShapeError, psnr, a, np.zeros((8, 4, 3)))

    def test_psnr_averages_all_entries(self):
        a = np.zeros((4, 4, 3))
        b = a.copy()
        b[..., 0] = 0.3
        self.assertAlmostEqual(psnr(a, b), 10 * math.log10(1 / 0.03), places=9)

    def test_psnr_uniform_difference(self):
        self.assertAlmostEqual(psnr(self.image, self.image + 0.05), 26.0206, delta=1e-4)

    def test_psnr_falls_with_noise(self):
        noise = self.rng.uniform(-1.0, 1.0, size=self.image.shape)
        scores = [psnr(self.image, self.image + amplitude * noise)
                  for amplitude in (0.01, 0.02, 0.05, 0.1, 0.15, 0.2)]
        self.assertTrue(all(earlier > later for earlier, later in zip(scores, scores[1:])))

    def test_psnr_ignores_pixel_order(self):
        other = np.clip(self.image + self.rng.normal(0.0, 0.1, size=self.image.shape), 0.0, 1.0)
        order = self.rng.permutation(16 * 16)

        def shuffle(image):
            return image.reshape(-1, 3)[order].reshape(16, 16, 3)

        self.assertAlmostEqual(psnr(shuffle(self.image), shuffle(other)), psnr(self.image, other), places=10)

    def test_ssim_bounded(self):
        for _ in range(5):
            a, b = self.rng.uniform(size=(2, 16, 16, 3))
            for mode in ('luma', 'channels'):
                self.assertLessEqual(abs(ssim(a, b, mode)), 1.0)
        self.assertLessEqual(abs(ssim(self.image, 1.0 - self.image)), 1.0)

    def test_ssim_identical(self):
        self.assertAlmostEqual(ssim(self.image, self.image), 1.0, delta=1e-9)
        self.assertAlmostEqual(ssim(self.image, self.image, 'channels'), 1.0, delta=1e-9)

    def test_ssim_constant_images(self):
        expected = (2 * 0.2 * 0.4 + 1e-4) / (0.2 ** 2 + 0.4 ** 2 + 1e-4)
        a, b = np.full((16, 16, 3), 0.2), np.full((16, 16, 3), 0.4)
        self.assertAlmostEqual(ssim(a, b), expected, delta=1e-6)
        self.assertAlmostEqual(ssim(a, b, 'channels'), expected, delta=1e-6)

    def test_ssim_degrades_with_noise(self):
        noisy = np.clip(self.image + self.rng.normal(0, 0.1, self.image.shape), 0, 1)
        score = ssim(self.image, noisy)
        self.assertLess(score, 1.0)
        self.assertGreater(score, -1.0)
        self.assertAlmostEqual(score, ssim(noisy, self.image), places=12)

    def test_ssim_errors(self):
        self.assertRaises(WindowTooLargeError, ssim, np.zeros((10, 16, 3)), np.zeros((10, 16, 3)))
        self.assertRaises(UnknownSSIMModeError, ssim, self.image, self.image, 'gray')
        self.assertRaises(ShapeError, ssim, self.image, self.image[:12])

    def test_luma(self):
        image = np.zeros((1, 1, 3))
        image[0, 0] = [1.0, 0.5, 0.0]
        self.assertAlmostEqual(luma(image)[0, 0], 0.299 + 0.2935)

    def test_time_dehaze(self):
        out, seconds = time_dehaze(lambda x: x * 2, np.ones((2, 2, 3)))
        np.testing.assert_array_equal(out, np.full((2, 2, 3), 2.0))
        self.assertGreaterEqual(seconds, 0.0)


class TestReports(unittest.TestCase):
    def setUp(self):
        self.records = [EvalRecord('a.png', 20.0, 0.8, 0.1),
                        EvalRecord('b.png', math.inf, 1.0, 0.3),
                        EvalRecord('c.png', 30.0, 0.9, 0.2)]

    def test_aggregate(self):
        summary = aggregate(self.records)
        self.assertEqual(summary['count'], 3)
        self.assertEqual(summary['psnr_mean'], 25.0)
        self.assertEqual(summary['psnr_inf_count'], 1)
        self.assertAlmostEqual(summary['ssim_mean'], 0.9)
        self.assertAlmostEqual(summary['time_mean'], 0.2)
        self.assertEqual(aggregate(self.records[1:2])['psnr_mean'], math.inf)

    def test_report(self):
        frame = report_frame(self.records)
        self.assertEqual(len(frame), 4)
        self.assertEqual(list(frame.columns), ['image', 'psnr_db', 'ssim', 'time_s'])
        self.assertEqual(frame.iloc[1]['psnr_db'], 'inf')
        self.assertEqual(frame.iloc[-1]['image'], 'mean (psnr excludes 1 inf)')
        self.assertEqual(report_frame(self.records[:1]).iloc[-1]['image'], 'mean')

        with tempfile.TemporaryDirectory() as tmp:
            csv_path, json_path = Path(tmp) / 'r.csv', Path(tmp) / 'r.json'
            write_report(self.records, csv_path, json_path)
            loaded = pd.read_csv(csv_path)
            self.assertEqual(len(loaded), 4)
            self.assertEqual(str(loaded.iloc[1]['psnr_db']), 'inf')
            rows = json.loads(json_path.read_text())
            self.assertEqual(rows[0]['image'], 'a.png')
            self.assertEqual(rows[-1]['psnr_db'], 25.0)

    def test_reference_tables(self):
        frame = reference_frame('HSTS')
        self.assertEqual(list(frame.index), list(REFERENCE_METHODS))
        self.assertEqual(frame.loc['LCA-Net', 'psnr'], 24.734)
        self.assertEqual(reference_time(), 0.3546)
        self.assertEqual(reference_frame('SOTS-indoor').loc['LCA-Net', 'psnr'], 18.23)
        self.assertEqual(reference_frame('SOTS-outdoor').loc['LCA-Net', 'ssim'], 0.8763)
        self.assertTrue(math.isnan(reference_frame('SOTS-outdoor').loc['CAE', 'psnr']))


if __name__ == '__main__':
    unittest.main()
