'''
Gradient checks of every layer kind and of the whole network
'''
import unittest
import sys

import numpy as np

sys.path.append("..")     # to run tests from tests directory directly

from src.gradcheck import check_layer, check_adjoint, check_model, run_suite, relative_error, numeric_gradient
from src.gradcheck import GradcheckResult, UnknownCheckError, LAYER_TOLERANCE, MODEL_TOLERANCE, ADJOINT_TOLERANCE


class TestGradcheck(unittest.TestCase):
    def test_layers(self):
        for kind in ('conv', 'deconv', 'avgpool', 'upsample', 'dense', 'relu'):
            for seed in (0, 1):
                result = check_layer(kind, seed)
                self.assertLess(result.relative_error, LAYER_TOLERANCE, f'{kind} seed {seed}')
                self.assertTrue(result.passed, str(result))

    def test_adjoints(self):
        for kind in ('conv', 'deconv', 'avgpool', 'upsample', 'dense'):
            self.assertLess(check_adjoint(kind, seed=3), ADJOINT_TOLERANCE, kind)

    def test_model(self):
        result = check_model(seed=0)
        self.assertLess(result.relative_error, MODEL_TOLERANCE)
        self.assertEqual(result.name, 'model')

    def test_suite(self):
        results = run_suite('dense')
        self.assertEqual([r.name for r in results], ['dense'])
        self.assertRaises(UnknownCheckError, run_suite, 'pool')

    def test_helpers(self):
        self.assertEqual(relative_error(np.zeros(3), np.zeros(3)), 0.0)
        self.assertAlmostEqual(relative_error(np.array([1.0, 0.0]), np.array([0.0, 0.0])), 1.0)
        array = np.array([1.0, 2.0, 3.0])
        grads = numeric_gradient(lambda: float((array ** 2).sum()), array)
        np.testing.assert_allclose(grads, [2.0, 4.0, 6.0], rtol=1e-8)
        np.testing.assert_array_equal(array, [1.0, 2.0, 3.0])

    def test_result(self):
        self.assertTrue(GradcheckResult('conv', 1e-9, 1e-6, 0.0).passed)
        self.assertFalse(GradcheckResult('conv', 1e-3, 1e-6).passed)
        self.assertFalse(GradcheckResult('conv', 1e-9, 1e-6, 1e-3).passed)
        self.assertIn('FAILED', str(GradcheckResult('dense', 1.0, 1e-6)))


if __name__ == '__main__':
    unittest.main()
