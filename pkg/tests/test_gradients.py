import numpy as np
import pytest

from ppn.tensor import ConvSpec, Tensor, _node, conv2d, grad_check, leaky_relu
from ppn.verify import COMPOSITE_THRESHOLD, DEFAULT_THRESHOLD, run_gradient_suite

EXPECTED_ENTRIES = {
    "conv2d", "conv_transpose2d", "batchnorm2d", "leaky_relu", "maxpool2d",
    "concat_channels", "sigmoid", "tanh", "mse", "smooth_l1", "iou_loss",
    "mssce", "small_network_mse",
}


class TestChecker:
    def test_quadratic_form(self):
        # f = sum(x^2) has an exact analytic gradient 2x
        point = Tensor(np.random.default_rng(0).normal(0, 1, (3, 4)))

        def sum_of_squares(x):
            return _node(np.sum(x.data ** 2), (x,), lambda g: (g * 2.0 * x.data,))

        err = grad_check(sum_of_squares, point, 1e-5)
        assert err <= 1e-7

    def test_conv_relu_chain(self):
        rng = np.random.default_rng(1)
        spec = ConvSpec(2, 3, 3, 3, stride=1, padding=1)
        w = Tensor(rng.normal(0, 0.5, (3, 2, 3, 3)))
        b = Tensor(rng.normal(0, 0.5, 3))
        point = Tensor(rng.uniform(0.1, 1.0, (2, 6, 6))
                       * rng.choice([-1.0, 1.0], (2, 6, 6)))
        err = grad_check(lambda x: leaky_relu(conv2d(x, spec, w, b), 0.1).sum(),
                         point, 1e-5)
        assert err <= 1e-4

    def test_bad_step_size(self):
        with pytest.raises(ValueError):
            grad_check(lambda x: x.sum(), Tensor(np.ones(3)), 0.0)


@pytest.fixture(scope="module")
def results():
    return run_gradient_suite(seed=0)


class TestSuite:
    def test_covers_every_kernel(self, results):
        assert set(results) == EXPECTED_ENTRIES

    def test_all_entries_pass(self, results):
        for name, (error, threshold) in results.items():
            assert error <= threshold, f"{name}: {error:.3e} > {threshold:.1e}"

    def test_thresholds(self, results):
        for name, (_, threshold) in results.items():
            expected = (COMPOSITE_THRESHOLD if name == "small_network_mse"
                        else DEFAULT_THRESHOLD)
            assert threshold == expected

    def test_deterministic_given_seed(self):
        a = run_gradient_suite(seed=3)
        b = run_gradient_suite(seed=3)
        assert a == b


class TestCorruptionSensitivity:
    @pytest.mark.parametrize("name", ["conv2d", "mse", "small_network_mse"])
    def test_scaled_gradient_is_caught(self, name):
        results = run_gradient_suite(seed=0, corrupt=name)
        error, threshold = results[name]
        assert error > threshold  # a 1.5x-scaled backward must not slip through
        for other, (err, thr) in results.items():
            if other != name:
                assert err <= thr
