"""Tests for the Adam optimizer."""

import numpy as np
import pytest

from replay_engine.config.settings import OptimizerConfig
from replay_engine.models.params import init_params
from replay_engine.training.optimizer import Adam
from tests.helpers import tiny_model


def _params_and_grads(seed: int = 0):
    params = init_params(tiny_model(), seed=seed)
    grads = params.zeros_like()
    grads.flat[:] = np.random.default_rng(seed).normal(size=params.num_params)
    return params, grads


class TestAdam:
    """Test the Adam update."""

    def test_first_step_is_signed_lr(self):
        """Test bias correction makes the first step lr * sign(g)."""
        params, grads = _params_and_grads()
        before = params.flat.copy()
        Adam(params.num_params, lr=1e-3).step(params, grads)
        np.testing.assert_allclose(before - params.flat, 1e-3 * np.sign(grads.flat), rtol=1e-4, atol=1e-6)

    def test_converges_on_quadratic(self):
        """Test repeated steps minimize a quadratic bowl."""
        params, _ = _params_and_grads()
        target = np.linspace(-1.0, 1.0, params.num_params)
        adam = Adam(params.num_params, lr=1e-2)
        grads = params.zeros_like()
        for _ in range(2000):
            grads.flat[:] = params.flat - target
            adam.step(params, grads)
        assert np.max(np.abs(params.flat - target)) < 0.05

    def test_zero_grad_no_update(self):
        """Test a zero gradient leaves parameters in place."""
        params, grads = _params_and_grads()
        grads.flat[:] = 0.0
        before = params.flat.copy()
        Adam(params.num_params, lr=1.0).step(params, grads)
        np.testing.assert_array_equal(params.flat, before)

    def test_state_round_trip(self):
        """Test a restored optimizer continues exactly like the original."""
        params, grads = _params_and_grads()
        adam = Adam(params.num_params, lr=1e-3, config=OptimizerConfig(beta1=0.8))
        adam.step(params, grads)
        restored = Adam(params.num_params, lr=1e-3, config=OptimizerConfig(beta1=0.8))
        restored.load_state_dict(adam.state_dict())
        twin = params.copy()
        adam.step(params, grads)
        restored.step(twin, grads)
        assert restored.t == 2
        np.testing.assert_array_equal(params.flat, twin.flat)

    def test_state_dict_is_a_copy(self):
        """Test the exported moments do not alias the live ones."""
        params, grads = _params_and_grads()
        adam = Adam(params.num_params, lr=1e-3)
        state = adam.state_dict()
        adam.step(params, grads)
        assert np.all(state["m"] == 0.0)

    def test_shape_mismatch(self):
        """Test moments and parameters of different sizes are rejected."""
        params, grads = _params_and_grads()
        adam = Adam(params.num_params + 1, lr=1e-3)
        with pytest.raises(ValueError):
            adam.step(params, grads)
        with pytest.raises(ValueError):
            Adam(params.num_params, lr=1e-3).load_state_dict({"t": 1, "m": np.zeros(3), "v": np.zeros(3)})

    def test_float32_params(self):
        """Test single-precision parameters stay single precision."""
        params, grads = _params_and_grads()
        params = params.astype(np.float32)
        Adam(params.num_params, lr=1e-3).step(params, grads.astype(np.float32))
        assert params.dtype == np.float32
