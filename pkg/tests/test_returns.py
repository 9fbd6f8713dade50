"""Tests for discounted returns and V-trace targets."""

import numpy as np
import pytest

from replay_engine.training.returns import discounted_return, vtrace


def _brute_force_vtrace(values, bootstrap, rewards, dones, log_rhos, gamma, rho_bar, c_bar):
    """vs_s = v_s + sum_t (prod_{s <= i < t} gamma_i c_i) delta_t for one fully live row."""
    L = len(values)
    rhos = np.exp(log_rhos)
    disc = gamma * (1.0 - dones.astype(float))
    nxt = np.append(values[1:], bootstrap)
    deltas = np.minimum(rho_bar, rhos) * (rewards + disc * nxt - values)
    cs = np.minimum(c_bar, rhos)
    vs = np.zeros(L)
    for s in range(L):
        total, weight = values[s], 1.0
        for t in range(s, L):
            total += weight * deltas[t]
            weight *= disc[t] * cs[t]
        vs[s] = total
    next_vs = np.append(vs[1:], bootstrap)
    adv = np.minimum(rho_bar, rhos) * (rewards + disc * next_vs - values)
    return vs, adv


class TestDiscountedReturn:
    """Test discounted returns."""

    def test_matches_direct_sum(self):
        """Test each step's return is the discounted sum of the rewards after it."""
        rewards = np.array([[1.0, 2.0, 3.0, 4.0]])
        mask = np.ones((1, 4), dtype=bool)
        out = discounted_return(rewards, mask, 0.5)
        np.testing.assert_allclose(out[0], [1 + 1 + 0.75 + 0.5, 2 + 1.5 + 1, 3 + 2, 4])

    def test_mask_zeroes_tail(self):
        """Test rewards past the mask are ignored and masked returns are zero."""
        rewards = np.array([1.0, 1.0, 100.0])
        mask = np.array([True, True, False])
        out = discounted_return(rewards, mask, 0.9)
        np.testing.assert_allclose(out, [1.9, 1.0, 0.0])

    def test_undiscounted(self):
        """Test gamma of one gives reverse cumulative sums."""
        rewards = np.random.default_rng(0).normal(size=(3, 6))
        out = discounted_return(rewards, np.ones((3, 6), dtype=bool), 1.0)
        np.testing.assert_allclose(out, np.cumsum(rewards[:, ::-1], axis=1)[:, ::-1])


class TestVTrace:
    """Test V-trace targets and advantages."""

    def test_on_policy_is_n_step_return(self):
        """Test unit importance weights reduce vs to the bootstrapped n-step return."""
        rng = np.random.default_rng(0)
        L, gamma = 5, 0.9
        values, rewards = rng.normal(size=(1, L)), rng.normal(size=(1, L))
        out = vtrace(values, np.array([2.0]), rewards, np.zeros((1, L), bool), np.ones((1, L), bool),
                     np.zeros((1, L)), gamma)
        expected = sum(gamma ** k * rewards[0, k] for k in range(L)) + gamma ** L * 2.0
        assert out.vs[0, 0] == pytest.approx(expected)
        assert out.vs[0, L - 1] == pytest.approx(rewards[0, -1] + gamma * 2.0)

    def test_done_cuts_bootstrap(self):
        """Test a terminal step ignores everything after it."""
        values = np.array([[0.5, 0.5, 9.0]])
        rewards = np.array([[1.0, -10.0, 50.0]])
        dones = np.array([[False, True, False]])
        out = vtrace(values, np.array([100.0]), rewards, dones, np.ones((1, 3), bool), np.zeros((1, 3)), 0.9)
        assert out.vs[0, 1] == pytest.approx(-10.0)
        assert out.vs[0, 0] == pytest.approx(1.0 + 0.9 * -10.0)

    def test_matches_brute_force(self):
        """Test off-policy targets against the explicit sum with clipped weights."""
        rng = np.random.default_rng(1)
        N, L, gamma = 4, 7, 0.95
        values, rewards = rng.normal(size=(N, L)), rng.normal(size=(N, L))
        bootstrap = rng.normal(size=N)
        log_rhos = rng.normal(scale=0.7, size=(N, L))
        dones = np.zeros((N, L), bool)
        dones[2, 4] = True
        for rho_bar, c_bar in [(1.0, 1.0), (2.0, 0.5)]:
            out = vtrace(values, bootstrap, rewards, dones, np.ones((N, L), bool), log_rhos, gamma, rho_bar, c_bar)
            for n in range(N):
                vs, adv = _brute_force_vtrace(values[n], bootstrap[n], rewards[n], dones[n], log_rhos[n],
                                              gamma, rho_bar, c_bar)
                np.testing.assert_allclose(out.vs[n], vs, rtol=1e-10, atol=1e-12)
                np.testing.assert_allclose(out.advantages[n], adv, rtol=1e-10, atol=1e-12)

    def test_large_weights_clipped(self):
        """Test weights above both clips give the same targets as on-policy data."""
        rng = np.random.default_rng(2)
        values, rewards = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        args = (values, np.zeros(2), rewards, np.zeros((2, 4), bool), np.ones((2, 4), bool))
        on = vtrace(*args, np.zeros((2, 4)), 0.99)
        off = vtrace(*args, np.full((2, 4), 3.0), 0.99)
        np.testing.assert_allclose(off.vs, on.vs)
        np.testing.assert_allclose(off.advantages, on.advantages)

    def test_masked_step_bootstraps_from_its_value(self):
        """Test the last live step bootstraps from the following masked step's value."""
        values = np.array([[1.0, 2.0, 4.0, 8.0]])
        rewards = np.array([[1.0, 1.0, 100.0, 100.0]])
        mask = np.array([[True, True, False, False]])
        out = vtrace(values, np.array([50.0]), rewards, np.zeros((1, 4), bool), mask, np.zeros((1, 4)), 0.5)
        assert out.vs[0, 1] == pytest.approx(1.0 + 0.5 * 4.0)
        assert out.vs[0, 0] == pytest.approx(1.0 + 0.5 * out.vs[0, 1])
        np.testing.assert_array_equal(out.vs[0, 2:], 0.0)
        np.testing.assert_array_equal(out.advantages[0, 2:], 0.0)

    def test_advantage_definition(self):
        """Test advantages use the next step's target."""
        values = np.array([[1.0, 2.0]])
        rewards = np.array([[0.5, 0.25]])
        out = vtrace(values, np.array([3.0]), rewards, np.zeros((1, 2), bool), np.ones((1, 2), bool),
                     np.zeros((1, 2)), 0.5)
        assert out.advantages[0, 1] == pytest.approx(0.25 + 0.5 * 3.0 - 2.0)
        assert out.advantages[0, 0] == pytest.approx(0.5 + 0.5 * out.vs[0, 1] - 1.0)
