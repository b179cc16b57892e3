"""Dual-averaging relevance optimizer and Adam."""

import numpy as np
import pytest

from limnolearn.optim import Adam, RdaState, adam_step, rda_step, \
    reset_coordinate, soft_threshold
from limnolearn.tensor import Parameter


def state(n=3, gamma=0.1, kappa=0.0, w0=1.0):
    return RdaState([f"w[{i}]" for i in range(n)], gamma=gamma, kappa=kappa,
                    w0=w0)


class TestRdaStep:
    def test_closed_form_hand_value(self):
        # [DERIVED] w = 1 - 0.1 * 2 = 0.8 with kappa = 0
        s = state(n=1, gamma=0.1, kappa=0.0)
        values = rda_step(s, np.array([2.0]))
        assert values[0] == pytest.approx(0.8, rel=1e-15)

    def test_threshold_boundary_exact_zero(self):
        s = state(n=1, gamma=1.0, kappa=0.5)
        # after one step: shift = 0.5; pick gradient so |w0 - G| = 0.5
        values = rda_step(s, np.array([0.5]))
        assert values[0] == 0.0

    def test_pure_shrinkage_reaches_zero(self):
        s = state(n=1, gamma=1.0, kappa=0.3, w0=1.0)
        values = None
        for _ in range(12):  # kappa*sqrt(t) >= 1 once t >= 12
            values = rda_step(s, np.array([0.0]))
        assert values[0] == 0.0

    def test_exact_zeros_not_merely_small(self):
        s = state(n=2, gamma=1.0, kappa=0.2)
        for _ in range(30):
            values = rda_step(s, np.array([0.0, -0.05]))
        assert values[0] == 0.0
        assert values[1] != 0.0

    def test_non_finite_gradient_names_coordinate(self):
        s = state(n=3)
        with pytest.raises(FloatingPointError, match=r"w\[1\]"):
            rda_step(s, np.array([0.0, np.nan, 0.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rda_step(state(n=3), np.zeros(4))


class TestResetCoordinate:
    def test_reset_restores_initial_value(self):
        s = state(n=2, gamma=0.5, kappa=0.0)
        rda_step(s, np.array([3.0, -1.0]))
        values = reset_coordinate(s, "w[0]")
        assert values[0] == pytest.approx(1.0)  # exactly w0 when kappa = 0

    def test_reset_is_local(self):
        s = state(n=3, gamma=0.5, kappa=0.0)
        rda_step(s, np.array([1.0, 2.0, 3.0]))
        before = s.values().copy()
        after = reset_coordinate(s, 1)
        assert after[0] == before[0]
        assert after[2] == before[2]
        assert after[1] != before[1]

    def test_reset_reactivates_zero(self):
        s = state(n=1, gamma=1.0, kappa=0.0)
        rda_step(s, np.array([1.0]))       # w = 0 exactly at the boundary
        assert s.values()[0] == 0.0
        values = reset_coordinate(s, 0)
        assert values[0] > 0.0

    def test_unknown_coordinate(self):
        with pytest.raises(KeyError):
            reset_coordinate(state(), "w[9]")
        with pytest.raises(KeyError):
            reset_coordinate(state(), 7)


class TestSparsityProperties:
    def test_monotone_in_kappa(self):
        rng = np.random.default_rng(0)
        grads = rng.normal(0.0, 0.3, size=(50, 20))
        zero_sets = []
        for kappa in (0.05, 0.15):
            s = RdaState([f"w[{i}]" for i in range(20)], gamma=0.1,
                         kappa=kappa)
            for g in grads:
                values = s.step(g)
            zero_sets.append(set(np.nonzero(values == 0.0)[0]))
        assert zero_sets[0] <= zero_sets[1]

    def test_kappa_zero_never_thresholds(self):
        rng = np.random.default_rng(1)
        s = state(n=30, gamma=0.01, kappa=0.0)
        for _ in range(200):
            values = s.step(rng.normal(size=30))
        assert np.all(values != 0.0)

    def test_anchor_reproduces_value(self):
        s = state(n=2, gamma=0.1, kappa=0.02)
        for _ in range(9):
            s.step(np.zeros(2))
        s.anchor_coordinate(0, 0.37)
        s.anchor_coordinate(1, 0.0)
        assert s.values()[0] == pytest.approx(0.37, abs=1e-12)
        assert s.values()[1] == 0.0


def test_soft_threshold_definition():
    v = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    out = soft_threshold(v, 1.0)
    assert np.array_equal(out, [-1.0, 0.0, 0.0, 0.0, 1.0])


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        p = Parameter(np.array([1.0, -2.0]), "p")
        opt = Adam([p], lr=0.1)
        opt.step()
        assert np.array_equal(p.values, [1.0, -2.0])

    def test_first_step_displacement_near_learning_rate(self):
        # [DERIVED] bias-corrected first step moves by ~lr in the gradient
        # direction regardless of gradient magnitude
        for g in (0.01, 1.0, 50.0):
            p = Parameter(np.array([0.0]), "p")
            opt = Adam([p], lr=0.05)
            p.grad[:] = g
            opt.step()
            assert abs(p.values[0]) == pytest.approx(0.05, rel=1e-6)
            assert np.sign(p.values[0]) == -np.sign(g)

    def test_deterministic_trajectories(self):
        def run():
            rng = np.random.default_rng(3)
            p = Parameter(np.array([0.5, 0.5]), "p")
            opt = Adam([p], lr=0.01)
            for _ in range(25):
                p.grad[:] = rng.normal(size=2)
                opt.step()
            return p.values.copy()

        assert np.array_equal(run(), run())

    def test_non_finite_gradient_rejected(self):
        p = Parameter(np.array([0.0]), "p")
        opt = Adam([p])
        p.grad[:] = np.inf
        with pytest.raises(FloatingPointError, match="p"):
            opt.step()

    def test_functional_form_matches_reference(self):
        rng = np.random.default_rng(5)
        values = rng.normal(size=4)
        ref = values.copy()
        m = np.zeros(4)
        v = np.zeros(4)
        m_ref = np.zeros(4)
        v_ref = np.zeros(4)
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        for t in range(1, 8):
            g = rng.normal(size=4)
            adam_step(values, g, m, v, t, lr, b1, b2, eps)
            m_ref = b1 * m_ref + (1 - b1) * g
            v_ref = b2 * v_ref + (1 - b2) * g * g
            ref -= lr * (m_ref / (1 - b1 ** t)) \
                / (np.sqrt(v_ref / (1 - b2 ** t)) + eps)
        assert np.allclose(values, ref, rtol=1e-12, atol=1e-14)
