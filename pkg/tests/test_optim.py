import math

import numpy as np
import pytest

from redt.errors import UsageError
from redt.optim import AdamW, LRSchedule, clip_global_norm
from redt.tensor import Tensor


class TestLRSchedule:
    def test_endpoints_and_peak(self):
        s = LRSchedule(lr_start=4e-6, lr_max=1e-4, lr_end=1e-6, total_iters=2000, warmup_fraction=0.25)
        assert s.lr_at(0) == pytest.approx(4e-6)
        assert s.lr_at(2000) == pytest.approx(1e-6)
        peak = math.floor(0.25 * 2000)
        assert s.lr_at(peak) == pytest.approx(1e-4)
        assert max(s.lr_at(i) for i in range(0, 2001, 10)) == pytest.approx(1e-4)

    def test_decay_midpoint(self):
        s = LRSchedule(lr_start=4e-6, lr_max=1e-4, lr_end=1e-6, total_iters=1000, warmup_fraction=0.25)
        assert s.lr_at(625) == pytest.approx(1e-4 + 0.5 * (1e-6 - 1e-4))

    def test_out_of_range_rejected(self):
        s = LRSchedule(total_iters=10)
        with pytest.raises(UsageError):
            s.lr_at(-1)
        with pytest.raises(UsageError):
            s.lr_at(11)

    def test_piecewise_linear_monotone(self):
        s = LRSchedule(total_iters=400)
        warm = math.floor(0.25 * 400)
        ramp = [s.lr_at(i) for i in range(warm + 1)]
        decay = [s.lr_at(i) for i in range(warm, 401)]
        assert all(b >= a for a, b in zip(ramp, ramp[1:]))
        assert all(b <= a for a, b in zip(decay, decay[1:]))


class TestClip:
    def test_below_threshold_untouched(self):
        g = [np.array([0.03, 0.04])]
        norm = clip_global_norm(g, 0.1)
        assert norm == pytest.approx(0.05)
        np.testing.assert_allclose(g[0], [0.03, 0.04])

    def test_above_threshold_scaled(self):
        g = [np.array([0.12]), np.array([0.16])]
        norm = clip_global_norm(g, 0.1)
        assert norm == pytest.approx(0.2)
        np.testing.assert_allclose(g[0], [0.06], atol=1e-9)
        np.testing.assert_allclose(g[1], [0.08], atol=1e-9)

    def test_zero_grads(self):
        g = [np.zeros(3)]
        assert clip_global_norm(g, 0.1) == 0.0
        np.testing.assert_allclose(g[0], 0.0)

    def test_none_entries_skipped(self):
        g = [None, np.array([0.2])]
        norm = clip_global_norm(g, 0.1)
        assert norm == pytest.approx(0.2)
        np.testing.assert_allclose(g[1], [0.1])


class TestAdamW:
    def _param(self, value):
        p = Tensor(np.array([value], dtype=np.float64), requires_grad=True)
        return p

    def test_zero_grad_zero_decay_is_identity(self):
        p = self._param(1.3)
        p.grad = np.zeros(1)
        opt = AdamW([p], weight_decay=0.0)
        opt.step(lr=0.1)
        np.testing.assert_allclose(p.data, [1.3])

    def test_first_step_bias_corrected_unit_move(self):
        p = self._param(0.0)
        p.grad = np.ones(1)
        opt = AdamW([p], betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
        opt.step(lr=0.1)
        # m_hat = 1, v_hat = 1 after bias correction, so the move is -lr
        np.testing.assert_allclose(p.data, [-0.1], atol=1e-8)

    def test_decoupled_decay_multiplies_parameter(self):
        p = self._param(1.0)
        p.grad = np.zeros(1)
        opt = AdamW([p], weight_decay=0.1)
        opt.step(lr=0.1)
        np.testing.assert_allclose(p.data, [0.99], atol=1e-12)

    def test_lr_zero_changes_nothing(self):
        rng = np.random.default_rng(0)
        p = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        before = p.data.copy()
        p.grad = rng.normal(size=(3, 3))
        AdamW([p], weight_decay=0.1).step(lr=0.0)
        np.testing.assert_allclose(p.data, before)

    def test_step_counter_increments(self):
        p = self._param(0.0)
        opt = AdamW([p])
        for expected in (1, 2, 3):
            p.grad = np.ones(1)
            opt.step(lr=1e-3)
            assert opt.step_count == expected

    def test_shape_mismatch_rejected(self):
        p = self._param(0.0)
        p.grad = np.ones(2)
        with pytest.raises(UsageError):
            AdamW([p]).step(lr=0.1)

    def test_matches_reference_trajectory(self):
        # independent scalar reference, a few steps with nonzero decay
        rng = np.random.default_rng(7)
        grads = rng.normal(size=5)
        p = self._param(0.7)
        opt = AdamW([p], betas=(0.9, 0.999), eps=1e-8, weight_decay=0.1)
        theta, m, v = 0.7, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            p.grad = np.array([g])
            opt.step(lr=0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1 - 0.9**t)
            v_hat = v / (1 - 0.999**t)
            theta = theta * (1 - 0.01 * 0.1) - 0.01 * m_hat / (math.sqrt(v_hat) + 1e-8)
            np.testing.assert_allclose(p.data, [theta], atol=1e-12)
