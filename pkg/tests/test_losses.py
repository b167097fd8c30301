import math

import numpy as np
import pytest

from redt.depth import DepthMap
from redt.errors import DataError, UsageError
from redt.gradcheck import finite_difference_gradient, max_relative_error
from redt.losses import si_loss, total_loss
from redt.tensor import Tensor

from conftest import gradcheck


def _scalar_reference(pred, gt_values, valid, lam, alpha, form):
    """Brute-force per-pixel loop, plain Python floats."""
    hs = []
    for i in range(gt_values.shape[0]):
        for j in range(gt_values.shape[1]):
            if valid[i, j]:
                hs.append(math.log(gt_values[i, j]) - math.log(pred[i, j]))
    t = len(hs)
    mean_sq = sum(h * h for h in hs) / t
    s = sum(hs)
    if form == "printed":
        rad = mean_sq - lam / t * s * s
    else:
        rad = mean_sq - lam / (t * t) * s * s
    return alpha * math.sqrt(max(rad, 0.0))


def _map(values, valid=None):
    values = np.asarray(values, dtype=np.float64)
    if valid is None:
        valid = np.ones(values.shape, dtype=bool)
    return DepthMap(values, valid)


class TestSiLoss:
    def test_perfect_prediction_is_zero(self, rng):
        vals = rng.uniform(1, 10, (5, 5)).astype(np.float32)
        gt = _map(vals, rng.random((5, 5)) < 0.6)
        loss = si_loss(Tensor(vals), gt)
        assert float(loss.data) == pytest.approx(0.0, abs=1e-9)

    def test_two_pixel_hand_case_printed(self):
        # log residuals h = [-1, 0]: 10 * sqrt(0.5 - 0.85 * 1 / 2)
        gt = _map([[1.0, math.e]])
        pred = Tensor(np.array([[math.e, math.e]]))
        loss = si_loss(pred, gt, lam=0.85, alpha=10.0, form="printed")
        assert float(loss.data) == pytest.approx(10.0 * math.sqrt(0.5 - 0.425), abs=1e-5)
        assert float(loss.data) == pytest.approx(2.73861, abs=1e-4)

    def test_two_pixel_hand_case_conventional(self):
        gt = _map([[1.0, math.e]])
        pred = Tensor(np.array([[math.e, math.e]]))
        loss = si_loss(pred, gt, lam=0.85, alpha=10.0, form="conventional")
        assert float(loss.data) == pytest.approx(10.0 * math.sqrt(0.5 - 0.85 * 0.25), abs=1e-5)
        assert float(loss.data) == pytest.approx(5.36190, abs=1e-4)

    def test_three_pixel_clamped_case_printed(self):
        # h = [0.1, 0.2, 0.3]: printed radicand 0.14/3 - 0.85*0.36/3 < 0 -> loss 0
        gt_vals = np.exp([0.1, 0.2, 0.3]).reshape(1, 3)
        pred = Tensor(np.ones((1, 3)))
        loss = si_loss(pred, _map(gt_vals), lam=0.85, alpha=10.0, form="printed")
        assert float(loss.data) == 0.0
        # same residuals are a real loss under the conventional form
        loss_c = si_loss(pred, _map(gt_vals), lam=0.85, alpha=10.0, form="conventional")
        assert float(loss_c.data) > 0.0

    @pytest.mark.parametrize("form", ["printed", "conventional"])
    def test_matches_scalar_reference(self, rng, form):
        for _ in range(10):
            pred = rng.uniform(0.5, 12.0, (6, 7))
            gt_vals = rng.uniform(0.5, 12.0, (6, 7))
            valid = rng.random((6, 7)) < 0.4
            valid[0, 0] = True
            expected = _scalar_reference(pred, gt_vals, valid, 0.85, 10.0, form)
            got = si_loss(Tensor(pred), _map(gt_vals, valid), form=form)
            assert float(got.data) == pytest.approx(expected, abs=1e-9)

    def test_permutation_invariance(self, rng):
        pred = rng.uniform(1, 10, (1, 16))
        gt_vals = rng.uniform(1, 10, (1, 16))
        perm = rng.permutation(16)
        a = si_loss(Tensor(pred), _map(gt_vals), form="conventional")
        b = si_loss(Tensor(pred[:, perm]), _map(gt_vals[:, perm]), form="conventional")
        assert float(a.data) == pytest.approx(float(b.data), abs=1e-12)

    def test_no_valid_pixels_rejected(self):
        gt = _map(np.ones((2, 2)), np.zeros((2, 2), dtype=bool))
        with pytest.raises(DataError):
            si_loss(Tensor(np.ones((2, 2))), gt)

    def test_non_positive_depths_rejected(self):
        gt = _map([[1.0, -2.0]])
        with pytest.raises(DataError):
            si_loss(Tensor(np.ones((1, 2))), gt)
        gt2 = _map([[1.0, 2.0]])
        with pytest.raises(DataError):
            si_loss(Tensor(np.array([[1.0, 0.0]])), gt2)

    def test_bad_form_rejected(self):
        with pytest.raises(UsageError):
            si_loss(Tensor(np.ones((1, 1))), _map([[1.0]]), form="other")

    @pytest.mark.parametrize("form", ["printed", "conventional"])
    def test_gradient_matches_fd_where_radicand_positive(self, rng, form):
        # anti-correlated residuals keep the printed radicand positive
        gt_vals = np.array([[1.0, 4.0, 2.0, 5.0]])
        pred0 = np.array([[2.0, 2.5, 1.2, 7.0]])
        gt = _map(gt_vals)

        def fn(p):
            return si_loss(p, gt, form=form)

        loss = fn(Tensor(pred0.copy(), requires_grad=True))
        assert float(loss.data) > 0.1
        gradcheck(fn, [pred0], tol=1e-5)


class TestTotalLoss:
    def test_perfect_maps_zero(self, rng):
        vals = rng.uniform(1, 10, (4, 4)).astype(np.float32)
        gt = _map(vals)
        total, per_map = total_loss([Tensor(vals)] * 3, gt)
        assert float(total.data) == pytest.approx(0.0, abs=1e-9)
        assert len(per_map) == 3

    def test_mean_of_two_maps(self):
        gt = _map([[1.0, math.e]])
        perfect = Tensor(np.array([[1.0, math.e]]))
        off = Tensor(np.array([[math.e, math.e]]))
        total, per_map = total_loss([perfect, off], gt, form="printed")
        expected = (0.0 + 2.7386127875) / 2
        assert float(total.data) == pytest.approx(expected, abs=1e-6)

    def test_equal_losses_average_to_themselves(self, rng):
        pred = rng.uniform(1, 10, (3, 3))
        gt = _map(rng.uniform(1, 10, (3, 3)))
        single = si_loss(Tensor(pred), gt, form="conventional")
        total, _ = total_loss([Tensor(pred)] * 4, gt, form="conventional")
        assert float(total.data) == pytest.approx(float(single.data), rel=1e-7)

    def test_empty_map_list_rejected(self):
        with pytest.raises(UsageError):
            total_loss([], _map([[1.0]]))
