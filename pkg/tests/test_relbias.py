import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import redt.tensor as T
from redt.errors import ConfigError, UsageError
from redt.layers import Initializer
from redt.relbias import BiasEmbeddingTable, BinConfig, build_bias, discretize_depth, relative_index
from redt.tensor import Tensor


class TestBinConfig:
    def test_relative_class_count(self):
        assert BinConfig(0.0, 80.0, 128).num_relative == 255
        assert BinConfig(1.0, 20.0, 200).num_relative == 399

    def test_too_few_bins_rejected(self):
        with pytest.raises(ConfigError):
            BinConfig(0.0, 10.0, 1)

    def test_inverted_range_rejected(self):
        with pytest.raises(ConfigError):
            BinConfig(5.0, 5.0, 8)


class TestDiscretize:
    def test_boundaries(self):
        cfg = BinConfig(2.0, 10.0, 16)
        assert discretize_depth(np.array(2.0), cfg) == 0
        assert discretize_depth(np.array(10.0), cfg) == 15

    def test_midpoint(self):
        cfg = BinConfig(0.0, 80.0, 128)
        assert discretize_depth(np.array(40.0), cfg) == 64

    def test_out_of_range_clamps(self):
        cfg = BinConfig(1.0, 20.0, 8)
        assert discretize_depth(np.array(0.0), cfg) == 0
        assert discretize_depth(np.array(99.0), cfg) == 7

    def test_non_finite_rejected(self):
        with pytest.raises(UsageError):
            discretize_depth(np.array([np.nan]), BinConfig(0.0, 1.0, 4))

    @given(st.lists(st.floats(0.0, 80.0), min_size=2, max_size=40), st.integers(2, 200))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_depth(self, values, bins):
        cfg = BinConfig(0.0, 80.0, bins)
        values = np.sort(np.asarray(values))
        out = discretize_depth(values, cfg)
        assert (np.diff(out) >= 0).all()
        assert out.min() >= 0 and out.max() <= bins - 1


class TestRelativeIndex:
    def test_fig_style_values(self):
        # 200 bins: bins 198 and 1 differ by 197; the offset convention
        # stores that difference at table row 197 + 199
        assert int(np.asarray(198) - np.asarray(1)) == 197
        assert relative_index(198, 1, 200) == 396

    def test_equal_bins_center_row(self):
        assert relative_index(5, 5, 128) == 127

    def test_extreme_difference_rows(self):
        assert relative_index(0, 127, 128) == 0
        assert relative_index(127, 0, 128) == 254

    def test_out_of_range_bins_rejected(self):
        with pytest.raises(UsageError):
            relative_index(5, 200, 128)
        with pytest.raises(UsageError):
            relative_index(-1, 0, 128)

    @given(st.integers(2, 64), st.data())
    @settings(max_examples=80, deadline=None)
    def test_row_bounds_random_pairs(self, bins, data):
        a = data.draw(st.integers(0, bins - 1))
        b = data.draw(st.integers(0, bins - 1))
        row = relative_index(a, b, bins)
        assert 0 <= row <= 2 * bins - 2

    @pytest.mark.parametrize("bins", range(2, 17))
    def test_antisymmetry_exhaustive(self, bins):
        for a in range(bins):
            for b in range(bins):
                assert relative_index(a, b, bins) + relative_index(b, a, bins) == 2 * (bins - 1)


def _table(bins, heads, dtype=np.float64, seed=0):
    init = Initializer(np.random.default_rng(seed), dtype=dtype)
    cfg = BinConfig(1.0, 20.0, bins)
    table = BiasEmbeddingTable(init, cfg, heads)
    return table


class TestBuildBias:
    def test_zero_table_gives_zero_bias(self, rng):
        table = _table(16, 4)
        bins = rng.integers(0, 16, size=(2, 9))
        bias = build_bias(bins, table)
        assert bias.data.shape == (2, 4, 9, 9)
        np.testing.assert_array_equal(bias.data, 0.0)

    def test_constant_window_uses_center_row(self, rng):
        table = _table(16, 3)
        table.theta.data = rng.normal(size=table.theta.data.shape)
        bias = build_bias(np.full(5, 7, dtype=np.int64), table)
        for h in range(3):
            np.testing.assert_allclose(bias.data[h], table.theta.data[15, h])

    def test_matches_per_pair_loop(self, rng):
        table = _table(12, 2)
        table.theta.data = rng.normal(size=table.theta.data.shape)
        bins = rng.integers(0, 12, size=9)
        bias = build_bias(bins, table)
        for h in range(2):
            for p in range(9):
                for q in range(9):
                    row = bins[p] - bins[q] + 11
                    assert bias.data[h, p, q] == table.theta.data[row, h]

    def test_content_free(self, rng):
        # identical bins from different "images" give identical bias
        table = _table(8, 2)
        table.theta.data = rng.normal(size=table.theta.data.shape)
        bins = rng.integers(0, 8, size=(3, 4))
        b1 = build_bias(bins, table)
        b2 = build_bias(bins.copy(), table)
        assert np.array_equal(b1.data, b2.data)

    def test_diagonal_constant_per_head(self, rng):
        table = _table(10, 3)
        table.theta.data = rng.normal(size=table.theta.data.shape)
        bins = rng.integers(0, 10, size=16)
        bias = build_bias(bins, table)
        for h in range(3):
            np.testing.assert_allclose(np.diag(bias.data[h]), table.theta.data[9, h])

    def test_uniform_bin_shift_invariance(self, rng):
        table = _table(32, 2)
        table.theta.data = rng.normal(size=table.theta.data.shape)
        bins = rng.integers(5, 20, size=(2, 8))
        b1 = build_bias(bins, table)
        b2 = build_bias(bins + 7, table)  # no clamping: +7 keeps bins < 32
        assert np.array_equal(b1.data, b2.data)

    def test_gradient_scatter_adds_per_row(self, rng):
        table = _table(6, 2)
        bins = np.array([0, 3, 3, 5])
        bias = build_bias(bins, table)
        upstream = rng.normal(size=bias.data.shape)
        T.tsum(T.mul(bias, Tensor(upstream))).backward()
        expected = np.zeros_like(table.theta.data)
        for h in range(2):
            for p in range(4):
                for q in range(4):
                    expected[bins[p] - bins[q] + 5, h] += upstream[h, p, q]
        np.testing.assert_allclose(table.theta.grad, expected, atol=1e-12)

    def test_loss_independent_of_bias_gives_zero_table_grad(self, rng):
        table = _table(6, 2)
        bias = build_bias(np.array([1, 2]), table)
        x = Tensor(rng.normal(size=(2, 2, 2)), requires_grad=True)
        T.tsum(T.mul(x, x)).backward()
        assert table.theta.grad is None
        assert bias.data.shape == (2, 2, 2)
