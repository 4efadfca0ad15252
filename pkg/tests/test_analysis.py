"""Re-initialization operators, activity maps, gradient profiles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lwsgd import analysis, model
from lwsgd.errors import ShapeError


class TestMovementRanking:
    def test_hand_sort(self):
        r = analysis.rank_by_movement(np.array([1.0, -3.0, 2.0]), np.zeros(3))
        assert list(r.order) == [1, 2, 0]

    def test_all_ties_keep_index_order(self):
        theta = np.array([0.5, 0.5, 0.5, 0.5])
        r = analysis.rank_by_movement(theta, theta)
        assert list(r.order) == [0, 1, 2, 3]

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(0)
        t0 = rng.standard_normal(1000)
        tT = rng.standard_normal(1000)
        r = analysis.rank_by_movement(tT, t0)
        ref = sorted(range(1000), key=lambda i: (-abs(tT[i] - t0[i]), i))
        assert list(r.order) == ref

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            analysis.rank_by_movement(np.zeros(3), np.zeros(4))


class TestReinit:
    def setup_method(self):
        self.t0 = np.array([0.0, 0.0, 0.0, 0.0])
        self.tT = np.array([4.0, 1.0, 3.0, 2.0])
        self.ranking = analysis.rank_by_movement(self.tT, self.t0)

    def test_active_endpoints_exact(self):
        assert np.array_equal(
            analysis.active_reinit(self.tT, self.t0, self.ranking, 0.0), self.tT)
        assert np.array_equal(
            analysis.active_reinit(self.tT, self.t0, self.ranking, 100.0), self.t0)

    def test_lazy_endpoints_exact(self):
        assert np.array_equal(
            analysis.lazy_reinit(self.tT, self.t0, self.ranking, 100.0), self.tT)
        assert np.array_equal(
            analysis.lazy_reinit(self.tT, self.t0, self.ranking, 0.0), self.t0)

    def test_active_50_hand_computed(self):
        out = analysis.active_reinit(self.tT, self.t0, self.ranking, 50.0)
        assert np.array_equal(out, [0.0, 1.0, 0.0, 2.0])

    def test_lazy_50_hand_computed(self):
        out = analysis.lazy_reinit(self.tT, self.t0, self.ranking, 50.0)
        assert np.array_equal(out, [4.0, 0.0, 3.0, 0.0])

    def test_percent_out_of_range(self):
        with pytest.raises(ValueError):
            analysis.active_reinit(self.tT, self.t0, self.ranking, 101.0)
        with pytest.raises(ValueError):
            analysis.lazy_reinit(self.tT, self.t0, self.ranking, -0.5)

    def test_inputs_untouched(self):
        tT = self.tT.copy()
        t0 = self.t0.copy()
        analysis.active_reinit(tT, t0, self.ranking, 50.0)
        analysis.lazy_reinit(tT, t0, self.ranking, 50.0)
        assert np.array_equal(tT, self.tT) and np.array_equal(t0, self.t0)


@settings(max_examples=100, deadline=None)
@given(
    p=st.integers(min_value=1, max_value=200),
    percent=st.floats(min_value=0.0, max_value=100.0),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_complement_property(p, percent, seed):
    """With a shared ranking and count mapping, each coordinate keeps its
    trained value in exactly one of {active, lazy} outputs."""
    rng = np.random.default_rng(seed)
    t0 = rng.standard_normal(p)
    tT = t0 + rng.standard_normal(p) + 0.1  # ensure tT != t0 elementwise a.s.
    ranking = analysis.rank_by_movement(tT, t0)
    act = analysis.active_reinit(tT, t0, ranking, percent)
    laz = analysis.lazy_reinit(tT, t0, ranking, percent)
    keeps_T_act = act == tT
    keeps_T_laz = laz == tT
    assert np.array_equal(keeps_T_act, ~keeps_T_laz)


def test_percent_to_count_round_half_up():
    assert analysis.percent_to_count(0.0, 1000) == 0
    assert analysis.percent_to_count(100.0, 1000) == 1000
    assert analysis.percent_to_count(50.0, 3) == 2  # 1.5 rounds up
    assert analysis.percent_to_count(25.0, 2) == 1  # 0.5 rounds up


class TestActiveFrequency:
    def test_hand_case(self):
        g1 = np.array([1.0, 0.1, 0.2, 0.05])
        g2 = np.array([0.05, 1.0, 0.2, 0.1])
        freq = analysis.active_frequency([g1, g2], alpha=25.0)
        assert list(freq.counts) == [1, 1, 0, 0]
        assert freq.epochs == 2

    def test_alpha_100_marks_everything(self):
        rng = np.random.default_rng(1)
        grads = [rng.standard_normal(50) for _ in range(7)]
        freq = analysis.active_frequency(grads, alpha=100.0)
        assert (freq.counts == 7).all()

    def test_exact_count_per_epoch(self):
        rng = np.random.default_rng(2)
        p = 1000
        freq = analysis.ActiveFrequencyMap(alpha=10.0, p=p)
        freq.add_epoch(rng.standard_normal(p))
        assert freq.counts.sum() == int(np.ceil(0.10 * p))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        p, T = 500, 20
        grads = [rng.standard_normal(p) for _ in range(T)]
        for alpha in (1.0, 10.0, 30.0):
            freq = analysis.active_frequency(grads, alpha)
            k = int(np.ceil(alpha / 100 * p))
            counts = np.zeros(p, dtype=int)
            for g in grads:
                # brute force: sort (|g|, -index) descending, take first k
                ranked = sorted(range(p), key=lambda i: (-abs(g[i]), i))
                counts[ranked[:k]] += 1
            assert np.array_equal(freq.counts, counts)

    def test_inconsistent_lengths(self):
        with pytest.raises(ShapeError):
            analysis.active_frequency([np.zeros(4), np.zeros(5)], alpha=10)


class TestLayerHeatmap:
    def net(self):
        return model.build_conv_net(2, 3, in_hw=(8, 8))

    def test_uniform_counts_constant_maps(self):
        net = self.net()
        freq = analysis.ActiveFrequencyMap(alpha=10.0, p=net.p)
        freq.counts[:] = 3
        freq.epochs = 4
        maps = analysis.layer_heatmap(freq, net)
        for hm in maps.values():
            assert np.allclose(hm.grid, 0.75) and np.allclose(hm.bias, 0.75)

    def test_single_active_parameter(self):
        net = self.net()
        freq = analysis.ActiveFrequencyMap(alpha=1.0, p=net.p)
        seg = net.segment(2)
        freq.counts[seg.offset + 5] = 1
        freq.epochs = 1
        maps = analysis.layer_heatmap(freq, net)
        nonzero = {i: (maps[i].grid != 0).sum() + (maps[i].bias != 0).sum()
                   for i in maps}
        assert nonzero == {1: 0, 2: 1, 3: 0}

    def test_mass_conservation(self):
        net = self.net()
        rng = np.random.default_rng(4)
        freq = analysis.ActiveFrequencyMap(alpha=30.0, p=net.p)
        for _ in range(9):
            freq.add_epoch(rng.standard_normal(net.p))
        maps = analysis.layer_heatmap(freq, net)
        for seg in net.segments:
            hm = maps[seg.index]
            total = (hm.grid.sum() + hm.bias.sum()) * freq.epochs
            assert abs(total - freq.counts[seg.offset:seg.end].sum()) < 1e-6

    def test_conv_grid_shape_is_kernel_tiles(self):
        net = self.net()
        freq = analysis.ActiveFrequencyMap(alpha=10.0, p=net.p)
        freq.add_epoch(np.random.default_rng(5).standard_normal(net.p))
        maps = analysis.layer_heatmap(freq, net)
        seg = net.segment(2)  # conv 3->3 channels
        co, ci = seg.weight_shape[:2]
        assert maps[2].grid.shape == (co * 3, ci * 3)
        # tile (o, c) holds kernel (o, c)
        w_counts = seg.weight_view(freq.counts)
        assert np.array_equal(maps[2].grid[0:3, 3:6] * freq.epochs, w_counts[0, 1])


class TestGradientProfile:
    def test_hand_case(self):
        prof = analysis.gradient_profile(np.array([-3.0, 1.0, 2.0]))
        assert np.array_equal(prof.magnitudes, [3.0, 2.0, 1.0])

    def test_zero_gradient(self):
        prof = analysis.gradient_profile(np.zeros(10))
        assert not prof.magnitudes.any()

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(6)
        g = rng.standard_normal(100_000)
        prof = analysis.gradient_profile(g)
        assert np.array_equal(prof.magnitudes, np.sort(np.abs(g))[::-1])
        assert (np.diff(prof.magnitudes) <= 0).all()


class TestReinitSweep:
    def test_endpoints_reproduce_trained_and_init_accuracy(self):
        rng = np.random.default_rng(7)
        net = model.build_relu_net(1, 8, in_dim=6, out_dim=3)
        params = model.xavier_init(net, rng)
        images = rng.standard_normal((40, 6)).astype(np.float32)
        labels = rng.integers(0, 3, 40)
        theta0 = params.theta0.copy()
        thetaT = theta0 + rng.standard_normal(net.p).astype(np.float32)
        store_T = model.ParamStore(net, thetaT.copy())
        store_0 = model.ParamStore(net, theta0.copy())
        _, acc_T = model.evaluate(net, store_T, images, labels)
        _, acc_0 = model.evaluate(net, store_0, images, labels)
        rows = analysis.reinit_sweep(net, thetaT, theta0, [0.0, 100.0],
                                     images, labels)
        table = {(mode, pct): acc for mode, pct, acc in rows}
        assert table[("active", 0.0)] == acc_T
        assert table[("active", 100.0)] == acc_0
        assert table[("lazy", 0.0)] == acc_0
        assert table[("lazy", 100.0)] == acc_T

    def test_empty_grid(self):
        net = model.build_relu_net(1, 4, in_dim=3, out_dim=2)
        with pytest.raises(ValueError):
            analysis.reinit_sweep(net, np.zeros(net.p), np.zeros(net.p), [],
                                  np.zeros((2, 3)), np.zeros(2, dtype=int))

    def test_row_count(self):
        rng = np.random.default_rng(8)
        net = model.build_relu_net(1, 4, in_dim=3, out_dim=2)
        rows = analysis.reinit_sweep(
            net, rng.standard_normal(net.p), rng.standard_normal(net.p),
            [0, 10, 50], rng.standard_normal((10, 3)).astype(np.float32),
            rng.integers(0, 2, 10))
        assert len(rows) == 3 * 2
