"""Kernel-level oracles: naive reference implementations and finite differences."""

import numpy as np
import pytest

from lwsgd import tensor
from lwsgd.errors import ShapeError


def triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def direct_conv(x, k, b):
    """Six-loop reference convolution (cross-correlation, pad 1)."""
    ci, h, w = x.shape
    co = k.shape[0]
    xp = np.zeros((ci, h + 2, w + 2), dtype=np.float64)
    xp[:, 1:-1, 1:-1] = x
    y = np.zeros((co, h, w), dtype=np.float64)
    for o in range(co):
        for yy in range(h):
            for xx in range(w):
                acc = 0.0
                for c in range(ci):
                    for ky in range(3):
                        for kx in range(3):
                            acc += xp[c, yy + ky, xx + kx] * k[o, c, ky, kx]
                y[o, yy, xx] = acc + b[o]
    return y


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(tensor.matmul(np.eye(2), a), a)

    def test_projector(self):
        p = np.array([[1.0, 0.0], [0.0, 0.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(tensor.matmul(p, b), [[5.0, 6.0], [0.0, 0.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((3, 2))
        got = tensor.matmul(a, b)
        ref = triple_loop_matmul(a, b)
        assert np.allclose(got, ref, rtol=1e-6)

    def test_random_8x8_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.standard_normal((8, 8))
            b = rng.standard_normal((8, 8))
            assert np.allclose(tensor.matmul(a, b), triple_loop_matmul(a, b), rtol=1e-6)

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            tensor.matmul(np.zeros((2, 3)), np.zeros((2, 2)))


class TestConv2d:
    def test_delta_kernel_is_identity(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 5, 5))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        assert np.allclose(tensor.conv2d(x, k), x)

    def test_zero_kernel_constant_bias(self):
        x = np.random.default_rng(3).standard_normal((2, 4, 4))
        k = np.zeros((3, 2, 3, 3))
        b = np.array([1.0, -2.0, 0.5])
        y = tensor.conv2d(x, k, b)
        for o in range(3):
            assert np.allclose(y[o], b[o])

    def test_against_direct_loop(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        y = tensor.conv2d(x, k, b)
        assert np.allclose(y, direct_conv(x, k, b), rtol=1e-6, atol=1e-9)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.conv2d(np.zeros((2, 4, 4)), np.zeros((3, 5, 3, 3)))

    def test_kernel_size_enforced(self):
        with pytest.raises(ShapeError):
            tensor.conv2d(np.zeros((2, 4, 4)), np.zeros((3, 2, 5, 5)))

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 2, 6, 6))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        y = tensor.conv2d(x, k, b)
        for n in range(4):
            assert np.allclose(y[n], tensor.conv2d(x[n], k, b))


class TestConv2dBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 4, 4))
        k = rng.standard_normal((3, 2, 3, 3))
        gx, gk, gb = tensor.conv2d_backward(x, k, np.zeros((3, 4, 4)))
        assert not gx.any() and not gk.any() and not gb.any()

    def test_delta_kernel_passes_grad_through(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 5, 5))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        gy = rng.standard_normal((1, 5, 5))
        gx, _, _ = tensor.conv2d_backward(x, k, gy)
        assert np.allclose(gx, gy)

    def test_finite_differences(self):
        rng = np.random.default_rng(8)
        h = 1e-5
        for _ in range(5):
            x = rng.standard_normal((2, 4, 4))
            k = rng.standard_normal((3, 2, 3, 3))
            b = rng.standard_normal(3)
            gy = rng.standard_normal((3, 4, 4))
            gx, gk, gb = tensor.conv2d_backward(x, k, gy)
            for arr, grad in ((x, gx), (k, gk), (b, gb)):
                flat = arr.reshape(-1)
                for i in rng.integers(0, flat.size, 8):
                    old = flat[i]
                    flat[i] = old + h
                    up = float((tensor.conv2d(x, k, b) * gy).sum())
                    flat[i] = old - h
                    dn = float((tensor.conv2d(x, k, b) * gy).sum())
                    flat[i] = old
                    num = (up - dn) / (2 * h)
                    assert abs(num - grad.reshape(-1)[i]) / max(1e-8, abs(num)) < 1e-4

    def test_skipping_input_grad_leaves_others_bitwise(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((3, 2, 4, 4))
        k = rng.standard_normal((4, 2, 3, 3))
        gy = rng.standard_normal((3, 4, 4, 4))
        gx, gk, gb = tensor.conv2d_backward(x, k, gy, need_input_grad=True)
        gx2, gk2, gb2 = tensor.conv2d_backward(x, k, gy, need_input_grad=False)
        assert gx2 is None
        assert np.array_equal(gk, gk2) and np.array_equal(gb, gb2)


class TestMaxpool2:
    def test_constant_input_first_index(self):
        y, idx = tensor.maxpool2(np.full((1, 4, 4), 3.5))
        assert np.allclose(y, 3.5)
        assert not idx.any()

    def test_single_window(self):
        y, idx = tensor.maxpool2(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        assert y[0, 0, 0] == 4.0 and idx[0, 0, 0] == 3

    def test_odd_dims_rejected(self):
        with pytest.raises(ShapeError):
            tensor.maxpool2(np.zeros((1, 5, 4)))

    def test_backward_routes_each_grad_once(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 3, 6, 8))
        y, idx = tensor.maxpool2(x)
        gy = rng.standard_normal(y.shape)
        gx = tensor.maxpool2_backward(idx, gy)
        # brute force per window: the gradient lands on the max cell only
        for n in range(2):
            for c in range(3):
                for i in range(3):
                    for j in range(4):
                        win = x[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                        gwin = gx[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                        flat = win.reshape(-1)
                        gflat = gwin.reshape(-1)
                        amax = int(flat.argmax())
                        for t in range(4):
                            expect = gy[n, c, i, j] if t == amax else 0.0
                            assert gflat[t] == expect


class TestRelu:
    def test_basic(self):
        assert np.array_equal(tensor.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_grad_zero_at_zero(self):
        g = tensor.relu_backward(np.array([0.0, -1.0, 3.0]), np.ones(3))
        assert np.array_equal(g, [0.0, 0.0, 1.0])

    def test_finite_differences_away_from_zero(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(50)
        x[np.abs(x) < 1e-3] = 0.5
        gy = rng.standard_normal(50)
        g = tensor.relu_backward(x, gy)
        h = 1e-6
        num = ((tensor.relu(x + h) - tensor.relu(x - h)) / (2 * h)) * gy
        assert np.allclose(g, num, atol=1e-6)


class TestBackwardFiniteDifferences100:
    """Central finite differences (h=1e-5, float64) on >= 100 tiny instances."""

    H = 1e-5

    def fd_check(self, f, arr, grad, rng, n_coords=3):
        flat = arr.reshape(-1)
        for i in rng.integers(0, flat.size, n_coords):
            old = flat[i]
            flat[i] = old + self.H
            up = f()
            flat[i] = old - self.H
            dn = f()
            flat[i] = old
            num = (up - dn) / (2 * self.H)
            if abs(num) < 1e-9 and abs(grad.reshape(-1)[i]) < 1e-9:
                continue
            assert abs(num - grad.reshape(-1)[i]) / max(1e-8, abs(num)) < 1e-4

    def test_conv_backward_100_instances(self):
        rng = np.random.default_rng(100)
        for _ in range(100):
            ci = int(rng.integers(1, 4))
            co = int(rng.integers(1, 4))
            h = int(rng.integers(2, 6))
            w = int(rng.integers(2, 6))
            x = rng.standard_normal((ci, h, w))
            k = rng.standard_normal((co, ci, 3, 3))
            b = rng.standard_normal(co)
            gy = rng.standard_normal((co, h, w))
            gx, gk, gb = tensor.conv2d_backward(x, k, gy)
            f = lambda: float((tensor.conv2d(x, k, b) * gy).sum())
            self.fd_check(f, x, gx, rng)
            self.fd_check(f, k, gk, rng)
            self.fd_check(f, b, gb, rng, n_coords=1)

    def test_maxpool_backward_100_instances(self):
        rng = np.random.default_rng(200)
        for _ in range(100):
            c = int(rng.integers(1, 4))
            h = 2 * int(rng.integers(1, 4))
            w = 2 * int(rng.integers(1, 4))
            x = rng.standard_normal((c, h, w))
            _, idx = tensor.maxpool2(x)
            gy = rng.standard_normal((c, h // 2, w // 2))
            gx = tensor.maxpool2_backward(idx, gy)
            f = lambda: float((tensor.maxpool2(x)[0] * gy).sum())
            self.fd_check(f, x, gx, rng, n_coords=4)


class TestDeterminism:
    def test_kernels_bit_identical_across_calls(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((4, 3, 8, 8)).astype(np.float32)
        k = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        y1 = tensor.conv2d(x, k, b)
        y2 = tensor.conv2d(x, k, b)
        assert np.array_equal(y1, y2)
        gy = rng.standard_normal(y1.shape).astype(np.float32)
        out1 = tensor.conv2d_backward(x, k, gy)
        out2 = tensor.conv2d_backward(x, k, gy)
        for a, b_ in zip(out1, out2):
            assert np.array_equal(a, b_)


def test_backends_agree():
    """Both kernel backends compute the same values (loose float32 tolerance)."""
    from lwsgd._backend import _pykernels
    try:
        from lwsgd._backend import _ckernels
    except ImportError:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(13)
    x = rng.standard_normal((3, 4, 6, 6)).astype(np.float32)
    k = rng.standard_normal((5, 4, 3, 3)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    ya = _pykernels.conv2d_forward(x, k, b)
    yb = _ckernels.conv2d_forward(x, k, b)
    assert np.allclose(ya, yb, rtol=1e-5, atol=1e-6)
    gy = rng.standard_normal(ya.shape).astype(np.float32)
    for pair in zip(_pykernels.conv2d_backward(x, k, gy),
                    _ckernels.conv2d_backward(x, k, gy)):
        assert np.allclose(pair[0], pair[1], rtol=1e-4, atol=1e-5)
    pa, ia = _pykernels.maxpool2_forward(x)
    pb, ib = _ckernels.maxpool2_forward(x)
    assert np.array_equal(pa, pb) and np.array_equal(ia, ib)
