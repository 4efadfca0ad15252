"""Compare the compiled kernel backend against the numpy fallback.

Times the conv/pool kernels on layer shapes the stock architectures
actually run, then a full forward+backward of each model family.

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(repeats):
    from lwsgd._backend import _pykernels
    try:
        from lwsgd._backend import _ckernels
    except ImportError:
        print("compiled backend not built; run `pip install -e .` first")
        return
    shapes = [
        ("conv 1->100 @28", (128, 1, 28, 28), 100),
        ("conv 100->100 @14", (128, 100, 14, 14), 100),
        ("conv 64->128 @16", (64, 64, 16, 16), 128),
        ("conv 256->256 @8", (32, 256, 8, 8), 256),
    ]
    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, xshape, co in shapes:
        x = rng.standard_normal(xshape).astype(np.float32)
        k = rng.standard_normal((co, xshape[1], 3, 3)).astype(np.float32)
        b = rng.standard_normal(co).astype(np.float32)
        gy = rng.standard_normal((xshape[0], co) + xshape[2:]).astype(np.float32)
        for label, call in [
            (name + " fwd", lambda m: m.conv2d_forward(x, k, b)),
            (name + " bwd", lambda m: m.conv2d_backward(x, k, gy)),
        ]:
            t_py = best_of(lambda: call(_pykernels), repeats)
            t_c = best_of(lambda: call(_ckernels), repeats)
            print(f"{label:24s} {t_py * 1e3:9.1f}ms {t_c * 1e3:9.1f}ms "
                  f"{t_py / t_c:7.2f}x")
    x = rng.standard_normal((128, 100, 28, 28)).astype(np.float32)
    y, idx = _pykernels.maxpool2_forward(x)
    gy = rng.standard_normal(y.shape).astype(np.float32)
    for label, call in [
        ("maxpool2 fwd", lambda m: m.maxpool2_forward(x)),
        ("maxpool2 bwd", lambda m: m.maxpool2_backward(idx, gy)),
    ]:
        t_py = best_of(lambda: call(_pykernels), repeats)
        t_c = best_of(lambda: call(_ckernels), repeats)
        print(f"{label:24s} {t_py * 1e3:9.1f}ms {t_c * 1e3:9.1f}ms "
              f"{t_py / t_c:7.2f}x")


def bench_models(repeats):
    import lwsgd._backend as backend
    from lwsgd import model

    rng = np.random.default_rng(1)
    print(f"\nmodel step (backend = {backend.BACKEND}), batch 128:")
    for name, net in [
        ("relu d=4 w=1000", model.build_relu_net(4, 1000)),
        ("conv d=2 w=100", model.build_conv_net(2, 100)),
        ("vgg5", model.build_vgg("vgg5")),
    ]:
        params = model.xavier_init(net, rng)
        if len(net.in_shape) == 1:
            x = rng.standard_normal((128, net.in_shape[0])).astype(np.float32)
        else:
            x = rng.standard_normal((128,) + net.in_shape).astype(np.float32)
        yl = rng.integers(0, net.out_dim, 128)

        def step():
            tape = model.ActivationTape()
            logits = model.forward(net, params, x, tape)
            _, g = model.softmax_cross_entropy(logits, yl)
            model.backward(net, params, tape, g)

        print(f"  {name:18s} fwd+bwd {best_of(step, repeats) * 1e3:8.1f}ms")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    bench_kernels(args.repeats)
    bench_models(args.repeats)
