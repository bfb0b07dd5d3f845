"""Compare the compiled and numpy convolution kernels.

Times im2col / col2im on the layer shapes of the default 128x128
discriminator, then one full train step (forward + backward) with each
backend swapped in. Usage::

    python benchmarks/bench_kernels.py --batch 16 --repeat 5
"""

import argparse
import time
from contextlib import contextmanager

import numpy as np

from ganforensics import kernels, model, nncore


@contextmanager
def backend(name):
    saved = kernels.im2col, kernels.col2im
    kernels.im2col, kernels.col2im = kernels.get_backend(name)
    try:
        yield
    finally:
        kernels.im2col, kernels.col2im = saved


def best_of(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def layer_cases(config, batch):
    sizes = config.spatial_trace()
    c_in = config.in_channels
    for i, c_out in enumerate(config.widths):
        yield f"conv{i + 1}", (batch, c_in, sizes[i] + 2, sizes[i] + 2), 4, 2, sizes[i + 1]
        c_in = c_out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--widths", default="64,128,256,512")
    args = ap.parse_args(argv)

    names = kernels.available_backends()
    config = model.DiscriminatorConfig(widths=tuple(int(w) for w in args.widths.split(",")))
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(names)}; batch {args.batch}; best of {args.repeat}")
    header = f"{'case':<22}" + "".join(f"{n + ' ms':>14}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)

    def report(label, timings):
        line = f"{label:<22}" + "".join(f"{timings[n] * 1e3:>14.2f}" for n in names)
        if len(names) == 2:
            line += f"{timings['python'] / timings['cython']:>9.2f}x"
        print(line)

    for label, shape, k, s, o in layer_cases(config, args.batch):
        xp = rng.standard_normal(shape).astype(np.float32)
        timings = {}
        for name in names:
            im2col, _ = kernels.get_backend(name)
            timings[name] = best_of(lambda: im2col(xp, k, s, o, o), args.repeat)
        report(f"im2col {label}", timings)
        n, c, hp, wp = shape
        cols = rng.standard_normal((n * o * o, c * k * k)).astype(np.float32)
        timings = {}
        for name in names:
            _, col2im = kernels.get_backend(name)
            timings[name] = best_of(lambda: col2im(cols, n, c, hp, wp, k, s, o, o), args.repeat)
        report(f"col2im {label}", timings)

    net = model.build(config, init_seed=0)
    x = rng.uniform(-1, 1, (args.batch, 3, config.input_size, config.input_size)).astype(np.float32)
    labels = np.arange(args.batch) % 2

    def step():
        logits = net.forward(x, "train")
        _, grad = nncore.bce_with_logits(logits, labels)
        net.backward(grad)

    timings = {}
    for name in names:
        with backend(name):
            timings[name] = best_of(step, max(1, args.repeat // 2))
    report("train step", timings)


if __name__ == "__main__":
    main()
