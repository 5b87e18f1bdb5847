"""Time the native and numpy loss kernels on identical inputs.

    python benchmarks/bench_kernels.py [--batch 256] [--dim 32] [--classes 30] [--repeat 50]
"""
import argparse
import timeit

import numpy as np

from crossaug import kernels


def make_inputs(batch, dim, classes, seed=0):
    g = np.random.default_rng(seed)
    img = g.standard_normal((batch, dim))
    txt = g.standard_normal((batch, dim))
    img /= np.linalg.norm(img, axis=1, keepdims=True)
    txt /= np.linalg.norm(txt, axis=1, keepdims=True)
    labels = g.integers(0, classes, batch)
    logits = g.standard_normal((batch, classes))
    log_counts = np.log(g.integers(1, 200, classes).astype(np.float64))
    return img, txt, labels, logits, log_counts


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--classes", type=int, default=30)
    p.add_argument("--repeat", type=int, default=50)
    args = p.parse_args(argv)
    img, txt, labels, logits, log_counts = make_inputs(args.batch, args.dim, args.classes)
    cases = {
        "triplet/hardest": lambda: kernels.triplet_forward_backward(img, txt, labels, 0.3, kernels.HARDEST),
        "triplet/all_pairs": lambda: kernels.triplet_forward_backward(img, txt, labels, 0.3, kernels.ALL_PAIRS),
        "balanced_softmax": lambda: kernels.balanced_softmax_forward_backward(logits, labels, log_counts),
    }
    backends = kernels.available_backends()
    print(f"batch={args.batch} dim={args.dim} classes={args.classes} repeat={args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{b + ' (ms)':>16}" for b in backends) + f"{'speedup':>10}")
    previous = kernels.get_backend()
    try:
        for name, fn in cases.items():
            times = {}
            for b in backends:
                kernels.set_backend(b)
                fn()  # warm up
                times[b] = min(timeit.repeat(fn, number=args.repeat, repeat=3)) / args.repeat * 1e3
            row = f"{name:<20}" + "".join(f"{times[b]:>16.4f}" for b in backends)
            if "native" in times:
                row += f"{times['python'] / times['native']:>9.1f}x"
            print(row)
    finally:
        kernels.set_backend(previous)


if __name__ == "__main__":
    main()
