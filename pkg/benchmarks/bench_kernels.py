"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each kernel runs on a workload of the size it sees in practice (one 2 s audio
window, one training batch of 64x64 tensors). Outputs of both backends are
checked for agreement before timing.
"""

import argparse
import sys
import timeit

import numpy as np

from fdmsense import dsp
from fdmsense._kernels import fallback, native


def workloads(quick: bool):
    rng = np.random.default_rng(0)
    n_audio = 8000 if quick else 32000
    batch = 4 if quick else 16
    sections = dsp.design_bandpass(100, 1000, 16000).sections
    audio = rng.standard_normal(n_audio)
    x1 = rng.random((batch, 1, 64, 64)).astype(np.float32)
    w1 = rng.standard_normal((8, 1, 3, 3)).astype(np.float32)
    b1 = np.zeros(8, np.float32)
    x2 = rng.random((batch, 8, 32, 32)).astype(np.float32)
    w2 = rng.standard_normal((16, 8, 3, 3)).astype(np.float32)
    d2 = rng.standard_normal((batch, 16, 32, 32)).astype(np.float32)
    pool_in = rng.random((batch, 8, 64, 64)).astype(np.float32)
    state = np.array([1, 2, 3, 4], dtype=np.uint64)
    n_rng = 2000 if quick else 20000
    return [
        ("biquad_cascade", f"{n_audio} samples, 2 sections",
         lambda k: k.biquad_cascade(sections, audio)),
        ("xoshiro_fill", f"{n_rng} draws",
         lambda k: k.xoshiro_fill(state.copy(), n_rng)),
        ("conv2d_forward", f"{batch}x1x64x64 -> 8 maps",
         lambda k: k.conv2d_forward(x1, w1, b1)),
        ("conv2d_backward", f"{batch}x8x32x32 -> 16 maps",
         lambda k: k.conv2d_backward(x2, w2, d2)),
        ("maxpool2_forward", f"{batch}x8x64x64",
         lambda k: k.maxpool2_forward(pool_in)),
    ]


def _agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_agree(u, v) for u, v in zip(a, b))
    if a.dtype.kind in "ui":
        return np.array_equal(a, b)
    # float32 sums over thousands of terms: compare relative to the output scale
    return float(np.max(np.abs(a - b))) <= 1e-5 * max(float(np.max(np.abs(b))), 1.0)


def best_time(fn, repeat: int) -> float:
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--quick", action="store_true", help="smaller workloads")
    args = p.parse_args(argv)
    if native is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    print(f"{'kernel':<18} {'workload':<28} {'python ms':>10} {'native ms':>10} {'speedup':>8}")
    for name, what, call in workloads(args.quick):
        if not _agree(call(native), call(fallback)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        tp = best_time(lambda: call(fallback), args.repeat)
        tn = best_time(lambda: call(native), args.repeat)
        print(f"{name:<18} {what:<28} {tp * 1e3:10.3f} {tn * 1e3:10.3f} {tp / tn:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
