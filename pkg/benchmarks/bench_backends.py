#!/usr/bin/env python3
"""Compare the compiled kernel core against the numpy fallback.

Micro-benchmarks the kernels that differ between backends (direct
convolution forward/backward, FFT row butterflies, elementwise erf) on
training-realistic shapes, checks that both backends agree numerically,
and optionally times an end-to-end training step per backend.  The
end-to-end runs happen in subprocesses because the backend is fixed at
import time (MIMK_BACKEND).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from mimk.backend import available_backends
from mimk.kspace import _fft_plan
from mimk.rng import SplitMix64


def rand(shape, seed):
    rng = SplitMix64(seed)
    return np.array(rng.next_floats(int(np.prod(shape)))).reshape(shape)


def best_of(fn, repeats: int, min_time: float = 0.01) -> float:
    """Best wall-clock time per call, with an inner loop sized so a single
    measurement is long enough to trust."""
    inner = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        dt = time.perf_counter() - t0
        if dt >= min_time or inner >= 1 << 16:
            break
        inner *= 2
    best = dt / inner
    for _ in range(repeats - 1):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def build_cases():
    """(name, runner(kernels) -> result) pairs on training-like shapes."""
    x_embed = rand((1, 64, 64), 1)
    w_embed = rand((32, 1, 4, 4), 2)
    g_embed = rand((32, 16, 16), 3)
    x_deep = rand((8, 32, 32), 4)
    w_deep = rand((16, 8, 3, 3), 5)
    g_deep = rand((16, 30, 30), 6)
    erf_in = rand((1_000_000,), 7) * 4.0 - 2.0

    n = 256
    rows = rand((n, n), 8) + 1j * rand((n, n), 9)
    rev, tw = _fft_plan(n, inverse=False)

    def fft_case(k):
        z = rows.copy()
        k.fft_rows(z, rev, tw)
        return z

    return [
        ("conv2d fwd 1x64x64 k4 s4", lambda k: k.conv2d_forward(x_embed, w_embed, 4)),
        ("conv2d fwd 8x32x32 k3 s1", lambda k: k.conv2d_forward(x_deep, w_deep, 1)),
        ("conv2d bwd_x 8x32x32", lambda k: k.conv2d_backward_x(g_deep, w_deep, 1, 32, 32)),
        ("conv2d bwd_w 8x32x32", lambda k: k.conv2d_backward_w(g_deep, x_deep, 1, 3)),
        ("conv2d bwd_x embed", lambda k: k.conv2d_backward_x(g_embed, w_embed, 4, 64, 64)),
        ("conv2d bwd_w embed", lambda k: k.conv2d_backward_w(g_embed, x_embed, 4, 4)),
        ("fft rows 256x256", fft_case),
        ("erf 1e6", lambda k: k.erf(erf_in)),
    ]


END_TO_END = """
import time
from mimk.backend import kernels
from mimk.data import phantom_manifest
from mimk.model import preset
from mimk.trainer import TrainRunConfig, train

run = TrainRunConfig(epochs=2, warmup_epochs=0, seed=1, sample_every=0,
                     mask_spec="patch ratio=0.5 seed=0 grid=16x16")
manifest = phantom_manifest(6, 64, seed=1)
t0 = time.time()
train(run, manifest, preset("desk_swin"))
print(f"backend={kernels.name} train 2x5 steps + eval: {time.time()-t0:.2f}s")
"""


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--skip-train", action="store_true",
                    help="micro-benchmarks only")
    args = ap.parse_args()

    backends = available_backends()
    names = [b.name for b in backends]
    print(f"backends available: {', '.join(names)}")
    if len(backends) == 1:
        print("compiled core not built; timing the numpy fallback only")

    cases = build_cases()
    col = max(len(name) for name, _ in cases)
    header = f"{'kernel':<{col}}  " + "".join(f"{n:>12}" for n in names)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for name, runner in cases:
        results = [runner(b) for b in backends]
        if len(results) == 2:
            if name.startswith("fft"):
                assert np.array_equal(results[0], results[1]), \
                    f"{name}: backends disagree bitwise"
            else:
                assert np.allclose(results[0], results[1], atol=1e-12), \
                    f"{name}: backends disagree"
        times = [best_of(lambda b=b: runner(b), args.repeats) for b in backends]
        line = f"{name:<{col}}  " + "".join(f"{t * 1e6:>10.1f}us" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>9.2f}x"
        print(line)

    if not args.skip_train:
        print()
        for backend in names:
            out = subprocess.run(
                [sys.executable, "-c", END_TO_END],
                env={**os.environ, "MIMK_BACKEND": backend},
                capture_output=True, text=True)
            print(out.stdout.strip() or out.stderr.strip())
    return 0


if __name__ == "__main__":
    sys.exit(main())
