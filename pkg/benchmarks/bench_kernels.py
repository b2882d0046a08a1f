"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--json]

Times the two hot kernels on shapes taken from the default model (vocoder
resblock convs, decoder convs, attention softmax) and a full streaming
vocoder pass, single-threaded.
"""

import argparse
import json
import time

import numpy as np
from threadpoolctl import threadpool_limits

from streamvc import kernels
from streamvc.model_io import random_init

CONV_CASES = [
    # name, cin, cout, k, dilation, t
    ("vocoder.resblock stage0 k11 d5", 64, 64, 11, 5, 400),
    ("vocoder.resblock stage2 k3 d1", 16, 16, 3, 1, 3200),
    ("vocoder.conv_pre frame", 80, 128, 7, 1, 8),
    ("decoder.conv1 chunk", 256, 1024, 9, 1, 24),
    ("decoder.conv2 chunk", 1024, 256, 1, 1, 16),
]
SOFTMAX_CASES = [("encoder attention 160 ms", 4, 4, 44), ("offline attention 5 s", 4, 125, 125)]


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for name, cin, cout, k, d, t in CONV_CASES:
        x = rng.standard_normal((cin, t + d * (k - 1))).astype(np.float32)
        w = rng.standard_normal((cout, cin, k)).astype(np.float32)
        b = rng.standard_normal(cout).astype(np.float32)
        rows.append(("conv1d " + name, {be: best_of(lambda: kernels.conv1d_valid(x, w, b, d), repeats)
                                        for be in _each_backend()}))
    for name, h, tq, tk in SOFTMAX_CASES:
        s = rng.standard_normal((h, tq, tk))
        m = np.tril(np.ones((tq, tk), dtype=bool), k=tk - tq)
        rows.append(("softmax " + name, {be: best_of(lambda: kernels.masked_softmax(s, m), repeats)
                                         for be in _each_backend()}))
    voc = random_init(seed=0).vocoder(causal=True)
    mels = rng.standard_normal((50, 80)).astype(np.float32)

    def stream():
        sess = voc.new_session()
        for i in range(0, 50, 2):
            sess.generate_streaming(mels[i : i + 2])

    rows.append(("streaming vocoder 0.5 s", {be: best_of(stream, max(1, repeats // 5)) for be in _each_backend()}))
    return rows


def _each_backend():
    # generator yields while the backend is switched, so the timed lambda sees it
    for be in kernels.available_backends():
        with kernels.use_backend(be):
            yield be


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20, help="timing repeats; the best is kept")
    ap.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = ap.parse_args()
    with threadpool_limits(1):
        rows = run(args.repeats)
    if args.json:
        print(json.dumps([{"case": n, **{k: v * 1e3 for k, v in r.items()}} for n, r in rows], indent=2))
        return
    backends = kernels.available_backends()
    print(f"{'case':44s}" + "".join(f"{b + ' ms':>14s}" for b in backends) + f"{'speedup':>10s}")
    for name, r in rows:
        line = f"{name:44s}" + "".join(f"{1e3 * r[b]:14.3f}" for b in backends)
        if "compiled" in r and "python" in r:
            line += f"{r['python'] / r['compiled']:10.2f}"
        print(line)


if __name__ == "__main__":
    main()
