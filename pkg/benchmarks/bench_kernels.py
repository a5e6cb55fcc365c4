"""Compare the numba and numpy kernels on the forward and backward passes.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 32 256]

Each row times one forward pass plus one backward pass over a batch of
channel draws. The numba column is skipped when numba is unavailable or
disabled with FSOGNN_DISABLE_NUMBA=1.
"""

import argparse
import time

import numpy as np

from fsognn import channel as chan
from fsognn import kernels
from fsognn.gnn import GnnConfig, backward, forward, init_params
from fsognn.graph_core import build_shift


def time_backend(backend, shift, x, params, repeat):
    out, cache = forward(x, shift, params, backend)  # warm-up (and JIT compile)
    backward(cache, np.ones_like(out))
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out, cache = forward(x, shift, params, backend)
        backward(cache, np.ones_like(out))
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, nargs="+", default=[32, 256])
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
    params = init_params(GnnConfig(), 0)
    print(f"{'N':>3} {'M':>3} {'batch':>6} " + " ".join(f"{b + ' ms':>10}" for b in backends)
          + ("   speedup" if len(backends) == 2 else ""))
    for n, m in [(5, 2), (10, 4)]:
        topo = chan.sample_topology(n, m, 0)
        for b in args.batch:
            h = chan.sample_csi(topo, chan.FadingConfig(), np.random.default_rng(0), size=b)
            shift = build_shift(h)
            x = np.ones(n + m)
            t = [time_backend(be, shift, x, params, args.repeat) for be in backends]
            row = f"{n:>3} {m:>3} {b:>6} " + " ".join(f"{1e3 * v:>10.3f}" for v in t)
            if len(t) == 2:
                row += f"   {t[0] / t[1]:>6.2f}x"
            print(row)


if __name__ == "__main__":
    main()
