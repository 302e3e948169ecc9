"""Compare the numba and numpy kernel backends.

Kernel timings call both implementations directly. The end-to-end timing runs
one cost-and-input-gradient step of the default model in a subprocess per backend, with
SPEAKERINV_DISABLE_NUMBA toggled, so the dispatch layer is exercised too.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from speakerinv import _accel, kernels

STEP = """
import time, numpy as np
from speakerinv import diffnet, _accel
from speakerinv.diffnet import Architecture
m = diffnet.init_model(Architecture(num_classes=20), 0)
x = np.random.default_rng(0).standard_normal(m.input_window_len) * 0.05
diffnet.cost_and_grad_full(m, x, 3)  # warm-up and jit
t = time.perf_counter()
for _ in range({n}):
    diffnet.cost_and_grad_full(m, x, 3)
print(_accel.backend_name(), (time.perf_counter() - t) / {n})
"""


def cases(rng):
    sinc_in = rng.standard_normal((16, 1, 3200))
    conv_in = rng.standard_normal((16, 32, 767))
    pool_in = rng.standard_normal((16, 32, 3072))
    out, arg = kernels.maxpool_np(pool_in, 4)
    dcols = rng.standard_normal((16, 763, 32 * 5))
    u = rng.random(6 * 10**5)
    return {
        "im2col sinc": (kernels.im2col_nb, kernels.im2col_np, (sinc_in, 129)),
        "im2col conv": (kernels.im2col_nb, kernels.im2col_np, (conv_in, 5)),
        "col2im conv": (kernels.col2im_nb, kernels.col2im_np, (dcols, 767, 32, 5)),
        "maxpool": (kernels.maxpool_nb, kernels.maxpool_np, (pool_in, 4)),
        "maxpool backward": (kernels.maxpool_backward_nb, kernels.maxpool_backward_np, (out, arg, 4, 3072)),
        "vonmises 1e5": (kernels.vonmises_nb, kernels.vonmises_py, (0.1, u, 10**5)),
    }


def best_of(fn, args, repeat):
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def end_to_end(n):
    rows = []
    for disabled in ("0", "1"):
        env = dict(os.environ, SPEAKERINV_DISABLE_NUMBA=disabled)
        out = subprocess.run([sys.executable, "-c", STEP.format(n=n)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        rows.append((out[0], float(out[1])))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=5, help="gradient steps per backend")
    args = ap.parse_args()
    if not _accel.NUMBA_AVAILABLE:
        sys.exit("numba is not installed; nothing to compare")
    print(f"{'kernel':18s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (fast, slow, a) in cases(np.random.default_rng(0)).items():
        tf, ts = best_of(fast, a, args.repeat), best_of(slow, a, args.repeat)
        print(f"{name:18s} {tf * 1e3:10.2f} {ts * 1e3:10.2f} {ts / tf:8.2f}")
    print()
    for backend, sec in end_to_end(args.steps):
        print(f"cost_and_grad_full step ({backend}): {sec * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
