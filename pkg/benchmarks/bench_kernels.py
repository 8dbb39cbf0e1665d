"""Compare the compiled and numpy sampling kernels.

Times the forward and backward multilinear samplers on 2D and 3D grids,
plus one full loss-and-gradient evaluation (integration, warp, loss) with
each backend active. Prints a table and optionally writes JSON.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import platform
import timeit

import numpy as np

from svfpredict import kernels
from svfpredict.fields import Grid
from svfpredict.loss import LossConfig, loss_and_grad

SHAPES = [(64, 64), (128, 128), (256, 256), (32, 32, 32), (64, 64, 64)]


def _case(dims, rng):
    grid = Grid(dims)
    src = rng.random((1,) + dims)
    coords = grid.identity() + rng.normal(scale=1.5, size=(len(dims),) + dims)
    grad = rng.normal(size=(1,) + dims)
    return src, coords, grad


def _best(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def run(repeat: int, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    backends = [b for b in kernels.BACKENDS if b != "cython" or kernels.HAVE_EXTENSION]
    rows = []
    for dims in SHAPES:
        src, coords, grad = _case(dims, rng)
        for op, fn in (("sample", lambda b: kernels.sample_linear(src, coords, backend=b)),
                       ("backward", lambda b: kernels.sample_linear_backward(src, coords, grad, backend=b))):
            times = {b: _best(lambda b=b: fn(b), repeat) for b in backends}
            rows.append({"op": op, "dims": list(dims), **{f"{b}_s": t for b, t in times.items()}})
        if len(dims) == 2 or dims[0] <= 32:
            x0, xt = src[0], rng.random(dims)
            v = 0.3 * rng.normal(size=(len(dims),) + dims)
            identity = Grid(dims).identity()
            times = {}
            saved = kernels.BACKEND
            try:
                for b in backends:
                    kernels.BACKEND = b
                    times[b] = _best(lambda: loss_and_grad(xt, x0, v, 1.0, LossConfig(), 7, identity), repeat)
            finally:
                kernels.BACKEND = saved
            rows.append({"op": "loss+grad", "dims": list(dims), **{f"{b}_s": t for b, t in times.items()}})
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="write results to this path")
    args = p.parse_args(argv)
    rows = run(args.repeat)
    print(f"extension built: {kernels.HAVE_EXTENSION}; python {platform.python_version()}; numpy {np.__version__}")
    print(f"{'op':<10} {'dims':<14} {'cython ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for r in rows:
        c, n = r.get("cython_s"), r["numpy_s"]
        dims = "x".join(map(str, r["dims"]))
        c_ms = f"{c * 1e3:10.3f}" if c else f"{'-':>10}"
        speed = f"{n / c:8.1f}" if c else f"{'-':>8}"
        print(f"{r['op']:<10} {dims:<14} {c_ms} {n * 1e3:10.3f} {speed}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
