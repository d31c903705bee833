"""Time the compiled kernels against the NumPy fallback.

Usage::

    python benchmarks/bench_kernels.py [--sizes 1000 4000 16000] [--repeat 3]

For each size the script times the direct sum, the tree evaluation and the
mollified local sums with both backends, checks that the two backends agree,
and prints one row per (kernel, size). The direct NumPy sum is skipped above
``--direct-max`` particles because it scales quadratically.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from vlasov_cutoff import _backend
from vlasov_cutoff.coulomb_field import FieldMethod, Softening, eval_self_field


def _best(fn, repeat: int) -> tuple[float, object]:
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cloud(n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    pos = rng.normal(scale=4.0, size=(n, 3))
    w = rng.uniform(0.5, 1.5, n) / n
    return pos, w


def bench(sizes, repeat: int, direct_max: int, threads: int) -> list[tuple]:
    rng = np.random.default_rng(1)
    soft = Softening(0.05)
    rows = []
    for n in sizes:
        pos, w = _cloud(n, rng)
        state = (pos, w)
        for name, method in (("direct_sum", FieldMethod.direct()),
                             ("tree_eval", FieldMethod.tree(0.5))):
            times = {}
            fields = {}
            for be in ("compiled", "numpy"):
                if be == "numpy" and name == "direct_sum" and n > direct_max:
                    continue
                t, res = _best(lambda: eval_self_field(state, method, soft, threads=threads,
                                                       backend=be), repeat)
                times[be], fields[be] = t, res.field
            diff = (np.abs(fields["compiled"] - fields["numpy"]).max()
                    / np.abs(fields["compiled"]).max()) if "numpy" in fields else np.nan
            rows.append((name, n, times["compiled"], times.get("numpy", np.nan), diff))

        centers = rng.uniform(-4, 4, size=(min(n, 2000), 3))
        vals = np.column_stack([w, w * rng.uniform(0, 2, n)])
        outs = {}
        times = {}
        for be in ("compiled", "numpy"):
            kern = _backend.get(be)
            out = np.zeros((centers.shape[0], 2))
            times[be], _ = _best(lambda: kern.mollified_sums(pos, vals, centers, 1.5, threads, out),
                                 repeat)
            outs[be] = out.copy()
        diff = np.abs(outs["compiled"] - outs["numpy"]).max() / np.abs(outs["compiled"]).max()
        rows.append(("mollified_sums", n, times["compiled"], times["numpy"], diff))
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 4000, 16000])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--direct-max", type=int, default=8000)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    if _backend.compiled is None:
        raise SystemExit("compiled kernels are not built; run pip install -e . first")
    print(f"{'kernel':16s} {'n':>7s} {'compiled [s]':>13s} {'numpy [s]':>11s} "
          f"{'speedup':>8s} {'rel diff':>9s}")
    for name, n, tc, tn, diff in bench(args.sizes, args.repeat, args.direct_max, args.threads):
        print(f"{name:16s} {n:7d} {tc:13.4g} {tn:11.4g} {tn / tc:8.3g} {diff:9.2e}")


if __name__ == "__main__":
    main()
