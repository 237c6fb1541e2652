"""Compare the numba and numpy kernel paths.

    python benchmarks/bench_kernels.py                # per-kernel timings
    python benchmarks/bench_kernels.py --end-to-end   # also a training run per path

The end-to-end mode launches one subprocess per path, with and without
GLITTER_DISABLE_NUMBA=1, so each run picks its kernels at import time the way
a user would.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from glitter import kernels


def make_inputs(rng, rows, K, vocab, dim, seg_len):
    scores = rng.standard_normal((rows, K))
    counts = np.full(rows, K, dtype=np.int64)
    lengths = rng.integers(1, 2 * seg_len, size=rows)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    ids = rng.integers(0, vocab, size=offsets[-1]).astype(np.int64)
    table = rng.standard_normal((vocab, dim))
    dout = rng.standard_normal((rows, dim))
    logits = rng.standard_normal((rows, 5))
    targets = np.eye(5)[rng.integers(0, 5, size=rows)]
    return {
        "topk_rows": (scores, counts, 2),
        "segment_mean": (table, ids, offsets),
        "segment_mean_grad": (dout, ids, offsets, vocab),
        "softmax_xent": (logits, targets, 1.0),
    }


def best_of(fn, args, repeat, number):
    fn(*args)  # warm-up (and JIT compile for the numba path)
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


def kernel_table(rows, repeat, number):
    rng = np.random.default_rng(0)
    inputs = make_inputs(rng, rows, K=8, vocab=5000, dim=64, seg_len=20)
    out = []
    for name, args in inputs.items():
        t_np = best_of(kernels.NUMPY_KERNELS[name], args, repeat, number)
        t_nb = best_of(kernels.NUMBA_KERNELS[name], args, repeat, number) if kernels.HAVE_NUMBA else float("nan")
        out.append({"kernel": name, "rows": rows, "numpy_us": 1e6 * t_np, "numba_us": 1e6 * t_nb,
                    "speedup": t_np / t_nb})
    return out


_E2E = """
import json, time
from glitter import kernels
from glitter.synth import make_text_toy
from glitter.training import ModelSpec, TrainConfig, train
from glitter.bench import median_epoch_seconds
out = make_text_toy(seed=0, n_train={n}, n_dev=50)
cfg = TrainConfig(regime="glitter", k1=2, epochs={epochs}, batch_size=32, model=ModelSpec("boe", (32,), 32),
                  patience=0)
res = train(out.train, out.pool, None, cfg)
print(json.dumps({{"numba": kernels.USE_NUMBA,
                  "median_epoch_s": median_epoch_seconds(h.epoch_wall_seconds for h in res.history),
                  "final_loss": res.history[-1].train_loss}}))
"""


def end_to_end(n, epochs):
    code = _E2E.format(n=n, epochs=epochs)
    rows = []
    for disable in ("0", "1"):
        env = dict(os.environ, GLITTER_DISABLE_NUMBA=disable)
        proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        rows.append(json.loads(proc.stdout.strip().splitlines()[-1]))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, nargs="+", default=[64, 1024, 16384])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    ap.add_argument("--end-to-end", action="store_true")
    ap.add_argument("--n-train", type=int, default=400)
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = ap.parse_args(argv)

    table = [r for rows in args.rows for r in kernel_table(rows, args.repeat, args.number)]
    e2e = end_to_end(args.n_train, args.epochs) if args.end_to_end else []
    if args.json:
        print(json.dumps({"kernels": table, "end_to_end": e2e}, indent=1))
        return 0
    print(f"{'kernel':<18} {'rows':>7} {'numpy us':>11} {'numba us':>11} {'speedup':>8}")
    for r in table:
        print(f"{r['kernel']:<18} {r['rows']:>7} {r['numpy_us']:>11.1f} {r['numba_us']:>11.1f} {r['speedup']:>7.2f}x")
    for r in e2e:
        path = "numba" if r["numba"] else "numpy"
        print(f"end-to-end {path}: median epoch {r['median_epoch_s']:.3f}s, final loss {r['final_loss']:.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
