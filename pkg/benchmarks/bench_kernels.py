"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --sizes 8x32x64 32x64x64 --repeat 50 --train-step

Kernel timings call both variants in-process. ``--train-step`` also times a
full joint training step in two subprocesses, one with JOINTRE_NO_NUMBA=1,
so the dispatch path the package really takes is measured.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from jointre import _accel, kernels


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_rnn(B, T, H, repeat):
    rng = np.random.default_rng(0)
    pre = rng.normal(size=(T, B, H))
    U = rng.normal(scale=1 / np.sqrt(H), size=(H, H))
    hs = kernels.rnn_scan_forward_numpy(pre, U)
    dout = rng.normal(size=hs.shape)
    rows = {}
    for backend in ("numpy", "numba"):
        fwd = getattr(kernels, f"rnn_scan_forward_{backend}")
        bwd = getattr(kernels, f"rnn_scan_backward_{backend}")
        fwd(pre, U), bwd(dout, hs, U)  # compile / warm up
        rows[backend] = (best_of(lambda: fwd(pre, U), repeat, 10),
                         best_of(lambda: bwd(dout, hs, U), repeat, 10))
    return rows


def bench_segment(B, T, d, repeat):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(B * T, d))
    # five segments per candidate, a few candidates per sentence
    starts = np.sort(rng.integers(0, B * T, size=5 * 4 * B))
    ends = np.minimum(starts + rng.integers(0, 6, size=starts.size), B * T)
    dout = rng.normal(size=(starts.size, d))
    rows = {}
    for backend in ("numpy", "numba"):
        fwd = getattr(kernels, f"segment_mean_forward_{backend}")
        bwd = getattr(kernels, f"segment_mean_backward_{backend}")
        fwd(X, starts, ends), bwd(dout, starts, ends, B * T)
        rows[backend] = (best_of(lambda: fwd(X, starts, ends), repeat, 10),
                         best_of(lambda: bwd(dout, starts, ends, B * T), repeat, 10))
    return rows


_STEP_SCRIPT = """
import json, time, numpy as np
from jointre import _accel
from jointre.config import load_config
from jointre.i2b2 import generate_synthetic_corpus
from jointre.trainer import labelled_candidates, prepare_data, train_step
from jointre.model import ModelBundle, make_batch
cfg = load_config("desk-scale")
data = prepare_data(generate_synthetic_corpus(0, 40), cfg)
bundle = ModelBundle(cfg, data.vocab)
sents = data.train[:cfg.train.batch_size]
per = [[] for _ in sents]
for i, c in labelled_candidates(sents, bundle.schema):
    per[i].append(c)
batch = make_batch(sents, bundle.tagset, per)
rng = np.random.default_rng(0)
train_step(batch, bundle, rng)
t = time.perf_counter()
for _ in range(%d):
    train_step(batch, bundle, rng)
print(json.dumps({"numba": _accel.USE_NUMBA, "seconds": (time.perf_counter() - t) / %d}))
"""


def bench_train_step(steps):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, JOINTRE_NO_NUMBA=flag)
        proc = subprocess.run([sys.executable, "-c", _STEP_SCRIPT % (steps, steps)], env=env,
                              capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        out["numba" if res["numba"] else "numpy"] = res["seconds"]
    return out


def parse_size(text):
    parts = [int(p) for p in text.lower().split("x")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected BxTxH, got {text!r}")
    return parts


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", nargs="+", type=parse_size, default=[[8, 32, 64], [32, 48, 64], [32, 96, 128]],
                    help="batch x time x hidden triples")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--train-step", action="store_true", help="also time a full training step per backend")
    ap.add_argument("--steps", type=int, default=10)
    args = ap.parse_args(argv)

    if not _accel.NUMBA_INSTALLED:
        sys.exit("numba is not installed; pip install 'artifact[fast]' to compare backends")

    print(f"{'kernel':<14}{'size':<12}{'numpy fwd':>11}{'numba fwd':>11}{'x':>6}"
          f"{'numpy bwd':>11}{'numba bwd':>11}{'x':>6}")
    for B, T, H in args.sizes:
        for name, rows in (("rnn_scan", bench_rnn(B, T, H, args.repeat)),
                           ("segment_mean", bench_segment(B, T, H, args.repeat))):
            (nf, nb), (jf, jb) = rows["numpy"], rows["numba"]
            print(f"{name:<14}{f'{B}x{T}x{H}':<12}{nf * 1e3:>9.3f}ms{jf * 1e3:>9.3f}ms{nf / jf:>6.1f}"
                  f"{nb * 1e3:>9.3f}ms{jb * 1e3:>9.3f}ms{nb / jb:>6.1f}")
    if args.train_step:
        t = bench_train_step(args.steps)
        print(f"\ntrain step (desk-scale, batch 32): numpy {t['numpy'] * 1e3:.1f}ms  "
              f"numba {t['numba'] * 1e3:.1f}ms  x{t['numpy'] / t['numba']:.2f}")


if __name__ == "__main__":
    main()
