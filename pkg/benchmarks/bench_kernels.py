"""Compare the compiled and numpy kernels on the shapes the trainer uses.

    python benchmarks/bench_kernels.py [--repeat N]

Reports microseconds per call for the fused dense pass, the forward pass and
the inverse-CDF draw, plus whole training iterations for each backend.  The
training comparison runs each backend in a subprocess because the backend is
chosen once at import.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from isgd._backend import LOSS_NLL, available_backends


def kernel_cases(rng):
    cases = {}
    for label, sizes, n in (("pool 2-32-2, n=64", (2, 32, 2), 64), ("mnist-ish 784-64-10, n=64", (784, 64, 10), 64)):
        sizes_arr = np.asarray(sizes, dtype=np.int64)
        relu = np.array([1] * (len(sizes) - 2) + [0], dtype=np.uint8)
        n_params = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
        theta = rng.normal(size=n_params) * 0.1
        X = rng.normal(size=(n, sizes[0]))
        labels = rng.integers(0, sizes[-1], size=n).astype(np.int64)
        alpha = rng.random(n) + 0.5
        targets = np.zeros((1, 1))
        cases[f"dense_grad   {label}"] = lambda k, a=(theta, sizes_arr, relu, X, LOSS_NLL, labels, targets, alpha): k.dense_grad(*a)
        cases[f"dense_forward {label}"] = lambda k, a=(theta, sizes_arr, relu, X): k.dense_forward(*a)
    cdf = np.cumsum(rng.random(64))
    u = rng.random(32) * cdf[-1]
    cases["inverse_cdf  pool 64, draws 32"] = lambda k: k.inverse_cdf(cdf, u)
    return cases


TRAIN_SNIPPET = """
import time
from isgd import trainer, _backend
from isgd.data import SynthSpec, synth_dataset
ds = synth_dataset(SynthSpec(n=1024), 0)
for strategy in ("uniform", "loss", "gnorm"):
    cfg = trainer.TrainConfig(strategy=strategy, iterations={iters}, record_time=False, max_loss_sweep_interval=10**9)
    t = time.perf_counter()
    trainer.train(cfg, ds)
    print(_backend.BACKEND, strategy, (time.perf_counter() - t) / {iters} * 1e6)
"""


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=2000)
    parser.add_argument("--iterations", type=int, default=1000)
    args = parser.parse_args(argv)

    backends = available_backends()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<44}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for label, fn in kernel_cases(rng).items():
        times = {}
        for name, mod in backends.items():
            fn(mod)
            times[name] = min(timeit.repeat(lambda: fn(mod), number=args.repeat, repeat=3)) / args.repeat * 1e6
        speed = f"{times['python'] / times['cython']:.2f}x" if "cython" in times else "-"
        print(f"{label:<44}" + "".join(f"{times[n]:>10.1f}us" for n in backends) + f"{speed:>10}")

    print("\ntraining iteration (1024 samples, hidden 32, batch 32), us per iteration")
    for name in backends:
        env = dict(os.environ, ISGD_PURE_PYTHON="1" if name == "python" else "0")
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET.format(iters=args.iterations)],
                             env=env, capture_output=True, text=True, check=True).stdout
        for line in out.splitlines():
            backend, strategy, us = line.split()
            print(f"  {backend:<8} {strategy:<8} {float(us):10.1f}")


if __name__ == "__main__":
    main()
