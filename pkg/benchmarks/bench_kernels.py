"""Compiled vs numpy kernels: per-kernel timings and one end-to-end unlearning run.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

The compiled backend must be built (``pip install -e . --no-build-isolation``).
"""

import argparse
import json
import sys
import timeit

import numpy as np

from lotus_lab import _kernels_py, kernels
from lotus_lab.experiment import ExperimentConfig, make_data, pretrain
from lotus_lab.unlearn import UnlearnConfig, run_method

LAYERS = [8, 32, 32, 5]


def kernel_cases(batch, rng):
    w = [rng.normal(size=(a, b)) / np.sqrt(a) for a, b in zip(LAYERS[:-1], LAYERS[1:])]
    b = [rng.normal(size=n) for n in LAYERS[1:]]
    x = rng.normal(size=(batch, LAYERS[0]))
    delta = rng.normal(size=(batch, LAYERS[-1]))
    z = rng.normal(size=(batch, LAYERS[-1]))
    g = rng.gumbel(size=z.shape)
    p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
    q = p[::-1].copy()
    param = rng.normal(size=(32, 32))
    grad = rng.normal(size=param.shape)

    def cases(mod):
        acts = mod.mlp_forward(w, b, x)
        m, v = np.zeros_like(param), np.zeros_like(param)
        return {
            "mlp_forward": lambda: mod.mlp_forward(w, b, x),
            "mlp_backward": lambda: mod.mlp_backward(w, acts, delta),
            "adamw_update": lambda: mod.adamw_update(param, grad, m, v, 1e-9, 0.9, 0.999,
                                                     1e-8, 0.0, 1),
            "gumbel_softmax_rows": lambda: mod.gumbel_softmax_rows(z, g, 0.7),
            "jsd_rows": lambda: mod.jsd_rows(p, q),
        }

    return cases


def time_call(fn, repeat):
    number = max(1, 2000 // repeat)
    best = min(timeit.repeat(fn, number=number, repeat=repeat))
    return best / number * 1e6  # microseconds


def end_to_end(seed=0):
    cfg = ExperimentConfig()
    data = make_data(cfg, seed)
    f_orig = pretrain(cfg, data, seed)
    ucfg = UnlearnConfig(method="lotus", seed=seed)
    out = {}
    for name in ("python", "compiled"):
        kernels.use_backend(name)
        times = [run_method(f_orig, data, ucfg).wall_time for _ in range(5)]
        out[name] = min(times)
    kernels.use_backend(None)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--batch", type=int, nargs="+", default=[16, 256])
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)
    if not kernels.compiled_available():
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    compiled = kernels.load_backend("compiled")
    rng = np.random.default_rng(0)
    results = {"kernels": [], "end_to_end_s": None}
    print(f"{'kernel':<22}{'batch':>6}{'numpy us':>12}{'compiled us':>14}{'speedup':>9}")
    for batch in args.batch:
        cases = kernel_cases(batch, rng)
        py_cases, c_cases = cases(_kernels_py), cases(compiled)
        for name in py_cases:
            tp = time_call(py_cases[name], args.repeat)
            tc = time_call(c_cases[name], args.repeat)
            results["kernels"].append({"kernel": name, "batch": batch, "python_us": tp,
                                       "compiled_us": tc, "speedup": tp / tc})
            print(f"{name:<22}{batch:>6}{tp:>12.1f}{tc:>14.1f}{tp / tc:>8.2f}x")
    e2e = end_to_end()
    results["end_to_end_s"] = e2e
    print(f"\nLoTUS unlearning run (10 epochs, desk defaults): numpy {e2e['python']:.4f} s, "
          f"compiled {e2e['compiled']:.4f} s, speedup {e2e['python'] / e2e['compiled']:.2f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
