"""Compare the compiled kernels with the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--runs R] [--horizon T]

The simulation benchmark uses quartic stand-in certificates on the shipped
network, so it needs no synthesis run; the kernel cost depends only on the
table sizes, not on certificate quality.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from droopsafe import kernels, pipeline
from droopsafe.barrier import BarrierCertificate, Box, Policy, UnsafeSet
from droopsafe.config import example_path, load_config
from droopsafe.grid import assemble_dynamics
from droopsafe.poly import MonomialBasis
from droopsafe.safety_filter import SafetyFilter
from droopsafe.sim import Scenario, _batch


def standin_setup():
    cfg = load_config(example_path())
    eq, red = pipeline.run_powerflow(cfg)
    dec = assemble_dynamics(red, cfg.inverter_params(), eq, cfg.synthesis.trig_degree)
    certs, filters = [], []
    for i in range(dec.n):
        names = (f"w{i}", f"v{i}")
        w, v = MonomialBasis(names, 1).polynomials()[1:]
        B = 1 - (w / 4) ** 2 - (v / 0.2) ** 2 - 0.1 * (w / 4) ** 2 * (v / 0.2) ** 2
        cert = BarrierCertificate(i, B, Box(names, [-8.0, -0.4], [8.0, 0.2]),
                                  UnsafeSet.voltage(names[1]))
        certs.append(cert)
        filters.append(SafetyFilter(cert, Policy.zero(names), dec.params[i].input_matrix.diagonal(),
                                    cfg.filter.beta_max, cfg.filter.gamma, None,
                                    np.asarray(cfg.filter.actuator_limits)))
    return dec, certs, filters


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--runs", type=int, default=10, help="Monte-Carlo runs per simulate call")
    ap.add_argument("--horizon", type=float, default=2.0, help="simulated seconds per run")
    args = ap.parse_args(argv)
    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled backend not built; only the fallback is timed")
    rng = np.random.default_rng(0)

    names = ("x", "y", "z")
    p = sum(rng.normal() * m for m in MonomialBasis(names, 6).polynomials())
    exps, coefs = p.arrays()
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    pts = rng.uniform(-1, 1, size=(200000, 3))
    a, b = rng.normal(size=10 ** 6), rng.normal(size=10 ** 6)
    R = rng.exponential(size=10 ** 6)
    dec, certs, filters = standin_setup()
    sc = Scenario(horizon=args.horizon, step=1e-3)

    cases = {
        f"poly_eval ({len(coefs)} terms, {len(pts)} points)":
            lambda impl: impl.poly_eval_arrays(exps, coefs, pts),
        f"filter_interval ({len(a)} triples)":
            lambda impl: impl.filter_interval(a, b, R),
        f"simulate ({args.runs} runs x {sc.steps} steps, filter on)":
            lambda name: _batch(dec, certs, filters, sc, args.runs, 0, stride=sc.steps,
                                backend=name),
    }
    print(f"{'kernel':<52} " + " ".join(f"{k:>10}" for k in impls) + "   speedup")
    for label, fn in cases.items():
        sim = label.startswith("simulate")
        times = {k: best_of(lambda: fn(k if sim else impl), args.repeat)
                 for k, impl in impls.items()}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<52} " + " ".join(f"{t:>9.4f}s" for t in times.values())
              + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
