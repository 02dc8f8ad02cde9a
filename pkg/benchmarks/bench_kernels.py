"""Compare the numba hot loops with the pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--n 50000] [--repeat 200] [--solve]

Both implementations live side by side in ``chanceocp.kernels`` and
``chanceocp.hmc``, so one process can time them directly. ``--solve``
also times a full chance-constrained solve in two subprocesses, one with
``CHANCEOCP_DISABLE_NUMBA=1``.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from chanceocp import hmc, kernels
from chanceocp._accel import HAVE_NUMBA
from chanceocp.benchmarks import lunar_xi


def best_of(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_kde(n, repeat):
    rng = np.random.default_rng(0)
    psi = rng.normal(size=n)
    w = rng.normal(size=n)
    rows = []
    for kind in kernels.KernelKind:
        bk = kernels.BiasedKernel(kind, 0.05)
        args = (psi, 0.3, bk.bandwidth, bk.shift, kind.code)
        t_jit = best_of(lambda: kernels._kde_mean_jit(*args), repeat)
        t_np = best_of(lambda: kernels._kde_mean_np(*args), repeat)
        a, b = kernels._kde_mean_jit(*args), kernels._kde_mean_np(*args)
        rows.append((f"kde_mean/{kind.value}", t_jit, t_np, abs(a - b)))
        t_jit = best_of(lambda: kernels._kde_pdf_wmean_jit(*args, w), repeat)
        t_np = best_of(lambda: kernels._kde_pdf_wmean_np(*args, w), repeat)
        a, b = kernels._kde_pdf_wmean_jit(*args, w), kernels._kde_pdf_wmean_np(*args, w)
        rows.append((f"kde_pdf_wmean/{kind.value}", t_jit, t_np, abs(a - b)))
    return rows


def bench_hmc(n):
    target = lunar_xi()
    table = target.mixture_table()
    cfg = hmc.HmcConfig(n_samples=n, burn_in=500, seed=1)
    rng = np.random.default_rng(cfg.seed)
    total = cfg.n_samples + cfg.burn_in
    momenta = rng.standard_normal((total, target.dim))
    uniforms = rng.random(total)
    q0 = np.zeros(target.dim)
    step = cfg.resolved_step(target)

    def jit():
        return hmc._hmc_chain_jit(table, q0, momenta, uniforms, step, cfg.n_leapfrog,
                                  cfg.burn_in)

    def py():
        return hmc._hmc_chain_py(lambda q: hmc._table_logp_grad_np(table, q), q0, momenta,
                                 uniforms, step, cfg.n_leapfrog, cfg.burn_in)

    t_jit = best_of(jit, 3)
    t_py = best_of(py, 1)
    diff = float(np.max(np.abs(jit()[0] - py()[0])))
    return [(f"hmc_chain/{n}", t_jit, t_py, diff)]


SOLVE_SNIPPET = """
import time
from chanceocp import SolveConfig, lunar_ccocp, solve_ccocp, HmcConfig
t = time.perf_counter()
s = solve_ccocp(lunar_ccocp(), SolveConfig(kernel="epanechnikov", seed=0,
                                           hmc=HmcConfig(n_samples=20000)))
print(time.perf_counter() - t, repr(s.objective))
"""


def bench_solve():
    out = {}
    for label, flag in (("numba", ""), ("numpy", "1")):
        env = dict(os.environ, CHANCEOCP_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET], env=env,
                             capture_output=True, text=True, check=True)
        t, j = res.stdout.split()
        out[label] = (float(t), float(j))
    return [("solve/lunar-cc", out["numba"][0], out["numpy"][0],
             abs(out["numba"][1] - out["numpy"][1]))]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50_000)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--solve", action="store_true", help="also time a full solve")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        sys.exit("numba is not installed")
    rows = bench_kde(args.n, args.repeat) + bench_hmc(min(args.n, 20_000))
    if args.solve:
        rows += bench_solve()
    print(f"{'case':34s} {'numba':>11s} {'numpy':>11s} {'speedup':>8s} {'|diff|':>9s}")
    for name, a, b, d in rows:
        print(f"{name:34s} {a * 1e3:9.3f}ms {b * 1e3:9.3f}ms {b / a:7.1f}x {d:9.1e}")


if __name__ == "__main__":
    main()
