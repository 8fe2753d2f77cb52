"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own subprocess because the backend is chosen at
import time from TWOMEMBRANES_DISABLE_NUMBA. Timings are best-of-``--repeat``
after one warm-up call (which also triggers numba compilation).

    python benchmarks/bench_kernels.py --n 101 --repeat 5
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def child(n, repeat):
    import twomembranes as tm
    from twomembranes._backend import kernels
    from twomembranes.grid import stencil
    from twomembranes.solver import SolverConfig, solve_dirichlet

    case = tm.get_case("fb_counterexample")
    problem = case.problem(n)
    dom = problem.domain
    fs = tm.frame_set(2)
    u = tm.Field.sample(dom, case.u)
    st = stencil(dom, fs)
    coeffs = problem.F.coefficients(2)
    rhs = problem.f.flat[st.interior]

    def sweeps(count=10):
        w = u.flat.copy()
        for _ in range(count):
            kernels.sweep(w, rhs, *st.kernel_args(), coeffs, problem.F.sense, False, st.colors)

    act = dom.active
    pts = np.ascontiguousarray(dom.points[act])
    vals = np.ascontiguousarray(u.flat[act])
    rng = np.random.default_rng(0)
    left = rng.integers(0, act.size, 200_000)
    right = rng.integers(0, act.size, 200_000)
    small = slice(0, min(act.size, 2000))

    out = {
        "backend": tm.BACKEND,
        "apply_operator": _best(lambda: tm.apply_operator(problem.F, u, fs), repeat),
        "holder_sampled": _best(lambda: kernels.holder_max(pts, vals, 0.5, left, right), repeat),
        "holder_all_2000": _best(lambda: kernels.holder_max_all(pts[small], vals[small], 0.5), repeat),
        "gauss_seidel_x10": _best(sweeps, repeat),
        "dirichlet_howard": _best(lambda: solve_dirichlet(problem.F, problem.f, problem.ub_field,
                                                          dom, fs, SolverConfig()), repeat),
    }
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=61, help="nodes per axis of the 2D box")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        child(args.n, args.repeat)
        return
    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, TWOMEMBRANES_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--child", "--n", str(args.n),
                               "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        results[res["backend"]] = res
    names = [k for k in results["numba"] if k != "backend"]
    print(f"box n={args.n}, best of {args.repeat}")
    print(f"{'kernel':<20}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for k in names:
        a, b = results["numba"][k], results["numpy"][k]
        print(f"{k:<20}{a:>12.4g}{b:>12.4g}{b / a:>10.1f}")


if __name__ == "__main__":
    main()
