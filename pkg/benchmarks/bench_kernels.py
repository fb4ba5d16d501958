"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20]

Kernel timings exclude JIT compilation (one warm-up call first).  The
end-to-end rows run 500 projected-Adam iterations on the SIS game in a child
process per backend, so they include import and compilation-cache loading.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from mfomo import _kernels as K


def _inputs(S, A, T, seed=0):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(T, S, A)).transpose(0, 3, 1, 2).copy()
    R = rng.uniform(-1, 1, size=(T + 1, S, A))
    pi = rng.dirichlet(np.ones(A), size=(T + 1, S))
    mu0 = rng.dirichlet(np.ones(S))
    L = rng.dirichlet(np.ones(S * A), size=T + 1).reshape(T + 1, S, A)
    y = rng.normal(size=(T + 1, S))
    z = rng.uniform(size=(T + 1, S, A))
    dP = rng.normal(scale=1e-2, size=(T, S, S, A, S, A))
    dR = rng.normal(scale=1e-2, size=(T + 1, S, A, S, A))
    weights = (np.ones(S), np.ones((T, S)), np.ones((T + 1, S, A)), np.ones((T + 1, S, A)))
    return P, R, pi, mu0, L, y, z, dP, dR, weights


def _time(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_rows(repeat):
    rows = []
    for S, A, T in [(2, 2, 50), (5, 5, 10), (10, 4, 30)]:
        P, R, pi, mu0, L, y, z, dP, dR, w = _inputs(S, A, T)
        res = K.mfomo_residuals_numpy(P, R, mu0, y, z, L)
        V = np.random.default_rng(1).normal(size=(2000, S * A))
        cases = {
            "simplex_rows": lambda f: f(V, 1.0),
            "backward_recursion": lambda f: f(P, R, pi, False),
            "forward_occupation": lambda f: f(P, mu0, pi),
            "mfomo_residuals": lambda f: f(P, R, mu0, y, z, L),
            "mfomo_gradient": lambda f: f(P, R, dP, dR, True, y, z, L, *res, *w),
        }
        names = {"simplex_rows": "project_simplex_rows"}
        for case, call in cases.items():
            base = names.get(case, case)
            t_np = _time(lambda: call(getattr(K, base + "_numpy")), repeat)
            t_nb = _time(lambda: call(getattr(K, base + "_numba")), repeat)
            rows.append((f"{case} S={S} A={A} T={T}", t_np, t_nb))
    return rows


_E2E = (
    "import time; from mfomo import games, optim, formulation, game, baselines;"
    "g = games.sis_game();"
    "th = formulation.warm_start(g, game.propagate_flow(g, baselines.uniform_policy(g)));"
    "cfg = optim.SolverConfig(method='adam', max_iters=500, eval_every=1000);"
    "t = time.perf_counter(); optim.solve(g, th, cfg); print(time.perf_counter() - t)"
)


def end_to_end():
    out = {}
    for backend, flag in (("numpy", "1"), ("numba", "0")):
        env = dict(os.environ, MFOMO_DISABLE_NUMBA=flag)
        subprocess.run([sys.executable, "-c", _E2E], env=env, check=True, capture_output=True)  # warm caches
        res = subprocess.run([sys.executable, "-c", _E2E], env=env, check=True, capture_output=True, text=True)
        out[backend] = float(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    print(f"{'kernel':44s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, t_np, t_nb in kernel_rows(args.repeat):
        print(f"{name:44s} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:8.1f}x")
    if not args.skip_e2e:
        e2e = end_to_end()
        print(f"{'SIS T=50, 500 Adam iterations':44s} {1e3 * e2e['numpy']:11.1f} {1e3 * e2e['numba']:11.1f} "
              f"{e2e['numpy'] / e2e['numba']:8.1f}x")


if __name__ == "__main__":
    main()
