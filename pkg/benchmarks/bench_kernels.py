"""Compare the compiled and pure-Python kernel backends.

Run ``python3 benchmarks/bench_kernels.py [--sizes 200,1000,5000] [--repeat 5]``.
Prints the best-of-``repeat`` time per call for each kernel and backend and
the speedup of the compiled backend.
"""
import argparse
import timeit

import numpy as np

from quasineutral import kernels
from quasineutral.experiments import canonical_profile
from quasineutral.fem import Mesh1D, assemble
from quasineutral.state import DopingProfile, solve_state


def cases(n):
    mesh = Mesh1D(0.0, 1.0, n)
    forms = assemble(mesh)
    S, w = forms.stiffness, forms.weights
    C, _, _ = canonical_profile(mesh)
    dp = DopingProfile.build(forms, C, 1e-6)
    rhs = np.sin(5 * forms.x)
    diag = S.diag + w
    V0 = np.zeros(n)
    return {
        "tridiag_solve": lambda: kernels.tridiag_solve(S.lower, diag, S.upper, rhs),
        "bordered_solve": lambda: kernels.bordered_tridiag_solve(
            S.lower, S.diag, S.upper, w, rhs, 0.0),
        "closed_form": lambda: kernels.closed_form_densities(C, 1e-12),
        "newton_aux": lambda: kernels.newton_aux(
            S.lower, S.diag, S.upper, w, C, 1e-6, 0.5, 0.3, V0, 1e-11, 200, True),
        "state_1e-6": lambda: solve_state(dp, 1e-6),
        "state_0": lambda: solve_state(dp, 0.0),
    }


def best_time(fn, repeat):
    number, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="200,1000,5000")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; timing the Python backend only")
    header = f"{'kernel':<16}{'nodes':>7}" + "".join(f"{b + ' [s]':>14}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)
    for n in (int(s) for s in args.sizes.split(",")):
        for name, fn in cases(n).items():
            times = {}
            for b in backends:
                with kernels.use_backend(b):
                    times[b] = best_time(fn, args.repeat)
            line = f"{name:<16}{n:>7}" + "".join(f"{times[b]:>14.3e}" for b in backends)
            if len(backends) > 1:
                line += f"{times['python'] / times['cython']:>10.1f}"
            print(line)


if __name__ == "__main__":
    main()
