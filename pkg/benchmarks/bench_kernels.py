"""Compare the compiled kernel core against the pure-numpy fallback.

Times the three hot kernels (stiffness assembly, integrated divergence,
marching-tets extraction) on cube grids of increasing size and prints
per-kernel speedups.  Run from the repo root:

    python3 benchmarks/bench_kernels.py [--sizes 10 20 30] [--repeats 5]
"""

import argparse
import time

import numpy as np

from volpeel import synth
from volpeel.kernels import backends


def bench(fn, args, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 20, 30],
                    help="cube grid resolutions (6*n^3 tets each)")
    ap.add_argument("--repeats", type=int, default=5,
                    help="timing repeats; best of N is reported")
    opts = ap.parse_args()

    impls = backends()
    if "compiled" not in impls:
        print("compiled extension not available; timing the pure backend only")

    header = f"{'kernel':<20}{'tets':>9}" + "".join(
        f"{name:>12}" for name in impls) + ("{:>10}".format("speedup")
                                            if len(impls) > 1 else "")
    print(header)
    print("-" * len(header))

    for n in opts.sizes:
        mesh = synth.cube_grid(n)
        rng = np.random.default_rng(0)
        vals = rng.normal(size=mesh.n_vertices)
        vecs = rng.normal(size=(mesh.n_tets, 3))
        jobs = {
            "stiffness_triplets": lambda m: (
                m.stiffness_triplets,
                (mesh.tets, mesh.face_vectors, mesh.volumes)),
            "divergence": lambda m: (
                m.divergence,
                (mesh.tets, mesh.face_vectors, vecs, mesh.n_vertices)),
            "marching_tets": lambda m: (
                m.marching_tets,
                (mesh.vertices, mesh.tets, vals, float(np.median(vals)))),
        }
        for label, make in jobs.items():
            times = {}
            for name, mod in impls.items():
                fn, args = make(mod)
                times[name] = bench(fn, args, opts.repeats)
            row = f"{label:<20}{mesh.n_tets:>9}" + "".join(
                f"{times[name] * 1e3:>10.1f}ms" for name in impls)
            if len(times) > 1:
                row += f"{times['pure'] / times['compiled']:>9.1f}x"
            print(row)
        print()


if __name__ == "__main__":
    main()
