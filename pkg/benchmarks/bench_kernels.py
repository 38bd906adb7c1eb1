"""Compare the compiled and NumPy assembly kernels.

Times each kernel on the sizes of a level-6 manufactured run (4096 cells,
Q2 vector blocks) and then one full step assembly with each backend.

    python benchmarks/bench_kernels.py [--level 6] [--repeat 5]
"""

import argparse
import statistics
import time

import numpy as np

from porofem import _kernels_py, kernels
from porofem.experiments import manufactured_setup
from porofem.manufactured import ManufacturedCase
from porofem.solver import CoupledSystem, interpolate_initial

try:
    from porofem import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

NAMES = ("scatter_add", "weighted_local_scatter", "cell_apply")


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def use_backend(module):
    for name in NAMES:
        setattr(kernels, name, getattr(module, name))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--level", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    else:
        print("compiled kernels not built; timing the NumPy backend only")

    case = ManufacturedCase()
    setup = manufactured_setup(args.level, 1, case)
    system = CoupledSystem(setup, case.params)
    pos = system.pattern.positions["uu"]
    ref = system.constitutive_ref
    rng = np.random.default_rng(0)
    coef = rng.uniform(0.5, 2.0, size=(pos.shape[0], ref.shape[0]))
    values = rng.normal(size=pos.shape)
    u = rng.normal(size=setup.umap.n_dofs)
    div = system.vops.div
    data = system.pattern.zeros()

    work = {
        "scatter_add": lambda m: m.scatter_add(data, pos, values),
        "weighted_local_scatter": lambda m: m.weighted_local_scatter(data, pos, coef, ref),
        "cell_apply": lambda m: m.cell_apply(u, setup.umap.cell_dofs, div),
    }
    print(f"level m={args.level}: {setup.mesh.n_cells} cells, {system.n} unknowns, "
          f"best of {args.repeat} runs (median in parentheses), seconds\n")
    print(f"{'kernel':<24}" + "".join(f"{b:>22}" for b in backends) + "   speed-up")
    for name, fn in work.items():
        res = {b: best_of(lambda m=m: fn(m), args.repeat) for b, m in backends.items()}
        row = "".join(f"{r[0]:>11.4f} ({r[1]:.4f})" for r in res.values())
        speed = res["python"][0] / res["cython"][0] if "cython" in res else float("nan")
        print(f"{name:<24}{row}   {speed:6.1f}x")

    prev = interpolate_initial(setup, lambda x: 0.01 * np.sin(6 * x))
    res = {}
    for b, m in backends.items():
        use_backend(m)
        res[b] = best_of(lambda: system.assemble(prev), args.repeat)
    use_backend(backends.get("cython", _kernels_py))
    row = "".join(f"{r[0]:>11.4f} ({r[1]:.4f})" for r in res.values())
    speed = res["python"][0] / res["cython"][0] if "cython" in res else float("nan")
    print(f"{'full step assembly':<24}{row}   {speed:6.1f}x")


if __name__ == "__main__":
    main()
