"""Compare the compiled and pure-Python kernel backends.

Times the hot operations through the public API with each backend selected
in turn, checks that both give the same result, and prints one CSV row per
(operation, N, backend).

    python benchmarks/bench_kernels.py --sizes 25 50 100 --repeat 5
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from feanet import _backend
from feanet.conv import conv_biphase, conv_homogeneous, grad_wrt_phase, grad_wrt_response, grad_wrt_rho
from feanet.fields import BoundaryCondition, FieldImage, PhaseImage
from feanet.kernels import MaterialParams, biphase_theta, dtheta_drho, kernel_for
from feanet.net import InferenceConfig, infer

STEEL = MaterialParams(E=0.23e12, nu=0.289, kappa=11.82, alpha=12.92e-5)
MATRIX = MaterialParams(E=0.2e12, nu=0.25)


def operations(n, layers, rng):
    """Name -> zero-argument callable returning an array."""
    u3 = FieldImage(rng.standard_normal((n, n, 3)), "thermoelasticity")
    u2 = FieldImage(rng.standard_normal((n, n, 2)), "elasticity")
    vhat = FieldImage(rng.standard_normal((n, n, 2)), "elasticity")
    h = PhaseImage(rng.uniform(0, 1, (n - 1, n - 1)))
    w3 = kernel_for("thermoelasticity", STEEL)
    w2 = kernel_for("elasticity", STEEL)
    th = biphase_theta(MaterialParams(E=STEEL.E, nu=STEEL.nu), MATRIX)
    dth = dtheta_drho(MaterialParams(E=STEEL.E, nu=STEEL.nu), MATRIX)
    v = FieldImage(np.pad(rng.uniform(-1, 1, (n - 2, n - 2, 2)), ((1, 1), (1, 1), (0, 0))), "elasticity")
    bc = BoundaryCondition.clamped(n, "elasticity")
    cfg = InferenceConfig(max_depth=layers)
    return {
        "conv_homogeneous": lambda: conv_homogeneous(w3, u3).data,
        "conv_biphase": lambda: conv_biphase(th, u2, h).data,
        "grad_wrt_response": lambda: grad_wrt_response(th, h, vhat).data,
        "grad_wrt_phase": lambda: grad_wrt_phase(th, u2, vhat),
        "grad_wrt_rho": lambda: np.array(list(grad_wrt_rho(dth, u2, h, vhat).values())),
        f"infer_homogeneous_x{layers}": lambda: infer(v, w2, bc, cfg)[0].data,
        f"infer_biphase_x{layers}": lambda: infer(v, (th, h), bc, cfg)[0].data,
    }


def bench(sizes, repeat, layers, seed):
    rows = []
    backends = _backend.available()
    for n in sizes:
        ops = operations(n, layers, np.random.default_rng(seed))
        for name, fn in ops.items():
            results, times = {}, {}
            for b in backends:
                prev = _backend.use(b)
                try:
                    results[b] = fn()
                    runs = timeit.repeat(fn, number=1, repeat=repeat)
                finally:
                    _backend.use(prev)
                times[b] = min(runs)
            ref = results[backends[0]]
            scale = float(np.abs(ref).max()) or 1.0
            diff = max(float(np.abs(r - ref).max()) / scale for r in results.values())
            for b in backends:
                rows.append({"op": name, "n": n, "backend": b, "seconds": times[b],
                             "speedup": times["python"] / times[b] if "python" in times else 1.0,
                             "max_rel_diff": diff})
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[25, 50, 100])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--layers", type=int, default=200, help="network depth for the inference rows")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="print JSON instead of CSV")
    args = ap.parse_args(argv)
    if "cython" not in _backend.available():
        print("compiled core not built; only the python backend is timed", file=sys.stderr)
    rows = bench(args.sizes, args.repeat, args.layers, args.seed)
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print("op,n,backend,seconds,speedup,max_rel_diff")
        for r in rows:
            print(f"{r['op']},{r['n']},{r['backend']},{r['seconds']:.3e},{r['speedup']:.1f},{r['max_rel_diff']:.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
