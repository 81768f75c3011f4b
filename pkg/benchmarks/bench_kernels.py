"""Compare the compiled and numpy stencil kernels.

    python benchmarks/bench_kernels.py --members 100 --n 512 --repeat 5

Also times one reference solver step through each backend and the blocked
versus taped MLP forward pass used by the surrogate.
"""
import argparse
import timeit

import numpy as np

from nssda import _kernels_py, kernels, solver
from nssda import autodiff as ad
from nssda.physics import SweFlux
from nssda.solver import SolverConfig
from nssda.surrogate import MlpParams, mlp_forward

try:
    from nssda import _kernels as _compiled
except ImportError:
    _compiled = None


def best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def with_backend(impl, fn):
    saved = kernels._impl
    kernels._impl = impl
    try:
        return fn()
    finally:
        kernels._impl = saved


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--members", type=int, default=100)
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--p", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=3)
    args = ap.parse_args(argv)

    gen = np.random.default_rng(0)
    k, n, p = args.members, args.n, args.p
    ue = gen.uniform(1, 2, (k, n + 4, p))
    up, um = gen.uniform(1, 2, (2, k, n + 1, p))
    fp, fm = gen.standard_normal((2, k, n + 1, p))
    a = gen.uniform(0, 3, (k, n + 1))

    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    else:
        print("compiled extension not built; timing the numpy backend only")

    rows = []
    for name, impl in backends.items():
        t_if = best(lambda: impl.interface_states(ue), args.repeat, args.number)
        t_kt = best(lambda: impl.kt_assemble(up, um, fp, fm, a, 0.01), args.repeat, args.number)
        u = ue[:, 2:-2]
        t_step = with_backend(impl, lambda: best(
            lambda: solver.step(u, SweFlux(), SolverConfig(dt=1e-3), 0.01, None), args.repeat, args.number))
        rows.append((name, t_if, t_kt, t_step))

    print(f"members={k} n={n} p={p} (best of {args.repeat}, seconds per call)")
    print(f"{'backend':<8} {'interface':>11} {'kt_assemble':>12} {'solver step':>12}")
    for name, *ts in rows:
        print(f"{name:<8} " + " ".join(f"{t:>11.5f}" for t in ts))
    if len(rows) == 2:
        speed = [py / cy for py, cy in zip(rows[0][1:], rows[1][1:])]
        print(f"{'speedup':<8} " + " ".join(f"{s:>10.1f}x" for s in speed))

    net = MlpParams.init((p, 64, 64, 64, 64, 64, p), "silu", gen)
    x = ue[:, : n + 1]
    t_fast = best(lambda: mlp_forward(net, x), args.repeat, args.number)
    t_tape = best(lambda: ad.value_of(mlp_forward(net, ad.Tape().leaf(x))), args.repeat, 1)
    print(f"mlp forward on {x.shape}: blocked {t_fast:.4f}s, taped {t_tape:.4f}s ({t_tape / t_fast:.1f}x)")


if __name__ == "__main__":
    main()
