#!/usr/bin/env python3
"""Measure the observed L1 convergence order of the dense solver.

Used to fix the exponent alpha_tilde entering the reference-tolerance
formulas.  Two built-in problem choices:

  two        activator-depleted kinetics (a=0.5, b=1, gamma=1), identity
             diffusion, smooth initial data -- non-degenerate and stable
  chemotaxis sigma=0.0625, d=1, nu=7, alpha=1, beta=32, smooth initial data

Example:
  python3 scripts/convergence_study.py --problem two --levels 5,6,7,8 \
      --reference-level 10 --tend 5e-4
"""

import argparse
import sys

import numpy as np

from mrfv.stepping import dense_reference_run
from mrfv.models import make_turing_model, make_chemotaxis_model, SmoothIC
from mrfv.metrics import error_norms


def restrict(grid, k):
    n = grid.shape[0] >> k
    return grid.reshape(n, 1 << k, n, 1 << k, -1).mean(axis=(1, 3))


def problem(name):
    if name == "two":
        model = make_turing_model(a=0.5, b=1.0, d=1.0, gamma=1.0)
        ic = SmoothIC(lambda x, y: (1.5 + 0.1 * np.sin(2 * np.pi * x)
                                    * np.cos(2 * np.pi * y),
                                    0.5 + 0.1 * np.cos(2 * np.pi * x)), 2)
        return model, ic, (0.0, 1.0, 0.0, 1.0)
    if name == "chemotaxis":
        model = make_chemotaxis_model()
        ic = SmoothIC(lambda x, y: (1.0 + 0.05 * np.sin(2 * np.pi * x / 16)
                                    * np.cos(2 * np.pi * y / 16),
                                    np.full_like(x, 1.0 / 32.0)), 2)
        return model, ic, (0.0, 16.0, 0.0, 16.0)
    raise SystemExit(f"unknown problem {name!r}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="two", choices=("two", "chemotaxis"))
    ap.add_argument("--levels", default="5,6,7,8")
    ap.add_argument("--reference-level", type=int, default=10)
    ap.add_argument("--tend", type=float, default=5e-4)
    ap.add_argument("--cfl", type=float, default=0.9)
    ap.add_argument("--dt-quadratic", action="store_true",
                    help="cap dt at every level by dt_ref * 4^(L_ref - L) so "
                         "the time error scales like h^2 (otherwise the "
                         "reaction CFL term makes dt ~ h on coarse grids "
                         "and pollutes the measured spatial order)")
    args = ap.parse_args(argv)

    levels = [int(x) for x in args.levels.split(",")]
    if args.reference_level <= max(levels):
        print("reference level must exceed every test level", file=sys.stderr)
        return 2
    model, ic, dom = problem(args.problem)
    caps = {L: np.inf for L in levels + [args.reference_level]}
    if args.dt_quadratic:
        from mrfv.fv import DenseReference, NormTracker, compute_dt
        Lr = args.reference_level
        f0 = np.asarray(ic.averages(dom, (1, 1), Lr), dtype=float)
        h_r = (dom[1] - dom[0]) / (1 << Lr)
        dt_r = compute_dt(model, NormTracker(model, dom).update(f0), h_r,
                          args.cfl)
        caps = {L: dt_r * 4.0 ** (Lr - L) for L in levels + [Lr]}
    print(f"reference run at L={args.reference_level} ...", flush=True)
    ref = dense_reference_run(model, ic, dom, args.reference_level,
                              args.tend, cfl=args.cfl,
                              max_dt=caps[args.reference_level])
    errs = {}
    for L in levels:
        g = dense_reference_run(model, ic, dom, L, args.tend, cfl=args.cfl,
                                max_dt=caps[L])
        e = error_norms(g, restrict(ref, args.reference_level - L))
        errs[L] = e["l1"]
        print(f"L={L}  l1={e['l1']:.6e}  l2={e['l2']:.6e}  linf={e['linf']:.6e}")
    orders = []
    for a, b in zip(levels, levels[1:]):
        order = np.log2(errs[a] / errs[b]) / (b - a)
        orders.append(order)
        print(f"order {a}->{b}: {order:.3f}")
    print(f"alpha_tilde (mean observed order): {np.mean(orders):.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
