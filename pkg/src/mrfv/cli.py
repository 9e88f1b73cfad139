"""Command-line front end.

    mrfv run         -- integrate one scenario, write metrics and snapshots
    mrfv compare     -- adaptive run vs uniform run: errors, compression, speed-up
    mrfv convergence -- grid-refinement error study on the uniform solver
    mrfv inspect     -- print header and field statistics of a snapshot file

Exit codes: 0 success, 2 bad configuration or arguments, 3 numerical failure
(stability violation or non-finite state).
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .config import RunConfig, ConfigError, load_config, config_from_mapping
from .presets import get_scenario, PRESETS
from .transform import MRParams
from .stepping import Simulation, TimeStepViolation, dense_reference_run
from .metrics import (compression_rate, error_norms, reaction_rate,
                      MetricsRecord, write_metrics_csv)
from .snapshots import save_grid, save_leaves, load_grid


def _resolve(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    overrides = {
        "example": args.example, "level": args.level, "cfl": args.cfl,
        "mode": args.mode, "t_end": args.t_end, "seed": args.seed,
        "epsilon_ref": args.epsilon_ref, "out": args.out,
    }
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if getattr(args, "chemo_sign", None):
        cfg.chemo_sign = args.chemo_sign
    if getattr(args, "adapt_every", None):
        cfg.adapt_every = args.adapt_every
    if getattr(args, "no_adapt", False):
        cfg.adapt = False
    if getattr(args, "nu", None) is not None:
        cfg.nu = args.nu
    if getattr(args, "snapshots", None):
        cfg.snapshots = tuple(float(x) for x in args.snapshots.split(","))
    return cfg.validate()


def build_simulation(cfg: RunConfig, adapt: bool | None = None,
                     mode: str | None = None) -> tuple[Simulation, float]:
    sc = get_scenario(cfg.example)
    level = cfg.level if cfg.level is not None else sc.default_level
    eps = cfg.epsilon_ref if cfg.epsilon_ref is not None else sc.epsilon_ref
    cfl = cfg.cfl if cfg.cfl is not None else sc.default_cfl
    if mode is None:
        mode = cfg.mode if cfg.mode is not None else sc.time_stepping
    t_end = cfg.t_end if cfg.t_end is not None else sc.default_t_end
    if cfg.nu is not None:
        model = sc.make_model(nu=cfg.nu)
    else:
        model = sc.make_model()
    ic = sc.make_ic(cfg.seed, level)
    params = MRParams(epsilon_ref=eps, max_level=level,
                      detail_norm=cfg.detail_norm)
    sim = Simulation(model=model, ic=ic, params=params, domain=sc.domain,
                     max_level=level, root_shape=sc.root_shape, cfl=cfl,
                     time_stepping=mode, chemo_sign=cfg.chemo_sign,
                     adapt=cfg.adapt if adapt is None else adapt,
                     adapt_every=cfg.adapt_every)
    return sim, t_end


def _record(sim: Simulation, sc) -> MetricsRecord:
    state = sim.leaf_state()
    areas = sim.engine.area
    mass = sim.total_mass()
    return MetricsRecord(
        t=sim.t, steps=sim.steps, fine_steps=sim.fine_steps,
        n_leaves=sim.engine.leaf_count(),
        eta=compression_rate(sim.engine.leaf_count(), sim.max_level,
                             sim.root_shape),
        mass_u=float(mass[0]),
        mass_v=float(mass[1]) if len(mass) > 1 else 0.0,
        reaction=reaction_rate(sim.model, state, areas,
                               sim.engine.xc, sim.engine.yc),
        wall=sim.wall_evolve)


def cmd_run(args) -> int:
    cfg = _resolve(args)
    sc = get_scenario(cfg.example)
    sim, t_end = build_simulation(cfg)
    times = sorted(set(t for t in cfg.snapshots if 0.0 < t < t_end))
    times.append(t_end)
    records = [_record(sim, sc)]
    outdir = cfg.out
    if outdir:
        os.makedirs(outdir, exist_ok=True)
    try:
        for t in times:
            sim.advance_to(t)
            if not np.isfinite(sim.leaf_state()).all():
                print(f"state became non-finite at t = {sim.t:.6g}",
                      file=sys.stderr)
                return 3
            records.append(_record(sim, sc))
            if outdir:
                save_grid(os.path.join(outdir, f"snap_t{t:.6g}.bin"),
                          sim.grid(), meta={"t": t, "example": cfg.example,
                                            "level": sim.max_level,
                                            "chemo_sign": cfg.chemo_sign})
    except TimeStepViolation as e:
        print(f"stability violation: {e}", file=sys.stderr)
        return 3
    r = records[-1]
    print(f"{cfg.example}: t = {r.t:.6g}  steps = {r.steps} "
          f"(fine {r.fine_steps})  leaves = {r.n_leaves}  "
          f"eta = {r.eta:.2f}  wall = {r.wall:.2f}s")
    print(f"mass = ({r.mass_u:.8g}, {r.mass_v:.8g})  reaction = {r.reaction:.6g}  "
          f"rebuilds = {sim.engine.rebuild_count}")
    if outdir:
        write_metrics_csv(os.path.join(outdir, "metrics.csv"), records)
        sim.engine.writeback()
        save_leaves(os.path.join(outdir, "leaves.txt"), sim.tree)
        print(f"wrote {outdir}/metrics.csv, snapshots and leaves.txt")
    return 0


def cmd_compare(args) -> int:
    cfg = _resolve(args)
    sc = get_scenario(cfg.example)
    mr, t_end = build_simulation(cfg)
    dense, _ = build_simulation(cfg, adapt=False, mode="global")
    try:
        mr.advance_to(t_end)
        dense.advance_to(t_end)
    except TimeStepViolation as e:
        print(f"stability violation: {e}", file=sys.stderr)
        return 3
    g_mr = mr.grid()
    g_d = dense.grid()
    if not (np.isfinite(g_mr).all() and np.isfinite(g_d).all()):
        print("state became non-finite", file=sys.stderr)
        return 3
    eta = compression_rate(mr.engine.leaf_count(), mr.max_level, mr.root_shape)
    V = dense.wall_evolve / max(mr.wall_evolve, 1e-12)
    print(f"{cfg.example} at level {mr.max_level}, t = {t_end:g}")
    print(f"leaves: adaptive {mr.engine.leaf_count()} vs uniform "
          f"{dense.engine.leaf_count()}   eta = {eta:.2f}   speed-up V = {V:.2f}")
    print(f"wall: adaptive {mr.wall_evolve:.2f}s  uniform {dense.wall_evolve:.2f}s  "
          f"rebuilds = {mr.engine.rebuild_count}")
    for s in range(g_mr.shape[2]):
        e = error_norms(g_mr[..., s], g_d[..., s])
        print(f"species {s}: L1 = {e['l1']:.4e}  L2 = {e['l2']:.4e}  "
              f"Linf = {e['linf']:.4e}")
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        save_grid(os.path.join(cfg.out, "adaptive.bin"), g_mr,
                  meta={"t": t_end, "example": cfg.example})
        save_grid(os.path.join(cfg.out, "uniform.bin"), g_d,
                  meta={"t": t_end, "example": cfg.example})
    return 0


def cmd_convergence(args) -> int:
    cfg = _resolve(args)
    sc = get_scenario(cfg.example)
    t_end = cfg.t_end if cfg.t_end is not None else sc.default_t_end
    cfl = cfg.cfl if cfg.cfl is not None else sc.default_cfl
    levels = [int(x) for x in args.levels.split(",")]
    ref_level = args.reference_level
    if ref_level <= max(levels):
        print("reference level must exceed every test level", file=sys.stderr)
        return 2
    model = sc.make_model() if cfg.nu is None else sc.make_model(nu=cfg.nu)
    ic = sc.make_ic(cfg.seed, ref_level)
    ref = dense_reference_run(model, ic, sc.domain, ref_level, t_end,
                              sc.root_shape, cfl, cfg.chemo_sign)
    prev = None
    print(f"{cfg.example}: uniform-grid self-convergence at t = {t_end:g} "
          f"(reference level {ref_level})")
    for l in levels:
        ic_l = sc.make_ic(cfg.seed, max(l, getattr(ic, "level", l)))
        sol = dense_reference_run(model, ic_l, sc.domain, l, t_end,
                                  sc.root_shape, cfl, cfg.chemo_sign)
        coarse_ref = ref
        for _ in range(ref_level - l):
            coarse_ref = 0.25 * (coarse_ref[0::2, 0::2] + coarse_ref[1::2, 0::2]
                                 + coarse_ref[0::2, 1::2] + coarse_ref[1::2, 1::2])
        e = error_norms(sol, coarse_ref)
        rate = "" if prev is None else f"  order = {math.log2(prev / e['l1']):.2f}"
        print(f"  L = {l}: L1 = {e['l1']:.4e}  Linf = {e['linf']:.4e}{rate}")
        prev = e["l1"]
    return 0


def cmd_inspect(args) -> int:
    path = args.file
    if not os.path.exists(path):
        print(f"no such file: {path}", file=sys.stderr)
        return 2
    try:
        grid, meta = load_grid(path)
    except Exception as e:
        print(f"not a snapshot file: {e}", file=sys.stderr)
        return 2
    print(f"{path}: {grid.shape[0]} x {grid.shape[1]} cells, "
          f"{grid.shape[2]} species")
    for k, v in meta.items():
        if k not in ("nx", "ny", "n_species"):
            print(f"  {k} = {v}")
    for s in range(grid.shape[2]):
        g = grid[..., s]
        print(f"  species {s}: min = {g.min():.6g}  max = {g.max():.6g}  "
              f"mean = {g.mean():.6g}  var = {g.var():.6g}")
    return 0


def _add_common(p):
    p.add_argument("--config", help="key-value config file")
    p.add_argument("--example", choices=sorted(PRESETS), help="scenario name")
    p.add_argument("--level", type=int, help="finest refinement level")
    p.add_argument("--cfl", type=float)
    p.add_argument("--mode", choices=("global", "local"),
                   help="time-stepping mode")
    p.add_argument("--tend", dest="t_end", type=float, help="final time")
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon-ref", dest="epsilon_ref", type=float,
                   help="reference thresholding tolerance")
    p.add_argument("--chemo-sign", dest="chemo_sign",
                   choices=("corrected", "printed"))
    p.add_argument("--nu", type=float, help="chemotactic sensitivity")
    p.add_argument("--out", help="output directory")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mrfv",
                                 description="adaptive multiresolution "
                                             "finite-volume solver")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate one scenario")
    _add_common(p)
    p.add_argument("--snapshots", help="comma-separated snapshot times")
    p.add_argument("--adapt-every", dest="adapt_every", type=int)
    p.add_argument("--no-adapt", dest="no_adapt", action="store_true",
                   help="uniform grid, no coarsening")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="adaptive vs uniform run")
    _add_common(p)
    p.add_argument("--adapt-every", dest="adapt_every", type=int)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("convergence", help="uniform-grid error study")
    _add_common(p)
    p.add_argument("--levels", default="4,5,6", help="comma-separated levels")
    p.add_argument("--reference-level", dest="reference_level", type=int,
                   default=8)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("inspect", help="describe a snapshot file")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)

    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
