"""Time-stepping drivers: initial tree construction, global stepping and
level-wise local time stepping on top of the compiled engine."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .tree import GradedTree, NodeKey
from .transform import (MRParams, update_tree, refresh_projections,
                        refresh_virtual_values, predict_full, _restrict,
                        fill_to_level)
from .engine import Engine
from .fv import NormTracker, compute_dt, cfl_denominator, DenseReference


class TimeStepViolation(RuntimeError):
    """A level would be advanced past its own stability limit."""


def build_uniform_tree(ic, domain, max_level: int, n_species: int,
                       root_shape=(1, 1)) -> GradedTree:
    """Fully refined tree at `max_level` with exact initial averages."""
    tree = GradedTree(domain, max_level, n_species, root_shape)
    for _ in range(max_level):
        for k in tree.leaves():
            tree.split_leaf(k)
    vals = ic.averages(domain, root_shape, max_level)
    for k in tree.leaves():
        tree.nodes[k].avg = np.array(vals[k[0], k[1]], dtype=float).reshape(-1)
    refresh_projections(tree)
    tree.ensure_virtual_cousins()
    refresh_virtual_values(tree)
    return tree


def build_initial_tree(ic, domain, max_level: int, n_species: int,
                       params: MRParams, root_shape=(1, 1),
                       max_passes: int | None = None) -> GradedTree:
    """Adapted tree for the initial data.

    The initial field is analysed on the uniform finest grid (vectorised),
    cells are created wherever a detail is significant, and a few
    grid-adaptation passes establish the safety zone and reach a fixed
    point of the thresholding.
    """
    L = max_level
    vals = np.asarray(ic.averages(domain, root_shape, L), dtype=float)
    if vals.ndim == 2:
        vals = vals[..., None]
    levels = [vals]
    for _ in range(L):
        levels.append(_restrict(levels[-1]))
    levels.reverse()              # levels[l] = averages on grid of level l

    eps = [params.level_tolerance(l) for l in range(L + 1)]
    need = [np.zeros(levels[l].shape[:2], dtype=bool) for l in range(L)]
    for l in range(L, 0, -1):
        d = np.abs(levels[l] - predict_full(levels[l - 1])).max(axis=2)
        sig = np.maximum.reduce([d[0::2, 0::2], d[1::2, 0::2],
                                 d[0::2, 1::2], d[1::2, 1::2]]) >= eps[l]
        need[l - 1] |= sig
        if l >= 2:
            blk = need[l - 1]
            need[l - 2] |= (blk[0::2, 0::2] | blk[1::2, 0::2]
                            | blk[0::2, 1::2] | blk[1::2, 1::2])

    tree = GradedTree(domain, max_level, n_species, root_shape)
    for l in range(L):
        for k in tree.leaves():
            if k[2] == l and need[l][k[0], k[1]]:
                tree.split_to_grading(k, set())
    for k in tree.leaves():
        tree.nodes[k].avg = np.array(levels[k[2]][k[0], k[1]], dtype=float)
    refresh_projections(tree)
    tree.ensure_virtual_cousins()
    refresh_virtual_values(tree)

    if max_passes is None:
        max_passes = max_level + 2
    prev = None
    for _ in range(max_passes):
        update_tree(tree, params)
        sig = frozenset(tree.leaves())
        if sig == prev:
            break
        prev = sig
    tree.check_internal_consistency()
    return tree


def dense_reference_run(model, ic, domain, level: int, t_end: float,
                        root_shape=(1, 1), cfl: float = 1.0,
                        chemo_sign: str = "corrected",
                        max_dt: float = np.inf) -> np.ndarray:
    """Integrate on the uniform grid with the array-slicing solver; returns
    the final (nx, ny, n_species) field.  Used as the truth arm in error and
    convergence measurements."""
    ref = DenseReference(model, domain, level, root_shape, chemo_sign)
    fields = np.asarray(ic.averages(domain, root_shape, level), dtype=float)
    tracker = NormTracker(model, domain)
    t = 0.0
    tiny = 1e-14 * max(1.0, abs(t_end))
    while t < t_end - tiny:
        norms = tracker.update(fields)
        dt = min(compute_dt(model, norms, ref.h, cfl, max_dt), t_end - t)
        fields = ref.step(fields, dt)
        t += dt
    return fields


@dataclass
class Simulation:
    """Explicit evolution of one model on one adaptive (or uniform) tree.

    `time_stepping` is "global" (one CFL step for every leaf) or "local"
    (macro steps in which level l advances with dt_l = 2^(L-l) dt_L).
    With `adapt=False` the tree is kept uniformly refined at max_level and
    never touched -- that configuration is the dense reference arm.
    """
    model: object
    ic: object
    params: MRParams
    domain: tuple
    max_level: int
    root_shape: tuple = (1, 1)
    cfl: float = 1.0
    time_stepping: str = "global"
    chemo_sign: str = "corrected"
    adapt: bool = True
    adapt_every: int = 1
    max_dt: float = np.inf

    t: float = field(init=False, default=0.0)
    steps: int = field(init=False, default=0)
    fine_steps: int = field(init=False, default=0)
    wall_evolve: float = field(init=False, default=0.0)

    def __post_init__(self):
        ns = self.model.n_species
        if self.adapt:
            self.tree = build_initial_tree(self.ic, self.domain, self.max_level,
                                           ns, self.params, self.root_shape)
        else:
            self.tree = build_uniform_tree(self.ic, self.domain, self.max_level,
                                           ns, self.root_shape)
        self.engine = Engine(self.tree, self.model, self.params,
                             chemo_sign=self.chemo_sign)
        self.tracker = NormTracker(self.model, self.domain)

    # -- time step selection -------------------------------------------------

    def _finest_level(self) -> int:
        return int(self.engine.level_of.max())

    def stable_dt(self) -> float:
        norms = self.tracker.update(self.engine.state_view())
        h = self.tree.h(self._finest_level())
        return compute_dt(self.model, norms, h, self.cfl, self.max_dt)

    def _check_level_cfl(self, dt_macro: float, l_min: int) -> None:
        norms = self.tracker.norms
        for l in np.unique(self.engine.level_of):
            dt_l = dt_macro / 2.0 ** (int(l) - l_min)
            denom = cfl_denominator(self.model, norms, self.tree.h(int(l)))
            if denom > 0 and dt_l > (self.cfl / denom) * (1.0 + 1e-9):
                raise TimeStepViolation(
                    f"level {int(l)}: dt={dt_l:.3e} exceeds its stability "
                    f"limit {self.cfl / denom:.3e}")

    # -- drivers ---------------------------------------------------------------

    def advance_to(self, t_target: float) -> "Simulation":
        eng = self.engine
        tiny = 1e-14 * max(1.0, abs(t_target))
        t0 = time.perf_counter()
        if self.time_stepping == "global":
            while self.t < t_target - tiny:
                dt = min(self.stable_dt(), t_target - self.t)
                eng.march(dt)
                self.t += dt
                self.steps += 1
                self.fine_steps += 1
                if self.adapt and self.steps % self.adapt_every == 0:
                    eng.adapt()
        elif self.time_stepping == "local":
            while self.t < t_target - tiny:
                lf = self._finest_level()
                l_min = eng.l_min
                dt_fine = self.stable_dt()
                dt_macro = min(dt_fine * 2.0 ** (lf - l_min),
                               t_target - self.t)
                self._check_level_cfl(dt_macro, l_min)
                n_sub = eng.run_macro(dt_macro, adapt=self.adapt)
                self.t += dt_macro
                self.steps += 1
                self.fine_steps += n_sub
        else:
            raise ValueError(f"unknown time stepping {self.time_stepping!r}")
        self.wall_evolve += time.perf_counter() - t0
        return self

    # -- output ---------------------------------------------------------------

    def grid(self, level: int | None = None) -> np.ndarray:
        """Current state prediction-filled onto the uniform grid."""
        self.engine.writeback()
        return fill_to_level(self.tree, level)

    def leaf_state(self) -> np.ndarray:
        return self.engine.state_view()

    def total_mass(self) -> np.ndarray:
        return self.engine.total_mass()
