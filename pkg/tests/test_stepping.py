"""Simulation driver: tree construction, dense reference run, time loop."""

import numpy as np
import pytest

from mrfv.transform import MRParams
from mrfv.fv import DenseReference, cfl_denominator
from mrfv.models import (Diffusion, ScalarModel, make_scalar_model, SmoothIC)
from mrfv.stepping import (build_uniform_tree, build_initial_tree,
                           dense_reference_run, Simulation, TimeStepViolation)

UNIT = (0.0, 1.0, 0.0, 1.0)

GAUSS = SmoothIC(lambda x, y: (np.exp(-25 * ((x - 0.5) ** 2 + (y - 0.4) ** 2)),), 1)


def zero_reaction_scalar(D=1.0):
    z = lambda u, x, y: np.zeros_like(u)
    return ScalarModel(A=Diffusion(D), f=z, f_u=z)


def test_build_uniform_tree_matches_ic():
    tree = build_uniform_tree(GAUSS, UNIT, 3, 1)
    grid = GAUSS.averages(UNIT, (1, 1), 3)
    leaves = tree.leaves()
    assert len(leaves) == 64
    assert all(k[2] == 3 for k in leaves)
    for k in leaves:
        assert tree.nodes[k].avg[0] == pytest.approx(grid[k[0], k[1], 0], abs=1e-14)


def test_build_initial_tree_values_near_block_means():
    # coarsened leaves carry exact block means; refine-created leaves carry
    # predicted values whose deviation is bounded by the discarded details
    eps = 1e-3
    p = MRParams(eps, 5)
    tree = build_initial_tree(GAUSS, UNIT, 5, 1, p)
    fine = GAUSS.averages(UNIT, (1, 1), 5)[:, :, 0]
    n = fine.shape[0]
    mass = 0.0
    for k in tree.leaves():
        i, j, l = k
        f = n >> l
        block = fine[i * f:(i + 1) * f, j * f:(j + 1) * f]
        assert tree.nodes[k].avg[0] == pytest.approx(block.mean(), abs=3 * eps), k
        mass += tree.cell_area(k) * tree.nodes[k].avg[0]
    # prediction is projection-consistent, so the total mass is exact
    assert mass == pytest.approx(fine.mean(), rel=1e-12)


def test_build_initial_tree_invariants():
    p = MRParams(1e-3, 5)
    tree = build_initial_tree(GAUSS, UNIT, 5, 1, p)
    assert tree.check_grading()
    assert tree.check_completeness()
    assert tree.check_partition()
    assert tree.check_internal_consistency()
    assert min(k[2] for k in tree.leaves()) < 5, "far field must stay coarse"


def test_dense_reference_run_matches_manual_loop():
    model = zero_reaction_scalar()
    grid = dense_reference_run(model, GAUSS, UNIT, 4, t_end=2e-3, cfl=0.5)
    assert grid.shape == (16, 16, 1)
    # pure diffusion: mass conserved exactly by the flux form
    f0 = GAUSS.averages(UNIT, (1, 1), 4)
    assert grid.sum() == pytest.approx(f0.sum(), rel=1e-13)
    # first-order-in-time consistency: halving the CFL number halves the
    # deviation from a tiny-step run
    ref = DenseReference(model, UNIT, 4)
    f, n = f0, 2048
    for _ in range(n):
        f = ref.step(f, 2e-3 / n)
    e_half = np.max(np.abs(grid - f))
    grid_q = dense_reference_run(model, GAUSS, UNIT, 4, t_end=2e-3, cfl=0.25)
    e_quarter = np.max(np.abs(grid_q - f))
    assert e_half / e_quarter == pytest.approx(2.0, rel=0.25)


def test_simulation_reaches_target_time():
    sim = Simulation(model=make_scalar_model(), ic=GAUSS,
                     params=MRParams(1e-3, 4), domain=UNIT, max_level=4)
    sim.advance_to(0.01)
    assert sim.t == pytest.approx(0.01, abs=1e-12)
    assert sim.steps > 0
    sim.advance_to(0.02)
    assert sim.t == pytest.approx(0.02, abs=1e-12)


def test_simulation_stable_dt_obeys_cfl():
    sim = Simulation(model=make_scalar_model(), ic=GAUSS,
                     params=MRParams(1e-3, 4), domain=UNIT, max_level=4,
                     cfl=0.8)
    dt = sim.stable_dt()
    lf = max(k[2] for k in sim.tree.leaves())
    norms = sim.tracker.update(sim.leaf_state())
    assert dt * cfl_denominator(sim.model, norms, sim.tree.h(lf)) <= 0.8 + 1e-12


def test_simulation_grid_shape_and_mass():
    sim = Simulation(model=zero_reaction_scalar(), ic=GAUSS,
                     params=MRParams(1e-3, 4), domain=UNIT, max_level=4)
    g = sim.grid()
    assert g.shape == (16, 16, 1)
    assert g.mean() == pytest.approx(sim.total_mass()[0], rel=1e-12)
    sim.advance_to(5e-3)
    assert sim.grid().mean() == pytest.approx(g.mean(), rel=1e-12)


def test_simulation_max_dt_cap():
    sim = Simulation(model=zero_reaction_scalar(), ic=GAUSS,
                     params=MRParams(1e-3, 4), domain=UNIT, max_level=4,
                     max_dt=1e-5)
    assert sim.stable_dt() == pytest.approx(1e-5)


def test_adapt_every():
    base = dict(model=make_scalar_model(), ic=GAUSS, params=MRParams(1e-3, 4),
                domain=UNIT, max_level=4)
    s1 = Simulation(**base)
    s3 = Simulation(**base, adapt_every=3)
    s1.advance_to(5e-3)
    s3.advance_to(5e-3)
    total1 = s1.engine.rebuild_count + s1.engine.smooth_count
    total3 = s3.engine.rebuild_count + s3.engine.smooth_count
    assert total3 < total1
    # less frequent adaptation lags the refinement front slightly; the fields
    # stay close in the mean
    assert np.abs(s1.grid() - s3.grid()).mean() < 1e-4
    assert s3.total_mass()[0] == pytest.approx(s1.total_mass()[0], rel=1e-2)


def test_time_step_violation_raised_on_unstable_dt():
    sim = Simulation(model=zero_reaction_scalar(), ic=GAUSS,
                     params=MRParams(1e-3, 4), domain=UNIT, max_level=4)
    lf = max(k[2] for k in sim.tree.leaves())
    h = sim.tree.h(lf)
    sim.tracker.update(sim.leaf_state())
    with pytest.raises(TimeStepViolation):
        # far beyond the diffusive limit at the finest level
        sim._check_level_cfl(10.0 * h * h, sim.engine.l_min)
