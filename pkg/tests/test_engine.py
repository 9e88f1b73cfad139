"""Compiled solver: equivalence with the per-node reference implementation,
uniform-grid equivalence with the dense solver, and local time stepping."""

import copy

import numpy as np
import pytest

from mrfv.tree import GradedTree, NodeKey
from mrfv.transform import MRParams, update_tree
from mrfv.engine import Engine, _v2
from mrfv.fv import (march_reference, DenseReference, NormTracker, compute_dt)
from mrfv.models import (Diffusion, ScalarModel, make_scalar_model,
                         make_combustion_model, make_chemotaxis_model,
                         SmoothIC)
from mrfv.presets import get_scenario
from mrfv.stepping import build_initial_tree, build_uniform_tree, Simulation

UNIT = (0.0, 1.0, 0.0, 1.0)


def zero_reaction_scalar(D=1.0):
    z = lambda u, x, y: np.zeros_like(u)
    return ScalarModel(A=Diffusion(D), f=z, f_u=z)


def test_v2():
    assert [_v2(n) for n in (1, 2, 3, 4, 6, 8, 12)] == [0, 1, 0, 2, 1, 3, 2]


# ---- engine vs per-node reference -------------------------------------------------

def test_engine_matches_reference_over_adaptive_steps():
    sc = get_scenario("example1")
    model, ic = sc.make_model(), sc.make_ic(0, 4)
    p = MRParams(sc.epsilon_ref, 4)
    t_ref = build_initial_tree(ic, sc.domain, 4, 1, p)
    t_eng = copy.deepcopy(t_ref)
    eng = Engine(t_eng, model, p)
    tracker = NormTracker(model, sc.domain)
    for step in range(25):
        st = np.array([t_ref.nodes[k].avg for k in t_ref.leaves()])
        dt = compute_dt(model, tracker.update(st),
                        t_ref.h(max(k[2] for k in t_ref.leaves())), 1.0)
        march_reference(t_ref, model, dt)
        update_tree(t_ref, p)
        eng.march(dt)
        eng.adapt()
        assert set(t_ref.leaves()) == set(t_eng.leaves()), f"topology diverged at {step}"
    eng.writeback()
    for k in t_ref.leaves():
        assert np.allclose(t_ref.nodes[k].avg, t_eng.nodes[k].avg, atol=1e-13), k


def test_engine_matches_reference_two_species():
    sc = get_scenario("example2")
    model, ic = sc.make_model(), sc.make_ic(0, 4)
    p = MRParams(sc.epsilon_ref, 4)
    t_ref = build_initial_tree(ic, sc.domain, 4, 2, p)
    t_eng = copy.deepcopy(t_ref)
    eng = Engine(t_eng, model, p)
    tracker = NormTracker(model, sc.domain)
    for step in range(10):
        st = np.array([t_ref.nodes[k].avg for k in t_ref.leaves()])
        dt = compute_dt(model, tracker.update(st),
                        t_ref.h(max(k[2] for k in t_ref.leaves())), 0.9)
        march_reference(t_ref, model, dt)
        update_tree(t_ref, p)
        eng.march(dt)
        eng.adapt()
        assert set(t_ref.leaves()) == set(t_eng.leaves()), f"topology diverged at {step}"
    eng.writeback()
    for k in t_ref.leaves():
        assert np.allclose(t_ref.nodes[k].avg, t_eng.nodes[k].avg, atol=1e-12), k


# ---- uniform-grid equivalence with the dense solver -------------------------------

@pytest.mark.parametrize("which", ["scalar", "two", "chemotaxis"])
def test_uniform_tree_step_equals_dense(which):
    L = 4
    if which == "scalar":
        model = make_scalar_model()
        ic = SmoothIC(lambda x, y: (0.3 + 0.4 * np.exp(-8 * ((x - 0.5) ** 2
                                                             + (y - 0.5) ** 2)),), 1)
        dom = UNIT
    elif which == "two":
        model = make_combustion_model()
        ic = SmoothIC(lambda x, y: (np.exp(-0.1 * (x ** 2 + y ** 2)),
                                    1 - np.exp(-0.1 * (x ** 2 + y ** 2))), 2)
        dom = (-30.0, 30.0, -30.0, 30.0)
    else:
        model = make_chemotaxis_model()
        ic = SmoothIC(lambda x, y: (1.0 + 0.05 * np.sin(x + 0.3) * np.cos(y),
                                    np.full_like(x, 1 / 32)), 2)
        dom = (0.0, 16.0, 0.0, 16.0)
    tree = build_uniform_tree(ic, dom, L, model.n_species)
    eng = Engine(tree, model, MRParams(1e-6, L))
    ref = DenseReference(model, dom, L)
    f = ic.averages(dom, (1, 1), L)
    dt = 1e-5
    for _ in range(3):
        eng.march(dt)
        f = ref.step(f, dt)
    eng.writeback()
    for k in tree.leaves():
        assert np.allclose(tree.nodes[k].avg, f[k[0], k[1]], atol=1e-12), k


# ---- local time stepping ----------------------------------------------------------

def test_lts_schedule_matches_hand_tables():
    """Intermediate-step activity: level l is active at steps
    k = 1, 1 + 2^(L-l), 1 + 2*2^(L-l), ...  (2^l times for l_min = 0)."""
    hand = {
        1: {0: [1], 1: [1, 2]},
        2: {0: [1], 1: [1, 3], 2: [1, 2, 3, 4]},
        3: {0: [1], 1: [1, 5], 2: [1, 3, 5, 7], 3: [1, 2, 3, 4, 5, 6, 7, 8]},
    }
    for L, table in hand.items():
        for l, steps in table.items():
            got = [k for k in range(1, (1 << L) + 1)
                   if l >= (0 if k == 1 else max(0, L - _v2(k - 1)))]
            assert got == steps, (L, l)


def test_lts_synchronizes_all_levels():
    """Summing each level's advances over one macro step gives dt_macro."""
    L, l0 = 3, 0
    dt_macro = 1.0
    n_sub = 1 << (L - l0)
    dtL = dt_macro / n_sub
    elapsed = {l: 0.0 for l in range(l0, L + 1)}
    for k in range(1, n_sub + 1):
        ac = l0 if k == 1 else max(l0, L - _v2(k - 1))
        for l in range(ac, L + 1):
            elapsed[l] += dtL * (1 << (L - l))
    for l, t in elapsed.items():
        assert t == pytest.approx(dt_macro, rel=1e-14), l


def test_uniform_lts_equals_global():
    sc = get_scenario("example2")
    grids = []
    for mode in ("global", "local"):
        sim = Simulation(model=sc.make_model(), ic=sc.make_ic(0, 4),
                         params=MRParams(sc.epsilon_ref, 4), domain=sc.domain,
                         max_level=4, root_shape=sc.root_shape, cfl=0.5,
                         time_stepping=mode, adapt=False)
        sim.advance_to(0.05)
        grids.append(sim.grid())
    assert np.array_equal(grids[0], grids[1])


def test_lts_macro_step_conserves_mass():
    model = zero_reaction_scalar()
    ic = SmoothIC(lambda x, y: (np.exp(-40 * ((x - 0.3) ** 2 + (y - 0.55) ** 2)),), 1)
    sim = Simulation(model=model, ic=ic, params=MRParams(1e-3, 6),
                     domain=UNIT, max_level=6, cfl=0.5, time_stepping="local")
    m0 = sim.total_mass()[0]
    dt_fine = sim.stable_dt()
    sim.advance_to(dt_fine * (1 << (6 - sim.engine.l_min)))   # one macro step
    m1 = sim.total_mass()[0]
    assert abs(m1 - m0) <= 1e-11 * abs(m0)


def test_lts_many_macro_steps_conserve_mass_with_adaptation():
    model = zero_reaction_scalar()
    ic = SmoothIC(lambda x, y: (np.exp(-40 * ((x - 0.3) ** 2 + (y - 0.55) ** 2)),), 1)
    sim = Simulation(model=model, ic=ic, params=MRParams(1e-3, 6),
                     domain=UNIT, max_level=6, cfl=0.5, time_stepping="local")
    m0 = sim.total_mass()[0]
    sim.advance_to(0.01)
    m1 = sim.total_mass()[0]
    assert abs(m1 - m0) <= 1e-10 * abs(m0)
    assert sim.tree.check_grading() and sim.tree.check_partition()


def test_lts_close_to_global_adaptive():
    sc = get_scenario("example3")
    results = {}
    for mode in ("global", "local"):
        sim = Simulation(model=sc.make_model(), ic=sc.make_ic(0, 5),
                         params=MRParams(sc.epsilon_ref, 5), domain=sc.domain,
                         max_level=5, root_shape=sc.root_shape, cfl=0.5,
                         time_stepping=mode)
        sim.advance_to(0.2)
        results[mode] = sim.grid()
    diff = np.abs(results["local"] - results["global"]).mean()
    assert diff <= 10 * sc.epsilon_ref


def test_adaptive_engine_run_stays_consistent():
    sc = get_scenario("example1")
    sim = Simulation(model=sc.make_model(), ic=sc.make_ic(0, 5),
                     params=MRParams(sc.epsilon_ref, 5), domain=sc.domain,
                     max_level=5, cfl=1.0, time_stepping="global")
    sim.advance_to(0.05)
    assert np.all(np.isfinite(sim.leaf_state()))
    assert sim.tree.check_grading()
    assert sim.tree.check_completeness()
    assert sim.tree.check_partition()
    sim.engine.writeback()
    assert sim.tree.check_internal_consistency(1e-9)
