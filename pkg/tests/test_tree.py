"""Tree topology: grading, completeness, partition, split/coarsen mechanics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrfv.tree import GradedTree, NodeKey, TreeError, parent_key, son_keys, brother_keys

UNIT = (0.0, 1.0, 0.0, 1.0)


def make_tree(max_level=4, n_species=1, root_shape=(1, 1)):
    return GradedTree(UNIT, max_level, n_species, root_shape)


def test_key_arithmetic():
    k = NodeKey(5, 3, 4)
    assert parent_key(k) == NodeKey(2, 1, 3)
    sons = son_keys(NodeKey(2, 1, 3))
    assert NodeKey(5, 3, 4) in sons and len(sons) == 4
    assert set(brother_keys(k)) == set(son_keys(parent_key(k)))
    for s in sons:
        assert parent_key(s) == NodeKey(2, 1, 3)


def test_root_is_single_leaf():
    t = make_tree()
    assert t.leaves() == [NodeKey(0, 0, 0)]
    assert t.check_completeness() and t.check_partition() and t.check_grading()


def test_rectangular_root_shape():
    t = GradedTree((0.0, 2.0, 0.0, 1.0), 3, root_shape=(2, 1))
    assert len(t.leaves()) == 2
    assert t.h(0) == 1.0
    assert t.check_partition()
    with pytest.raises(TreeError):
        GradedTree((0.0, 2.0, 0.0, 1.0), 3, root_shape=(1, 1))  # non-square cells


def test_geometry():
    t = make_tree(3)
    assert t.h(0) == 1.0 and t.h(3) == 0.125
    assert t.cell_center(NodeKey(0, 0, 0)) == (0.5, 0.5)
    assert t.cell_area(NodeKey(0, 0, 2)) == pytest.approx(1 / 16)
    cx, cy = t.cell_center(NodeKey(3, 0, 2))
    assert cx == pytest.approx(0.875) and cy == pytest.approx(0.125)


def test_reflection_even():
    t = make_tree(2)
    nx, _ = t.ncells(2)
    assert t.reflect(NodeKey(-1, 1, 2)) == NodeKey(0, 1, 2)
    assert t.reflect(NodeKey(-2, 1, 2)) == NodeKey(1, 1, 2)
    assert t.reflect(NodeKey(nx, 1, 2)) == NodeKey(nx - 1, 1, 2)
    assert t.reflect(NodeKey(0, -1, 2)) == NodeKey(0, 0, 2)


def test_split_then_coarsen_restores_topology():
    t = make_tree(3)
    t.nodes[NodeKey(0, 0, 0)].avg[:] = 1.0
    before = dict(t.nodes)
    sons = t.split_leaf(NodeKey(0, 0, 0))
    assert len(sons) == 4
    assert not t.is_leaf(NodeKey(0, 0, 0))
    for s in sons:
        t.nodes[s].deletable = True
    assert t.coarsen(NodeKey(0, 0, 0))
    assert set(t.leaves()) == {NodeKey(0, 0, 0)}
    assert set(t.nodes) >= set(before)


def test_split_conserves_mass():
    t = make_tree(3)
    t.nodes[NodeKey(0, 0, 0)].avg[:] = 2.5
    t.split_leaf(NodeKey(0, 0, 0))
    vals = [t.nodes[s].avg for s in son_keys(NodeKey(0, 0, 0))]
    # splitting seeds sons so that the parent projection is preserved
    assert np.mean(vals) == pytest.approx(2.5, abs=1e-14)


def test_grading_forces_neighbor_split():
    t = make_tree(4)
    t.split_leaf(NodeKey(0, 0, 0))
    # splitting one corner son twice requires its neighbours to follow
    t.split_to_grading(NodeKey(0, 0, 1), set())
    t.split_to_grading(NodeKey(0, 0, 2), set())
    assert t.check_grading() and t.check_completeness() and t.check_partition()
    # the far corner must still be coarse
    lvl = {k[2] for k in t.leaves()}
    assert max(lvl) == 3 and min(lvl) < 3


def test_coarsen_refused_when_grading_would_break():
    t = make_tree(4)
    t.split_leaf(NodeKey(0, 0, 0))
    t.split_to_grading(NodeKey(0, 0, 1), set())
    t.split_to_grading(NodeKey(0, 0, 2), set())
    # (0,0,1) has grandsons next to it via (0,0,2)'s sons; merging it would
    # put a level-1 leaf against level-3 leaves
    t.nodes[NodeKey(0, 0, 1)].deletable = True
    for s in son_keys(NodeKey(0, 0, 1)):
        if t.is_leaf(s):
            t.nodes[s].deletable = True
    assert not t.coarsen_allowed(NodeKey(0, 0, 1))


def test_virtual_cousins_established():
    t = make_tree(4)
    t.split_leaf(NodeKey(0, 0, 0))
    t.split_to_grading(NodeKey(1, 1, 1), set())
    t.ensure_virtual_cousins()
    virt = t.virtual_keys()
    assert virt, "fine leaves need virtual same-level cousins"
    # every virtual key is within distance 2 of some leaf at its level
    leaves_by_level = {}
    for k in t.leaves():
        leaves_by_level.setdefault(k[2], set()).add((k[0], k[1]))
    for v in virt:
        near = any(abs(v[0] - i) <= 2 and abs(v[1] - j) <= 2
                   for (i, j) in leaves_by_level.get(v[2], ()))
        assert near, v


def test_clear_virtual_is_inverse_of_ensure():
    t = make_tree(4)
    t.split_leaf(NodeKey(0, 0, 0))
    t.split_to_grading(NodeKey(1, 1, 1), set())
    t.ensure_virtual_cousins()
    t.clear_virtual()
    assert not t.virtual_keys()
    assert t.check_completeness() and t.check_partition()


def test_covering_leaf():
    t = make_tree(4)
    t.split_leaf(NodeKey(0, 0, 0))
    assert t.covering_leaf(NodeKey(3, 3, 2)) == NodeKey(1, 1, 1)
    with pytest.raises(TreeError):
        t.covering_leaf(NodeKey(-1, 0, 2))


def test_counts_report():
    t = make_tree(3)
    t.split_leaf(NodeKey(0, 0, 0))
    c = t.counts()
    assert c["leaf"] == 4 and c["internal"] == 1


# ---- randomized legal edit sequences -----------------------------------------

def random_edits(tree, rng, n_edits):
    """Apply n_edits randomized legal split/coarsen operations."""
    applied = 0
    for _ in range(n_edits):
        leaves = tree.leaves()
        k = leaves[rng.integers(len(leaves))]
        if rng.random() < 0.6:
            if k[2] < tree.max_level and tree.split_allowed(k):
                tree.split_leaf(k)
                applied += 1
        else:
            if k[2] == 0:
                continue
            p = parent_key(k)
            if all(tree.is_leaf(s) for s in son_keys(p)):
                for s in son_keys(p):
                    tree.nodes[s].deletable = True
                if tree.coarsen(p):
                    applied += 1
    return applied


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_invariants_under_many_random_edits(seed):
    rng = np.random.default_rng(seed)
    t = make_tree(5)
    # exercise 2500 edits per seed (10k total across the matrix)
    random_edits(t, rng, 2500)
    assert t.check_grading()
    assert t.check_completeness()
    assert t.check_partition()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 120))
def test_invariants_property(seed, n):
    rng = np.random.default_rng(seed)
    t = make_tree(4)
    random_edits(t, rng, n)
    assert t.check_grading() and t.check_completeness() and t.check_partition()
    # no orphans: every non-root node's parent exists
    for k in t.nodes:
        if k[2] > 0:
            assert parent_key(k) in t.nodes, k


def test_leaf_area_partitions_domain():
    rng = np.random.default_rng(7)
    t = make_tree(5)
    random_edits(t, rng, 800)
    total = sum(t.cell_area(k) for k in t.leaves())
    assert total == pytest.approx(1.0, rel=1e-12)
