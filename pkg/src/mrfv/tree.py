"""Dynamic graded quadtree of cell averages.

Cells are addressed by integer keys (i, j, l): column i, row j, refinement
level l.  The root grid has n0x x n0y cells at level 0 and every split
produces four sons at level l+1.  The tree is kept *graded* (one-irregular):
any two leaves that touch, by edge or corner, differ by at most one level.
It is *complete*: every node except the roots has its parent present.

Nodes carry a status:

* ``leaf``     -- data-bearing cell, part of the partition of the domain,
* ``internal`` -- has four real sons; its average is the projection
                  (mean) of the sons,
* ``virtual``  -- phantom node materialised so that every leaf sees its
                  s'=2 same-level neighbourhood; never data-bearing.

Ghost cells outside the domain are not stored; out-of-domain keys are
resolved by even reflection (zero-flux boundary), see :meth:`GradedTree.reflect`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

LEAF = "leaf"
INTERNAL = "internal"
VIRTUAL = "virtual"


class NodeKey(NamedTuple):
    i: int
    j: int
    l: int


# plain tuples hash and compare equal to NodeKey, so the hot key helpers
# build tuples directly (NamedTuple construction dominates profiles otherwise)

def parent_key(key: NodeKey) -> NodeKey:
    assert key[2] > 0
    return (key[0] >> 1, key[1] >> 1, key[2] - 1)


def son_keys(key: NodeKey) -> list[NodeKey]:
    i, j, l = key
    i, j, l = 2 * i, 2 * j, l + 1
    return [(i, j, l), (i + 1, j, l), (i, j + 1, l), (i + 1, j + 1, l)]


def brother_keys(key: NodeKey) -> list[NodeKey]:
    """The four members of key's sibling group (including key itself)."""
    i, j, l = key
    i0, j0 = i & ~1, j & ~1
    return [(i0, j0, l), (i0 + 1, j0, l), (i0, j0 + 1, l), (i0 + 1, j0 + 1, l)]


def shifted(key: NodeKey, dx: int, dy: int) -> NodeKey:
    return (key[0] + dx, key[1] + dy, key[2])


@dataclass(slots=True)
class Node:
    key: NodeKey
    avg: np.ndarray          # per-species cell averages, shape (n_species,)
    status: str = LEAF
    detail: np.ndarray | None = None
    deletable: bool = False


class TreeError(Exception):
    pass


# 8-neighbourhood offsets and the 5x5 cousin offsets (s' = 2).
NEIGHBOUR8 = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)]
COUSIN_OFFSETS = [(dx, dy) for dx in range(-2, 3) for dy in range(-2, 3)
                  if (dx, dy) != (0, 0)]


class GradedTree:
    """Graded, complete quadtree over a rectangular domain with square cells."""

    def __init__(self, domain, max_level: int, n_species: int = 1,
                 root_shape: tuple[int, int] = (1, 1)):
        xa, xb, ya, yb = domain
        n0x, n0y = root_shape
        hx = (xb - xa) / n0x
        hy = (yb - ya) / n0y
        if abs(hx - hy) > 1e-12 * max(abs(hx), abs(hy)):
            raise TreeError(f"root grid must give square cells, got hx={hx} hy={hy}")
        self.domain = (float(xa), float(xb), float(ya), float(yb))
        self.max_level = int(max_level)
        self.n_species = int(n_species)
        self.root_shape = (int(n0x), int(n0y))
        self._h0 = hx
        self.nodes: dict[NodeKey, Node] = {}
        for j in range(n0y):
            for i in range(n0x):
                k = NodeKey(i, j, 0)
                self.nodes[k] = Node(k, np.zeros(n_species))

    # ---- geometry -------------------------------------------------------

    def h(self, level: int) -> float:
        return self._h0 / (1 << level)

    def ncells(self, level: int) -> tuple[int, int]:
        return (self.root_shape[0] << level, self.root_shape[1] << level)

    def in_domain(self, key: NodeKey) -> bool:
        i, j, l = key
        return (0 <= i < (self.root_shape[0] << l)
                and 0 <= j < (self.root_shape[1] << l))

    def reflect(self, key: NodeKey) -> NodeKey:
        """Map an out-of-domain key to its even-reflection image inside."""
        i, j, l = key
        nx, ny = self.ncells(l)
        while not 0 <= i < nx:
            i = -1 - i if i < 0 else 2 * nx - 1 - i
        while not 0 <= j < ny:
            j = -1 - j if j < 0 else 2 * ny - 1 - j
        return NodeKey(i, j, l)

    def cell_center(self, key: NodeKey) -> tuple[float, float]:
        h = self.h(key[2])
        xa, _, ya, _ = self.domain
        return (xa + (key[0] + 0.5) * h, ya + (key[1] + 0.5) * h)

    def cell_area(self, key: NodeKey) -> float:
        return self.h(key[2]) ** 2

    # ---- queries --------------------------------------------------------

    def status(self, key: NodeKey) -> str | None:
        n = self.nodes.get(key)
        return None if n is None else n.status

    def is_leaf(self, key: NodeKey) -> bool:
        return self.status(key) == LEAF

    def leaves(self) -> list[NodeKey]:
        """Leaf keys in deterministic level-major, row-major order."""
        ks = [k for k, n in self.nodes.items() if n.status == LEAF]
        ks.sort(key=lambda k: (k[2], k[1], k[0]))
        return ks

    def real_keys(self) -> list[NodeKey]:
        ks = [k for k, n in self.nodes.items() if n.status != VIRTUAL]
        ks.sort(key=lambda k: (k[2], k[1], k[0]))
        return ks

    def virtual_keys(self) -> list[NodeKey]:
        ks = [k for k, n in self.nodes.items() if n.status == VIRTUAL]
        ks.sort(key=lambda k: (k[2], k[1], k[0]))
        return ks

    @property
    def l_min(self) -> int:
        return min(k[2] for k, n in self.nodes.items() if n.status == LEAF)

    def covering_leaf(self, key: NodeKey) -> NodeKey:
        """Leaf whose region contains the region of `key` (key at/below it)."""
        k = key
        while k[2] > 0:
            n = self.nodes.get(k)
            if n is not None and n.status == LEAF:
                return k
            k = parent_key(k)
        n = self.nodes.get(k)
        if n is None or n.status != LEAF:
            raise TreeError(f"no covering leaf for {key}")
        return k

    def region_finest_leaf_level(self, key: NodeKey) -> int:
        """Finest leaf level intersecting the region of `key`.

        If the region is covered by a coarser leaf, that leaf's level is
        returned (may be < key.l).
        """
        n = self.nodes.get(key)
        if n is None or n.status == VIRTUAL:
            return self.covering_leaf(key)[2]
        if n.status == LEAF:
            return key[2]
        return max(self.region_finest_leaf_level(s) for s in son_keys(key))

    # ---- structural edits -------------------------------------------------

    def split_allowed(self, key: NodeKey) -> bool:
        if not self.is_leaf(key) or key[2] >= self.max_level:
            return False
        for dx, dy in NEIGHBOUR8:
            nk = shifted(key, dx, dy)
            if not self.in_domain(nk):
                continue
            st = self.status(nk)
            if st == LEAF or st == INTERNAL:
                continue          # neighbour region at the same level or finer
            # a neighbour region held by a leaf coarser than key would end up
            # two levels away from the new sons
            if self.covering_leaf(nk)[2] < key[2]:
                return False
        return True

    def split_leaf(self, key: NodeKey) -> list[NodeKey]:
        """Split a leaf into four sons (status bookkeeping only).

        Sons inherit the parent average (projection-consistent placeholder);
        callers normally overwrite them with predicted values.
        """
        node = self.nodes.get(key)
        if node is None or node.status != LEAF:
            raise TreeError(f"split of non-leaf {key}")
        if key[2] >= self.max_level:
            raise TreeError(f"split beyond max level at {key}")
        if not self.split_allowed(key):
            raise TreeError(f"split of {key} would violate grading")
        sons = son_keys(key)
        for sk in sons:
            existing = self.nodes.get(sk)
            if existing is not None and existing.status == VIRTUAL:
                existing.status = LEAF
                existing.avg = node.avg.copy()
                existing.deletable = False
            else:
                self.nodes[sk] = Node(sk, node.avg.copy())
        node.status = INTERNAL
        node.deletable = False
        return sons

    def split_to_grading(self, key: NodeKey, created: set[NodeKey] | None = None) -> list[NodeKey]:
        """Split `key`, first recursively splitting any coarser neighbour leaf."""
        for dx, dy in NEIGHBOUR8:
            nk = shifted(key, dx, dy)
            if not self.in_domain(nk):
                continue
            st = self.status(nk)
            if st == LEAF or st == INTERNAL:
                continue
            cov = self.covering_leaf(nk)
            if cov[2] < key[2]:
                self.split_to_grading(cov, created)
        sons = self.split_leaf(key)
        if created is not None:
            created.update(sons)
        return sons

    def has_virtual_sons(self, key: NodeKey) -> bool:
        return any(self.status(s) == VIRTUAL for s in son_keys(key))

    def coarsen_allowed(self, key: NodeKey) -> bool:
        """May the four sons of `key` be merged back into `key`?"""
        node = self.nodes.get(key)
        if node is None or node.status != INTERNAL:
            return False
        sons = son_keys(key)
        for sk in sons:
            sn = self.nodes.get(sk)
            if sn is None or sn.status != LEAF:
                return False
            # virtual sons hanging below are derived state: they are deleted
            # by the merge and re-established with the next cousin sweep
        # merged leaf at key.l must not touch leaves finer than key.l + 1
        for dx, dy in NEIGHBOUR8:
            nk = shifted(key, dx, dy)
            if not self.in_domain(nk):
                continue
            if self.region_finest_leaf_level(nk) > key[2] + 1:
                return False
        return True

    def coarsen(self, key: NodeKey, require_deletable: bool = True) -> bool:
        """Merge the sons of `key` into it.  Best effort: returns False when
        any precondition fails.  The parent average becomes the exact
        projection of the sons."""
        if not self.coarsen_allowed(key):
            return False
        sons = son_keys(key)
        if require_deletable and not all(self.nodes[s].deletable for s in sons):
            return False
        node = self.nodes[key]
        node.avg = sum(self.nodes[s].avg for s in sons) / 4.0
        for sk in sons:
            # discard any virtual grandsons hanging under the removed leaves
            for gk in son_keys(sk):
                gn = self.nodes.get(gk)
                if gn is not None and gn.status == VIRTUAL:
                    del self.nodes[gk]
            del self.nodes[sk]
        node.status = LEAF
        # the deletable flag assigned to `key` beforehand is kept: the merged
        # leaf may take part in a further (cascading) merge this pass
        return True

    # ---- virtual layer ----------------------------------------------------

    def clear_virtual(self) -> None:
        for k in [k for k, n in self.nodes.items() if n.status == VIRTUAL]:
            del self.nodes[k]

    def ensure_virtual_cousins(self) -> None:
        """Materialise the s'=2 same-level neighbourhood of every leaf.

        Missing in-domain cousins (including the diagonal ones) are created
        as virtual nodes; missing ancestors of a new virtual node are created
        virtual as well so completeness holds.  Out-of-domain ghosts are not
        stored -- they are resolved by reflection.
        """
        self.clear_virtual()
        nodes = self.nodes
        n0x, n0y = self.root_shape
        for key in self.leaves():
            i, j, l = key
            nx, ny = n0x << l, n0y << l
            for dx, dy in COUSIN_OFFSETS:
                ck = (i + dx, j + dy, l)
                if ck in nodes or not (0 <= i + dx < nx and 0 <= j + dy < ny):
                    continue
                self._ensure_virtual(ck)

    def _ensure_virtual(self, key: NodeKey) -> None:
        if key in self.nodes:
            return
        if key[2] > 0:
            self._ensure_virtual(parent_key(key))
        self.nodes[key] = Node(key, np.zeros(self.n_species), status=VIRTUAL)

    # ---- invariants (test support) ----------------------------------------

    def check_completeness(self) -> bool:
        return all(k[2] == 0 or parent_key(k) in self.nodes for k in self.nodes)

    def check_partition(self, tol: float = 1e-9) -> bool:
        xa, xb, ya, yb = self.domain
        total = sum(self.cell_area(k) for k in self.leaves())
        return abs(total - (xb - xa) * (yb - ya)) <= tol * (xb - xa) * (yb - ya)

    def _touches(self, a: NodeKey, b: NodeKey) -> bool:
        """Closed cell rectangles of `a` and `b` intersect (edge or corner)."""
        l = max(a[2], b[2])
        sa, sb = l - a[2], l - b[2]
        ax0, ay0 = a[0] << sa, a[1] << sa
        ax1, ay1 = (a[0] + 1) << sa, (a[1] + 1) << sa
        bx0, by0 = b[0] << sb, b[1] << sb
        bx1, by1 = (b[0] + 1) << sb, (b[1] + 1) << sb
        return ax0 <= bx1 and bx0 <= ax1 and ay0 <= by1 and by0 <= ay1

    def _finest_adjacent(self, region: NodeKey, key: NodeKey) -> int:
        """Finest leaf level inside `region` whose cell touches the cell of `key`."""
        n = self.nodes.get(region)
        if n is None or n.status == VIRTUAL:
            return self.covering_leaf(region)[2]
        if n.status == LEAF:
            return region[2]
        best = 0
        for s in son_keys(region):
            if self._touches(s, key):
                best = max(best, self._finest_adjacent(s, key))
        return best

    def check_grading(self) -> bool:
        """Any two leaves whose cells touch differ by at most one level."""
        for key in self.leaves():
            for dx, dy in NEIGHBOUR8:
                nk = shifted(key, dx, dy)
                if not self.in_domain(nk):
                    continue
                st = self.status(nk)
                if st == LEAF or st == INTERNAL:
                    lo = key[2]      # neighbour realised at same level or finer
                else:
                    lo = self.covering_leaf(nk)[2]
                hi = self._finest_adjacent(nk, key)
                if lo < key[2] - 1 or hi > key[2] + 1:
                    return False
        return True

    def check_internal_consistency(self, tol: float = 1e-12) -> bool:
        """Internal averages equal the projection of their sons."""
        for k, n in self.nodes.items():
            if n.status != INTERNAL:
                continue
            proj = sum(self.nodes[s].avg for s in son_keys(k)) / 4.0
            if np.max(np.abs(proj - n.avg)) > tol:
                return False
        return True

    # ---- io ---------------------------------------------------------------

    def dump_leaves(self) -> str:
        """One line per leaf: `l i j status` followed by the averages."""
        lines = []
        for k in self.leaves():
            vals = " ".join(f"{v:.17g}" for v in self.nodes[k].avg)
            lines.append(f"{k[2]} {k[0]} {k[1]} {LEAF} {vals}")
        return "\n".join(lines) + "\n"

    def counts(self) -> dict[str, int]:
        c = {LEAF: 0, INTERNAL: 0, VIRTUAL: 0}
        for n in self.nodes.values():
            c[n.status] += 1
        return c
