"""Cell-average multiresolution transform on the graded quadtree.

Projection takes the four son averages to the parent (exact mean).
Prediction is the adjoint-consistent third-order interpolation from the
parent's 5x5 same-level stencil; per son (e1, e2), e in {0, 1}:

    w_hat = w + (-1)^e1 Qx + (-1)^e2 Qy + (-1)^(e1+e2) Qxy

with Qx = sum_n g_n (w[i+n,j] - w[i-n,j]), Qy alike in j, and the tensor
cross term Qxy = sum_n g_n sum_p g_p (w[i+n,j+p] - w[i+n,j-p] - w[i-n,j+p]
+ w[i-n,j-p]), g_1 = -22/128, g_2 = 3/128.  The signs are fixed by the two
defining identities (checked in the test suite): projecting the four
predicted sons returns the parent exactly, and cell averages of polynomials
up to degree two are reproduced exactly.

Details are prediction errors; a detail below the level tolerance

    eps_l = 2^(2(l-L)) eps_R

is discardable.  ``update_tree`` performs one adaptation pass: projection,
details, thresholding with cascading coarsening, refinement, and a one-level
safety zone, then refreshes the virtual leaf layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tree import (GradedTree, Node, NodeKey, LEAF, INTERNAL, VIRTUAL,
                   parent_key, son_keys, brother_keys, shifted)

GAMMA_TILDE = (-22.0 / 128.0, 3.0 / 128.0)


def prediction_coefficients(e1: int, e2: int,
                            gammas: tuple[float, float] = GAMMA_TILDE) -> np.ndarray:
    """5x5 stencil weights for the son (e1, e2); index [di+2, dj+2]."""
    c = np.zeros((5, 5))
    c[2, 2] = 1.0
    sx = (-1.0) ** e1
    sy = (-1.0) ** e2
    for n, g in enumerate(gammas, start=1):
        c[2 + n, 2] += sx * g
        c[2 - n, 2] -= sx * g
        c[2, 2 + n] += sy * g
        c[2, 2 - n] -= sy * g
    for n, gn in enumerate(gammas, start=1):
        for p, gp in enumerate(gammas, start=1):
            w = sx * sy * gn * gp
            c[2 + n, 2 + p] += w
            c[2 + n, 2 - p] -= w
            c[2 - n, 2 + p] -= w
            c[2 - n, 2 - p] += w
    return c

PRED_COEFFS = {(e1, e2): prediction_coefficients(e1, e2)
               for e1 in (0, 1) for e2 in (0, 1)}

# all four son stencils stacked as a (4, 25) matrix, row order (e1, e2) =
# (0,0), (0,1), (1,0), (1,1); lets predict() run as one small matmul
PRED_STACK = np.stack([PRED_COEFFS[(0, 0)].ravel(),
                       PRED_COEFFS[(0, 1)].ravel(),
                       PRED_COEFFS[(1, 0)].ravel(),
                       PRED_COEFFS[(1, 1)].ravel()])


@dataclass
class MRParams:
    """Thresholding parameters of the multiresolution representation."""
    epsilon_ref: float
    max_level: int
    detail_norm: str = "minmax"   # or "euclidean"

    def level_tolerance(self, level: int) -> float:
        return 2.0 ** (2 * (level - self.max_level)) * self.epsilon_ref


def level_tolerance(params: MRParams, level: int) -> float:
    return params.level_tolerance(level)


# ---- pointwise operators ----------------------------------------------------

def project(son_values: np.ndarray) -> np.ndarray:
    """Parent average from the four son averages; shape (4, ...) -> (...)."""
    son_values = np.asarray(son_values)
    assert son_values.shape[0] == 4
    return son_values.mean(axis=0)


def predict(stencil: np.ndarray) -> np.ndarray:
    """Predict the four sons of the stencil's centre cell.

    `stencil` has shape (5, 5, ...) indexed [di+2, dj+2]; the result has
    shape (2, 2, ...) indexed [e1, e2].
    """
    stencil = np.asarray(stencil)
    rest = stencil.shape[2:]
    out = PRED_STACK @ stencil.reshape(25, -1)
    return out.reshape((2, 2) + rest)


def detail(actual: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    return np.asarray(actual) - np.asarray(predicted)


def combine_detail(d: np.ndarray, mode: str) -> tuple[float, float]:
    """(coarsen_measure, refine_measure) for a per-species detail vector."""
    a = np.abs(np.asarray(d, dtype=float))
    if mode == "euclidean":
        v = float(np.sqrt((a ** 2).sum()))
        return v, v
    return float(a.max()), float(a.min())


# ---- reference tolerances ----------------------------------------------------

ALPHA_TILDE_MODEL2 = 2.18
# measured: scripts/convergence_study.py --problem chemotaxis --dt-quadratic
# (observed L1 orders 1.78/1.89 on L=5..7 vs an L=9 reference)
ALPHA_TILDE_MODEL3 = 1.9


def reference_tolerance_model2(C: float, L: int, area: float, d: float,
                               norm_fu: float, norm_fv: float,
                               norm_gu: float, norm_gv: float,
                               norm_Ap: float, norm_Bp: float,
                               alpha_tilde: float = ALPHA_TILDE_MODEL2) -> float:
    react = area * (norm_fu + norm_fv + norm_gu + norm_gv)
    diff = area ** 1.5 * 2.0 ** L * 4.0 * d * (norm_Ap + norm_Bp)
    denom = react + diff
    if denom <= 0:
        raise ValueError("degenerate norm bundle: zero denominator")
    return C * 2.0 ** (-(alpha_tilde + 2.0) * L) / denom


def reference_tolerance_model3(C: float, L: int, area: float, d: float,
                               norm_hu: float, norm_hv: float, norm_gp: float,
                               sigma: float, norm_chip: float,
                               alpha_tilde: float = ALPHA_TILDE_MODEL3) -> float:
    react = area * (norm_hu + norm_hv + norm_gp)
    diff = area ** 1.5 * 2.0 ** L * 4.0 * d * (sigma + norm_chip)
    denom = react + diff
    if denom <= 0:
        raise ValueError("degenerate norm bundle: zero denominator")
    return C * 2.0 ** (-(alpha_tilde + 2.0) * L) / denom


# ---- value resolution on the tree --------------------------------------------

def node_value(tree: GradedTree, key: NodeKey, cache: dict | None = None) -> np.ndarray:
    """Per-species average at `key`, however the key is realised.

    Real nodes return their stored average (internal nodes are assumed
    projected).  Virtual or absent in-domain keys are predicted from the
    parent stencil, recursively.  Out-of-domain keys reflect evenly.
    """
    if cache is None:
        cache = {}
    return _node_value(tree, key, cache)


def _node_value(tree, key, cache):
    v = cache.get(key)
    if v is not None:
        return v
    if not tree.in_domain(key):
        v = _node_value(tree, tree.reflect(key), cache)
        cache[key] = v
        return v
    node = tree.nodes.get(key)
    if node is not None and node.status != VIRTUAL:
        cache[key] = node.avg
        return node.avg
    pi, pj, pl = parent_key(key)
    stencil = np.empty((5, 5, tree.n_species))
    for di in range(-2, 3):
        for dj in range(-2, 3):
            stencil[di + 2, dj + 2] = _node_value(tree, (pi + di, pj + dj, pl),
                                                  cache)
    sons = predict(stencil)
    l = key[2]
    for e1 in (0, 1):
        for e2 in (0, 1):
            cache[(2 * pi + e1, 2 * pj + e2, l)] = sons[e1, e2]
    return cache[key]


def refresh_projections(tree: GradedTree) -> None:
    """Recompute internal averages bottom-up from the leaves."""
    from operator import itemgetter
    keys = sorted((k for k, n in tree.nodes.items() if n.status == INTERNAL),
                  key=itemgetter(2), reverse=True)
    nodes = tree.nodes
    for i, j, l in keys:
        i2, j2, l2 = 2 * i, 2 * j, l + 1
        nodes[(i, j, l)].avg = 0.25 * (
            nodes[(i2, j2, l2)].avg + nodes[(i2 + 1, j2, l2)].avg
            + nodes[(i2, j2 + 1, l2)].avg + nodes[(i2 + 1, j2 + 1, l2)].avg)


def refresh_virtual_values(tree: GradedTree) -> None:
    """Store predicted averages on the virtual nodes (coarse to fine)."""
    cache: dict = {}
    for k in tree.virtual_keys():
        tree.nodes[k].avg = np.array(_node_value(tree, k, cache))


def node_detail(tree: GradedTree, key: NodeKey, cache: dict) -> np.ndarray:
    pi, pj, pl = parent_key(key)
    stencil = np.empty((5, 5, tree.n_species))
    for di in range(-2, 3):
        for dj in range(-2, 3):
            stencil[di + 2, dj + 2] = _node_value(tree, (pi + di, pj + dj, pl),
                                                  cache)
    pred = predict(stencil)[key[0] & 1, key[1] & 1]
    return tree.nodes[key].avg - pred


def fill_by_prediction(tree: GradedTree, parent: NodeKey, cache: dict) -> None:
    """Overwrite the four real sons of `parent` with predicted values."""
    pi, pj, pl = parent
    stencil = np.empty((5, 5, tree.n_species))
    for di in range(-2, 3):
        for dj in range(-2, 3):
            stencil[di + 2, dj + 2] = _node_value(tree, (pi + di, pj + dj, pl),
                                                  cache)
    pred = predict(stencil)
    for e1 in (0, 1):
        for e2 in (0, 1):
            sk = (2 * pi + e1, 2 * pj + e2, pl + 1)
            tree.nodes[sk].avg = np.array(pred[e1, e2])


# ---- adaptation pass ----------------------------------------------------------

def update_tree(tree: GradedTree, params: MRParams, level_floor: int = 0,
                details: dict | None = None) -> dict:
    """One full grid-adaptation pass; returns a small op summary.

    Stages, in order: (1) projection of internal averages; (2) details of all
    real non-root nodes; (3) deletable flags on complete sibling groups whose
    details all fall below eps_l; (4) cascading coarsening of deletable leaf
    groups (fine to coarse, grading- and virtual-son-guarded); (5) refinement
    of surviving non-deletable leaves whose refine-measure exceeds eps_l;
    (6) one-level safety zone: every leaf not created by (5) and below the
    max level is split once, sons filled by prediction; (7) virtual cousins
    re-established.

    `level_floor` restricts stages (3)-(6) to sibling groups whose parent is
    at that level or deeper (used by local time stepping); the safety zone
    then re-splits only merged groups and leaves strictly above the floor, so
    leaves sitting exactly at the floor are left alone.

    `details` may carry precomputed per-node detail vectors (from the
    compiled engine); missing entries are computed on demand.
    """
    refresh_projections(tree)
    cache: dict = {}

    if details is None:
        details = {}
        for k in tree.real_keys():
            if k[2] == 0:
                continue
            details[k] = node_detail(tree, k, cache)
    for k, d in details.items():
        node = tree.nodes.get(k)
        if node is not None:
            node.detail = d

    # (3) deletable flags per complete sibling group
    for n in tree.nodes.values():
        n.deletable = False
    seen: set[NodeKey] = set()
    for k in list(details):
        if k in seen:
            continue
        group = brother_keys(k)
        seen.update(group)
        if not all(g in details for g in group):
            continue
        if k[2] - 1 < level_floor:
            continue
        eps = params.level_tolerance(k[2])
        if all(combine_detail(details[g], params.detail_norm)[0] < eps for g in group):
            for g in group:
                tree.nodes[g].deletable = True

    n_coarsened = 0
    merged: set[NodeKey] = set()
    # (4) cascade: merge deletable leaf groups, deepest first
    for lam in range(tree.max_level, level_floor, -1):
        parents = {parent_key(k) for k, n in tree.nodes.items()
                   if n.status == LEAF and n.deletable and k[2] == lam}
        for pk in sorted(parents, key=lambda k: (k[1], k[0])):
            if tree.coarsen(pk, require_deletable=True):
                merged.add(pk)
                n_coarsened += 1

    def _split_and_fill(k: NodeKey, created_pool: set[NodeKey]) -> bool:
        # under a level floor, grading closure below the floor must not run
        if level_floor > 0 and not tree.split_allowed(k):
            return False
        created: set[NodeKey] = set()
        tree.split_to_grading(k, created)
        created_pool.update(created)
        parents = sorted({parent_key(c) for c in created}, key=lambda p: p[2])
        for ck in parents:
            fill_by_prediction(tree, ck, {})
        return True

    # (5) refinement of surviving leaves with significant details
    refine_created: set[NodeKey] = set()
    n_refined = 0
    for k in tree.leaves():
        if k[2] >= tree.max_level or k[2] < level_floor:
            continue
        if tree.status(k) != LEAF or k in refine_created:
            continue
        node = tree.nodes[k]
        if node.deletable:
            continue
        d = details.get(k)
        if d is None:
            d = node_detail(tree, k, cache) if k[2] > 0 else np.zeros(tree.n_species)
        if combine_detail(d, params.detail_norm)[1] > params.level_tolerance(k[2]):
            if _split_and_fill(k, refine_created):
                n_refined += 1

    # (6) safety zone
    n_safety = 0
    for k in tree.leaves():
        if k[2] >= tree.max_level or k[2] < level_floor:
            continue
        if level_floor > 0 and k[2] == level_floor and k not in merged:
            continue   # a partial pass never touched this leaf
        if tree.status(k) != LEAF or k in refine_created:
            continue
        if _split_and_fill(k, refine_created):
            n_safety += 1

    tree.ensure_virtual_cousins()
    refresh_virtual_values(tree)
    return {"coarsened": n_coarsened, "refined": n_refined, "safety": n_safety}


# ---- uniform-grid encode / decode --------------------------------------------

def _restrict(fine: np.ndarray) -> np.ndarray:
    """Block (2x2) mean; fine shape (2m, 2n, ...)."""
    return 0.25 * (fine[0::2, 0::2] + fine[1::2, 0::2]
                   + fine[0::2, 1::2] + fine[1::2, 1::2])


def predict_full(coarse: np.ndarray) -> np.ndarray:
    """Vectorised prediction of the full next-finer grid (even reflection)."""
    pad = np.pad(coarse, [(2, 2), (2, 2)] + [(0, 0)] * (coarse.ndim - 2),
                 mode="symmetric")
    m, n = coarse.shape[:2]
    out = np.empty((2 * m, 2 * n) + coarse.shape[2:])
    for (e1, e2), c in PRED_COEFFS.items():
        acc = np.zeros_like(coarse)
        for di in range(-2, 3):
            for dj in range(-2, 3):
                w = c[di + 2, dj + 2]
                if w != 0.0:
                    acc = acc + w * pad[2 + di:2 + di + m, 2 + dj:2 + dj + n]
        out[e1::2, e2::2] = acc
    return out


def encode(field: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Multiresolution analysis of a level-L uniform field.

    Returns the root-grid averages and the per-level detail arrays
    (levels 1..L).  The representation is redundant (all four details per
    group are kept), which keeps the inverse a plain sum.
    """
    levels = []
    w = np.asarray(field, dtype=float)
    while w.shape[0] % 2 == 0 and w.shape[1] % 2 == 0 and w.shape[0] > 1 and w.shape[1] > 1:
        coarse = _restrict(w)
        levels.append(w - predict_full(coarse))
        w = coarse
    levels.reverse()
    return w, levels


def decode(w0: np.ndarray, details: list[np.ndarray]) -> np.ndarray:
    w = np.asarray(w0, dtype=float)
    for d in details:
        w = predict_full(w) + d
    return w


def threshold_details(details: list[np.ndarray], params: MRParams) -> list[np.ndarray]:
    """Zero every detail whose magnitude is below its level tolerance."""
    L = params.max_level
    out = []
    nlev = len(details)
    for idx, d in enumerate(details):
        l = L - (nlev - 1 - idx)
        eps = params.level_tolerance(l)
        if d.ndim == 3:
            m = np.max(np.abs(d), axis=2) < eps
            out.append(np.where(m[..., None], 0.0, d))
        else:
            out.append(np.where(np.abs(d) < eps, 0.0, d))
    return out


def fill_to_level(tree: GradedTree, level: int | None = None) -> np.ndarray:
    """Prediction-fill the tree's leaf data onto the uniform grid at `level`.

    Returns an array of shape (nx, ny, n_species).  Projection of the result
    onto any leaf reproduces the leaf average exactly.
    """
    if level is None:
        level = tree.max_level
    refresh_projections(tree)
    nx, ny = tree.ncells(0)
    grid = np.empty((nx, ny, tree.n_species))
    for j in range(ny):
        for i in range(nx):
            grid[i, j] = tree.nodes[NodeKey(i, j, 0)].avg
    for l in range(1, level + 1):
        grid = predict_full(grid)
        for k, n in tree.nodes.items():
            if k[2] == l and n.status != VIRTUAL:
                grid[k[0], k[1]] = n.avg
    return grid
