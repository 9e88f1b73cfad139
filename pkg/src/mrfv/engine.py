"""Vectorised evolution engine over a compiled snapshot of the tree.

The tree dictionary is the source of truth for topology; numerics run on a
compiled *plan*: leaves get slots (level-major, row-major), and every other
value the scheme needs -- internal averages, virtual-leaf predictions,
prediction stencils for details -- is expressed as a sparse linear operator
in the leaf basis.  One step is then a handful of sparse matvecs, gathers
and bincounts.  The dictionary-level reference operations in ``fv`` and
``transform`` define the semantics; the engine must agree with them (this
is enforced by the test suite).

Grid adaptation runs in two tiers.  The fast path evaluates the thresholding
decisions vectorised; while the decisions keep the topology fixed (the usual
case: deletable safety-zone groups are coarsened and immediately re-split,
which amounts to re-predicting their values) it applies that smoothing in
place.  When a decision implies a real topology change the engine writes the
state back and runs the dictionary ``update_tree``, then recompiles.

Local time stepping advances level l with dt_l = 2^(L-l) dt_L on the usual
staggered schedule.  Face fluxes are persistent: a face is recomputed only
when the *coarser* adjacent level is active, otherwise the stored value is
reused, which makes the interface telescoping exact and conservation hold
across a macro step.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .tree import (GradedTree, NodeKey, LEAF, INTERNAL, VIRTUAL,
                   parent_key, son_keys, brother_keys, shifted)
from .transform import (MRParams, PRED_COEFFS, update_tree,
                        refresh_projections, refresh_virtual_values)
from .fv import CHEMO_SIGN


def _v2(n: int) -> int:
    """2-adic valuation."""
    return (n & -n).bit_length() - 1


class _RowBuilder:
    """Expresses any node value as a sparse combination of leaf values."""

    def __init__(self, tree: GradedTree, slot: dict):
        self.tree = tree
        self.slot = slot
        self.memo: dict[NodeKey, tuple[np.ndarray, np.ndarray]] = {}

    def row(self, key: NodeKey) -> tuple[np.ndarray, np.ndarray]:
        r = self.memo.get(key)
        if r is not None:
            return r
        tree = self.tree
        if not tree.in_domain(key):
            r = self.row(tree.reflect(key))
        else:
            node = tree.nodes.get(key)
            if node is not None and node.status == LEAF:
                r = (np.array([self.slot[key]], dtype=np.int64),
                     np.array([1.0]))
            elif node is not None and node.status == INTERNAL:
                cols, vals = [], []
                for sk in son_keys(key):
                    c, v = self.row(sk)
                    cols.append(c)
                    vals.append(v)
                r = (np.concatenate(cols), 0.25 * np.concatenate(vals))
            else:
                # virtual or absent: predict from the parent-level stencil
                r = self.stencil_row(parent_key(key), key[0] & 1, key[1] & 1)
        if len(r[0]) > 48:
            cols, inv = np.unique(r[0], return_inverse=True)
            vals = np.zeros(len(cols))
            np.add.at(vals, inv, r[1])
            r = (cols, vals)
        self.memo[key] = r
        return r

    def stencil_row(self, center: NodeKey, e1: int, e2: int):
        c = PRED_COEFFS[(e1, e2)]
        ci, cj, l = center
        row = self.row
        cols, vals = [], []
        for di in range(-2, 3):
            crow = c[di + 2]
            i = ci + di
            for dj in range(-2, 3):
                rc, rv = row((i, cj + dj, l))
                cols.append(rc)
                vals.append(crow[dj + 2] * rv)
        return np.concatenate(cols), np.concatenate(vals)


def _assemble(rows: list, n_cols: int) -> sparse.csr_matrix:
    if rows:
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        for i, (c, _) in enumerate(rows):
            indptr[i + 1] = indptr[i] + len(c)
        cols = np.concatenate([c for c, _ in rows]) if rows else np.empty(0, np.int64)
        vals = np.concatenate([v for _, v in rows]) if rows else np.empty(0)
        m = sparse.csr_matrix((vals, cols, indptr), shape=(len(rows), n_cols))
        m.sum_duplicates()
        return m
    return sparse.csr_matrix((0, n_cols))


_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class Engine:
    def __init__(self, tree: GradedTree, model, params: MRParams,
                 chemo_sign: str = "corrected"):
        self.tree = tree
        self.model = model
        self.params = params
        self.chemo_coef = CHEMO_SIGN[chemo_sign]
        self.rebuild_count = 0
        self.smooth_count = 0
        self._fkey_flux: dict | None = None
        self.compile()

    # ------------------------------------------------------------------
    # compilation
    # ------------------------------------------------------------------

    def compile(self) -> None:
        tree = self.tree
        L = tree.max_level
        ns = tree.n_species
        keys = tree.leaves()
        n = len(keys)
        slot = {k: i for i, k in enumerate(keys)}
        self.keys = keys
        self.slot = slot
        self.n = n
        self.level_of = np.array([k[2] for k in keys], dtype=np.int64)
        self.step_weight = (1 << (L - self.level_of)).astype(np.float64)
        self.level_start = np.searchsorted(self.level_of, np.arange(L + 2))
        centers = np.array([tree.cell_center(k) for k in keys])
        self.xc, self.yc = centers[:, 0].copy(), centers[:, 1].copy()
        self.area = np.array([tree.cell_area(k) for k in keys])
        self.l_min = int(self.level_of.min())

        wl = np.empty((ns, n))
        for i, k in enumerate(keys):
            wl[:, i] = tree.nodes[k].avg
        self.wl = wl

        rb = _RowBuilder(tree, slot)

        # prediction operator: row i predicts leaf i from its parent stencil
        s_rows = []
        for k in keys:
            if k[2] == 0:
                c, v = rb.row(k)
                s_rows.append((c.copy(), v.copy()))   # zero detail at roots
            else:
                s_rows.append(rb.stencil_row(parent_key(k), k[0] & 1, k[1] & 1))
        self.S = _assemble(s_rows, n)

        # sibling groups of leaves
        gparents, gson = [], []
        seen: set[NodeKey] = set()
        grouped = np.zeros(n, dtype=bool)
        for k in keys:
            if k[2] == 0 or k in seen:
                continue
            bros = brother_keys(k)
            seen.update(bros)
            if all(tree.is_leaf(b) for b in bros):
                gparents.append(parent_key(k))
                gson.append([slot[b] for b in bros])
                for b in bros:
                    grouped[slot[b]] = True
        G = len(gparents)
        self.gparents = gparents
        self.gson = np.array(gson, dtype=np.int64).reshape(G, 4)
        self.gparent_level = np.array([p[2] for p in gparents], dtype=np.int64)
        gid_of_parent = {p: g for g, p in enumerate(gparents)}
        self.ungrouped_levels = np.unique(self.level_of[
            (~grouped) & (self.level_of < L)]) if n else np.empty(0, np.int64)

        def region_blockers(center: NodeKey, allow: int) -> set | None:
            """Finer groups that must merge so no leaf deeper than `allow`
            remains next to `center` (mirrors the pass-order grading check
            of the dictionary coarsening); None when that is impossible."""
            need: set[int] = set()
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    if dx == 0 and dy == 0:
                        continue
                    nk = shifted(center, dx, dy)
                    if not tree.in_domain(nk):
                        continue
                    stack = [nk]
                    while stack:
                        k = stack.pop()
                        nd = tree.nodes.get(k)
                        if nd is None or nd.status != INTERNAL:
                            continue
                        if k[2] < allow:
                            stack.extend(son_keys(k))
                        else:
                            gid = gid_of_parent.get(k)
                            if gid is None:
                                return None
                            need.add(gid)
            return need

        # merge feasibility: quiet sons + (pass-order) grading
        self.g_static_ok = np.zeros(G, dtype=bool)
        gblock: list[list[int]] = [[] for _ in range(G)]
        for g, p in enumerate(gparents):
            blk = region_blockers(p, p[2] + 1)
            if blk is not None:
                self.g_static_ok[g] = True
                gblock[g] = sorted(blk)

        # per-son-level schedule for the runtime merge recursion
        self._merge_sched = []
        for lam in range(L, 0, -1):
            idx = np.where(self.gparent_level == lam - 1)[0]
            if not len(idx):
                continue
            rows, flat = [], []
            for r, g in enumerate(idx):
                for b in gblock[g]:
                    rows.append(r)
                    flat.append(b)
            self._merge_sched.append(
                (idx, np.array(rows, dtype=np.int64),
                 np.array(flat, dtype=np.int64)))

        # parent details (for the cascade check)
        dp_rows = []
        for p in gparents:
            if p[2] == 0:
                c, v = rb.row(p)
                dp_rows.append((c.copy(), v.copy()))
            else:
                pc, pv = rb.row(p)
                sc, sv = rb.stencil_row(parent_key(p), p[0] & 1, p[1] & 1)
                dp_rows.append((np.concatenate([pc, sc]),
                                np.concatenate([pv, -sv])))
        self.Dp = _assemble(dp_rows, n)
        # zero the pseudo-details of level-0 parents (row minus itself)
        for g, p in enumerate(gparents):
            if p[2] == 0:
                self.Dp.data[self.Dp.indptr[g]:self.Dp.indptr[g + 1]] = 0.0

        # cascade candidates: would the parent's own sibling group coarsen
        # as well (a two-level merge, which the fast path cannot restore)?
        casc_static = np.zeros(G, dtype=bool)
        casc_mdet = np.zeros((G, 4), dtype=np.int64)   # into [leaf dmax | parent dmax]
        casc_mgid = np.full((G, 4), -1, dtype=np.int64)
        casc_block: list[list[int]] = [[] for _ in range(G)]
        for g, p in enumerate(gparents):
            if p[2] == 0:
                continue
            ok = True
            for m, b in enumerate(brother_keys(p)):
                st = tree.status(b)
                if st == LEAF:
                    casc_mdet[g, m] = slot[b]
                elif st == INTERNAL and b in gid_of_parent:
                    casc_mdet[g, m] = n + gid_of_parent[b]
                    casc_mgid[g, m] = gid_of_parent[b]
                else:
                    ok = False
                    break
            if ok:
                blk = region_blockers(parent_key(p), p[2])
                if blk is None:
                    ok = False
                else:
                    casc_block[g] = sorted(blk)
            casc_static[g] = ok
        self.casc_static = casc_static
        self.casc_mdet = casc_mdet
        self.casc_mgid = casc_mgid
        self.casc_block = casc_block

        self._compile_edges(rb)
        self._wfull = np.empty((ns, n + self.naux))
        self._subplans: dict[int, dict] = {}
        self._eps_cache: tuple | None = None

        # carry persistent fluxes across a mid-macro rebuild
        nE = len(self.e_h)
        F = np.zeros((ns, nE))
        if self._fkey_flux is not None:
            for e, fk in enumerate(self.e_fkey):
                old = self._fkey_flux.get(fk)
                if old is not None:
                    F[:, e] = old
        self.F = F
        self._fkey_flux = None

    def _compile_edges(self, rb: _RowBuilder) -> None:
        tree, slot, n = self.tree, self.slot, self.n
        aux_ids: dict[NodeKey, int] = {}
        aux_rows = []
        e_lo, e_hi, e_h, e_b, e_fkey = [], [], [], [], []
        c_cell, c_edge, c_w = [], [], []

        def aux(key):
            a = aux_ids.get(key)
            if a is None:
                a = len(aux_rows)
                aux_ids[key] = a
                aux_rows.append(rb.row(key))
            return n + a

        for k in self.keys:
            s = slot[k]
            l = k[2]
            h = tree.h(l)
            for dx, dy in _DIRS:
                nk = shifted(k, dx, dy)
                if not tree.in_domain(nk):
                    continue
                st = tree.status(nk)
                if st == INTERNAL:
                    continue         # the finer side owns these faces
                if st == LEAF:
                    if dx < 0 or dy < 0:
                        continue     # count same-level faces once
                    e = len(e_h)
                    e_lo.append(s)
                    e_hi.append(slot[nk])
                    e_h.append(h)
                    e_b.append(l)
                    e_fkey.append((0, k[0] + 1, k[1], l) if dx else
                                  (1, k[1] + 1, k[0], l))
                    c_cell += [s, slot[nk]]
                    c_edge += [e, e]
                    c_w += [-1.0 / h, 1.0 / h]
                elif st == VIRTUAL:
                    cov = tree.covering_leaf(nk)
                    if cov[2] != l - 1:
                        raise RuntimeError(f"grading broken near {k}")
                    e = len(e_h)
                    a = aux(nk)
                    positive = dx > 0 or dy > 0
                    e_lo.append(s if positive else a)
                    e_hi.append(a if positive else s)
                    e_h.append(h)
                    e_b.append(l - 1)
                    if dx:
                        e_fkey.append((0, k[0] + (dx > 0), k[1], l))
                    else:
                        e_fkey.append((1, k[1] + (dy > 0), k[0], l))
                    sk = -1.0 if positive else 1.0
                    c_cell += [s, slot[cov]]
                    c_edge += [e, e]
                    c_w += [sk / h, -sk * h / tree.cell_area(cov)]
                else:
                    raise RuntimeError(f"missing cousin {nk} of leaf {k}")

        self.naux = len(aux_rows)
        self.R = _assemble(aux_rows, n)
        self.aux_max_level = np.empty(self.naux, dtype=np.int64)
        lv = self.level_of
        for a in range(self.naux):
            cols = self.R.indices[self.R.indptr[a]:self.R.indptr[a + 1]]
            self.aux_max_level[a] = lv[cols].max() if len(cols) else 0
        self.e_lo = np.array(e_lo, dtype=np.int64)
        self.e_hi = np.array(e_hi, dtype=np.int64)
        self.e_h = np.array(e_h)
        self.e_b = np.array(e_b, dtype=np.int64)
        self.e_fkey = e_fkey
        self.c_cell = np.array(c_cell, dtype=np.int64)
        self.c_edge = np.array(c_edge, dtype=np.int64)
        self.c_w = np.array(c_w)
        self.c_lvl = self.level_of[self.c_cell]

    def _subplan(self, ac: int) -> dict:
        sp = self._subplans.get(ac)
        if sp is None:
            ei = np.where(self.e_b >= ac)[0]
            ci = np.where(self.c_lvl >= ac)[0]
            aux_used = np.unique(np.concatenate([
                self.e_lo[ei], self.e_hi[ei]]))
            aux_used = aux_used[aux_used >= self.n] - self.n
            sp = {
                "ei": ei,
                "cc": self.c_cell[ci], "ce": self.c_edge[ci], "cw": self.c_w[ci],
                "aux": aux_used,
                "R": self.R[aux_used] if len(aux_used) else None,
                "start": int(self.level_start[ac]),
            }
            self._subplans[ac] = sp
        return sp

    def _eps_levels(self) -> np.ndarray:
        key = (self.params.epsilon_ref, self.params.max_level)
        if self._eps_cache is None or self._eps_cache[0] != key:
            eps = np.array([self.params.level_tolerance(l)
                            for l in range(self.tree.max_level + 1)])
            self._eps_cache = (key, eps)
        return self._eps_cache[1]

    # ------------------------------------------------------------------
    # marching
    # ------------------------------------------------------------------

    def march(self, dt: float, ac: int | None = None,
              scale_by_level: bool = False) -> None:
        """One explicit Euler (sub)step for all leaves at level >= ac.

        In LTS mode (`scale_by_level`) each active leaf advances by
        dt * 2^(L - l); fluxes on faces whose coarser side is below `ac`
        are reused from storage instead of being recomputed.
        """
        if ac is None:
            ac = self.l_min
        sp = self._subplan(ac)
        n, wl, WF = self.n, self.wl, self._wfull
        WF[:, :n] = wl
        if sp["R"] is not None:
            WF[:, n + sp["aux"]] = (sp["R"] @ wl.T).T

        ei = sp["ei"]
        lo = WF[:, self.e_lo[ei]]
        hi = WF[:, self.e_hi[ei]]
        h = self.e_h[ei]
        m = self.model
        F = self.F
        if m.kind == "scalar":
            F[0, ei] = -(m.A(hi[0]) - m.A(lo[0])) / h
        elif m.kind == "two":
            F[0, ei] = -(m.A(hi[0]) - m.A(lo[0])) / h
            F[1, ei] = -(m.B(hi[1]) - m.B(lo[1])) / h
        else:
            q = 0.5 * m.nu * (lo[0] + hi[0])
            F[0, ei] = (-m.sigma * (hi[0] - lo[0])
                        + self.chemo_coef * q * (hi[1] - lo[1])) / h
            F[1, ei] = -(hi[1] - lo[1]) / h

        cc, ce, cw = sp["cc"], sp["ce"], sp["cw"]
        start = sp["start"]
        act = slice(start, n)
        if scale_by_level:
            dts = dt * self.step_weight[act]
        else:
            dts = dt

        if m.kind == "scalar":
            D0 = np.bincount(cc, weights=F[0][ce] * cw, minlength=n)[act]
            r = m.reaction(wl[0, act], self.xc[act], self.yc[act])[0]
            wl[0, act] += dts * (r + D0)
        else:
            D0 = np.bincount(cc, weights=F[0][ce] * cw, minlength=n)[act]
            D1 = np.bincount(cc, weights=F[1][ce] * cw, minlength=n)[act]
            ru, rv = m.reaction(wl[0, act], wl[1, act])
            wl[0, act] += dts * (ru + D0)
            wl[1, act] += dts * (rv + m.d * D1)

    # ------------------------------------------------------------------
    # adaptation
    # ------------------------------------------------------------------

    def adapt(self, level_floor: int = 0) -> bool:
        """One grid-adaptation pass.  Returns True when the topology changed
        (tree rewritten and plan recompiled)."""
        pred = (self.S @ self.wl.T)          # (n, nspec)
        d = self.wl.T - pred
        if self.params.detail_norm == "euclidean":
            dmax = np.sqrt((d * d).sum(axis=1))
        else:
            dmax = np.abs(d).max(axis=1)
        eps = self._eps_levels()
        quiet = dmax < eps[self.level_of]

        L = self.tree.max_level
        G = len(self.gson)
        merge = np.zeros(G, dtype=bool)
        if G:
            gq = quiet[self.gson].all(axis=1)
            rel = self.gparent_level >= level_floor
            base = gq & rel & self.g_static_ok
            # pass-order recursion: a merge may require the finer neighbour
            # groups to merge first (evaluated fine-to-coarse)
            for idx, rows, flat in self._merge_sched:
                ok = base[idx]
                if len(flat):
                    nbad = np.bincount(rows, weights=~merge[flat],
                                       minlength=len(idx))
                    ok = ok & (nbad == 0)
                merge[idx] = ok
            below_L = self.gparent_level < L - 1
            # any relevant group below the max level that would not simply
            # coarsen-and-restore forces a real topology change
            viol = bool((rel & below_L & ~merge).any())
        else:
            viol = self.n > 0 and bool((self.level_of < L).any())

        if not viol and len(self.ungrouped_levels):
            lo = 0 if level_floor == 0 else level_floor + 1
            viol = bool((self.ungrouped_levels >= lo).any())

        if not viol and G:
            # cascade: the parent's own group would coarsen as well
            cand = np.where(merge & self.casc_static
                            & (self.gparent_level >= max(1, level_floor)))[0]
            if len(cand):
                if self.Dp.shape[0]:
                    dpar = self.Dp @ self.wl.T
                    if self.params.detail_norm == "euclidean":
                        pmax = np.sqrt((dpar * dpar).sum(axis=1))
                    else:
                        pmax = np.abs(dpar).max(axis=1)
                else:
                    pmax = np.zeros(0)
                stacked = np.concatenate([dmax, pmax])
                for g in cand:
                    epsp = eps[self.gparent_level[g]]
                    ok = True
                    for m in range(4):
                        if stacked[self.casc_mdet[g, m]] >= epsp:
                            ok = False
                            break
                        mg = self.casc_mgid[g, m]
                        if mg >= 0 and not merge[mg]:
                            ok = False
                            break
                    if ok and all(merge[b] for b in self.casc_block[g]):
                        viol = True
                        break

        if not viol:
            if G:
                sel = self.gson[merge].ravel()
                if len(sel):
                    self.wl[:, sel] = pred[sel].T
                    self.smooth_count += 1
            return False

        # topology change: hand over to the dictionary pass
        details = {k: d[i] for i, k in enumerate(self.keys)}
        if self.Dp.shape[0]:
            dpar = self.Dp @ self.wl.T
            for g, p in enumerate(self.gparents):
                details[p] = dpar[g]
        self.writeback()
        if self._lts_active:
            self._fkey_flux = {fk: self.F[:, e].copy()
                               for e, fk in enumerate(self.e_fkey)}
        update_tree(self.tree, self.params, level_floor=level_floor,
                    details=details)
        self.compile()
        self.rebuild_count += 1
        return True

    _lts_active = False

    # ------------------------------------------------------------------
    # local time stepping
    # ------------------------------------------------------------------

    def run_macro(self, dt_macro: float, adapt: bool = True) -> int:
        """One LTS macro step; returns the number of intermediate steps.

        Level l advances with dt_l = 2^(L-l) dt_L; at the start of every odd
        intermediate step the time-aligned levels are adapted.
        """
        L = self.tree.max_level
        l0 = self.l_min
        n_sub = 1 << (L - l0)
        dtL = dt_macro / n_sub
        self._lts_active = True
        try:
            for k in range(1, n_sub + 1):
                ac = l0 if k == 1 else max(l0, L - _v2(k - 1))
                if adapt and k % 2 == 1:
                    self.adapt(level_floor=ac)
                    ac = max(ac, self.l_min) if k > 1 else self.l_min
                self.march(dtL, ac=ac, scale_by_level=True)
        finally:
            self._lts_active = False
        return n_sub

    # ------------------------------------------------------------------
    # bookkeeping
    # ------------------------------------------------------------------

    def writeback(self) -> None:
        for i, k in enumerate(self.keys):
            self.tree.nodes[k].avg = self.wl[:, i].copy()
        refresh_projections(self.tree)
        refresh_virtual_values(self.tree)

    def state_view(self) -> np.ndarray:
        """Leaf states as (n, n_species) (a transposed view)."""
        return self.wl.T

    def total_mass(self) -> np.ndarray:
        return self.wl @ self.area

    def leaf_count(self) -> int:
        return self.n
