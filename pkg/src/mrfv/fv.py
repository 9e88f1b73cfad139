"""Finite-volume core: fluxes, divergences, marching, CFL step control.

The scheme is the explicit two-point-flux method: across a face between
cells at spacing h the diffusive flux (per unit face length) is

    phi = -(A(u_R) - A(u_L)) / h

and the divergence of a cell is -(1/|cell|) sum over faces of
length * outward flux.  Across a level interface the coarse cell receives
the sum of the two fine-face fluxes (lengths do the bookkeeping), so the
scheme is conservative by construction.  Chemotactic drift enters the same
flux with the face-averaged mobility Q = (chi'(v_L) u_L + chi'(v_R) u_R)/2.

This module holds the per-cell reference implementations operating on the
tree (used by the tests and small runs) and an independent dense
uniform-grid marcher used as the reference solver; the vectorised engine in
``engine.py`` must agree with both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import GradedTree, NodeKey, LEAF, INTERNAL, VIRTUAL, shifted, son_keys
from .transform import node_value

# chemotaxis orientation: +1 drives cells up the attractant gradient
# (aggregating, the sign consistent with the governing equations); -1 is the
# opposite orientation kept for comparison runs.
CHEMO_SIGN = {"corrected": +1.0, "printed": -1.0}

DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def diffusive_flux(u_left, u_right, h: float, A) -> np.ndarray:
    """Two-point flux -(A(u_R) - A(u_L))/h in the left-to-right direction."""
    return -(A(u_right) - A(u_left)) / h


def compose_interface_flux(phi_1, phi_2):
    """Coarse-face flux as the sum of the two fine-face fluxes."""
    return phi_1 + phi_2


# ---- per-cell reference divergence / march ------------------------------------

def _face_outward_flux(tree, key, dx, dy, values, model, chemo_coef, cache):
    """Total outward (length-integrated) flux through one face of leaf `key`."""
    l = key[2]
    nk = shifted(key, dx, dy)
    if not tree.in_domain(nk):
        return np.zeros(tree.n_species)
    status = tree.status(nk)
    if status == INTERNAL:
        # two fine sub-faces: neighbour sons against our virtual sons
        h_f = tree.h(l + 1)
        total = np.zeros(tree.n_species)
        for sk in son_keys(nk):
            # the neighbour sons facing us
            if (dx == 1 and sk[0] != 2 * nk[0]) or (dx == -1 and sk[0] != 2 * nk[0] + 1):
                continue
            if (dy == 1 and sk[1] != 2 * nk[1]) or (dy == -1 and sk[1] != 2 * nk[1] + 1):
                continue
            mk = NodeKey(sk[0] - dx, sk[1] - dy, l + 1)   # our virtual son
            total += h_f * _pair_outward_flux(tree, mk, sk, h_f, model,
                                              chemo_coef, cache)
        return total
    h_f = tree.h(l)
    return h_f * _pair_outward_flux(tree, key, nk, h_f, model, chemo_coef, cache)


def _pair_outward_flux(tree, k_in, k_out, h_f, model, chemo_coef, cache):
    w_in = node_value(tree, k_in, cache)
    w_out = node_value(tree, k_out, cache)
    out = np.zeros(tree.n_species)
    if model.kind == "scalar":
        out[0] = -(model.A(w_out[0]) - model.A(w_in[0])) / h_f
    elif model.kind == "two":
        out[0] = -(model.A(w_out[0]) - model.A(w_in[0])) / h_f
        out[1] = -(model.B(w_out[1]) - model.B(w_in[1])) / h_f
    else:
        q = 0.5 * (model.chi_deriv(w_in[1]) * w_in[0]
                   + model.chi_deriv(w_out[1]) * w_out[0])
        out[0] = (-model.sigma * (w_out[0] - w_in[0])
                  + chemo_coef * q * (w_out[1] - w_in[1])) / h_f
        out[1] = -(w_out[1] - w_in[1]) / h_f
    return out


def leaf_divergence(tree: GradedTree, key: NodeKey, model,
                    chemo_sign: str = "corrected", cache: dict | None = None) -> np.ndarray:
    """Per-species flux divergence of a leaf (reference implementation)."""
    if cache is None:
        cache = {}
    coef = CHEMO_SIGN[chemo_sign]
    area = tree.cell_area(key)
    total = np.zeros(tree.n_species)
    for dx, dy in DIRS:
        total -= _face_outward_flux(tree, key, dx, dy, None, model, coef, cache)
    return total / area


def march_reference(tree: GradedTree, model, dt: float,
                    chemo_sign: str = "corrected") -> None:
    """One explicit Euler step on all leaves (reference implementation)."""
    cache: dict = {}
    leaves = tree.leaves()
    divs = {k: leaf_divergence(tree, k, model, chemo_sign, cache) for k in leaves}
    updates = {}
    for k in leaves:
        w = tree.nodes[k].avg
        D = divs[k]
        x, y = tree.cell_center(k)
        if model.kind == "scalar":
            new = w[0] + dt * (model.reaction(w[0], x, y)[0] + D[0])
            updates[k] = np.array([new])
        elif model.kind == "two":
            ru, rv = model.reaction(w[0], w[1])
            updates[k] = np.array([w[0] + dt * (ru + D[0]),
                                   w[1] + dt * (rv + model.d * D[1])])
        else:
            ru, rv = model.reaction(w[0], w[1])
            updates[k] = np.array([w[0] + dt * (ru + D[0]),
                                   w[1] + dt * (rv + model.d * D[1])])
    for k, v in updates.items():
        tree.nodes[k].avg = v


# ---- dense uniform-grid reference ----------------------------------------------

def _pad(a):
    return np.pad(a, 1, mode="symmetric")


def _lap(Afield, h):
    """Flux-form Laplacian with zero-flux (even reflection) walls."""
    p = _pad(Afield)
    return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2]
            - 4.0 * Afield) / (h * h)


def _chemo_div(U, V, h, nu, coef):
    """Divergence of the chemotactic edge flux coef * Q dv/h, zero at walls."""
    qx = 0.5 * nu * (U[:-1, :] + U[1:, :])
    gx = coef * qx * (V[1:, :] - V[:-1, :]) / h
    qy = 0.5 * nu * (U[:, :-1] + U[:, 1:])
    gy = coef * qy * (V[:, 1:] - V[:, :-1]) / h
    div = np.zeros_like(U)
    div[:-1, :] -= gx / h
    div[1:, :] += gx / h
    div[:, :-1] -= gy / h
    div[:, 1:] += gy / h
    return div


class DenseReference:
    """Plain explicit FV solver on the uniform level-L grid (the oracle)."""

    def __init__(self, model, domain, level: int, root_shape=(1, 1),
                 chemo_sign: str = "corrected"):
        self.model = model
        self.domain = domain
        self.level = level
        xa, xb, ya, yb = domain
        self.nx = root_shape[0] << level
        self.ny = root_shape[1] << level
        self.h = (xb - xa) / self.nx
        xc = xa + (np.arange(self.nx) + 0.5) * self.h
        yc = ya + (np.arange(self.ny) + 0.5) * self.h
        self.X, self.Y = np.meshgrid(xc, yc, indexing="ij")
        self.chemo_coef = CHEMO_SIGN[chemo_sign]

    def step(self, fields: np.ndarray, dt: float) -> np.ndarray:
        """fields has shape (nx, ny, n_species); returns the next step."""
        m = self.model
        h = self.h
        out = np.empty_like(fields)
        if m.kind == "scalar":
            U = fields[:, :, 0]
            out[:, :, 0] = U + dt * (m.reaction(U, self.X, self.Y)[0]
                                     + _lap(m.A(U), h))
        elif m.kind == "two":
            U, V = fields[:, :, 0], fields[:, :, 1]
            ru, rv = m.reaction(U, V)
            out[:, :, 0] = U + dt * (ru + _lap(m.A(U), h))
            out[:, :, 1] = V + dt * (rv + m.d * _lap(m.B(V), h))
        else:
            U, V = fields[:, :, 0], fields[:, :, 1]
            ru, rv = m.reaction(U, V)
            du = m.sigma * _lap(U, h) + _chemo_div(U, V, h, m.nu, self.chemo_coef)
            out[:, :, 0] = U + dt * (ru + du)
            out[:, :, 1] = V + dt * (rv + m.d * _lap(V, h))
        return out


# ---- CFL control ---------------------------------------------------------------

def state_box(fields, inflate: float = 0.1) -> list[tuple[float, float]]:
    """Per-species (min, max) of the state, inflated by the given fraction."""
    box = []
    for s in range(fields.shape[-1]):
        lo = float(fields[..., s].min())
        hi = float(fields[..., s].max())
        span = max(hi - lo, 1e-12 * max(abs(lo), abs(hi), 1.0))
        box.append((lo - inflate * span, hi + inflate * span))
    return box


def cfl_denominator(model, norms: dict, h: float) -> float:
    """Left-hand side of the CFL condition divided by dt."""
    if model.kind == "chemotaxis":
        react = norms["hu"] + norms["hv"] + norms["gp"]
        diff = 4.0 * model.d * (norms["sigma"] + norms["chip"])
        return react / h + diff / (h * h)
    react = model.gamma * (norms["fu"] + norms["fv"] + norms["gu"] + norms["gv"])
    diff = 4.0 * model.d * (norms["Ap"] + norms["Bp"])
    return react / h + diff / (h * h)


def compute_dt(model, norms: dict, h: float, cfl: float = 1.0,
               max_dt: float = np.inf) -> float:
    """Largest stable explicit step at spacing h for the given norm bundle."""
    denom = cfl_denominator(model, norms, h)
    if denom <= 0.0:
        return float(max_dt)
    return float(min(cfl / denom, max_dt))


class NormTracker:
    """Caches the Jacobian sup-norms; recomputes them when the observed state
    leaves the inflated box they were sampled on, and at least every
    `refresh_every` calls.

    Two-species kinetics are evaluated at the realised (u, v) pairs rather
    than on the bounding rectangle: the rectangle's corner (u_max, v_max) is
    typically never attained (burnt cells hold no fuel) and its rate can be
    orders of magnitude above anything on the trajectory, collapsing dt.  A
    10% margin is put on the resulting kinetic norms to cover in-box drift
    between refreshes."""

    def __init__(self, model, domain=None, inflate: float = 0.1,
                 refresh_every: int = 10):
        self.model = model
        self.domain = domain
        self.inflate = inflate
        self.refresh_every = refresh_every
        self.box: list[tuple[float, float]] | None = None
        self.norms: dict | None = None
        self._age = 0

    def update(self, fields) -> dict:
        need = self.box is None or self._age >= self.refresh_every
        if not need:
            for s, (lo, hi) in enumerate(self.box):
                smin = float(fields[..., s].min())
                smax = float(fields[..., s].max())
                if smin < lo or smax > hi:
                    need = True
                    break
        if need:
            self.box = state_box(fields, self.inflate)
            if self.model.kind == "two":
                fields = np.asarray(fields)
                norms = self.model.jacobian_norms(
                    self.box, self.domain, states=fields.reshape(-1, 2))
                for key in ("fu", "fv", "gu", "gv"):
                    norms[key] *= 1.0 + self.inflate
                self.norms = norms
            else:
                self.norms = self.model.jacobian_norms(self.box, self.domain)
            self._age = 0
        else:
            self._age += 1
        return self.norms
