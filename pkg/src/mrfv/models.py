"""Reaction-diffusion model families and their scenario ingredients.

Three families are supported:

* a scalar equation u_t = f(u, x, y) + Lap A(u) with a possibly degenerate
  diffusion law A,
* a two-species system u_t = gamma f(u,v) + S(u) + Lap A(u),
  v_t = gamma g(u,v) + d Lap B(v) (ignition kinetics with optional
  radiative loss, or Schnakenberg kinetics),
* a chemotaxis-growth system u_t = div(sigma grad u - u chi'(v) grad v)
  + g(u), v_t = h(u, v) + d Lap v.

All reaction callables are vectorised over numpy arrays.  Jacobian
sup-norms (used by the CFL condition and the reference tolerance) are
evaluated numerically on a sampled state box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


# ---- diffusion laws -----------------------------------------------------------

@dataclass(frozen=True)
class Diffusion:
    """A(u) = D u (linear) or A(u) = D (u - u_c)_+ (degenerate)."""
    D: float = 1.0
    threshold: float | None = None   # None => linear

    def __call__(self, u):
        if self.threshold is None:
            return self.D * np.asarray(u)
        return self.D * np.maximum(np.asarray(u) - self.threshold, 0.0)

    def deriv(self, u):
        """A'(u); at the kink the upper slope D is used."""
        if self.threshold is None:
            return self.D * np.ones_like(np.asarray(u, dtype=float))
        return np.where(np.asarray(u) >= self.threshold, self.D, 0.0)

    def sup_deriv(self, lo: float, hi: float) -> float:
        if self.threshold is None:
            return abs(self.D)
        return abs(self.D) if hi >= self.threshold else 0.0


ZERO_DIFFUSION = Diffusion(D=0.0)


# ---- kinetics -----------------------------------------------------------------

def arrhenius_kinetics(alpha: float, beta: float):
    """Ignition-type rates: f = (beta^2/2) v exp(beta(1-u)/(alpha(1-u)-1)),
    g = -f.  The exponent vanishes at u = 1, so f(1, v) = (beta^2/2) v."""
    b2 = 0.5 * beta * beta

    def _expo(u):
        u = np.asarray(u, dtype=float)
        den = alpha * (1.0 - u) - 1.0
        return np.exp(beta * (1.0 - u) / den)

    def f(u, v):
        return b2 * np.asarray(v) * _expo(u)

    def g(u, v):
        return -f(u, v)

    def f_u(u, v):
        den = alpha * (1.0 - np.asarray(u, dtype=float)) - 1.0
        return f(u, v) * beta / den ** 2

    def f_v(u, v):
        return b2 * _expo(u)

    return {"f": f, "g": g, "f_u": f_u, "f_v": f_v,
            "g_u": lambda u, v: -f_u(u, v), "g_v": lambda u, v: -f_v(u, v)}


def schnakenberg_kinetics(a: float, b: float):
    """f = a - u + u^2 v, g = b - u^2 v; steady state (a+b, b/(a+b)^2)."""
    def f(u, v):
        return a - np.asarray(u) + np.asarray(u) ** 2 * np.asarray(v)

    def g(u, v):
        return b - np.asarray(u) ** 2 * np.asarray(v)

    return {"f": f, "g": g,
            "f_u": lambda u, v: -1.0 + 2.0 * np.asarray(u) * np.asarray(v),
            "f_v": lambda u, v: np.asarray(u) ** 2,
            "g_u": lambda u, v: -2.0 * np.asarray(u) * np.asarray(v),
            "g_v": lambda u, v: -np.asarray(u) ** 2}


def radiative_loss(rho: float, alpha: float):
    """S(u) = rho[(u + 1/alpha - 1)^4 - (1/alpha - 1)^4], S(0) = 0."""
    c = 1.0 / alpha - 1.0

    def S(u):
        return rho * ((np.asarray(u) + c) ** 4 - c ** 4)

    def S_u(u):
        return 4.0 * rho * (np.asarray(u) + c) ** 3

    return S, S_u


# ---- model families -----------------------------------------------------------

@dataclass
class ScalarModel:
    """u_t = f(u, x, y) + Lap A(u)."""
    A: Diffusion
    f: Callable
    f_u: Callable
    name: str = "scalar"

    kind = "scalar"
    n_species = 1
    gamma = 1.0
    d = 1.0

    def reaction(self, u, x, y):
        return (self.f(u, x, y),)

    def jacobian_norms(self, box, domain=None, nsample: int = 41) -> dict:
        (ulo, uhi), = box
        us = np.linspace(ulo, uhi, nsample)
        if domain is None:
            fu = np.abs(self.f_u(us, 0.0, 0.0)).max()
        else:
            xa, xb, ya, yb = domain
            xs = np.linspace(xa, xb, nsample)
            ys = np.linspace(ya, yb, nsample)
            X, Y, U = np.meshgrid(xs, ys, us, indexing="ij")
            fu = np.abs(self.f_u(U, X, Y)).max()
        return {"fu": float(fu), "fv": 0.0, "gu": 0.0, "gv": 0.0,
                "Ap": self.A.sup_deriv(ulo, uhi), "Bp": 0.0}


@dataclass
class TwoSpeciesModel:
    """u_t = gamma f + S(u) + Lap A(u); v_t = gamma g + d Lap B(v)."""
    A: Diffusion
    B: Diffusion
    kinetics: dict
    gamma: float = 1.0
    d: float = 1.0
    radiation: tuple | None = None   # (S, S_u) or None
    name: str = "two-species"

    kind = "two"
    n_species = 2

    def reaction(self, u, v, x=None, y=None):
        k = self.kinetics
        ru = self.gamma * k["f"](u, v)
        rv = self.gamma * k["g"](u, v)
        if self.radiation is not None:
            ru = ru + self.radiation[0](u)
        return ru, rv

    def jacobian_norms(self, box, domain=None, nsample: int = 41,
                       states=None) -> dict:
        (ulo, uhi), (vlo, vhi) = box
        if states is None:
            # sample the full bounding rectangle; note this can badly
            # overestimate the rates when u and v are anti-correlated
            # (e.g. hot burnt regions have no fuel left), so callers that
            # know the realised states should pass them instead
            U, V = np.meshgrid(np.linspace(ulo, uhi, nsample),
                               np.linspace(vlo, vhi, nsample), indexing="ij")
        else:
            U, V = states[..., 0], states[..., 1]
        k = self.kinetics
        fu = float(np.abs(k["f_u"](U, V)).max())
        if self.radiation is not None:
            # the loss term rides on the u equation; fold its slope into fu
            fu += float(np.abs(self.radiation[1](U)).max()) / max(self.gamma, 1e-300)
        return {"fu": fu,
                "fv": float(np.abs(k["f_v"](U, V)).max()),
                "gu": float(np.abs(k["g_u"](U, V)).max()),
                "gv": float(np.abs(k["g_v"](U, V)).max()),
                "Ap": self.A.sup_deriv(ulo, uhi),
                "Bp": self.B.sup_deriv(vlo, vhi)}


@dataclass
class ChemotaxisModel:
    """u_t = div(sigma grad u - u chi'(v) grad v) + g(u); v_t = h(u,v) + d Lap v,
    with chi(v) = nu v, g(u) = u^2 (1 - u), h(u, v) = alpha u - beta v."""
    sigma: float
    d: float
    nu: float
    alpha: float
    beta: float
    name: str = "chemotaxis"

    kind = "chemotaxis"
    n_species = 2
    gamma = 1.0

    def growth(self, u):
        u = np.asarray(u)
        return u * u * (1.0 - u)

    def growth_deriv(self, u):
        u = np.asarray(u)
        return 2.0 * u - 3.0 * u * u

    def h(self, u, v):
        return self.alpha * np.asarray(u) - self.beta * np.asarray(v)

    def chi_deriv(self, v):
        return self.nu * np.ones_like(np.asarray(v, dtype=float))

    def reaction(self, u, v, x=None, y=None):
        return self.growth(u), self.h(u, v)

    def jacobian_norms(self, box, domain=None, nsample: int = 41) -> dict:
        (ulo, uhi), _ = box
        us = np.linspace(ulo, uhi, nsample)
        return {"hu": abs(self.alpha), "hv": abs(self.beta),
                "gp": float(np.abs(self.growth_deriv(us)).max()),
                "sigma": self.sigma, "chip": abs(self.nu)}


# ---- factory helpers ----------------------------------------------------------

def localized_bistable_source():
    """Space-dependent scalar source peaked at the domain centre (0.5, 0.5)."""
    def _r(x, y):
        return np.sqrt((np.asarray(x) - 0.5) ** 2 + (np.asarray(y) - 0.5) ** 2)

    def f(u, x, y):
        u = np.asarray(u)
        e = np.exp(-5.0 * _r(x, y))
        return 10.0 * (e * u * (1.0 - u) + (e - 1.0) * u ** 2 / (1.0 + u ** 2))

    def f_u(u, x, y):
        u = np.asarray(u, dtype=float)
        e = np.exp(-5.0 * _r(x, y))
        return 10.0 * (e * (1.0 - 2.0 * u)
                       + (e - 1.0) * 2.0 * u / (1.0 + u ** 2) ** 2)

    return f, f_u


def make_scalar_model(D: float = 1.0, u_c: float = 0.5) -> ScalarModel:
    f, f_u = localized_bistable_source()
    return ScalarModel(A=Diffusion(D=D, threshold=u_c), f=f, f_u=f_u,
                       name="degenerate-scalar")


def make_combustion_model(alpha: float = 0.64, beta: float = 10.0,
                          gamma: float = 1.0, Le: float = 1.0,
                          rho: float = 0.0) -> TwoSpeciesModel:
    rad = radiative_loss(rho, alpha) if rho else None
    return TwoSpeciesModel(A=Diffusion(), B=Diffusion(), gamma=gamma,
                           d=1.0 / Le, radiation=rad,
                           kinetics=arrhenius_kinetics(alpha, beta),
                           name="combustion")


def make_turing_model(a: float, b: float, d: float, gamma: float,
                      u_c: float | None = None,
                      v_c: float | None = None) -> TwoSpeciesModel:
    A = Diffusion() if u_c is None else Diffusion(threshold=u_c)
    B = Diffusion() if v_c is None else Diffusion(threshold=v_c)
    return TwoSpeciesModel(A=A, B=B, gamma=gamma, d=d,
                           kinetics=schnakenberg_kinetics(a, b),
                           name="activator-depleted")


def make_chemotaxis_model(sigma: float = 0.0625, d: float = 1.0,
                          nu: float = 7.0, alpha: float = 1.0,
                          beta: float = 32.0) -> ChemotaxisModel:
    return ChemotaxisModel(sigma=sigma, d=d, nu=nu, alpha=alpha, beta=beta)


def schnakenberg_steady_state(a: float, b: float) -> tuple[float, float]:
    s = a + b
    return s, b / s ** 2


# ---- diffusion-driven instability gate ------------------------------------------

@dataclass(frozen=True)
class TuringResult:
    unstable: bool
    reason: str
    L_minus: float | None = None
    L_plus: float | None = None

    def band(self, gamma: float) -> tuple[float, float] | None:
        if not self.unstable:
            return None
        return gamma * self.L_minus, gamma * self.L_plus


def check_turing_instability(a: float, b: float, d: float) -> TuringResult:
    """Diffusion-driven instability test for the Schnakenberg steady state.

    All four inequalities must hold: 0 < b - a < (a+b)^3, (a+b)^2 > 0,
    d(b-a) > (a+b)^3, and (d(b-a) - (a+b)^3)^2 > 4 d (a+b)^4.
    """
    s = a + b
    if s * s <= 0.0:
        return TuringResult(False, "degenerate steady state (a + b = 0)")
    bma = b - a
    s3 = s ** 3
    if not (0.0 < bma < s3):
        return TuringResult(False, "homogeneous state not linearly stable")
    disc_base = d * bma - s3
    if disc_base <= 0.0:
        return TuringResult(False, "diffusion contrast too weak")
    disc = disc_base ** 2 - 4.0 * d * s ** 4
    if disc <= 0.0:
        return TuringResult(False, "no real band of unstable wavenumbers")
    r = math.sqrt(disc)
    lm = (disc_base - r) / (2.0 * d * s)
    lp = (disc_base + r) / (2.0 * d * s)
    return TuringResult(True, "unstable band present", lm, lp)


# ---- initial conditions ----------------------------------------------------------

class SmoothIC:
    """Initial data given by a smooth callable (x, y) -> tuple of arrays."""

    def __init__(self, func: Callable, n_species: int, quadrature: str = "gauss2"):
        self.func = func
        self.n_species = n_species
        if quadrature not in ("midpoint", "gauss2"):
            raise ValueError(f"unknown quadrature {quadrature!r}")
        self.quadrature = quadrature

    def averages(self, domain, root_shape, level: int) -> np.ndarray:
        xa, xb, ya, yb = domain
        nx = root_shape[0] << level
        ny = root_shape[1] << level
        h = (xb - xa) / nx
        xc = xa + (np.arange(nx) + 0.5) * h
        yc = ya + (np.arange(ny) + 0.5) * h
        if self.quadrature == "midpoint":
            pts = [(0.0, 0.0, 1.0)]
        else:
            q = 0.5 / math.sqrt(3.0)
            pts = [(sx * q, sy * q, 0.25) for sx in (-1, 1) for sy in (-1, 1)]
        out = np.zeros((nx, ny, self.n_species))
        for ox, oy, w in pts:
            X, Y = np.meshgrid(xc + ox * h, yc + oy * h, indexing="ij")
            vals = self.func(X, Y)
            for s in range(self.n_species):
                out[:, :, s] += w * np.broadcast_to(vals[s], (nx, ny))
        return out


class NoiseIC:
    """Base state plus iid Gaussian cell noise laid down on the finest grid.

    The noise is committed at `level`; coarser averages are exact block
    means of it, so the representation is projection-consistent and fully
    reproducible from the seed.
    """

    def __init__(self, base: tuple, std: tuple, seed: int, level: int):
        self.base = tuple(float(b) for b in base)
        self.std = tuple(float(s) for s in std)
        self.seed = int(seed)
        self.level = int(level)
        self.n_species = len(base)
        self._fine: np.ndarray | None = None

    def _fine_grid(self, root_shape) -> np.ndarray:
        if self._fine is None:
            rng = np.random.default_rng(self.seed)
            nx = root_shape[0] << self.level
            ny = root_shape[1] << self.level
            g = np.empty((nx, ny, self.n_species))
            for s in range(self.n_species):
                g[:, :, s] = self.base[s] + self.std[s] * rng.standard_normal((nx, ny))
            self._fine = g
        return self._fine

    def averages(self, domain, root_shape, level: int) -> np.ndarray:
        if level > self.level:
            raise ValueError("noise field not defined below its commit level")
        g = self._fine_grid(root_shape)
        for _ in range(self.level - level):
            g = 0.25 * (g[0::2, 0::2] + g[1::2, 0::2] + g[0::2, 1::2] + g[1::2, 1::2])
        return g


def flame_balls_ic(x1: float, x2: float, r1: float, r2: float):
    """Two ignition kernels on the x-axis: u = 1 inside either ball and decays
    exponentially outside; v = 1 - u."""
    def func(x, y):
        d1 = np.sqrt((x - x1) ** 2 + y ** 2)
        d2 = np.sqrt((x - x2) ** 2 + y ** 2)
        out = np.maximum(np.exp(1.0 - d1 / r1), np.exp(1.0 - d2 / r2))
        u = np.where((d1 <= r1) | (d2 <= r2), 1.0, out)
        return u, 1.0 - u
    return func


def waves_ic():
    """Smooth oscillatory scalar field on the unit square."""
    def func(x, y):
        u = 0.5 * (1.0 + np.sin(1.1 * (x - np.cos(0.7 * y)))) \
            * np.cos(0.5 * (y - np.sin(1.3 * x)))
        return (u,)
    return func


def chemotaxis_ic(center: tuple[float, float], delta: float, kappa: float,
                  seed: int, v0: float = 1.0 / 32.0, n_modes: int = 24,
                  k_max: int = 8, length: float = 16.0):
    """u = 1 + eps(x, y), v = v0, with eps a seeded random cosine-mode field
    scaled by delta (1 - exp(-kappa r^2)) so it vanishes near `center`."""
    rng = np.random.default_rng(seed)
    ks = rng.integers(1, k_max + 1, size=(n_modes, 2))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=n_modes)
    amps = rng.standard_normal(n_modes)
    amps /= math.sqrt(0.5 * float((amps ** 2).sum()))   # unit variance field
    cx, cy = center

    def func(x, y):
        r2 = (x - cx) ** 2 + (y - cy) ** 2
        eta = np.zeros_like(np.asarray(x, dtype=float))
        for (k1, k2), ph, a in zip(ks, phases, amps):
            eta = eta + a * np.cos(2.0 * math.pi * (k1 * x + k2 * y) / length + ph)
        u = 1.0 + delta * (1.0 - np.exp(-kappa * r2)) * eta
        return u, np.full_like(u, v0)
    return func
