"""Run diagnostics: compression, error norms, integrated reaction rate."""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict, fields

import numpy as np


def compression_rate(n_leaves: int, max_level: int, root_shape=(1, 1)) -> float:
    """Uniform-grid cell count over (root cells + leaves).

    eta = N_L / (N_L / 4^L + |leaves|) with N_L the finest uniform count;
    the first denominator term charges the coarse skeleton."""
    n_full = root_shape[0] * root_shape[1] * 4 ** max_level
    return n_full / (n_full / 4.0 ** max_level + n_leaves)


def error_norms(approx: np.ndarray, exact: np.ndarray) -> dict:
    """Discrete L1/L2/Linf of (approx - exact), cell-count normalised."""
    d = np.abs(np.asarray(approx, dtype=float) - np.asarray(exact, dtype=float))
    n = d.size
    return {"l1": float(d.sum() / n),
            "l2": float(np.sqrt((d * d).sum() / n)),
            "linf": float(d.max())}


def rate_density(model, state: np.ndarray, x=None, y=None) -> np.ndarray:
    """Pointwise reaction-rate integrand, per cell; `state` is (n, n_species)."""
    if model.kind == "scalar":
        return np.asarray(model.f(state[:, 0], x, y))
    if model.kind == "two":
        return np.asarray(model.kinetics["f"](state[:, 0], state[:, 1]))
    return np.asarray(model.growth(state[:, 0]))


def reaction_rate(model, state: np.ndarray, areas: np.ndarray,
                  x=None, y=None) -> float:
    """Domain integral of the reaction-rate density."""
    return float(rate_density(model, state, x, y) @ areas)


def flame_radius(grid: np.ndarray, domain, species: int = 0,
                 threshold: float = 0.5) -> float:
    """Equivalent radius sqrt(area / pi) of the region where the field
    exceeds `threshold` (burnt-region size for ignition problems)."""
    g = np.asarray(grid)[..., species]
    xa, xb, ya, yb = domain
    cell = (xb - xa) * (yb - ya) / g.size
    area = float((g >= threshold).sum()) * cell
    return float(np.sqrt(area / np.pi))


def field_variance(grid: np.ndarray, species: int = 0) -> float:
    g = np.asarray(grid)[..., species]
    return float(g.var())


@dataclass
class MetricsRecord:
    t: float
    steps: int
    fine_steps: int
    n_leaves: int
    eta: float
    mass_u: float
    mass_v: float
    reaction: float
    wall: float


def write_metrics_csv(path, records: list[MetricsRecord]) -> None:
    names = [f.name for f in fields(MetricsRecord)]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()}
                for row in csv.DictReader(fh)]
