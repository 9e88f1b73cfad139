"""The six built-in scenarios.

Each preset bundles a model factory, initial data, domain and the reference
tolerance used for thresholding, together with run defaults (level, final
time, time-stepping mode).  The tolerances are the published working values
for the respective default levels; they scale across levels through the
2^(2(l-L)) level-tolerance rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .models import (make_scalar_model, make_combustion_model,
                     make_turing_model, make_chemotaxis_model,
                     schnakenberg_steady_state, SmoothIC, NoiseIC,
                     waves_ic, flame_balls_ic, chemotaxis_ic)


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    n_species: int
    domain: tuple
    root_shape: tuple
    default_level: int
    epsilon_ref: float
    default_t_end: float
    time_stepping: str
    default_cfl: float
    make_model: Callable
    make_ic: Callable          # (seed, level) -> ic


def _ex1_ic(seed, level):
    return SmoothIC(waves_ic(), 1)


def _ex2_ic(seed, level):
    return SmoothIC(flame_balls_ic(-7.5, 7.5, 1.8, 2.5), 2)


def _ex3_ic(seed, level):
    return SmoothIC(flame_balls_ic(-5.0, 5.0, 0.5, 1.0), 2)


def _turing_ic(seed, level, gamma_pars=(-0.5, 1.9)):
    base = schnakenberg_steady_state(*gamma_pars)
    return NoiseIC(base=base, std=(0.01, 0.01), seed=seed, level=level)


def _ex6_ic(seed, level):
    return SmoothIC(chemotaxis_ic(center=(8.0, 8.0), delta=0.01, kappa=1.0,
                                  seed=seed), 2)


PRESETS: dict[str, Scenario] = {
    "example1": Scenario(
        name="example1",
        description="degenerate scalar diffusion with a localised source",
        n_species=1, domain=(0.0, 1.0, 0.0, 1.0), root_shape=(1, 1),
        default_level=8, epsilon_ref=9.43e-4, default_t_end=3.0,
        time_stepping="global", default_cfl=1.0,
        make_model=lambda: make_scalar_model(D=1.0, u_c=0.5),
        make_ic=_ex1_ic),
    "example2": Scenario(
        name="example2",
        description="two interacting flame kernels, equal diffusivities",
        n_species=2, domain=(-30.0, 30.0, -30.0, 30.0), root_shape=(1, 1),
        default_level=8, epsilon_ref=4.94e-3, default_t_end=10.0,
        time_stepping="global", default_cfl=1.0,
        make_model=lambda: make_combustion_model(alpha=0.64, beta=10.0,
                                                 gamma=1.0, Le=1.0, rho=0.0),
        make_ic=_ex2_ic),
    "example3": Scenario(
        name="example3",
        description="flame kernels with radiative loss, Le = 0.3, local stepping",
        n_species=2, domain=(-30.0, 30.0, -30.0, 30.0), root_shape=(1, 1),
        default_level=8, epsilon_ref=7.43e-3, default_t_end=10.0,
        time_stepping="local", default_cfl=0.8,
        make_model=lambda: make_combustion_model(alpha=0.64, beta=10.0,
                                                 gamma=1.0, Le=0.3, rho=0.05),
        make_ic=_ex3_ic),
    "example4": Scenario(
        name="example4",
        description="activator-depleted substrate patterns from seeded noise",
        n_species=2, domain=(0.0, 1.0, 0.0, 1.0), root_shape=(1, 1),
        default_level=7, epsilon_ref=2.6e-3, default_t_end=1.5,
        time_stepping="global", default_cfl=1.0,
        make_model=lambda: make_turing_model(a=-0.5, b=1.9, d=4.8, gamma=210.0),
        make_ic=_turing_ic),
    "example5": Scenario(
        name="example5",
        description="patterns under degenerate (threshold) diffusion",
        n_species=2, domain=(0.0, 1.0, 0.0, 1.0), root_shape=(1, 1),
        default_level=7, epsilon_ref=3.59e-4, default_t_end=1.5,
        time_stepping="global", default_cfl=1.0,
        make_model=lambda: make_turing_model(a=-0.5, b=1.9, d=4.8, gamma=395.0,
                                             u_c=1.2, v_c=0.7),
        make_ic=_turing_ic),
    "example6": Scenario(
        name="example6",
        description="chemotactic aggregation with logistic growth, local stepping",
        n_species=2, domain=(0.0, 16.0, 0.0, 16.0), root_shape=(1, 1),
        default_level=8, epsilon_ref=8.43e-4, default_t_end=1.0,
        time_stepping="local", default_cfl=0.8,
        make_model=lambda nu=7.0: make_chemotaxis_model(sigma=0.0625, d=1.0,
                                                        nu=nu, alpha=1.0,
                                                        beta=32.0),
        make_ic=_ex6_ic),
}


def get_scenario(name: str) -> Scenario:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown example {name!r}; "
                       f"choose one of {sorted(PRESETS)}") from None
