"""Adaptive multiresolution finite-volume solver for 2D reaction-diffusion
systems on a graded quadtree, with level-wise local time stepping."""

from .tree import GradedTree, NodeKey, LEAF, INTERNAL, VIRTUAL
from .transform import (MRParams, update_tree, encode, decode,
                        threshold_details, fill_to_level,
                        reference_tolerance_model2, reference_tolerance_model3)
from .models import (make_scalar_model, make_combustion_model,
                     make_turing_model, make_chemotaxis_model,
                     check_turing_instability, schnakenberg_steady_state,
                     SmoothIC, NoiseIC)
from .fv import DenseReference, NormTracker, compute_dt, CHEMO_SIGN
from .engine import Engine
from .stepping import (Simulation, TimeStepViolation, build_initial_tree,
                       build_uniform_tree, dense_reference_run)
from .metrics import compression_rate, error_norms, reaction_rate
from .presets import PRESETS, get_scenario
from .config import RunConfig, load_config

__all__ = [n for n in dir() if not n.startswith("_")]
__version__ = "0.1.0"
