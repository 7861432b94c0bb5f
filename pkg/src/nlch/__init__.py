"""Pseudo-spectral simulator for a multicomponent cross-diffusion system
with nonlocal Cahn-Hilliard interactions on the flat torus."""
from .grid import GridMismatchError, TorusGrid
from .kernel import (LocalOperator, NonlocalOperator, ResolutionError, apply_B, build_operator,
                     limit_coefficient, make_profile, sphere_factor)
from .model import (ModelParams, State, chemical_potential, energy, entropy, fluxes,
                    interaction_operator, mobility_at, q_fields, rhs)
from .scheme import (SchemeParams, SolverError, StepResult, explicit_oracle_step, implicit_step,
                     run, step_S1, step_S2)
from .diagnostics import DiagnosticsRecord, check_energy_monotone, estimates

__version__ = "0.1.0"
