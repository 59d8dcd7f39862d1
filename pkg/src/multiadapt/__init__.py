"""Multi-adaptive Galerkin time stepping (mcG(q) / mdG(q)) with per-component steps."""

from .adaptivity import StepState, accept_or_reject, adaptive_solve, controller, initial_step, step_from_residual
from .baseline import solve_fixed
from .dual import make_dual_system, solve_dual, stability_factors
from .errors import (ConfigurationError, DegenerateStepError, IntegrationFailure, InterpolationError,
                     SingularSlabError, TraceError)
from .integrator import IntegratorConfig, RunReport, efficiency_index, integrate
from .methods import MethodTable, build_table, eval_local, update_element
from .problems import (BenchmarkProblem, ODESystem, SparsityPattern, detect_sparsity, evaluate_component,
                       make_exponential_decay, make_harmonic_oscillator, make_linear_system, make_problem,
                       make_reaction_diffusion, make_wave_1d)
from .solver import SolverConfig, SolveReport, auto_strategy, damped_update, newton_solve_slab, solve_slab
from .timeslab import TimeSlab, build_dependencies, create_time_slab, interpolate, partition
from .trace import SolutionTrace, read_checkpoint, write_checkpoint

__version__ = "0.1.0"
