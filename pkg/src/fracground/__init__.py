"""Ground states of (-lap)^s u + V u = u^{p-1} and their s -> s0 limits.

The package solves the radial problem on log grids with a spectral
(Mellin-factorized Hankel) fractional Laplacian plus a small periodic-box
mode, and packages the diagnostics that the concentration limit s -> s0
is stated in: bubble convergence of the rescaled profile, the blow-up law
for the amplitude, decay exponents, mass concentration at the potential
minimum, the non-attainment collapse below s0, and a seeded local
uniqueness probe. See `python -m fracground --help` for the command
surface.
"""

__version__ = "0.1.0"

from .constants import (blowup_A, blowup_rate, bubble_eval, bubble_field,
                        coeff_D, kappa_ext, lambda_scale, make_bubble,
                        sobolev_S)
from .core_model import (BoxField, BoxGrid, ModelError, ProblemParams,
                         RadialField, RadialGrid, build_box_grid,
                         build_radial_grid, make_params)
from .frac_op import (RadialTransformPlan, TransformError, apply_fraclap_box,
                      apply_fraclap_radial, hs_seminorm, lp_norm, make_plan,
                      singular_integral_oracle, sup_norm)
from .potentials import (ConstantPotential, PotentialWell, eval_V, eval_gradV,
                         validate_assumptions)
from .solver import (GroundState, MinimizeConfig, SolverError, el_residual,
                     eval_rayleigh, minimize_rayleigh, pohozaev_residual,
                     to_ground_state)
