"""normform: structure analysis and backstepping synthesis for control-affine
nonlinear systems.

Pipeline: load a system -> run the infinite zero / zero output structure
algorithm -> assemble the chain normal form and zero dynamics -> synthesize
stabilizing, semi-global, or disturbance-attenuating backstepping controllers
-> validate them in closed-loop simulation.
"""

__version__ = "0.1.0"

from .expr import (Expr, Const, Var, Add, Mul, Pow, Func, parse, render,
                   simplify, diff, subs, evalf, free_vars, equivalent,
                   numeric_equivalent, ParseError)
from .geom import (VectorField, SymMatrix, jacobian, lie_derivative,
                   lie_bracket, ad_power, involutive)
from .sysmodel import (AffineSystem, SamplePlan, load_system, loads_system,
                       dump_system, numeric_rank, sample_domain)
from .structure import (infinite_zero_algorithm, zero_output_algorithm,
                        classify_invertibility, invariance_harness,
                        StructureError, StructureOutcome)
from .normalform import (build_normal_form, check_assumption_B,
                         check_assumption_C, check_assumption_D,
                         zero_dynamics, NormalForm)
from .linstruct import (LinearTriple, linear_infinite_zeros,
                        vector_relative_degree, decompose)
from .backstep import (ChainSystem, Stabilizer, ControlLaw, Disturbance,
                       OrderViolation, validate_order, integrator_backstep,
                       synthesize, low_gain, semi_global_synthesize,
                       dissipative_backstep, da_synthesize)
from .simkit import (SimConfig, Trace, simulate, lyapunov_monitor,
                     l2_gain_check, batch_simulate, step_signal, zero_signal,
                     noise_signal, trace_to_csv)
