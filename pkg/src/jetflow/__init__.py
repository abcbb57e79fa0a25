"""jetflow: constraint analysis for time-dependent singular Lagrangian systems.

The package walks the full chain for a Lagrangian given in closed form:
geometric setup on the velocity phase space, the presymplectic-with-time
constraint algorithm, the momentum-side picture with its own constraint
tower, first/second class sorting with Dirac brackets, and second-order
(equation-of-motion) refinement.
"""

from . import expr_core
from . import precosym
from . import jet_geometry
from . import constraint_engine
from . import hamiltonian_side
from . import sode_analysis

__version__ = "0.1.0"

__all__ = [
    "expr_core", "precosym", "jet_geometry", "constraint_engine",
    "hamiltonian_side", "sode_analysis",
]
