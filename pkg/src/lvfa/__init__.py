"""Numerical forward-attractor structure of nonautonomous cooperative
Lotka-Volterra systems ``u_i' = u_i (a_i(t) - sum_j b_ij(t) u_j)``.

Modules
-------
expr          closed grammar for time-dependent coefficients
model         system specs, supports, sub-communities
conditions    dominance / permanence / extinction condition checks and witness search
odeint        Dormand-Prince integrator in log coordinates
trajectories  complete solutions by pullback, contraction estimates
dichotomy     exponential-dichotomy certificates along complete solutions
skeleton      connections, classification, attractor skeleton graph
cli           command-line front end (``lvfa``)
"""

__version__ = "0.1.0"

from .model import SupportSet, SystemSpec, make_spec, subcommunity  # noqa: E402
from .io import bundled_spec, load_spec_file  # noqa: E402

__all__ = ["SupportSet", "SystemSpec", "make_spec", "subcommunity", "bundled_spec", "load_spec_file", "__version__"]
