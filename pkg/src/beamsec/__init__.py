"""Secure beam-domain power allocation for massive MIMO downlink with statistical CSI."""

from .channel import CouplingProfile, SystemDims, synth_coupling
from .detequiv import de_fixed_point, de_secrecy_lower_bound, de_terms
from .errors import BeamsecError, ConfigError, ConvergenceError, DimensionError, ScopeError
from .optimizer import SolverConfig, cccp_solve, iwfa
from .rates import secrecy_rates

__version__ = "0.1.0"
