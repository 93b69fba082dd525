__version__ = '0.1.0'

from .spectral import ScalarField, TorusGrid, h_norm
from .phase import PhaseFunctions
from .noise import ModeIndex, NoiseSpec, make_family
from .solver import SolverConfig, simulate_path
from .limit import LimitConfig, solve_limit
