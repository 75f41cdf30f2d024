"""Simulator for a pulsed crossed-crystal SPDC polarization-entangled photon source."""
from .errors import (ConfigError, ConvergenceError, DegeneratePhaseMatchingError, FitError,
                     InsufficientStatisticsError, InvalidInputError, NoSolutionError,
                     NumericalError, RangeError, ResolutionError, SpdcSimError,
                     UnusableMaterialError)

__version__ = "0.1.0"
