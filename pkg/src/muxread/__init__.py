"""Simulation and analysis of frequency-multiplexed dispersive qubit readout
through individual Purcell filters."""

__version__ = "0.1.0"

from .circuit import FeedlineSpec, ReadoutChain
from .errors import InputError, MuxreadError, NumericalError

__all__ = ["FeedlineSpec", "ReadoutChain", "InputError", "MuxreadError", "NumericalError",
           "__version__"]
