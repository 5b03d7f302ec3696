"""Random assignment with Weibull edge costs: exact matching Monte Carlo,
game-value fixed points on the ell-f square, the transition operators
built from them, and simulation of the exploration game on random trees."""

from .randomness import Params, SeedSpec, derive_stream

__version__ = "0.1.0"

__all__ = ["Params", "SeedSpec", "derive_stream", "__version__"]
