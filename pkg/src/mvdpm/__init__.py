"""Deep particle solvers for McKean-Vlasov SDEs, with an Euler-Maruyama baseline."""

from mvdpm.errors import InvalidArgument, NumericalFailure

__version__ = "0.1.0"

__all__ = ["InvalidArgument", "NumericalFailure", "__version__"]
