"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so the split matters:
configuration problems (bad parameters), structural problems (malformed
data files), and numerical failures (singularity, divergence) are
distinguishable by type.
"""

__all__ = [
    "ConfigurationError",
    "DefinitionViolatedError",
    "DivergenceError",
    "ModelViolationError",
    "NetpriceError",
    "NumericalError",
    "SingularityError",
    "StructuralError",
]


class NetpriceError(Exception):
    """Base class for all package-specific failures."""


class ConfigurationError(NetpriceError):
    """Parameters are invalid or jointly infeasible."""


class StructuralError(NetpriceError):
    """Input data is malformed: wrong shapes, missing fields, bad ids."""


class NumericalError(NetpriceError):
    """A computation failed numerically."""


class SingularityError(NumericalError):
    """A matrix that the model guarantees invertible is numerically singular."""


class DivergenceError(NumericalError):
    """An iterative computation cannot converge (e.g. spectral radius >= 1)."""


class DefinitionViolatedError(NumericalError):
    """A quantity violates its defining property (e.g. negative centrality weights)."""


class ModelViolationError(NetpriceError):
    """Computed values breach a model guarantee (e.g. non-interior consumption),
    signalling that a precondition was violated upstream."""
