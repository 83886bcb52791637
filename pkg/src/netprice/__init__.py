"""Consumption equilibria on networks with latent agents: simulation,
price-response estimation from observable panels, and optimal pricing.

Submodules are imported lazily so that entry points can pin BLAS threading
environment variables before any numpy-backed module loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "backend",
    "cli",
    "conic_solver",
    "equilibrium",
    "errors",
    "estimator",
    "network",
    "pricing",
    "sparsity",
    "stats",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
