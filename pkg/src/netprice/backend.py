"""Kernel backend selection.

The package ships two implementations of the solver's inner-loop kernels: a
compiled extension (_core, built from Cython when available) and a pure
numpy fallback (_kernels) with identical signatures and semantics.  The
NETPRICE_BACKEND environment variable forces a choice:

    auto      compiled if importable, else python (default)
    compiled  require the extension; raise if missing
    python    always use the numpy fallback

Selection happens once at first import; the choice is exposed as
BACKEND_NAME for diagnostics and benchmarks.
"""

import os

from .errors import ConfigurationError

__all__ = ["BACKEND_NAME", "kernels"]


def _select():
    choice = os.environ.get("NETPRICE_BACKEND", "auto")
    if choice not in ("auto", "compiled", "python"):
        raise ConfigurationError(
            f"NETPRICE_BACKEND must be auto, compiled, or python; got {choice!r}"
        )
    if choice in ("auto", "compiled"):
        try:
            from . import _core

            return _core, "compiled"
        except ImportError:
            if choice == "compiled":
                raise ConfigurationError(
                    "NETPRICE_BACKEND=compiled but the extension is not built; "
                    "reinstall with Cython and a C compiler available"
                ) from None
    from . import _kernels

    return _kernels, "python"


kernels, BACKEND_NAME = _select()
