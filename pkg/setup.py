"""Build script for the optional compiled iteration kernels.

The package works without the extension (a numpy fallback with identical
semantics is selected at import time); building it just removes per-iteration
Python overhead in the row solvers.
"""

import numpy
from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/netprice/_core.pyx",
        language_level=3,
        annotate=False,
    )
except ImportError:  # build proceeds without the compiled core
    ext_modules = []

setup(
    ext_modules=ext_modules,
    include_dirs=[numpy.get_include()],
)
