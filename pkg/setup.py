"""Build script for the optional compiled episode kernel.

The package works without the extension (a pure-Python kernel is selected at
import time); building it just makes training and Monte-Carlo verification
much faster.  Build in place with:

    python setup.py build_ext --inplace

The extension is compiled with -ffp-contract=off so that its floating-point
results are bit-identical to the pure-Python kernel (no FMA contraction).
"""

import os

from setuptools import setup

ext_modules = []
try:
    if not os.path.exists("src/compnav/engine/_kernel.pyx"):
        raise ImportError
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "compnav.engine._kernel",
                ["src/compnav/engine/_kernel.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython available: install without the compiled kernel.
    pass

setup(ext_modules=ext_modules)
