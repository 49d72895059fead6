"""Build script for the optional compiled scoring kernel.

The package is fully functional without the extension: ``modalbridge.kernels``
falls back to a numpy implementation at import time. Building the extension
only changes throughput, never results (see kernels module docs). Set
``MODALBRIDGE_SKIP_EXT=1`` to skip compilation entirely.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MODALBRIDGE_SKIP_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "modalbridge._kernels",
                    ["src/modalbridge/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython/numpy at build time: ship the pure-python fallback only.
        ext_modules = []

setup(ext_modules=ext_modules)
