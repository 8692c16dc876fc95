"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure numpy fallback is selected at
import time), so a failed compile only costs speed.  `pip install -e . --no-build-isolation`
uses the environment's setuptools/Cython/numpy.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("SAGOPT_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools.extension import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "sagopt._kernels",
                    ["src/sagopt/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
