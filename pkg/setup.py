"""Build script for the optional compiled PatchMatch kernel.

The package is pure Python except for one hot loop: per-pixel candidate
scoring inside the PatchMatch iteration. That kernel is built here as a
Cython extension with OpenMP. If the toolchain is missing the build is
allowed to fail and the package falls back to the NumPy implementation
at import time (see cmfdkit.patchmatch._backend).
"""

import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

_PYX = "src/cmfdkit/patchmatch/_pm_kernel.pyx"

ext_modules = []
if cythonize is not None and os.path.exists(_PYX):
    ext = Extension(
        "cmfdkit.patchmatch._pm_kernel",
        sources=[_PYX],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3", "-fopenmp", "-fno-math-errno"],
        extra_link_args=["-fopenmp"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
    ext_modules = cythonize(
        [ext],
        language_level=3,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
