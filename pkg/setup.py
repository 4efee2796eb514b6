"""Build script: compiles the optional Cython assembly kernels.

The package works without the extension (a numpy fallback with the same
API is selected at import time), so a failed compile is not fatal for
`pip install` -- but we do want the extension in normal installs, so no
exception swallowing here.
"""
import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "pipeweld.fem._kernels_cy",
        ["src/pipeweld/fem/_kernels_cy.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    ),
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    ),
)
