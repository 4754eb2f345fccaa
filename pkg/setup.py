"""Build the optional Cython SMO kernel.

The package works without it: ``npdetect.svm`` falls back to a pure
Python/numpy solver when the extension cannot be imported.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("NPDETECT_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "npdetect.svm._smo",
                    sources=["src/npdetect/svm/_smo.pyx"],
                    include_dirs=[np.get_include()],
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
