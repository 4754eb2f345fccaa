"""Pick the SMO kernel at import time.

Set ``NPDETECT_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _smo_py

smo_solve_py = _smo_py.smo_solve

try:
    if os.environ.get("NPDETECT_PURE_PYTHON") == "1":
        raise ImportError("pure-python backend forced")
    from ._smo import smo_solve as smo_solve_compiled
except ImportError:
    smo_solve_compiled = None

if smo_solve_compiled is not None:
    smo_solve = smo_solve_compiled
    BACKEND = "cython"
else:
    smo_solve = smo_solve_py
    BACKEND = "python"
