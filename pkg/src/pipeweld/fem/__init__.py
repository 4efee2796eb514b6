"""FEM machinery with a compiled kernel core and a numpy fallback.

The assembly kernels exist twice: a Cython extension (`_kernels_cy`) and
a vectorized numpy module (`kernels_py`) with identical signatures. The
extension is preferred; set PIPEWELD_PURE=1 to force the fallback.
"""
import os as _os

from . import kernels_py

if _os.environ.get("PIPEWELD_PURE") == "1":
    kernels = kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels_cy as kernels
        BACKEND = "compiled"
    except ImportError:
        kernels = kernels_py
        BACKEND = "python"

from .core import (  # noqa: E402,F401
    AssemblyError,
    Constraints,
    ElementBlock,
    NewtonError,
    build_blocks,
    extrapolate_to_nodes,
    newton_solve,
    pin_untouched,
    qp_gradient,
    qp_interpolate,
    qp_zeros,
    scatter_add,
    solve_linear,
)
