"""Hot numerical kernels.

The compiled extension ``_lsa`` is preferred; set ``POINTDA_PURE_PYTHON=1``
or build without a C compiler to get the numpy fallback. ``BACKEND`` names
the active implementation.
"""
import os

from . import fallback

if os.environ.get("POINTDA_PURE_PYTHON", "") not in ("", "0"):
    _lsa = None
else:
    try:
        from . import _lsa
    except ImportError:
        _lsa = None

if _lsa is not None:
    solve_rows = _lsa.solve_rows
    BACKEND = "compiled"
else:
    solve_rows = fallback.solve_rows
    BACKEND = "python"

__all__ = ["solve_rows", "BACKEND", "fallback"]
