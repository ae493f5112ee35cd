"""Selects the compiled loops when available; POLYBANDIT_PURE=1 forces the Python ones."""
import os

if os.environ.get("POLYBANDIT_PURE", "") not in ("", "0"):
    from ._kernels_py import linucb_loop, ucb_loop
    BACKEND = "python"
else:
    try:
        from ._kernels import linucb_loop, ucb_loop
        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import linucb_loop, ucb_loop
        BACKEND = "python"

__all__ = ["ucb_loop", "linucb_loop", "BACKEND"]
