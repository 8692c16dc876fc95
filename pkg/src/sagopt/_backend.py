"""Selects the compiled kernel lane when available, pure Python otherwise.

Set SAGOPT_NO_EXT=1 before import to force the Python lane.
"""
import os

if os.environ.get("SAGOPT_NO_EXT") == "1":
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as kernels

BACKEND = kernels.BACKEND

sag_scalar_chunk = kernels.sag_scalar_chunk
sag_dense_chunk = kernels.sag_dense_chunk
sag_jit_chunk = kernels.sag_jit_chunk
sag_adaptive_chunk = kernels.sag_adaptive_chunk
sg_chunk = kernels.sg_chunk
