"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is picked at import time: numba is used when it imports and the
environment variable ``SKINCELLS_NUMBA`` is not ``0``/``false``/``off``.
Both implementations stay importable directly (see ``benchmarks/``).
"""

import os

from . import numpy_impl

SUM_FLOOR = numpy_impl.SUM_FLOOR


def _numba_requested() -> bool:
    flag = os.environ.get("SKINCELLS_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off")


_backend = numpy_impl
if _numba_requested():
    try:
        from . import numba_impl as _backend
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _backend = numpy_impl


def backend_name() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return "numpy" if _backend is numpy_impl else "numba"


field_forward = _backend.field_forward
field_backward = _backend.field_backward
laplacian_apply = _backend.laplacian_apply
laplacian_adjoint = _backend.laplacian_adjoint
segment_hits = _backend.segment_hits
