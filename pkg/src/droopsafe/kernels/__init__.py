"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports; setting ``DROOPSAFE_PURE_PYTHON=1``
forces the fallback.  Both expose the same functions.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

if os.environ.get("DROOPSAFE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND: str = _impl.BACKEND
poly_eval_arrays = _impl.poly_eval_arrays
filter_interval = _impl.filter_interval
simulate = _impl.simulate


def poly_eval(p, pts: np.ndarray) -> np.ndarray:
    """Evaluate a :class:`~droopsafe.poly.Polynomial` at every row of ``pts``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[1] != len(p.variables):
        raise ValueError(f"expected {len(p.variables)} columns, got {pts.shape[1]}")
    exps, coefs = p.arrays()
    return poly_eval_arrays(np.ascontiguousarray(exps, dtype=np.int64), coefs, pts)


def backends() -> dict:
    """Every importable backend module, keyed by name (for benchmarks and tests)."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
