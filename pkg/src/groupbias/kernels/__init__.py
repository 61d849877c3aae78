"""Hot loops with a compiled backend and a numpy fallback.

The Cython extension is used when it was built; setting
``GROUPBIAS_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("GROUPBIAS_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

ks_gap = _impl.ks_gap
ks_gap_grid = _impl.ks_gap_grid
lambda_gradients = _impl.lambda_gradients

__all__ = ["BACKEND", "ks_gap", "ks_gap_grid", "lambda_gradients"]
