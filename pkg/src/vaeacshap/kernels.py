"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``VAEACSHAP_PURE_PYTHON=1`` to force the numpy implementations.
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("VAEACSHAP_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

forest_predict = _impl.forest_predict
best_split_sorted = _impl.best_split_sorted

__all__ = ["BACKEND", "forest_predict", "best_split_sorted", "_kernels_py"]
