"""Selects the compiled strapdown kernel when built, else the Python fallback.

Set ``SONICPOSE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
propagate = _kernels_py.propagate

if os.environ.get("SONICPOSE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        propagate = _compiled.propagate
        BACKEND = "cython"

python_propagate = _kernels_py.propagate
