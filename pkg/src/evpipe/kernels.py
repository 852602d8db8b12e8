"""Backend selection for the hot loops.

The compiled ``_ckernels`` extension is preferred; the numpy fallback is used
when it is not built or when ``EVPIPE_PURE_PYTHON=1`` is set in the
environment before import.
"""

import importlib
import os

from evpipe import _kernels_py


def _load_compiled():
    if os.environ.get("EVPIPE_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        return importlib.import_module("evpipe._ckernels")
    except ImportError:
        return None


_compiled = _load_compiled()
_active = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"

histogram2c = _active.histogram2c
adaptive_search = _active.adaptive_search
grid_threshold_search = _active.grid_threshold_search


def available_backends():
    """Names of backends importable in this environment."""
    out = ["python"]
    try:
        importlib.import_module("evpipe._ckernels")
        out.append("cython")
    except ImportError:
        pass
    return out


def backend(name):
    """Module implementing the kernels for ``name`` ('python' or 'cython')."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("evpipe._ckernels")
    raise ValueError(f"unknown backend {name!r}")
