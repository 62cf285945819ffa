"""Select the compiled kernels when available, else the numpy fallback.

Set ``STAGETIME_BACKEND=python`` to force the fallback.
"""
import os

from . import _kernels_py

kernels = _kernels_py
if os.environ.get("STAGETIME_BACKEND", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _kernels as kernels  # noqa: F811
    except ImportError:  # extension not built
        kernels = _kernels_py

BACKEND = kernels.BACKEND


def get(name: str | None = None):
    """Kernel module by backend name (``"cython"``/``"python"``), default the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
