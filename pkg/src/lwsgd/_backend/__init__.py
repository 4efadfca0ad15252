"""Kernel backend selection.

The compiled Cython extension is used when importable; otherwise the numpy
implementations take over.  ``LWSGD_BACKEND=numpy`` or ``LWSGD_BACKEND=compiled``
forces one side (the latter raises if the extension is missing, so benchmarks
cannot silently compare numpy against itself).
"""

import os

from lwsgd._backend import _pykernels

_forced = os.environ.get("LWSGD_BACKEND", "").strip().lower()

if _forced == "numpy":
    kernels = _pykernels
elif _forced == "compiled":
    from lwsgd._backend import _ckernels as kernels
else:
    try:
        from lwsgd._backend import _ckernels as kernels
    except ImportError:
        kernels = _pykernels

BACKEND = kernels.NAME
