"""Kernel backend selection.

The compiled Cython backend is preferred when available; the numpy
fallback is bit-identical. Set GRUQ_KERNELS=python (or =cython) to force
a backend; forcing cython raises if the extension is missing.
"""

from __future__ import annotations

import os

_requested = os.environ.get("GRUQ_KERNELS", "").strip().lower()

if _requested == "python":
    from gruq import _pykernels as _impl
elif _requested == "cython":
    from gruq import _ckernels as _impl  # type: ignore[no-redef]
else:
    try:
        from gruq import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        from gruq import _pykernels as _impl  # type: ignore[no-redef]

BACKEND = _impl.BACKEND_NAME

fxp_mul_arr = _impl.fxp_mul_arr
qlinear = _impl.qlinear
qadd = _impl.qadd
qmul = _impl.qmul
qcompl = _impl.qcompl
lut_apply = _impl.lut_apply
