"""Stencil kernel backend, chosen once at import.

The compiled extension is used when it was built; setting ``NSSDA_PURE_PYTHON=1``
forces the numpy fallback.
"""
import os

import numpy as np

from nssda import _kernels_py

if os.environ.get("NSSDA_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from nssda import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"


def _batched(x, trailing: int):
    x = np.ascontiguousarray(x, dtype=np.float64)
    lead = x.shape[: x.ndim - trailing]
    return x.reshape((-1,) + x.shape[x.ndim - trailing :]), lead


def interface_states(ue):
    """Limited interface traces of a ghost-padded ``(..., n+4, p)`` array."""
    flat, lead = _batched(ue, 2)
    um, up = _impl.interface_states(flat)
    return um.reshape(lead + um.shape[1:]), up.reshape(lead + up.shape[1:])


def kt_assemble(u_plus, u_minus, f_plus, f_minus, a, dx):
    up, lead = _batched(u_plus, 2)
    um, _ = _batched(u_minus, 2)
    fp, _ = _batched(f_plus, 2)
    fm, _ = _batched(f_minus, 2)
    aa, _ = _batched(a, 1)
    out = _impl.kt_assemble(up, um, fp, fm, aa, float(dx))
    return out.reshape(lead + out.shape[1:])
