"""Pure numpy versions of the stencil kernels in ``_kernels.pyx``.

Both backends evaluate the same floating-point expressions in the same order,
so results agree bit for bit.
"""
import numpy as np

FLAT_TOL = 1e-14


def interface_states(ue):
    """Minmod-limited interface values from a ghost-padded array ``(B, n+4, p)``.

    Returns ``(u_minus, u_plus)``, each ``(B, n+1, p)``: the left and right
    traces at the interfaces between consecutive cells, boundary ones included.
    """
    dl = ue[:, 1:-1] - ue[:, :-2]
    dr = ue[:, 2:] - ue[:, 1:-1]
    flat = np.abs(dr) < FLAT_TOL
    r = dl / np.where(flat, 1.0, dr)
    psi = np.maximum(0.0, np.minimum(np.minimum(r, 0.5 * (1.0 + r)), 1.0))
    s = np.where(flat, 0.0, psi * dr)
    u_minus = ue[:, 1:-2] + 0.5 * s[:, :-1]
    u_plus = ue[:, 2:-1] - 0.5 * s[:, 1:]
    return u_minus, u_plus


def kt_assemble(u_plus, u_minus, f_plus, f_minus, a, dx):
    """Cell tendencies ``-(H_{i+1/2} - H_{i-1/2}) / dx`` from interface data.

    ``a`` has shape ``(B, n+1)``; all other arrays are ``(B, n+1, p)``.
    """
    h = 0.5 * (f_plus + f_minus) - 0.5 * a[:, :, None] * (u_plus - u_minus)
    return -(h[:, 1:] - h[:, :-1]) / dx
