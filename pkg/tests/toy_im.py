"""Test helper: general-form IM of a probe coupled to a bath by given unitaries."""

import numpy as np

from tempo_im.im_core import DenseIM


def general_im(unitaries, d, rho_b):
    """Entries ``tr_B(<s_T|U_T|q_T> ... rho_B ... <q_T|U_T^+|s_T>)`` with per-step index ``(q, s, qb, sb)``."""
    D = rho_b.shape[0]
    m = np.asarray(rho_b, dtype=complex)
    for u in unitaries:
        a = u.reshape(d, D, d, D)  # (s, i, q, j)
        m = np.einsum("siqj,...jk,tlrk->...qsrtil", a, m, a.conj())
        shape = m.shape[:-6] + (d**4, D, D)
        m = m.reshape(shape)
    return DenseIM(len(unitaries), "general", d, np.trace(m, axis1=-2, axis2=-1))
