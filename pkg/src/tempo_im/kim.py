"""Kicked Ising chain coupled to a probe spin at its left end.

One Floquet period applies the kicks ``W_j = exp(i h Z_j) exp(i g X_j)`` on
every site and then the Ising layer ``P_{j,j+1} = exp(i J Z_j Z_{j+1})``.  The
probe (site 0) couples to bath site 1 through ``P_{0,1}``, which is diagonal
in the probe basis, so the bath influence matrix has the constrained layout
with local index ``(s, sb)`` and ``s = +1`` at index 0.

Bath sites are numbered ``1..L``; in dense vectors site 1 is the most
significant qubit.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .im_core import DenseIM, MpsIM, canonicalize, mps_truncate

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SPIN = np.array([1.0, -1.0])

DENSE_L_LIMIT = int(os.environ.get("TEMPO_IM_MAX_DENSE_L", "14"))
DENSE_IM_T_LIMIT = int(os.environ.get("TEMPO_IM_MAX_DENSE_T", "12"))


@dataclass(frozen=True)
class KimParams:
    g: float
    J: float
    h: float
    g0: float | None = None

    @property
    def probe_kick(self) -> float:
        return self.g if self.g0 is None else self.g0

    @property
    def is_dual_unitary(self) -> bool:
        def on_grid(x):
            return any(math.isclose(abs(x), a, abs_tol=1e-12) for a in (math.pi / 4, 3 * math.pi / 4))

        return on_grid(self.J) and on_grid(self.g)


@dataclass(frozen=True)
class BathInitialState:
    """Product initial state of the bath: tilted in the x-y plane or maximally mixed."""

    kind: str = "tilted"
    phi: float = 0.0

    def __post_init__(self):
        if self.kind not in ("tilted", "maximally_mixed"):
            raise ValueError(f"unknown initial state {self.kind!r}")

    @property
    def is_solvable(self) -> bool:
        return self.kind == "tilted" and math.isclose(math.cos(self.phi) ** 2, 1.0, abs_tol=1e-12)

    def density_matrix(self) -> np.ndarray:
        if self.kind == "maximally_mixed":
            return np.eye(2, dtype=complex) / 2
        e = np.exp(1j * self.phi)
        return 0.5 * np.array([[1, e], [np.conj(e), 1]], dtype=complex)

    def state_vector(self) -> np.ndarray:
        if self.kind != "tilted":
            raise ValueError("maximally mixed state has no state vector")
        return np.array([1, np.exp(-1j * self.phi)], dtype=complex) / math.sqrt(2)


def kick(g: float, h: float) -> np.ndarray:
    """Single-site kick ``exp(i h Z) exp(i g X)``."""
    ex = math.cos(g) * np.eye(2) + 1j * math.sin(g) * SIGMA_X
    return np.diag(np.exp(1j * h * SPIN)) @ ex


def _ising_phases(J: float, L: int) -> np.ndarray:
    """Diagonal of ``prod_j exp(i J Z_j Z_{j+1})`` on ``L`` sites."""
    z = _z_table(L)
    e = np.zeros(2**L)
    for j in range(L - 1):
        e += z[:, j] * z[:, j + 1]
    return np.exp(1j * J * e)


def _z_table(L: int) -> np.ndarray:
    idx = np.arange(2**L)
    bits = (idx[:, None] >> np.arange(L - 1, -1, -1)[None, :]) & 1
    return 1.0 - 2.0 * bits


def _check_L(L: int) -> None:
    if L < 1:
        raise ValueError("need at least one site")
    if L > DENSE_L_LIMIT:
        raise MemoryError(f"L={L} exceeds the dense limit {DENSE_L_LIMIT}")


def _apply_single_site(psi: np.ndarray, op: np.ndarray, L: int) -> np.ndarray:
    """Apply ``op`` to every site of a batch of states with shape ``(2**L, batch)``."""
    batch = psi.shape[1]
    t = psi.reshape((2,) * L + (batch,))
    for j in range(L):
        t = np.moveaxis(np.tensordot(op, t, axes=([1], [j])), 0, j)
    return t.reshape(2**L, batch)


def floquet_operator(params: KimParams, L: int, kick_angles: list[float] | None = None) -> np.ndarray:
    """Dense Floquet operator ``U = prod P prod W`` on ``L`` sites with open ends.

    ``kick_angles`` overrides ``g`` per site (used for a probe with its own kick).
    """
    _check_L(L)
    gs = kick_angles or [params.g] * L
    w = np.array([[1.0 + 0j]])
    for gj in gs:
        w = np.kron(w, kick(gj, params.h))
    return _ising_phases(params.J, L)[:, None] * w


def conditioned_step(params: KimParams, L: int, s: int) -> np.ndarray:
    """Bath evolution over one period given probe spin ``s = +-1``."""
    if s not in (1, -1):
        raise ValueError("probe spin must be +1 or -1")
    u = floquet_operator(params, L)
    boundary = np.exp(1j * params.J * s * _z_table(L)[:, 0])
    return boundary[:, None] * u


def _conditioned_batch(params: KimParams, L: int, psi: np.ndarray) -> np.ndarray:
    """Children ``U_{+1} psi`` and ``U_{-1} psi`` of every column, children interleaved last."""
    psi = _apply_single_site(psi, kick(params.g, params.h), L)
    psi = _ising_phases(params.J, L)[:, None] * psi
    z1 = _z_table(L)[:, 0]
    plus = np.exp(1j * params.J * z1)[:, None] * psi
    minus = np.exp(-1j * params.J * z1)[:, None] * psi
    return np.stack([plus, minus], axis=2).reshape(psi.shape[0], -1)


def dense_im(params: KimParams, T: int, initial: BathInitialState, L: int | None = None) -> DenseIM:
    """Exact constrained IM ``tr(U_{s_T}..U_{s_1} rho U_{sb_1}^+..U_{sb_T}^+)``.

    Forward branches are grown prefix by prefix (each prefix is shared by all
    its extensions) and the IM is their Gram matrix.  ``L`` defaults to ``T``,
    the light-cone size for a semi-infinite chain.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if T == 0:
        return DenseIM(0, "constrained", 2, np.ones(()))
    if T > DENSE_IM_T_LIMIT:
        raise MemoryError(f"T={T} exceeds the dense IM limit {DENSE_IM_T_LIMIT}")
    L = T if L is None else L
    _check_L(L)
    if initial.kind == "tilted":
        v = initial.state_vector()
        psi = np.array([1.0 + 0j])
        for _ in range(L):
            psi = np.kron(psi, v)
        cols = psi[:, None]
        n_vec = 2**L
    else:
        if 2 ** (2 * L + T) > 1 << 28:
            raise MemoryError("maximally mixed dense IM too large")
        # columns of the identity; each branch carries a full operator
        cols = np.eye(2**L, dtype=complex) / math.sqrt(2**L)
        n_vec = 2**L
    batch0 = cols.shape[1]
    cur = cols
    for _ in range(T):
        cur = _conditioned_batch(params, L, cur)
    # cur columns ordered (operator column, s_1, ..., s_T); build vectors per branch
    branches = cur.reshape(n_vec, batch0, 2**T).reshape(n_vec * batch0, 2**T)
    gram = branches.conj().T @ branches  # gram[sb, s] = <psi_sb | psi_s>
    ent = gram.reshape((2,) * (2 * T))
    order = []
    for t in range(T):
        order += [T + t, t]
    ent = ent.transpose(order).reshape((4,) * T)
    return DenseIM(T, "constrained", 2, ent)


# ----------------------------------------------------------------------- LCGA


def initial_column(initial: BathInitialState) -> np.ndarray:
    """Folded single-site initial state, the vector ``rho[z, zb]`` in ``(z, zb)`` order."""
    return initial.density_matrix().reshape(4)


def column_tensors(params: KimParams, T: int) -> np.ndarray:
    """Time-slice tensors of one folded bath column.

    ``out[l, r, x]`` with ``l`` the column's folded spin before the kick,
    ``r`` after the kick (and the index passed to the next column further
    out), ``x`` the folded spin of the neighbour closer to the probe.
    """
    w = kick(params.g, params.h)
    ww = np.einsum("ba,dc->acbd", w, w.conj()).reshape(4, 4)  # [(a,ab),(b,bb)]
    z = SPIN
    ph = np.exp(1j * params.J * (z[:, None, None, None] * z[None, None, :, None] - z[None, :, None, None] * z[None, None, None, :]))
    ph = ph.reshape(4, 4)  # [(x,xb),(b,bb)]
    return ww[:, :, None] * ph.T[None, :, :]


def absorb_column(
    mps: MpsIM,
    params: KimParams,
    initial: BathInitialState,
    chi_max: int | None = None,
    svd_tol: float = 0.0,
) -> MpsIM:
    """IM seen by the next site inward, given the IM ``mps`` seen by this site."""
    T = mps.T
    col = column_tensors(params, T)
    rho = initial_column(initial)
    trace = np.eye(2).reshape(4)
    new = []
    for t, a in enumerate(mps.tensors):
        # n[(l, chi_l), x, (r, chi_r)] = col[l, r, x] * a[chi_l, r, chi_r]
        n = np.einsum("lrx,arb->laxrb", col, a)
        cl, cr = a.shape[0], a.shape[2]
        n = n.reshape(4 * cl, 4, 4 * cr)
        if t == 0:
            n = np.tensordot(rho, n.reshape(4, cl, 4, 4 * cr), axes=([0], [0]))
        if t == T - 1:
            n = np.tensordot(n.reshape(n.shape[0], 4, 4, cr), trace, axes=([2], [0]))
            n = n.reshape(n.shape[0], 4, cr)
        new.append(n)
    out = canonicalize(MpsIM(T, 2, "constrained", tuple(new)))
    if chi_max is not None or svd_tol > 0:
        out = mps_truncate(out, chi_max, svd_tol)
    return out


@dataclass(frozen=True)
class LcgaResult:
    mps: MpsIM
    discarded: tuple[tuple[float, ...], ...]  # per absorbed column, per cut
    closures: tuple[complex, ...]


def lcga_build(
    params: KimParams,
    T: int,
    initial: BathInitialState,
    chi_max: int | None = None,
    svd_tol: float = 0.0,
    L: int | None = None,
    check_closure: bool = False,
) -> MpsIM | LcgaResult:
    """Temporal MPS of the IM by absorbing bath columns from site ``L = T`` inward.

    Each intermediate object is the IM of the semi-infinite chain starting at
    the current site.  With ``check_closure`` an :class:`LcgaResult` carrying
    per-column discarded weights and trace closures is returned.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if chi_max is not None and chi_max < 1:
        raise ValueError("chi_max must be >= 1")
    L = T if L is None else L
    ones = np.zeros((1, 4, 1), dtype=complex)
    ones[0, :, 0] = 1.0
    mps = MpsIM(T, 2, "constrained", tuple(ones.copy() for _ in range(T)))
    disc, clos = [], []
    for _ in range(L):
        mps = absorb_column(mps, params, initial, chi_max, svd_tol)
        disc.append(mps.discarded or tuple(0.0 for _ in range(T + 1)))
        if check_closure:
            clos.append(mps.closure())
    if check_closure:
        return LcgaResult(mps, tuple(disc), tuple(clos))
    return replace(mps, discarded=tuple(np.sum(disc, axis=0)))


# ------------------------------------------------------------------ ED oracle


def ed_autocorrelator(params: KimParams, T: int, initial: BathInitialState, L: int | None = None) -> np.ndarray:
    """``C(t)`` for ``t = 1..T``: Z of the probe after period 1 and after period ``t``.

    Exact density-matrix evolution of probe plus ``L`` (default ``T + 1``)
    bath sites, probe maximally mixed.
    """
    L = T + 1 if L is None else L
    _check_L(L + 1)
    u = floquet_operator(params, L + 1, [params.probe_kick] + [params.g] * L)
    rho_b = np.array([[1.0 + 0j]])
    for _ in range(L):
        rho_b = np.kron(rho_b, initial.density_matrix())
    rho = np.kron(np.eye(2) / 2, rho_b)
    z0 = np.kron(SIGMA_Z, np.eye(2**L))
    rho = u @ rho @ u.conj().T
    x = z0 @ rho  # forward-branch insertion
    out = []
    for t in range(1, T + 1):
        out.append(np.trace(z0 @ x))
        x = u @ x @ u.conj().T
    return np.array(out)
