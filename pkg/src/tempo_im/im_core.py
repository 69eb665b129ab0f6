"""Influence matrices as dense tensors and temporal matrix-product states.

Two index layouts are supported per time step:

``general``
    composite index ``(q, s, qb, sb)`` of local dimension ``d**4``, where ``q``
    is the probe input, ``s`` the output, and barred indices belong to the
    backward branch.  Flattened as ``((q*d + s)*d + qb)*d + sb``.
``constrained``
    composite index ``(s, sb)`` of local dimension ``d**2`` for couplings that
    are diagonal in the probe basis (input equals output).  Flattened as
    ``s*d + sb``; for qubits index 0 is ``s=+1`` and 1 is ``s=-1``.

Influence matrices are stored unnormalized.  Schmidt spectra are always
normalized.
"""

from __future__ import annotations

import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from ._csvio import write_csv

FORMS = ("general", "constrained")
# singular values below this fraction of the largest are numerical zeros
RANK_RTOL = 1e-13


def local_dim(d: int, form: str) -> int:
    if form not in FORMS:
        raise ValueError(f"unknown IM form {form!r}")
    return d**4 if form == "general" else d**2


def closure_vector(d: int, form: str) -> np.ndarray:
    """Per-step closure: trace the output, feed a maximally mixed input."""
    if form == "general":
        c = np.einsum("ab,xy->axby", np.eye(d), np.eye(d)).reshape(-1) / d
    else:
        c = np.eye(d).reshape(-1) / d
    return c.astype(complex)


def conjugation_permutation(d: int, form: str) -> np.ndarray:
    """Local-index permutation exchanging forward and backward branches."""
    if form == "general":
        idx = np.arange(d**4).reshape(d, d, d, d).transpose(2, 3, 0, 1)
    else:
        idx = np.arange(d**2).reshape(d, d).T
    return idx.reshape(-1)


@dataclass(frozen=True)
class DenseIM:
    T: int
    form: str
    d: int
    entries: np.ndarray

    def __post_init__(self):
        shape = (local_dim(self.d, self.form),) * self.T
        ent = np.asarray(self.entries, dtype=complex)
        if ent.size != math.prod(shape):
            raise ValueError(f"entries of size {ent.size} do not fit shape {shape}")
        object.__setattr__(self, "entries", ent.reshape(shape))

    @property
    def local_dim(self) -> int:
        return local_dim(self.d, self.form)

    def closure(self) -> complex:
        """Contract every step with :func:`closure_vector` (1 for a normalized process)."""
        c = closure_vector(self.d, self.form)
        out = self.entries
        for _ in range(self.T):
            out = np.tensordot(out, c, axes=([0], [0]))
        return complex(out)

    def branch_conjugate(self) -> "DenseIM":
        """Entries with forward and backward indices exchanged, complex conjugated."""
        perm = conjugation_permutation(self.d, self.form)
        ent = self.entries
        for ax in range(self.T):
            ent = np.take(ent, perm, axis=ax)
        return replace(self, entries=ent.conj())

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.branch_conjugate().entries - self.entries), initial=0.0))


def pd_im(T: int, d: int = 2, form: str = "constrained") -> DenseIM:
    """Perfectly Markovian IM: perfect depolarizer (general) or dephaser (constrained)."""
    if T < 0:
        raise ValueError("T must be nonnegative")
    if form == "general":
        site = np.einsum("ab,xy->axby", np.eye(d), np.eye(d)).reshape(-1) / d
    else:
        site = np.eye(d).reshape(-1)
    ent = np.ones(())
    for _ in range(T):
        ent = np.multiply.outer(ent, site)
    return DenseIM(T, form, d, ent)


def vectorize(im: DenseIM) -> np.ndarray:
    return im.entries.reshape(-1)


# ----------------------------------------------------------------------- SVD


def svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD with a fixed gauge: the largest-magnitude entry of each left vector is real positive."""
    try:
        u, s, vh = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        u, s, vh = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")
    if u.size:
        pivot = np.argmax(np.abs(u), axis=0)
        ph = u[pivot, np.arange(u.shape[1])]
        ph = np.where(np.abs(ph) > 0, ph / np.abs(ph), 1.0)
        u = u * ph.conj()[None, :]
        vh = vh * ph[:, None]
    return u, s, vh


def _numerical_rank(s: np.ndarray) -> int:
    if s.size == 0 or s[0] == 0:
        return min(1, s.size)
    return int(np.count_nonzero(s > RANK_RTOL * s[0]))


# ----------------------------------------------------------------------- MPS


@dataclass(frozen=True)
class MpsIM:
    """Temporal MPS of an influence matrix.

    ``tensors[t]`` has axes ``(left bond, local index, right bond)``.  When
    ``canonical`` is set the chain is right-orthonormal except for the first
    tensor, which carries the norm, and ``singular_values[p]`` holds the
    (unnormalized) Schmidt values of the cut after ``p`` steps, ``p = 0..T``.
    ``discarded`` lists the squared weight dropped at each cut by the
    operation that produced this object.
    """

    T: int
    d: int
    form: str
    tensors: tuple[np.ndarray, ...]
    canonical: bool = False
    singular_values: tuple[np.ndarray, ...] | None = None
    discarded: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        tensors = tuple(np.asarray(a, dtype=complex) for a in self.tensors)
        if len(tensors) != self.T:
            raise ValueError("number of tensors must equal T")
        loc = local_dim(self.d, self.form)
        for i, a in enumerate(tensors):
            if a.ndim != 3 or a.shape[1] != loc:
                raise ValueError(f"tensor {i} has shape {a.shape}, expected (chi, {loc}, chi)")
            if i and tensors[i - 1].shape[2] != a.shape[0]:
                raise ValueError(f"bond mismatch between sites {i - 1} and {i}")
        if tensors and (tensors[0].shape[0] != 1 or tensors[-1].shape[2] != 1):
            raise ValueError("boundary bonds must have dimension 1")
        object.__setattr__(self, "tensors", tensors)

    @property
    def bond_dims(self) -> list[int]:
        """Bond dimension at each cut ``p = 0..T``."""
        if not self.tensors:
            return [1]
        return [a.shape[0] for a in self.tensors] + [1]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims)

    def to_dense(self) -> DenseIM:
        out = np.ones((1, 1), dtype=complex)
        for a in self.tensors:
            out = np.tensordot(out, a, axes=([-1], [0]))
        return DenseIM(self.T, self.form, self.d, out.reshape(out.shape[1:-1]) if self.T else out[0, 0])

    def norm2(self) -> float:
        env = np.ones((1, 1), dtype=complex)
        for a in self.tensors:
            env = np.einsum("ab,aic,bid->cd", env, a, a.conj())
        return float(env.real[0, 0])

    def closure(self) -> complex:
        c = closure_vector(self.d, self.form)
        env = np.ones((1,), dtype=complex)
        for a in self.tensors:
            env = env @ np.tensordot(a, c, axes=([1], [0]))
        return complex(env[0]) if self.T else 1.0 + 0j

    def canonicalize(self) -> "MpsIM":
        return canonicalize(self)


def mps_from_dense(im: DenseIM) -> MpsIM:
    """Exact MPS by successive SVDs (numerically zero singular values dropped)."""
    loc = im.local_dim
    tensors = []
    rest = im.entries.reshape(1, -1)
    for _ in range(im.T - 1):
        chi = rest.shape[0]
        u, s, vh = svd(rest.reshape(chi * loc, -1))
        n = _numerical_rank(s)
        tensors.append(u[:, :n].reshape(chi, loc, n))
        rest = s[:n, None] * vh[:n]
    if im.T:
        tensors.append(rest.reshape(rest.shape[0], loc, 1))
    return canonicalize(MpsIM(im.T, im.d, im.form, tuple(tensors)))


def canonicalize(mps: MpsIM) -> MpsIM:
    """Right-canonical form with Schmidt values at every cut."""
    T = mps.T
    if T == 0:
        return replace(mps, canonical=True, singular_values=(np.ones(1),))
    ts = list(mps.tensors)
    loc = ts[0].shape[1]
    for i in range(T - 1):
        chi_l, _, chi_r = ts[i].shape
        q, r = np.linalg.qr(ts[i].reshape(chi_l * loc, chi_r))
        ts[i] = q.reshape(chi_l, loc, q.shape[1])
        ts[i + 1] = np.tensordot(r, ts[i + 1], axes=([1], [0]))
    norm = math.sqrt(max(float(np.linalg.norm(ts[-1]) ** 2), 0.0))
    svals: list[np.ndarray] = [None] * (T + 1)
    svals[0] = np.array([norm])
    svals[T] = np.array([norm])
    for i in range(T - 1, 0, -1):
        chi_l, _, chi_r = ts[i].shape
        u, s, vh = svd(ts[i].reshape(chi_l, loc * chi_r))
        n = max(_numerical_rank(s), 1)
        ts[i] = vh[:n].reshape(n, loc, chi_r)
        ts[i - 1] = np.tensordot(ts[i - 1], u[:, :n] * s[None, :n], axes=([2], [0]))
        svals[i] = s[:n]
    return replace(mps, tensors=tuple(ts), canonical=True, singular_values=tuple(svals))


def mps_truncate(mps: MpsIM, chi_max: int | None = None, svd_tol: float = 0.0) -> MpsIM:
    """Truncate every bond to ``chi_max`` and a relative discarded weight ``svd_tol``.

    The sweep runs left to right from the right-canonical form, so the
    discarded pieces are mutually orthogonal and the squared Frobenius error
    equals ``sum(result.discarded)``.  Nothing is renormalized.
    """
    if chi_max is not None and chi_max < 1:
        raise ValueError("chi_max must be >= 1")
    if not mps.canonical:
        raise ValueError("mps_truncate needs a canonicalized MPS")
    chi_max = chi_max or 10**18

    def n_keep(s: np.ndarray) -> int:
        w = s**2
        total = w.sum()
        tail = np.cumsum(w[::-1])[::-1]  # tail[i] = weight of s[i:]
        n = len(s)
        if svd_tol > 0 and total > 0:
            ok = np.nonzero(tail <= svd_tol * total)[0]
            if ok.size:
                n = max(int(ok[0]), 1)
        return min(n, chi_max)

    if all(n_keep(s) == len(s) for s in mps.singular_values[1:-1]):
        return replace(mps, discarded=tuple(0.0 for _ in range(mps.T + 1)))

    ts = list(mps.tensors)
    loc = ts[0].shape[1]
    disc = [0.0] * (mps.T + 1)
    for i in range(mps.T - 1):
        chi_l, _, chi_r = ts[i].shape
        u, s, vh = svd(ts[i].reshape(chi_l * loc, chi_r))
        n = n_keep(s)
        disc[i + 1] = float(np.sum(s[n:] ** 2))
        ts[i] = u[:, :n].reshape(chi_l, loc, n)
        ts[i + 1] = np.tensordot(s[:n, None] * vh[:n], ts[i + 1], axes=([1], [0]))
    out = canonicalize(replace(mps, tensors=tuple(ts), canonical=False))
    return replace(out, discarded=tuple(disc))


# ----------------------------------------------------------------- spectra


@dataclass(frozen=True)
class SchmidtSpectrum:
    p: int
    values: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        vals = np.sort(np.abs(np.asarray(self.values, dtype=float)))[::-1]
        object.__setattr__(self, "values", vals)


def _normalized(p: int, s: np.ndarray) -> SchmidtSpectrum:
    s = np.asarray(s, dtype=float)
    nrm = math.sqrt(float(np.sum(s**2)))
    if nrm == 0:
        raise ValueError("zero influence matrix has no Schmidt spectrum")
    return SchmidtSpectrum(p, s / nrm, True)


def schmidt_spectrum(im: DenseIM | MpsIM, p: int) -> SchmidtSpectrum:
    """Schmidt values of the normalized vectorized IM for past = steps ``1..p``."""
    if not 0 <= p <= im.T:
        raise ValueError(f"cut p={p} outside [0, {im.T}]")
    if isinstance(im, MpsIM):
        mps = im if im.canonical else canonicalize(im)
        return _normalized(p, mps.singular_values[p])
    loc = im.local_dim
    s = scipy.linalg.svd(im.entries.reshape(loc**p, -1), compute_uv=False)
    return _normalized(p, s[: _numerical_rank(s)])


def temporal_entropy(spec: SchmidtSpectrum, alpha: float = 1.0, base: float = 2.0) -> float:
    """Renyi-``alpha`` entropy of the squared Schmidt values (von Neumann at ``alpha=1``)."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    lam2 = spec.values**2
    lam2 = lam2[lam2 > 0]
    if alpha == 1:
        s = -np.sum(lam2 * np.log(lam2))
    elif alpha == 0:
        s = math.log(len(lam2))
    elif math.isinf(alpha):
        s = -np.log(lam2.max())
    else:
        s = np.log(np.sum(lam2**alpha)) / (1 - alpha)
    return max(0.0, float(s) / math.log(base))


def spectra_rows(mps: MpsIM, alphas: Sequence[float] = (1.0, 2.0)):
    """Rows ``(p, chi, S_alpha...)`` for every cut."""
    rows = []
    for p in range(mps.T + 1):
        sp = schmidt_spectrum(mps, p)
        rows.append([p, len(sp.values)] + [temporal_entropy(sp, a, base=mps.d) for a in alphas])
    return rows


def write_spectra_csv(path, mps: MpsIM, alphas: Sequence[float] = (1.0, 2.0), meta=None) -> None:
    cols = ["p", "chi"] + [f"S_{a:g}" for a in alphas]
    write_csv(path, cols, spectra_rows(mps, alphas), meta)


def write_singular_values_csv(path, mps: MpsIM, meta=None) -> None:
    mps = mps if mps.canonical else canonicalize(mps)
    rows = []
    for p, s in enumerate(mps.singular_values):
        sp = _normalized(p, s)
        rows += [[p, i, float(v)] for i, v in enumerate(sp.values)]
    write_csv(path, ["p", "index", "lambda"], rows, meta)


# ---------------------------------------------------------- coarse graining


@dataclass(frozen=True)
class CoarseGrainMask:
    """Steps to keep and the probe unitaries applied at removed steps.

    ``V`` is a single ``d x d`` unitary or one per time step; only entries at
    removed steps are used.
    """

    keep: tuple[bool, ...]
    V: np.ndarray | tuple[np.ndarray, ...] | None = None

    @property
    def T(self) -> int:
        return len(self.keep)

    @property
    def n_cg(self) -> float:
        return sum(self.keep) / len(self.keep) if self.keep else 1.0

    def unitary_at(self, t: int, d: int) -> np.ndarray:
        if self.V is None:
            return np.eye(d, dtype=complex)
        v = np.asarray(self.V[t] if isinstance(self.V, (tuple, list)) else self.V, dtype=complex)
        if not np.allclose(v @ v.conj().T, np.eye(d), atol=1e-12):
            raise ValueError(f"V at step {t + 1} is not unitary")
        return v


def uniform_mask(T: int, n_cg: float, V=None) -> CoarseGrainMask:
    """Keep steps ``ceil(j / n_cg)`` for ``j = 1..round(n_cg T)`` (1-based)."""
    if not 0 < n_cg <= 1:
        raise ValueError("n_cg must lie in (0, 1]")
    n_keep = int(math.floor(n_cg * T + 0.5 + 1e-12))
    kept = {int(math.ceil(j / n_cg - 1e-9)) for j in range(1, n_keep + 1)}
    return CoarseGrainMask(tuple(t in kept for t in range(1, T + 1)), V)


def coarse_grain(im: DenseIM | MpsIM, mask: CoarseGrainMask):
    """Remove the masked steps by feeding their output through ``V`` into the next step.

    A removed step merges with the following kept step, whose input becomes
    the removed step's input.  Removed steps after the last kept step are
    closed (output traced, maximally mixed input).
    """
    if mask.T != im.T:
        raise ValueError("mask length differs from T")
    if not any(mask.keep):
        raise ValueError("coarse-graining must keep at least one step")
    if isinstance(im, DenseIM):
        return coarse_grain(mps_from_dense(im), mask).to_dense()
    d, form = im.d, im.form
    for t, k in enumerate(mask.keep):
        v = mask.unitary_at(t, d)
        if not k and form == "constrained" and np.max(np.abs(v - np.diag(np.diag(v)))) > 1e-12:
            raise ValueError("constrained IMs admit only diagonal V")
    out: list[np.ndarray] = []
    pending = None  # general: (a, q, qb, q', qb', b); constrained: (a, x, xb, b)
    for t, a in enumerate(im.tensors):
        chi_l, _, chi_r = a.shape
        if form == "general":
            a6 = a.reshape(chi_l, d, d, d, d, chi_r)
            if pending is not None:
                a6 = np.einsum("aijklb,bkxlyc->aixjyc", pending, a6)
        else:
            a4 = a.reshape(chi_l, d, d, chi_r)
            if pending is not None:
                a4 = np.einsum("axyb,bxyc->axyc", pending, a4)
        merged = a6 if form == "general" else a4
        if mask.keep[t]:
            out.append(merged.reshape(merged.shape[0], -1, chi_r))
            pending = None
            continue
        v = mask.unitary_at(t, d)
        if form == "general":
            pending = np.einsum("aqsptb,xs,yt->aqpxyb", merged, v, v.conj())
        else:
            ph = np.outer(np.diag(v), np.diag(v).conj())
            pending = merged * ph[None, :, :, None]
    if pending is not None:
        if form == "general":
            closed = np.einsum("aqqxxb->ab", pending) / d
        else:
            closed = np.einsum("axxb->ab", pending) / d
        out[-1] = np.tensordot(out[-1], closed, axes=([2], [0]))
    return canonicalize(MpsIM(len(out), d, form, tuple(out)))


# -------------------------------------------------------------- correlators


def _as_mps(im: DenseIM | MpsIM) -> MpsIM:
    return im if isinstance(im, MpsIM) else mps_from_dense(im)


def contract_correlator(
    im: DenseIM | MpsIM,
    V: np.ndarray | Sequence[np.ndarray] | None = None,
    insertions: Sequence[tuple[int, np.ndarray]] = (),
    rho0: np.ndarray | None = None,
) -> complex:
    """Multi-time probe correlator ``<O_N(t_N) ... O_1(t_1)>``.

    The probe starts in ``rho0`` (maximally mixed by default) and enters step
    1.  After step ``t`` the operator inserted at ``t`` (if any) acts on the
    forward branch, then ``V`` (or ``V[t-1]``) acts on both branches.  After
    step ``T`` the probe is traced.
    """
    mps = _as_mps(im)
    d, T = mps.d, mps.T
    times = [t for t, _ in insertions]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("insertion times must be strictly increasing; compose operators at equal times")
    if times and (times[0] < 1 or times[-1] > T):
        raise ValueError(f"insertion times must lie in [1, {T}]")
    ops = {t: np.asarray(o, dtype=complex) for t, o in insertions}
    if V is None:
        vs = [np.eye(d, dtype=complex)] * T
    elif isinstance(V, (list, tuple)):
        vs = [np.asarray(v, dtype=complex) for v in V]
    else:
        vs = [np.asarray(V, dtype=complex)] * T
    env = (np.eye(d, dtype=complex) / d if rho0 is None else np.asarray(rho0, dtype=complex))[None]
    for t, a in enumerate(mps.tensors, start=1):
        chi_l, _, chi_r = a.shape
        if mps.form == "general":
            env = np.einsum("aqp,aqsptb->bst", env, a.reshape(chi_l, d, d, d, d, chi_r))
        else:
            env = np.einsum("ast,astb->bst", env, a.reshape(chi_l, d, d, chi_r))
        if t in ops:
            env = np.einsum("xs,bst->bxt", ops[t], env)
        if t < T:
            v = vs[t - 1]
            env = np.einsum("xs,bst,yt->bxy", v, env, v.conj())
    return complex(np.trace(env[0]))


# ------------------------------------------------------------------- storage

_MAGIC = b"TEMPOIM\x00"
_VERSION = 1


def save_mps(path, mps: MpsIM) -> None:
    """Versioned little-endian container: header, bond dims, complex128 tensors, Schmidt values."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        has_sv = mps.singular_values is not None
        fh.write(struct.pack("<HBBBII", _VERSION, FORMS.index(mps.form), int(mps.canonical), int(has_sv), mps.d, mps.T))
        fh.write(np.asarray(mps.bond_dims, dtype="<u8").tobytes())
        for a in mps.tensors:
            fh.write(np.ascontiguousarray(a, dtype="<c16").tobytes())
        if has_sv:
            fh.write(np.asarray([len(s) for s in mps.singular_values], dtype="<u8").tobytes())
            for s in mps.singular_values:
                fh.write(np.asarray(s, dtype="<f8").tobytes())


def load_mps(path) -> MpsIM:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise ValueError("not an influence-matrix container")
    off = 8
    version, form_i, canon, has_sv, d, T = struct.unpack_from("<HBBBII", data, off)
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}")
    off += struct.calcsize("<HBBBII")
    form = FORMS[form_i]
    loc = local_dim(d, form)
    bonds = np.frombuffer(data, "<u8", T + 1, off).astype(int)
    off += 8 * (T + 1)
    tensors = []
    for i in range(T):
        n = bonds[i] * loc * bonds[i + 1]
        tensors.append(np.frombuffer(data, "<c16", n, off).reshape(bonds[i], loc, bonds[i + 1]).copy())
        off += 16 * n
    svals = None
    if has_sv:
        lens = np.frombuffer(data, "<u8", T + 1, off).astype(int)
        off += 8 * (T + 1)
        svals = []
        for n in lens:
            svals.append(np.frombuffer(data, "<f8", n, off).copy())
            off += 8 * n
        svals = tuple(svals)
    return MpsIM(T, d, form, tuple(tensors), bool(canon), svals)
