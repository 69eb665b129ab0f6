"""Permutation combinatorics and replica transfer matrices for Haar averages.

Averages of ``k`` copies of a Haar unitary and its conjugate are expanded over
pairs of permutations of ``k`` replicas.  This module provides the permutation
states, their Gram matrix, the Weingarten matrix (its exact inverse) and the
per-time-step transfer matrices ``CT = C_B @ T_X`` used by the toy bath.

All heavy lifting happens in :mod:`mpmath` so that entries such as ``q**k``
never overflow; the public float API converts at the end.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np

SUPPORTED_K = (1, 2, 4)
DEFAULT_DPS = 40


@dataclass(frozen=True)
class Permutation:
    """A permutation of ``{0, ..., k-1}`` stored by its images."""

    images: tuple[int, ...]

    def __post_init__(self):
        images = tuple(int(i) for i in self.images)
        if sorted(images) != list(range(len(images))):
            raise ValueError(f"not a bijection on range({len(images)}): {images}")
        object.__setattr__(self, "images", images)

    @classmethod
    def identity(cls, k: int) -> "Permutation":
        return cls(tuple(range(k)))

    @classmethod
    def from_cycles(cls, k: int, *cycles: tuple[int, ...]) -> "Permutation":
        """Build from disjoint cycles, e.g. ``from_cycles(4, (0, 1), (2, 3))``."""
        images = list(range(k))
        for cyc in cycles:
            for a, b in zip(cyc, cyc[1:] + cyc[:1]):
                images[a] = b
        return cls(tuple(images))

    @property
    def k(self) -> int:
        return len(self.images)

    def __call__(self, i: int) -> int:
        return self.images[i]

    def __mul__(self, other: "Permutation") -> "Permutation":
        # (self * other)(i) = self(other(i))
        if other.k != self.k:
            raise ValueError("replica counts differ")
        return Permutation(tuple(self.images[j] for j in other.images))

    def inverse(self) -> "Permutation":
        inv = [0] * self.k
        for i, j in enumerate(self.images):
            inv[j] = i
        return Permutation(tuple(inv))

    def cycles(self) -> list[tuple[int, ...]]:
        seen = [False] * self.k
        out = []
        for start in range(self.k):
            if seen[start]:
                continue
            cyc = []
            i = start
            while not seen[i]:
                seen[i] = True
                cyc.append(i)
                i = self.images[i]
            out.append(tuple(cyc))
        return out

    def cycle_count(self) -> int:
        return len(self.cycles())

    def length(self) -> int:
        """Minimal number of transpositions, ``k - cycle_count``."""
        return self.k - self.cycle_count()

    def cycle_type(self) -> tuple[int, ...]:
        return tuple(sorted((len(c) for c in self.cycles()), reverse=True))


def _check_k(k: int) -> None:
    if k not in SUPPORTED_K:
        raise ValueError(f"replica count k={k} not supported; use one of {SUPPORTED_K}")


@lru_cache(maxsize=None)
def enumerate_permutations(k: int) -> tuple[Permutation, ...]:
    """All ``k!`` permutations in lexicographic order (identity first)."""
    _check_k(k)
    return tuple(Permutation(p) for p in itertools.permutations(range(k)))


@lru_cache(maxsize=None)
def _relative_cycles(k: int) -> np.ndarray:
    """``out[a, b] = cycle_count(perms[a]^-1 * perms[b])``."""
    perms = enumerate_permutations(k)
    out = np.empty((len(perms), len(perms)), dtype=int)
    for a, s in enumerate(perms):
        s_inv = s.inverse()
        for b, t in enumerate(perms):
            out[a, b] = (s_inv * t).cycle_count()
    return out


def boundary_permutation(k: int, boundary: str) -> Permutation:
    """Probe pairing at a time step.

    ``"I"`` is the identity pairing.  ``"S"`` pairs neighbouring replicas,
    ``(0 1)`` for k=2 and ``(0 1)(2 3)`` for k=4; this is the pairing that
    produces the squared norm.  ``"F"`` (k=4 only) is ``(0 3)(1 2)``, the
    pairing that squares the reduced density matrix of the future.
    """
    _check_k(k)
    if boundary == "I":
        return Permutation.identity(k)
    if boundary == "S":
        if k == 1:
            raise ValueError("swap pairing needs k >= 2")
        return Permutation.from_cycles(k, *[(2 * i, 2 * i + 1) for i in range(k // 2)])
    if boundary == "F":
        if k != 4:
            raise ValueError("the future pairing is defined for k=4 only")
        return Permutation.from_cycles(4, (0, 3), (1, 2))
    raise ValueError(f"unknown boundary {boundary!r}; expected 'S', 'F' or 'I'")


@dataclass(frozen=True)
class GramMatrix:
    """Overlaps ``<sigma|tau> = q**cycle_count(tau^-1 sigma)`` of permutation states."""

    k: int
    q: float
    entries: np.ndarray


@dataclass(frozen=True)
class WeingartenMatrix:
    k: int
    q: float
    entries: np.ndarray


@dataclass(frozen=True)
class TransferMatrixSpec:
    """One averaged time step of a random-unitary bath coupled to a probe.

    The gate acts on probe (dimension ``d``), the incoming bath (``D_B``) and,
    for a growing bath, a fresh maximally mixed register of dimension
    ``extra_dim``.  ``traced_dim`` removes a register of that dimension from
    the bath after the gate (shrinking bath).  Non-integer ``extra_dim`` and
    ``traced_dim`` are accepted as analytic continuations.
    """

    k: int
    d: float
    D_B: float
    boundary: str = "S"
    extra_dim: float | None = None
    traced_dim: float | None = None

    @property
    def q(self) -> float:
        return self.d * self.D_B * (self.extra_dim or 1)

    @property
    def D_out(self) -> float:
        return self.D_B * (self.extra_dim or 1) / (self.traced_dim or 1)


def _mpf(x) -> mpmath.mpf:
    return mpmath.mpf(x) if not isinstance(x, mpmath.mpf) else x


def gram_mp(k: int, q) -> mpmath.matrix:
    """Gram matrix in the current mpmath precision."""
    _check_k(k)
    cyc = _relative_cycles(k)
    q = _mpf(q)
    powers = [q**c for c in range(k + 1)]
    n = cyc.shape[0]
    out = mpmath.matrix(n, n)
    for a in range(n):
        for b in range(n):
            out[a, b] = powers[cyc[a, b]]
    return out


def weingarten_mp(k: int, q) -> mpmath.matrix:
    _check_k(k)
    if q < k:
        raise ValueError(f"Gram matrix singular for q={q} < k={k}; pseudo-inverse unsupported")
    return mpmath.inverse(gram_mp(k, q))


def averaged_gate_mp(k: int, q, extra_dim=None) -> mpmath.matrix:
    """Coefficients ``M[tau, sigma]`` of the Haar-averaged gate with open probe legs.

    The average of ``k`` copies of ``U (x) U*`` equals
    ``sum M[tau, sigma] |tau><sigma|`` on the joint probe-bath replica space,
    where ``q`` is the joint gate dimension.  With ``extra_dim`` a maximally
    mixed register of that dimension is fed into the input side and is part of
    ``q``.
    """
    perms = enumerate_permutations(k)
    wg = weingarten_mp(k, q)
    if extra_dim is None:
        return wg
    de = _mpf(extra_dim)
    n = len(perms)
    out = mpmath.matrix(n, n)
    for b, s in enumerate(perms):
        w = de ** (s.cycle_count() - k)
        for a in range(n):
            out[a, b] = wg[a, b] * w
    return out


def chain_gates_mp(first: mpmath.matrix, second: mpmath.matrix, k: int, q_mid) -> mpmath.matrix:
    """Apply ``first`` then ``second`` with all legs in between connected.

    ``q_mid`` is the dimension of the legs joining the two gates.
    """
    return second * gram_mp(k, q_mid) * first


def averaged_gate(k: int, q: float, extra_dim: float | None = None) -> np.ndarray:
    with mpmath.workdps(DEFAULT_DPS + int(k * math.log10(max(q, 10)))):
        return _to_numpy(averaged_gate_mp(k, _mpf(q), extra_dim))


def transfer_matrix_mp(spec: TransferMatrixSpec) -> mpmath.matrix:
    """``CT = C_B(D_out) @ T_X`` in the current mpmath precision."""
    k = spec.k
    perms = enumerate_permutations(k)
    pi = boundary_permutation(k, spec.boundary)
    pi_inv = pi.inverse()
    d = _mpf(spec.d)
    wg = weingarten_mp(k, _mpf(spec.d) * _mpf(spec.D_B) * _mpf(spec.extra_dim or 1))
    probe = [d ** (pi_inv * t).cycle_count() for t in perms]
    cycles = [t.cycle_count() for t in perms]
    inp = [mpmath.mpf(1)] * len(perms)
    if spec.extra_dim is not None:
        de = _mpf(spec.extra_dim)
        inp = [de ** (c - k) for c in cycles]
    out = [mpmath.mpf(1)] * len(perms)
    if spec.traced_dim is not None:
        dt = _mpf(spec.traced_dim)
        out = [dt**c for c in cycles]
    n = len(perms)
    t_x = mpmath.matrix(n, n)
    for a in range(n):
        for b in range(n):
            t_x[a, b] = wg[a, b] * probe[a] * probe[b] * inp[b] * out[a]
    d_out = _mpf(spec.D_B) * _mpf(spec.extra_dim or 1) / _mpf(spec.traced_dim or 1)
    return gram_mp(k, d_out) * t_x


def _to_numpy(m: mpmath.matrix) -> np.ndarray:
    return np.array([[float(m[i, j]) for j in range(m.cols)] for i in range(m.rows)])


def gram_matrix(k: int, q: float) -> GramMatrix:
    if q < 1:
        raise ValueError("q must be >= 1")
    with mpmath.workdps(DEFAULT_DPS):
        entries = _to_numpy(gram_mp(k, q))
    return GramMatrix(k, q, entries)


def weingarten_matrix(k: int, q: float) -> WeingartenMatrix:
    with mpmath.workdps(DEFAULT_DPS + 8 * k):
        entries = _to_numpy(weingarten_mp(k, q))
    return WeingartenMatrix(k, q, entries)


def transfer_matrix(spec: TransferMatrixSpec) -> np.ndarray:
    """Real ``k! x k!`` matrix ``CT`` (row = output permutation)."""
    # Intermediate entries scale like q**k; the product CT stays O(d**k).
    dps = DEFAULT_DPS + int(spec.k * math.log10(max(spec.q, 10)))
    with mpmath.workdps(dps):
        return _to_numpy(transfer_matrix_mp(spec))


def leading_spectrum(ct: np.ndarray, rel_tol: float = 1e-6) -> list[tuple[float, int]]:
    """Eigenvalues of ``ct`` sorted descending and grouped into multiplicities.

    Consecutive eigenvalues within ``rel_tol`` (relative to the group's first
    member) form one group; the group value is their mean.
    """
    ct = np.asarray(ct, dtype=float)
    if ct.ndim != 2 or ct.shape[0] != ct.shape[1]:
        raise ValueError("transfer matrix must be square")
    if ct.shape[0] < 2:
        raise ValueError("spectrum of a 1x1 transfer matrix (k=1) is not meaningful")
    try:
        vals = np.linalg.eigvals(ct)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("eigensolver did not converge") from exc
    scale = np.max(np.abs(vals))
    if np.max(np.abs(vals.imag)) > 1e-8 * scale:
        raise ArithmeticError("transfer matrix has complex eigenvalues")
    vals = np.sort(vals.real)[::-1]
    groups: list[list[float]] = []
    for v in vals:
        if groups and abs(v - groups[-1][0]) <= rel_tol * max(abs(groups[-1][0]), 1e-300):
            groups[-1].append(v)
        else:
            groups.append([v])
    return [(float(np.mean(g)), len(g)) for g in groups]
