"""Structureless random-unitary baths: exact replica averages and Monte Carlo.

A probe qudit of dimension ``d`` interacts at every time step with a bath of
``b`` qudits through a fresh Haar-random unitary.  The averaged moments of the
influence matrix reduce to products of ``k!``-dimensional transfer matrices
(see :mod:`tempo_im.weingarten`), which we multiply in extended precision.

Logarithms are base ``d`` throughout.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import mpmath
import numpy as np
from scipy.stats import unitary_group

from .weingarten import (
    TransferMatrixSpec,
    enumerate_permutations,
    transfer_matrix_mp,
)

MC_MAX_ELEMENTS = 1 << 24


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-12))


@dataclass(frozen=True)
class ToyBathParams:
    """Toy bath parameters.

    ``b`` is the bath size in qudits (``D_B = d**b``); in growing mode the bath
    size follows ``b(tau) = 2 v_B min(tau, T - tau)`` and ``b`` only sets the
    initial-state dimension (which is then 1).
    """

    d: int = 2
    b: float = 3
    T: int = 4
    p: int | None = None
    initial: str = "pure"
    mode: str = "static"
    v_B: float | None = None

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("probe dimension must be >= 2")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.p is None:
            object.__setattr__(self, "p", self.T // 2)
        if not 0 <= self.p <= self.T:
            raise ValueError(f"past length p={self.p} outside [0, {self.T}]")
        if self.initial not in ("pure", "maximally_mixed"):
            raise ValueError(f"unknown initial state {self.initial!r}")
        if self.mode == "static":
            if self.b < 0:
                raise ValueError("bath size must be nonnegative")
        elif self.mode == "growing":
            if self.v_B is None or self.v_B <= 0:
                raise ValueError("growing mode needs v_B > 0")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def D_B(self) -> float:
        return float(self.d) ** self.b

    @property
    def f(self) -> int:
        return self.T - self.p

    @property
    def r(self) -> float:
        return self.T / self.b

    def bath_profile(self) -> list[float]:
        """Bath size in qudits before step 1 and after each step."""
        if self.mode == "static":
            return [float(self.b)] * (self.T + 1)
        return [2 * self.v_B * min(t, self.T - t) for t in range(self.T + 1)]


def _step_specs(params: ToyBathParams, k: int, boundaries: list[str]) -> list[TransferMatrixSpec]:
    prof = params.bath_profile()
    specs = []
    for t, bnd in enumerate(boundaries):
        b_in, b_out = prof[t], prof[t + 1]
        extra = traced = None
        if b_out > b_in:
            extra = float(params.d) ** (b_out - b_in)
        elif b_out < b_in:
            traced = float(params.d) ** (b_in - b_out)
        specs.append(TransferMatrixSpec(k, params.d, float(params.d) ** b_in, bnd, extra, traced))
    return specs


@lru_cache(maxsize=256)
def _cached_ct(spec: TransferMatrixSpec, dps: int) -> mpmath.matrix:
    with mpmath.workdps(dps):
        return transfer_matrix_mp(spec)


def _initial_vector(k: int, initial: str, D) -> mpmath.matrix:
    """Overlaps ``<sigma|rho_0>`` of the initial bath state."""
    perms = enumerate_permutations(k)
    v = mpmath.matrix(len(perms), 1)
    for i, s in enumerate(perms):
        v[i] = mpmath.mpf(1) if initial == "pure" else mpmath.mpf(D) ** (-s.length())
    return v


def _dps_for(params: ToyBathParams) -> int:
    b_max = max(params.bath_profile()) if params.T else float(params.b)
    return 30 + int(math.ceil(1.5 * b_max * math.log10(params.d)))


def _propagate(specs, v, dps) -> mpmath.matrix:
    for spec in specs:
        v = _cached_ct(spec, dps) * v
    return v


def replica_moments(params: ToyBathParams) -> tuple[mpmath.mpf, mpmath.mpf]:
    """Exact ``(E[tr rho_F^2], E[N^4])`` of the unnormalized influence matrix."""
    dps = _dps_for(params)
    with mpmath.workdps(dps):
        prof = params.bath_profile()
        v0 = _initial_vector(4, params.initial, mpmath.mpf(params.d) ** prof[0])
        num_specs = _step_specs(params, 4, ["S"] * params.p + ["F"] * params.f)
        den_specs = _step_specs(params, 4, ["S"] * params.T)
        num = _propagate(num_specs, v0, dps)[0]
        den = _propagate(den_specs, v0, dps)[0]
        return +num, +den


def annealed_renyi2(params: ToyBathParams) -> float:
    """``-log_d(E[tr rho_F^2] / E[N^4])`` evaluated exactly at finite bath size."""
    dps = _dps_for(params)
    num, den = replica_moments(params)
    with mpmath.workdps(dps):
        val = -mpmath.log(num / den) / mpmath.log(params.d)
        return float(val)


def asymptotic_renyi2(D_B: float, r: float, d: float = 2) -> float:
    """Large-bath approximation of the Renyi-2 temporal entanglement at ``p = T/2``."""
    if D_B < 2 or r <= 0:
        raise ValueError("need D_B >= 2 and r > 0")
    with mpmath.workdps(50):
        D = mpmath.mpf(D_B)
        logD = mpmath.log(D) / mpmath.log(d)
        eps = (
            2 * D ** (3 * (r - 1))
            + (mpmath.mpf(3) / 4 * r * logD + 2) * D ** (2 * (r - 1))
            + 2 * D ** (r - 1)
        )
        ratio = (1 + D ** (4 * (r - 1)) + eps) / (1 + D ** (2 * r - 1)) ** 2
        return float(-mpmath.log(ratio) / mpmath.log(d))


def _two_replica_value(params: ToyBathParams, boundary: str, final_row: int, v: list) -> float:
    if params.mode != "static":
        raise ValueError("purities are defined for the static bath only")
    dps = _dps_for(params)
    with mpmath.workdps(dps):
        vec = mpmath.matrix([mpmath.mpf(x) for x in v])
        specs = _step_specs(params, 2, [boundary] * params.T)
        out = _propagate(specs, vec, dps)[final_row]
        return float(out * mpmath.mpf(params.d) ** (-2 * params.T))


def im_purity_closed_form(params: ToyBathParams) -> tuple[float, str]:
    """Exact ``E[tr rho_I^2]`` and the tag of the matching leading-order form.

    Tags: ``"pure"`` for ``d**-2T + 1/D_B``, ``"maximally_mixed"`` for
    ``d**-2T + 1/D_B**2`` (see :func:`im_purity_leading_order`).
    """
    D = params.D_B
    v = [1, 1] if params.initial == "pure" else [1, 1 / mpmath.mpf(D)]
    return _two_replica_value(params, "S", 0, v), params.initial


def im_purity_leading_order(params: ToyBathParams) -> float:
    xi = 1 if params.initial == "pure" else 2
    return float(params.d) ** (-2 * params.T) + params.D_B ** (-xi)


def inout_purity_closed_form(params: ToyBathParams) -> float:
    """Exact ``E[tr rho_{in,out}^2]`` with the bath maximally entangled with ``in``."""
    return _two_replica_value(params, "I", 1, [1 / mpmath.mpf(params.D_B), 1])


def pd_trace_distance_bound(params: ToyBathParams) -> float:
    """Leading-order bound on the trace distance of ``rho_I`` from the perfect depolarizer.

    Combines ``|A|_1 <= sqrt(dim) |A|_2`` with the excess purity
    ``D_B**-xi`` (``xi = 1`` pure, ``2`` maximally mixed):
    ``d**T * D_B**(-xi/2) = d**(-b (xi/2 - r))``.
    """
    if params.mode != "static":
        raise ValueError("static bath only")
    xi = 1 if params.initial == "pure" else 2
    return float(params.d) ** (params.T - xi * params.b / 2)


def distillable_bound(r: float, b: float) -> float:
    """Lower bound on past-future distillable entanglement (in qudits)."""
    if r <= 0 or b <= 0:
        raise ValueError("need r > 0 and b > 0")
    if r <= 0.5:
        return 0.0
    if r >= 1.5:
        return float(b)
    return (2 * r - 1) * b / 2


def coarse_grain_params(params: ToyBathParams, n_cg: float) -> ToyBathParams:
    """Keep a fraction ``n_cg`` of the time steps.

    Consecutive Haar gates compose to a single Haar gate, so coarse-graining
    only rescales time (static bath, ``r -> n_cg r``) or the growth rate
    (growing bath, ``v_B -> v_B / n_cg``).
    """
    if not 0 < n_cg <= 1:
        raise ValueError("n_cg must lie in (0, 1]")
    T_new = round_half_up(n_cg * params.T)
    if T_new < 1:
        raise ValueError(f"n_cg * T = {n_cg * params.T} rounds below one step")
    p_new = min(round_half_up(n_cg * params.p), T_new)
    if n_cg == 1:
        return params
    if params.mode == "static":
        return replace(params, T=T_new, p=p_new)
    return replace(params, T=T_new, p=p_new, v_B=params.v_B / n_cg)


def critical_coarse_graining(params: ToyBathParams) -> float:
    """``n_cg`` at which the coarse-grained model reaches its entanglement transition."""
    if params.mode == "static":
        return 1 / (2 * params.r)
    return float(params.v_B)


# ---------------------------------------------------------------- Monte Carlo


@dataclass(frozen=True)
class HaarSampleStats:
    """Per-sample moments of Haar-sampled influence matrices.

    ``norm2`` is ``N^2 = <I|I>``; ``trf2`` is the unnormalized ``tr rho_F^2``
    (so the normalized future purity is ``trf2 / norm2**2``); ``purity_i`` is
    ``tr rho_I^2`` for the chosen initial state and ``purity_inout`` is
    ``tr rho_{in,out}^2`` with the bath maximally entangled with ``in``.
    """

    params: ToyBathParams
    n_samples: int
    seed: int
    norm2: np.ndarray
    trf2: np.ndarray
    purity_i: np.ndarray
    purity_inout: np.ndarray
    means: dict = field(default_factory=dict)
    ses: dict = field(default_factory=dict)

    @property
    def purity_f(self) -> np.ndarray:
        return self.trf2 / self.norm2**2

    def renyi2_estimate(self) -> tuple[float, float]:
        """Annealed estimate ``-log_d(mean trf2 / mean N^4)`` with a delta-method SE."""
        x, y = self.trf2, self.norm2**2
        mx, my = x.mean(), y.mean()
        ln_d = math.log(self.params.d)
        est = -math.log(mx / my) / ln_d
        n = len(x)
        if n < 2:
            return est, float("nan")
        cov = np.cov(np.vstack([x, y]))
        var = cov[0, 0] / mx**2 + cov[1, 1] / my**2 - 2 * cov[0, 1] / (mx * my)
        return est, math.sqrt(max(var, 0.0) / n) / ln_d

    def frobenius_pd(self) -> np.ndarray:
        """``sqrt(dim) * |rho_I - rho_PD|_2`` per sample (``dim = d**2T``)."""
        dim = float(self.params.d) ** (2 * self.params.T)
        return np.sqrt(dim * np.clip(self.purity_i - 1 / dim, 0, None))


def haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary (QR of a complex Ginibre matrix with the R-diagonal phase fix)."""
    return unitary_group.rvs(n, random_state=rng) if n > 1 else np.exp(2j * np.pi * rng.random((1, 1)))


def evolve_choi(unitaries: list[np.ndarray], d: int, D: int) -> np.ndarray:
    """Joint pure state of the temporal Choi registers, the bath and a reference.

    Each probe input is half of a maximally entangled pair with a register
    ``Q_t``; the bath starts maximally entangled with a reference ``in``.
    Returned axes: ``(Q_1, S_1, ..., Q_T, S_T, out, in)``.
    """
    T = len(unitaries)
    psi = (np.eye(D) / math.sqrt(D)).astype(complex)  # (out, in)
    bell = np.eye(d) / math.sqrt(d)
    for _ in range(T):
        psi = np.tensordot(bell, psi, axes=0)
    # axes now (Q_T, S_T, ..., Q_1, S_1, out, in); reverse the step order
    order = []
    for t in range(T):
        order += [2 * (T - 1 - t), 2 * (T - 1 - t) + 1]
    psi = psi.transpose(order + [2 * T, 2 * T + 1])
    for t, u in enumerate(unitaries):
        u4 = u.reshape(d, D, d, D)
        s_ax, out_ax = 2 * t + 1, 2 * T
        psi = np.tensordot(u4, psi, axes=([2, 3], [s_ax, out_ax]))
        psi = np.moveaxis(psi, [0, 1], [s_ax, out_ax])
    return psi


def _sample_moments(params: ToyBathParams, seed_seq: np.random.SeedSequence) -> tuple:
    d, T, p = params.d, params.T, params.p
    D = round(params.D_B)
    rng = np.random.default_rng(seed_seq)
    us = [haar_unitary(d * D, rng) for _ in range(T)]
    psi = evolve_choi(us, d, D)
    m_mix = psi.reshape(d ** (2 * T), D * D)
    purity_inout = float(np.linalg.norm(m_mix.conj().T @ m_mix) ** 2)
    if params.initial == "pure":
        m = math.sqrt(D) * psi[..., 0].reshape(d ** (2 * T), D)
    else:
        m = m_mix
    rho = m @ m.conj().T
    purity_i = float(np.linalg.norm(rho) ** 2)
    norm2 = d ** (2 * T) * purity_i
    # vector |I> = d^T rho_I; cut after p steps on ket and bra
    r = rho.reshape(d ** (2 * p), d ** (2 * (T - p)), d ** (2 * p), d ** (2 * (T - p)))
    r = r.transpose(0, 2, 1, 3).reshape(d ** (4 * p), d ** (4 * (T - p)))
    small = r @ r.conj().T if r.shape[0] <= r.shape[1] else r.conj().T @ r
    trf2 = float(np.linalg.norm(small) ** 2) * d ** (4 * T)
    return norm2, trf2, purity_i, purity_inout


def mc_haar_stats(
    params: ToyBathParams,
    n_samples: int,
    seed: int,
    workers: int = 1,
    max_elements: int = MC_MAX_ELEMENTS,
) -> HaarSampleStats:
    """Monte Carlo moments over Haar-random gates (static bath, integer ``b``).

    Sample ``i`` draws from its own stream ``SeedSequence(seed).spawn``-ed at
    index ``i``, so results do not depend on ``workers``.
    """
    if params.mode != "static":
        raise ValueError("Monte Carlo sampling supports the static bath only")
    if float(params.b) != int(params.b):
        raise ValueError("Monte Carlo needs an integer number of bath qudits")
    D = round(params.D_B)
    size = params.d ** (2 * params.T) * D * D
    if size > max_elements or params.d ** (4 * params.T) > max_elements:
        raise MemoryError(f"dense objects of {size} elements exceed the limit {max_elements}")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    seqs = np.random.SeedSequence(seed).spawn(n_samples)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda s: _sample_moments(params, s), seqs))
    else:
        rows = [_sample_moments(params, s) for s in seqs]
    arr = np.array(rows, dtype=float)
    names = ("norm2", "trf2", "purity_i", "purity_inout")
    cols = {name: arr[:, i] for i, name in enumerate(names)}
    means = {name: float(c.mean()) for name, c in cols.items()}
    ses = {
        name: float(c.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
        for name, c in cols.items()
    }
    return HaarSampleStats(params, n_samples, seed, means=means, ses=ses, **cols)
