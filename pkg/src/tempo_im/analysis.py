"""Analyses of constrained influence matrices and of the kicked Ising chain.

* decomposition of an IM into perfect-dephaser tails and its entropy bounds,
* scaling fits for the norms of the non-Markovian components,
* probe autocorrelators and truncation diagnostics,
* out-of-time-order correlators and the butterfly velocity.

Entropies here are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .im_core import (
    DenseIM,
    MpsIM,
    canonicalize,
    closure_vector,
    contract_correlator,
    mps_from_dense,
    schmidt_spectrum,
    temporal_entropy,
)
from .kim import SIGMA_X, SIGMA_Y, SIGMA_Z, KimParams, _ising_phases, kick

PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)
OFF_DIAGONAL = np.array([0.0, 1.0, 1.0, 0.0])  # local (s, sb) with s != sb


def _xlog2x(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    pos = w > 0
    out[pos] = w[pos] * np.log2(w[pos])
    return out


def _as_constrained_mps(im: DenseIM | MpsIM) -> MpsIM:
    if im.form != "constrained":
        raise ValueError("the decomposition needs a constrained (dephasing-type) IM")
    if im.d != 2:
        raise ValueError("the decomposition is implemented for qubit probes")
    return im if isinstance(im, MpsIM) else mps_from_dense(im)


def _right_closures(mps: MpsIM) -> list[np.ndarray]:
    """``R[k]``: steps ``k+1..T`` contracted with the closure, as a vector on bond ``k``."""
    c = closure_vector(mps.d, mps.form)
    R = [None] * (mps.T + 1)
    R[mps.T] = np.ones(1, dtype=complex)
    for k in range(mps.T - 1, -1, -1):
        R[k] = np.tensordot(mps.tensors[k], c, axes=([1], [0])) @ R[k + 1]
    return R


def im_prefix(im: DenseIM | MpsIM, k: int) -> MpsIM:
    """IM of the first ``k`` steps, obtained by closing the later steps.

    For an exact IM this equals the IM built directly for ``k`` steps.
    """
    mps = im if isinstance(im, MpsIM) else mps_from_dense(im)
    if not 0 <= k <= mps.T:
        raise ValueError("prefix length out of range")
    if k == mps.T:
        return mps
    R = _right_closures(mps)
    ts = list(mps.tensors[:k])
    if k == 0:
        raise ValueError("use k >= 1; the empty prefix is the scalar closure")
    ts[-1] = np.tensordot(ts[-1], R[k], axes=([2], [0]))[:, :, None]
    return canonicalize(MpsIM(k, mps.d, mps.form, tuple(ts)))


def offdiagonal_component(im: DenseIM | MpsIM, k: int) -> MpsIM:
    """``pi_k I_k``: the length-``k`` prefix with the last step projected on ``s != sb``."""
    pre = im_prefix(im, k)
    ts = list(pre.tensors)
    ts[-1] = ts[-1] * OFF_DIAGONAL[None, :, None]
    return MpsIM(k, pre.d, pre.form, tuple(ts))


@dataclass(frozen=True)
class DecompositionReport:
    """Markovian-tail decomposition ``I_T = sum_k pi_k I_k (x) PD_{T-k}`` at cut ``p``.

    ``inner_norms[k] = <pi_k I_k | pi_k I_k>`` (1 at ``k = 0``),
    ``norms2[k] = inner_norms[k] * 2**(T-k)``, ``weights = norms2 / sum``.
    ``component_entropies[k]`` is the von Neumann entropy (bits) of the
    normalized component at cut ``p`` for ``k > p`` and NaN otherwise.
    """

    T: int
    p: int
    inner_norms: np.ndarray
    norms2: np.ndarray
    weights: np.ndarray
    component_entropies: np.ndarray
    w: float
    S_mix: float
    S_cl: float
    S_te: float | None = None
    entropy_source: str = "measured"

    @property
    def lower(self) -> float:
        return self.S_mix

    @property
    def upper(self) -> float:
        return self.S_mix + self.S_cl


def _mixing_entropies(weights: np.ndarray, comp: np.ndarray, p: int) -> tuple[float, float, float]:
    w_past = float(np.sum(weights[: p + 1]))
    tail = weights[p + 1 :]
    s_mix = float(np.sum(tail * comp[p + 1 :]))
    s_cl = float(-np.sum(_xlog2x(tail)) - _xlog2x(np.array([w_past]))[0])
    return w_past, s_mix, s_cl


def pd_decompose(im: DenseIM | MpsIM, p: int | None = None, measure_entropies: bool = True) -> DecompositionReport:
    """Norms, weights and entropy bounds of the perfect-dephaser decomposition.

    ``p`` defaults to ``T // 2``.  With ``measure_entropies`` the component
    entropies come from Schmidt values; otherwise the maximal-entropy values
    ``min((k - p)/2, p)`` are used.
    """
    mps = _as_constrained_mps(im)
    T = mps.T
    p = T // 2 if p is None else p
    if not 0 <= p <= T:
        raise ValueError(f"cut p={p} outside [0, {T}]")
    R = _right_closures(mps)
    inner = np.zeros(T + 1)
    inner[0] = 1.0
    comp = np.full(T + 1, np.nan)
    env = np.ones((1, 1), dtype=complex)  # <prefix|prefix> on the bond
    for k in range(1, T + 1):
        a = mps.tensors[k - 1]
        last = np.tensordot(a, R[k], axes=([2], [0])) * OFF_DIAGONAL[None, :]
        inner[k] = float(np.einsum("ab,ai,bi->", env, last, last.conj()).real)
        env = np.einsum("ab,aic,bid->cd", env, a, a.conj())
        if k > p:
            if measure_entropies and inner[k] > 0:
                comp[k] = temporal_entropy(schmidt_spectrum(offdiagonal_component(mps, k), p), 1.0, 2)
            elif measure_entropies:
                comp[k] = 0.0
            else:
                comp[k] = min((k - p) / 2, p)
    norms2 = inner * 2.0 ** (T - np.arange(T + 1))
    weights = norms2 / norms2.sum()
    w_past, s_mix, s_cl = _mixing_entropies(weights, comp, p)
    s_te = temporal_entropy(schmidt_spectrum(mps, p), 1.0, 2)
    return DecompositionReport(
        T, p, inner, norms2, weights, comp, w_past, s_mix, s_cl, s_te,
        "measured" if measure_entropies else "analytic",
    )


@dataclass(frozen=True)
class EntropyBounds:
    S_mix: float
    S_cl: float
    lower: float
    upper: float
    S_mix_cap: float | None = None


def entropy_bounds(
    report: DecompositionReport,
    p: int | None = None,
    component_entropies: str = "measured",
    coarse_grained: bool = False,
    n_cg: float = 1.0,
    C: float | None = None,
) -> EntropyBounds:
    """``[S_mix, S_mix + S_cl]`` bracket on the temporal entanglement at cut ``p``.

    ``component_entropies="analytic"`` replaces measured component entropies
    by their maximal values (``min((k - p)/2, p)``, or ``2 n_cg p`` when
    coarse-grained).  In coarse-grained mode with a fitted ``C`` the
    finite cap on ``S_mix`` from the geometric weight model is reported.
    """
    p = report.p if p is None else p
    if not 0 <= p <= report.T:
        raise ValueError(f"cut p={p} outside [0, {report.T}]")
    if component_entropies == "measured":
        if p != report.p:
            raise ValueError("measured component entropies exist only at the report's cut")
        comp = report.component_entropies
    elif component_entropies == "analytic":
        k = np.arange(report.T + 1)
        comp = np.where(k > p, 2 * n_cg * p if coarse_grained else np.minimum((k - p) / 2, p), np.nan)
    else:
        raise ValueError("component_entropies must be 'measured' or 'analytic'")
    _, s_mix, s_cl = _mixing_entropies(report.weights, comp, p)
    cap = None
    if coarse_grained and C is not None:
        c_tilde = cg_weight_normalization(report.T / n_cg, n_cg, C)
        cap = cg_smix_cap(p / n_cg, n_cg, c_tilde)
    return EntropyBounds(s_mix, s_cl, s_mix, s_mix + s_cl, cap)


def smix_closed_form(T: int, p: int, C: float) -> float:
    """``S_mix`` with flat weights ``w_k = C / (T C + 1)`` and maximal component entropies."""
    pref = C / (T * C + 1)
    if 3 * p > T:
        return pref * (T - p) * (T - p + 1) / 4
    return pref * p * (2 * T - 4 * p + 1) / 2


def cg_weight_normalization(T: float, n_cg: float, C_cg: float) -> float:
    """Normalization of the geometric coarse-grained weights ``w_k = C~ 2**(-(1 - n) k)``."""
    a = 1 - n_cg
    if a == 0:
        return 1 / (C_cg * T + 1)
    return 1 / (C_cg * (1 - 2 ** (-a * T)) / (2 ** (a / n_cg) - 1) + 1)


def cg_weights(T: float, n_cg: float, C_cg: float, k: np.ndarray) -> np.ndarray:
    return cg_weight_normalization(T, n_cg, C_cg) * 2.0 ** (-(1 - n_cg) * np.asarray(k, dtype=float))


def cg_smix_cap(p: float, n_cg: float, c_tilde: float) -> float:
    """Upper bound ``p 2**(-p (1 - n)) C_mix`` on the coarse-grained mixing entropy."""
    a = 1 - n_cg
    if a <= 0:
        return math.inf
    c_mix = 2 * math.log(2) * n_cg / (1 - 2 ** (-a / n_cg)) * c_tilde
    return p * 2 ** (-p * a) * c_mix


@dataclass(frozen=True)
class NormFit:
    C: float
    slope: float
    residual: float
    expected_slope: float
    k: np.ndarray = field(repr=False, default=None)
    log2_norms: np.ndarray = field(repr=False, default=None)


def norm_scaling_fit(
    report: DecompositionReport,
    coarse_grained: bool = False,
    n_cg: float = 1.0,
    k_min: float = 4,
) -> NormFit:
    """Least-squares fit ``log2 <pi_k I_k|pi_k I_k> = log2 C + slope * k``.

    For a coarse-grained report, step ``k`` of the coarse IM is placed at
    ``k / n_cg`` original steps; ``k_min`` is in original steps.
    """
    k = np.arange(report.T + 1, dtype=float)
    x = k / n_cg if coarse_grained else k
    use = (k >= 1) & (x >= k_min) & (report.inner_norms > 0)
    if np.count_nonzero(use) < 4:
        raise ValueError("fewer than 4 usable points for the norm scaling fit")
    y = np.log2(report.inner_norms[use])
    A = np.vstack([np.ones(use.sum()), x[use]]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    expected = 2 * n_cg - 1 if coarse_grained else 1.0
    return NormFit(float(2 ** coef[0]), float(coef[1]), resid, expected, x[use], y)


def weight_decay_exponent(report: DecompositionReport, n_cg: float, k_min: float = 1) -> float:
    """Slope of ``log2 w_k`` vs original time ``k / n_cg`` over ``k >= 1``."""
    k = np.arange(report.T + 1, dtype=float)
    x = k / n_cg
    use = (k >= 1) & (x >= k_min) & (report.weights > 0)
    return float(np.polyfit(x[use], np.log2(report.weights[use]), 1)[0])


# ----------------------------------------------------------- correlators


@dataclass(frozen=True)
class CorrelatorSeries:
    times: np.ndarray
    values: np.ndarray
    chi: int | None = None
    meta: dict = field(default_factory=dict)


def autocorrelator(im: DenseIM | MpsIM, params: KimParams, T: int | None = None) -> CorrelatorSeries:
    """Probe ``Z``-``Z`` autocorrelator ``C(t)``, ``t = 1..T``.

    ``Z`` acts after step 1 and after step ``t`` (``t = 1`` is the equal-time
    value 1).  Between steps the probe is kicked by ``exp(i h Z) exp(i g0 X)``;
    it starts maximally mixed.
    """
    T = im.T if T is None else T
    if T > im.T:
        raise ValueError("IM shorter than the requested series")
    v = kick(params.probe_kick, params.h)
    vals = []
    for t in range(1, T + 1):
        ins = [(1, SIGMA_Z @ SIGMA_Z)] if t == 1 else [(1, SIGMA_Z), (t, SIGMA_Z)]
        vals.append(contract_correlator(im, v, ins))
    vals = np.array(vals)
    if np.max(np.abs(vals.imag)) < 1e-10 * max(1.0, np.max(np.abs(vals.real))):
        vals = vals.real
    chi = im.max_bond if isinstance(im, MpsIM) else None
    return CorrelatorSeries(np.arange(1, T + 1), vals, chi, {"g0": params.probe_kick})


@dataclass(frozen=True)
class TruncationError:
    times: np.ndarray
    delta: np.ndarray  # instantaneous, capped at 1
    delta_avg: np.ndarray  # mean over t, t+1, t+2 (fewer at the end)
    abs_error: np.ndarray


def truncation_error(series: CorrelatorSeries, reference: CorrelatorSeries, window: int = 3) -> TruncationError:
    """Relative deviation from a reference series, capped at 1, plus a forward moving average.

    A reference value of exactly zero gives ``delta = 1``.
    """
    a, b = np.asarray(series.values), np.asarray(reference.values)
    if a.shape != b.shape:
        raise ValueError("series lengths differ")
    abs_err = np.abs(a - b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rel = np.where(b != 0, abs_err / np.abs(b), 1.0)
    rel = np.where(abs_err == 0, 0.0, rel)
    delta = np.minimum(rel, 1.0)
    avg = np.array([delta[i : i + window].mean() for i in range(len(delta))])
    return TruncationError(np.asarray(series.times), delta, avg, abs_err)


# ------------------------------------------------------------------- OTOC


@dataclass(frozen=True)
class OtocGrid:
    """``values[t, r]``: Pauli-averaged OTOC between site 0 at time ``t`` and site ``r``."""

    L: int
    t_max: int
    values: np.ndarray


def _heisenberg_step(x: np.ndarray, w: np.ndarray, phases: np.ndarray, L: int) -> np.ndarray:
    """``U^+ X U`` with ``U = diag(phases) (w x ... x w)``."""
    x = phases.conj()[:, None] * x * phases[None, :]
    t = x.reshape((2,) * (2 * L))
    wd = w.conj().T
    for j in range(L):
        t = np.moveaxis(np.tensordot(wd, t, axes=([1], [j])), 0, j)
        t = np.moveaxis(np.tensordot(t, w, axes=([L + j], [0])), -1, L + j)
    return t.reshape(2**L, 2**L)


def _pauli_averaged_commutator(x: np.ndarray, r: int, L: int) -> float:
    """Mean over Pauli ``B`` of ``1 - Re tr(X^+ B_r X B_r) / 2**L`` for unit-norm ``X``.

    In the Pauli-string expansion of ``X`` every string that is not the
    identity on site ``r`` anticommutes with two of the three Paulis there,
    so the mean is ``4/3`` times the weight of ``X`` acting nontrivially on ``r``.
    """
    t = x.reshape((2,) * (2 * L))
    reduced = np.trace(t, axis1=r, axis2=L + r)
    trivial = float(np.vdot(reduced, reduced).real) / 2 ** (L + 1)
    return 4 / 3 * (1 - trivial)


def otoc_grid(params: KimParams, L: int, t_max: int | None = None) -> OtocGrid:
    """``C(r, t) = 1 - Re tr(A(t)^+ B_r A(t) B_r) / 2**L`` averaged over Pauli ``A, B``.

    This is ``(1/2) tr([A(t), B_r]^+ [A(t), B_r])`` with the trace normalized
    by ``2**L``; ``A`` sits on the edge site 0 of an open chain of ``L`` sites.
    """
    if L > 12:
        raise MemoryError("dense OTOC limited to L <= 12")
    t_max = 2 * L if t_max is None else t_max
    if t_max > 2 * L:
        raise ValueError("t_max must be <= 2 L")
    w = kick(params.g, params.h)
    phases = _ising_phases(params.J, L)
    vals = np.zeros((t_max + 1, L))
    for a in PAULIS:
        x = np.kron(a, np.eye(2 ** (L - 1)))
        for t in range(t_max + 1):
            for r in range(L):
                vals[t, r] += _pauli_averaged_commutator(x, r, L)
            if t < t_max:
                x = _heisenberg_step(x, w, phases, L)
    vals /= 3
    vals[np.abs(vals) < 1e-13] = 0.0
    return OtocGrid(L, t_max, vals)


def front_positions(grid: OtocGrid, threshold: float) -> np.ndarray:
    """Largest ``r`` with ``C(r, t) >= threshold * max_r C``, linearly interpolated."""
    out = np.full(grid.t_max + 1, np.nan)
    for t in range(grid.t_max + 1):
        row = grid.values[t]
        m = row.max()
        if m <= 0:
            continue
        level = threshold * m
        r = int(np.nonzero(row >= level)[0].max())
        if r + 1 < grid.L and row[r] > row[r + 1]:
            out[t] = r + (row[r] - level) / (row[r] - row[r + 1])
        else:
            out[t] = float(r)
    return out


def butterfly_velocity(
    grid: OtocGrid,
    thresholds: tuple[float, float] = (0.3, 0.6),
    n_thresholds: int = 7,
    t_min: int = 1,
    edge_margin: float = 1.0,
) -> tuple[float, float]:
    """Mean and variance over thresholds of the fitted front speed.

    For each threshold the front position is fitted linearly in ``t`` over
    ``t_min <= t`` up to the last time the front is more than
    ``edge_margin`` sites away from the far end of the chain.
    """
    if np.max(grid.values[1:], initial=0.0) <= 0:
        raise ValueError("no operator front detected")
    speeds = []
    for p in np.linspace(thresholds[0], thresholds[1], n_thresholds):
        pos = front_positions(grid, p)
        ts = []
        for t in range(t_min, grid.t_max + 1):
            if np.isnan(pos[t]) or pos[t] > grid.L - 1 - edge_margin:
                break
            ts.append(t)
        if len(ts) < 2:
            raise ValueError("front leaves the chain before a velocity can be fitted")
        speeds.append(np.polyfit(ts, pos[ts], 1)[0])
    speeds = np.array(speeds)
    return float(speeds.mean()), float(speeds.var())
