"""Acceptance checks; each prints one ``[PASS]``/``[FAIL]`` line (also collected in the terminal summary)."""

import math
import time
from functools import lru_cache

import numpy as np
import pytest

from tempo_im.analysis import (
    autocorrelator,
    butterfly_velocity,
    norm_scaling_fit,
    otoc_grid,
    pd_decompose,
    truncation_error,
)
from tempo_im.im_core import coarse_grain, pd_im, schmidt_spectrum, temporal_entropy, uniform_mask
from tempo_im.kim import BathInitialState, KimParams, dense_im, ed_autocorrelator, lcga_build
from tempo_im.toy_bath import (
    ToyBathParams,
    annealed_renyi2,
    asymptotic_renyi2,
    coarse_grain_params,
    distillable_bound,
    im_purity_closed_form,
    mc_haar_stats,
    pd_trace_distance_bound,
    round_half_up,
)
from tempo_im.weingarten import TransferMatrixSpec, leading_spectrum, transfer_matrix

Q = math.pi / 4
DU = KimParams(g=Q, J=Q, h=0.5)
REGIME_I = KimParams(g=Q, J=0.65 * Q, h=0.5)
REGIME_II = KimParams(g=1.4 * Q, J=Q, h=0.5)
NEAR_DU = KimParams(g=Q, J=0.8 * Q, h=0.5)
MIXED = BathInitialState("maximally_mixed")
TILTED = BathInitialState("tilted", 0.7)
SEED = 20240611


@lru_cache(maxsize=None)
def du_tilted(T):
    return lcga_build(DU, T, TILTED)


@lru_cache(maxsize=None)
def du_report(T, n_cg=1.0):
    im = du_tilted(T)
    return pd_decompose(im if n_cg == 1 else coarse_grain(im, uniform_mask(T, n_cg)))


def fmt(xs):
    return "[" + ", ".join(f"{x:.3f}" for x in xs) + "]"


def test_c1_four_replica_spectrum(criterion):
    t0 = time.perf_counter()
    spec = leading_spectrum(transfer_matrix(TransferMatrixSpec(4, 2, 2**10, "S")), rel_tol=0.01)
    vals = [v for v, _ in spec]
    mult = [m for _, m in spec]
    shape_ok = mult == [1, 6, 11, 6] and all(abs(v - r) / r < 0.01 for v, r in zip(vals, [16, 4, 1, 0.25]))
    lead = [leading_spectrum(transfer_matrix(TransferMatrixSpec(4, 2, D, "S")))[0][0] for D in (2, 4, 16)]
    lead_ok = all(abs(x - 16) < 1e-10 for x in lead)
    dt = time.perf_counter() - t0
    criterion(
        "C1 4-replica spectrum",
        shape_ok and lead_ok and dt < 1,
        f"eigenvalues {fmt(vals)} multiplicities {mult}; leading at D=2,4,16 {fmt(lead)}; {dt:.2f}s",
    )


def test_c2_toy_renyi2(criterion):
    b = 64
    parts, ok = [], True
    for r in (0.25, 0.75, 1.5):
        T = round_half_up(r * b)
        exact = annealed_renyi2(ToyBathParams(b=b, T=T))
        approx = asymptotic_renyi2(2.0**b, T / b)
        ok &= abs(exact - approx) / abs(approx) < 0.05
        if r == 0.25:
            ok &= exact < 0.01
        elif r == 0.75:
            ok &= abs(exact - 2 * (2 * r - 1) * b) / (2 * (2 * r - 1) * b) < 0.10
        else:
            ok &= abs(exact - 2 * b) / (2 * b) < 0.02
        parts.append(f"r={r}: annealed {exact:.4g} asymptotic {approx:.4g}")
    criterion("C2 toy Renyi-2", ok, "; ".join(parts))


def test_c3_monte_carlo_oracle(criterion):
    pr = ToyBathParams(b=3, T=4)
    st = mc_haar_stats(pr, 500, seed=SEED)
    pur, pur_se = st.means["purity_i"], st.ses["purity_i"]
    ref = im_purity_closed_form(pr)[0]
    s2, s2_se = st.renyi2_estimate()
    s2_ref = annealed_renyi2(pr)
    ok = abs(pur - ref) < 3 * pur_se and abs(s2 - s2_ref) < 3 * s2_se
    criterion(
        "C3 Monte Carlo oracle",
        ok,
        f"purity {pur:.5f}+-{pur_se:.5f} vs {ref:.5f}; Renyi-2 {s2:.4f}+-{s2_se:.4f} vs {s2_ref:.4f}",
    )


def test_c4_growing_bath(criterion):
    def slope(v_B, n_cg=1.0):
        s = []
        for T in (8, 16):
            pr = ToyBathParams(T=T, mode="growing", v_B=v_B)
            s.append(annealed_renyi2(coarse_grain_params(pr, n_cg)))
        return (s[1] - s[0]) / 8

    fast, slow, cg = slope(1.25), slope(0.5), slope(0.5, 0.5)
    criterion(
        "C4 growing bath",
        fast < 0.05 and slow > 0.2 and cg < 0.05,
        f"slope v_B=1.25 {fast:.4f}; v_B=0.5 {slow:.4f}; v_B=0.5 with n_cg=1/2 {cg:.4f}",
    )


def test_c5_perfect_dephaser(criterion):
    bath = BathInitialState("tilted", 0.0)
    err, bonds = 0.0, set()
    for T in range(1, 7):
        pd = pd_im(T).entries
        mps = lcga_build(DU, T, bath)
        err = max(err, np.abs(dense_im(DU, T, bath).entries - pd).max(), np.abs(mps.to_dense().entries - pd).max())
        bonds.update(mps.bond_dims)
    criterion("C5 perfect dephaser", err < 1e-9 and bonds == {1}, f"max deviation {err:.2e}; bond dims {sorted(bonds)}")


def test_c6_oracle_equivalence(criterion):
    rng = np.random.default_rng(SEED)
    im_err = corr_err = 0.0
    for _ in range(5):
        g, J, h = rng.uniform(-math.pi, math.pi, 3)
        p = KimParams(g=g, J=J, h=h)
        for bath in (BathInitialState("tilted", rng.uniform(0, 2 * math.pi)), MIXED):
            for T in range(1, 6):
                mps = lcga_build(p, T, bath)
                im_err = max(im_err, np.abs(mps.to_dense().entries - dense_im(p, T, bath).entries).max())
            corr = autocorrelator(mps, p).values
            corr_err = max(corr_err, np.abs(corr - ed_autocorrelator(p, 5, bath)).max())
    criterion(
        "C6 oracle equivalence",
        im_err < 1e-9 and corr_err < 1e-10,
        f"LCGA vs dense {im_err:.2e}; correlator vs ED {corr_err:.2e}",
    )


def test_c7_norm_scaling(criterion):
    plain = norm_scaling_fit(du_report(12))
    cg = norm_scaling_fit(du_report(12, 0.5), coarse_grained=True, n_cg=0.5)
    criterion(
        "C7 norm scaling",
        abs(plain.slope - 1) < 0.15 and abs(cg.slope) < 0.15,
        f"slope {plain.slope:.3f} (C={plain.C:.3f}); coarse-grained slope {cg.slope:.3f}",
    )


def test_c8_te_transition(criterion):
    Ts = list(range(8, 13))
    plain = [du_report(T) for T in Ts]
    cg = [du_report(T, 0.5) for T in Ts]
    s_plain = [r.S_te for r in plain]
    s_cg = [r.S_te for r in cg]
    growth = np.polyfit(Ts, s_plain, 1)[0]
    cg_step = max(abs(b - a) for a, b in zip(s_cg, s_cg[1:]))
    bounded = all(r.lower - 1e-9 <= r.S_te <= r.upper + 1e-9 for r in plain + cg)
    criterion(
        "C8 TE transition",
        growth > 0.3 and cg_step < 0.1 and bounded,
        f"TE {fmt(s_plain)} fitted growth {growth:.3f}/step (need >0.3); "
        f"coarse-grained TE {fmt(s_cg)} max change {cg_step:.3f}/step; within bounds {bounded}",
    )


def test_c9_exact_bond_dimension(criterion):
    worst = []
    for T in (4, 6, 8):
        for p in (REGIME_I, REGIME_II, DU):
            worst.append((lcga_build(p, T, MIXED).max_bond, 2 ** (T // 2)))
    criterion(
        "C9 exact bond dimension",
        all(chi <= cap for chi, cap in worst),
        "max bond / cap " + ", ".join(f"{c}/{k}" for c, k in worst),
    )


def test_c10_butterfly_velocity(criterion):
    v = {name: butterfly_velocity(otoc_grid(p, 10))[0] for name, p in [("I", REGIME_I), ("near-DU", NEAR_DU), ("DU", DU)]}
    ok = abs(v["I"] - 0.61) <= 0.10 and abs(v["near-DU"] - 0.95) <= 0.07 and v["DU"] >= 0.93
    criterion(
        "C10 butterfly velocity",
        ok,
        f"regime I {v['I']:.3f} (0.61+-0.10); near-DU {v['near-DU']:.3f} (0.95+-0.07); DU {v['DU']:.3f} (>=0.93)",
    )


def test_c11_truncation_diagnostics(criterion):
    T = 16
    ref = autocorrelator(lcga_build(REGIME_II, T, MIXED, chi_max=256), REGIME_II)
    mean = {}
    for chi in (16, 64):
        err = truncation_error(autocorrelator(lcga_build(REGIME_II, T, MIXED, chi_max=chi), REGIME_II), ref)
        mean[chi] = float(err.delta_avg[(err.times >= 8) & (err.times <= 16)].mean())
    criterion("C11 truncation diagnostics", mean[64] < mean[16], f"mean delta over T=8..16: chi=16 {mean[16]:.4g}, chi=64 {mean[64]:.4g}")


def test_c12_distillable_and_markovianity(criterion):
    b = 10
    cases = {0.25: 0.0, 1.0: (2 * 1.0 - 1) * b / 2, 0.75: (2 * 0.75 - 1) * b / 2, 2.0: float(b)}
    exact = all(distillable_bound(r, b) == v for r, v in cases.items())
    pr = ToyBathParams(b=3, T=1)
    bound = pd_trace_distance_bound(pr)
    dist = mc_haar_stats(pr, 200, seed=SEED).frobenius_pd()
    frac = float(np.mean(dist <= bound))
    criterion(
        "C12 distillable/Markovianity",
        exact and frac >= 0.95,
        f"three-case formula exact {exact}; bound {bound:.4f} holds in {frac:.1%} of 200 circuits "
        f"(mean distance {dist.mean():.4f}, need >=95%)",
    )
