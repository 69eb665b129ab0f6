import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from tempo_im.im_core import contract_correlator, pd_im, schmidt_spectrum, temporal_entropy
from tempo_im.kim import (
    SIGMA_X,
    SIGMA_Z,
    BathInitialState,
    KimParams,
    absorb_column,
    conditioned_step,
    dense_im,
    ed_autocorrelator,
    floquet_operator,
    initial_column,
    kick,
    lcga_build,
)

DU = KimParams(g=math.pi / 4, J=math.pi / 4, h=0.5)
angles = st.floats(-math.pi, math.pi, allow_nan=False)
params_st = st.builds(KimParams, angles, angles, angles)
initials = st.one_of(st.builds(BathInitialState, st.just("tilted"), angles), st.just(BathInitialState("maximally_mixed")))


@settings(max_examples=20, deadline=None)
@given(params_st, st.integers(1, 6))
def test_floquet_unitary(params, L):
    u = floquet_operator(params, L)
    np.testing.assert_allclose(u @ u.conj().T, np.eye(2**L), atol=1e-12)


def test_floquet_two_sites_by_hand():
    g, J = 0.3, 1.1
    p = KimParams(g=g, J=J, h=0.0)
    w = scipy.linalg.expm(1j * g * SIGMA_X)
    expected = scipy.linalg.expm(1j * J * np.kron(SIGMA_Z, SIGMA_Z)) @ np.kron(w, w)
    np.testing.assert_allclose(floquet_operator(p, 2), expected, atol=1e-12)


def test_kick_matches_exponentials():
    np.testing.assert_allclose(
        kick(0.4, 0.9), scipy.linalg.expm(0.9j * SIGMA_Z) @ scipy.linalg.expm(0.4j * SIGMA_X), atol=1e-12
    )


@pytest.mark.parametrize("L", [1, 3, 5])
def test_conditioned_steps_differ_by_boundary_phase(L):
    p = KimParams(g=0.8, J=0.6, h=0.2)
    up, um = conditioned_step(p, L, 1), conditioned_step(p, L, -1)
    z1 = np.kron(SIGMA_Z, np.eye(2 ** (L - 1)))
    np.testing.assert_allclose(up @ um.conj().T, scipy.linalg.expm(2j * p.J * z1), atol=1e-12)
    np.testing.assert_allclose(up @ up.conj().T, np.eye(2**L), atol=1e-12)
    with pytest.raises(ValueError):
        conditioned_step(p, L, 0)


def test_dense_limit_is_a_resource_error():
    with pytest.raises(MemoryError):
        floquet_operator(DU, 40)


def test_du_predicate():
    assert DU.is_dual_unitary
    assert KimParams(g=-3 * math.pi / 4, J=math.pi / 4, h=0).is_dual_unitary
    assert not KimParams(g=math.pi / 4, J=0.8 * math.pi / 4, h=0).is_dual_unitary
    assert KimParams(g=0.1, J=0.2, h=0).probe_kick == 0.1
    assert KimParams(g=0.1, J=0.2, h=0, g0=0.5).probe_kick == 0.5


def test_initial_states():
    assert BathInitialState("tilted", math.pi).is_solvable
    assert not BathInitialState("tilted", 0.7).is_solvable
    assert not BathInitialState("maximally_mixed").is_solvable
    with pytest.raises(ValueError):
        BathInitialState("thermal")
    with pytest.raises(ValueError):
        BathInitialState("maximally_mixed").state_vector()
    s = BathInitialState("tilted", 0.7)
    v = s.state_vector()
    np.testing.assert_allclose(np.outer(v, v.conj()), s.density_matrix(), atol=1e-15)


def test_initial_column():
    np.testing.assert_allclose(initial_column(BathInitialState("tilted", 0.0)), [0.5] * 4)
    mm = initial_column(BathInitialState("maximally_mixed")).reshape(2, 2)
    assert np.trace(mm) == pytest.approx(1)
    col = initial_column(BathInitialState("tilted", 0.7)).reshape(2, 2)
    np.testing.assert_allclose(col, col.conj().T)


def test_dense_im_trivial_and_one_step():
    assert dense_im(DU, 0, BathInitialState()).entries == 1
    p, L = KimParams(g=0.5, J=0.9, h=0.3), 3
    im = dense_im(p, 1, BathInitialState("maximally_mixed"), L=L)
    u = {1: conditioned_step(p, L, 1), -1: conditioned_step(p, L, -1)}
    for i, s in enumerate((1, -1)):
        for j, sb in enumerate((1, -1)):
            expected = np.trace(u[s] @ u[sb].conj().T) / 2**L
            assert im.entries[2 * i + j] == pytest.approx(expected, abs=1e-12)


def test_dense_im_resource_guard():
    with pytest.raises(MemoryError):
        dense_im(DU, 30, BathInitialState())
    with pytest.raises(ValueError):
        dense_im(DU, -1, BathInitialState())


@pytest.mark.parametrize("phi", [0.0, math.pi])
@pytest.mark.parametrize("T", [1, 3, 5])
def test_du_point_is_perfect_dephaser(T, phi):
    bath = BathInitialState("tilted", phi)
    np.testing.assert_allclose(dense_im(DU, T, bath).entries, pd_im(T).entries, atol=1e-10)
    mps = lcga_build(DU, T, bath)
    assert mps.max_bond == 1
    np.testing.assert_allclose(mps.to_dense().entries, pd_im(T).entries, atol=1e-9)


@settings(max_examples=12, deadline=None)
@given(params_st, initials, st.integers(1, 4))
def test_lcga_matches_dense(params, bath, T):
    got = lcga_build(params, T, bath).to_dense().entries
    np.testing.assert_allclose(got, dense_im(params, T, bath).entries, atol=1e-9)


@settings(max_examples=10, deadline=None)
@given(params_st, initials, st.integers(1, 4))
def test_light_cone(params, bath, T):
    a = dense_im(params, T, bath, L=T)
    b = dense_im(params, T, bath, L=T + 2)
    np.testing.assert_allclose(a.entries, b.entries, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(params_st, initials, st.integers(1, 5))
def test_produced_ims_are_physical(params, bath, T):
    res = lcga_build(params, T, bath, check_closure=True)
    assert all(abs(c - 1) < 1e-10 for c in res.closures)
    assert res.mps.to_dense().hermiticity_error() < 1e-10
    if T <= 4:
        im = dense_im(params, T, bath)
        assert im.hermiticity_error() < 1e-12 and abs(im.closure() - 1) < 1e-12


def test_absorb_column_keeps_trace():
    p = KimParams(g=0.9, J=0.4, h=0.6)
    bath = BathInitialState("tilted", 0.7)
    mps = lcga_build(p, 4, bath, L=1)
    assert abs(absorb_column(mps, p, bath).closure() - 1) < 1e-12


@pytest.mark.parametrize("T", [4, 6, 8])
def test_mixed_bath_bond_bound(T):
    mps = lcga_build(KimParams(g=0.7, J=0.5, h=0.3), T, BathInitialState("maximally_mixed"))
    assert mps.max_bond <= 2 ** (T // 2)


def test_truncation_reports_discarded_weight():
    p = KimParams(g=0.7, J=0.5, h=0.3)
    mps = lcga_build(p, 6, BathInitialState("tilted", 0.4), chi_max=2)
    assert mps.max_bond <= 2 and sum(mps.discarded) > 0
    with pytest.raises(ValueError):
        lcga_build(p, 3, BathInitialState(), chi_max=0)
    with pytest.raises(ValueError):
        lcga_build(p, 0, BathInitialState())


@pytest.mark.parametrize("seed", [0, 1])
def test_correlator_on_lcga_matches_ed(seed):
    rng = np.random.default_rng(seed)
    g, J, h, g0 = rng.uniform(-math.pi, math.pi, 4)
    p = KimParams(g=g, J=J, h=h, g0=g0)
    bath = BathInitialState("tilted", rng.uniform(0, math.pi))
    T = 4
    ed = ed_autocorrelator(p, T, bath)
    mps = lcga_build(p, T, bath)
    v = kick(p.probe_kick, p.h)
    got = [contract_correlator(mps, v, [(1, SIGMA_Z @ SIGMA_Z)])]
    got += [contract_correlator(mps, v, [(1, SIGMA_Z), (t, SIGMA_Z)]) for t in range(2, T + 1)]
    np.testing.assert_allclose(got, ed, atol=1e-10)


def test_free_case_entanglement_is_sublinear():
    p = KimParams(g=0.7, J=0.5, h=0.0)
    Ts = [4, 6, 8, 10]
    s = [temporal_entropy(schmidt_spectrum(lcga_build(p, T, BathInitialState("tilted", 0.3)), T // 2)) for T in Ts]
    per_step = [x / T for x, T in zip(s, Ts)]
    assert all(a > b for a, b in zip(per_step, per_step[1:]))
    assert (s[-1] - s[1]) / (Ts[-1] - Ts[1]) < 0.1
