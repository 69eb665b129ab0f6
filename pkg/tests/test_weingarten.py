import itertools
from collections import Counter

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempo_im.weingarten import (
    Permutation,
    TransferMatrixSpec,
    averaged_gate_mp,
    boundary_permutation,
    chain_gates_mp,
    enumerate_permutations,
    gram_matrix,
    leading_spectrum,
    transfer_matrix,
    weingarten_matrix,
)


def test_enumeration_small():
    assert enumerate_permutations(1) == (Permutation.identity(1),)
    assert [p.images for p in enumerate_permutations(2)] == [(0, 1), (1, 0)]


def test_s4_cycle_census():
    perms = enumerate_permutations(4)
    assert len(set(perms)) == 24
    assert perms[0] == Permutation.identity(4)
    census = Counter(p.cycle_type() for p in perms)
    assert census == {(1, 1, 1, 1): 1, (2, 1, 1): 6, (2, 2): 3, (3, 1): 8, (4,): 6}


@pytest.mark.parametrize("k", [0, 3, 5])
def test_unsupported_k(k):
    with pytest.raises(ValueError):
        enumerate_permutations(k)


perm4 = st.permutations(range(4)).map(lambda xs: Permutation(tuple(xs)))


@given(perm4, perm4)
def test_group_laws(a, b):
    assert (a * a.inverse()).cycle_count() == 4
    assert (a * b).inverse() == b.inverse() * a.inverse()
    assert a.length() == 4 - a.cycle_count() >= 0
    for i in range(4):
        assert (a * b)(i) == a(b(i))


def test_boundaries():
    assert boundary_permutation(2, "S") == Permutation.from_cycles(2, (0, 1))
    assert boundary_permutation(4, "S") == Permutation.from_cycles(4, (0, 1), (2, 3))
    assert boundary_permutation(4, "F") == Permutation.from_cycles(4, (0, 3), (1, 2))
    assert boundary_permutation(4, "I") == Permutation.identity(4)


def test_gram_examples():
    D = 7.0
    np.testing.assert_allclose(gram_matrix(2, D).entries, [[D**2, D], [D, D**2]])
    np.testing.assert_allclose(gram_matrix(1, 3.0).entries, [[3.0]])
    g = gram_matrix(4, 2).entries
    assert np.allclose(g, g.T)
    assert np.all(np.diag(g) == 16) and g.min() == 2


def test_weingarten_k2_closed_form():
    q = 5.0
    expected = np.array([[1, -1 / q], [-1 / q, 1]]) / (q**2 - 1)
    np.testing.assert_allclose(weingarten_matrix(2, q).entries, expected, rtol=1e-14)
    np.testing.assert_allclose(weingarten_matrix(1, q).entries, [[1 / q]])


@pytest.mark.parametrize("q", [4, 6, 2.0**20])
def test_weingarten_inverts_gram(q):
    wg = weingarten_matrix(4, q).entries
    g = gram_matrix(4, q).entries
    assert np.allclose(wg, wg.T, rtol=1e-12, atol=0)
    np.testing.assert_allclose(wg @ g, np.eye(24), atol=1e-12)
    np.testing.assert_allclose(g @ wg @ g, g, rtol=1e-12)


def test_weingarten_singular_regime():
    with pytest.raises(ValueError):
        weingarten_matrix(4, 3)


@pytest.mark.parametrize("d,D", [(2, 2), (2, 8), (3, 4)])
def test_k2_transfer_matrices(d, D):
    den = D**2 * d**2 - 1
    ct_s = transfer_matrix(TransferMatrixSpec(2, d, D, "S"))
    np.testing.assert_allclose(ct_s, d**2 * np.array([[(D**2 - 1) / den, (d**2 - 1) * D / den], [0, 1]]), rtol=1e-13, atol=1e-15)
    ct_i = transfer_matrix(TransferMatrixSpec(2, d, D, "I"))
    np.testing.assert_allclose(ct_i, d**2 * np.array([[1, 0], [(d**2 - 1) * D / den, (D**2 - 1) / den]]), rtol=1e-13, atol=1e-15)
    ev = sorted(np.linalg.eigvals(ct_s).real)
    np.testing.assert_allclose(ev, sorted([d**2, d**2 * (D**2 - 1) / den]), rtol=1e-12)


@pytest.mark.parametrize("D", [2, 4, 16, 2**10])
def test_k4_leading_eigenvalue_exact(D):
    spec = leading_spectrum(transfer_matrix(TransferMatrixSpec(4, 2, D, "S")), rel_tol=0.01)
    assert spec[0][1] == 1
    assert abs(spec[0][0] - 16) < 1e-10


def test_k4_large_bath_spectrum():
    spec = leading_spectrum(transfer_matrix(TransferMatrixSpec(4, 2, 2**10, "S")), rel_tol=0.01)
    assert [m for _, m in spec] == [1, 6, 11, 6]
    for (val, _), ref in zip(spec, [16, 4, 1, 0.25]):
        assert abs(val - ref) / ref < 0.01


def test_transfer_matrix_huge_bath_is_finite():
    ct = transfer_matrix(TransferMatrixSpec(4, 2, 2.0**600, "S"))
    assert np.all(np.isfinite(ct))


def test_leading_spectrum_rejects_scalar():
    with pytest.raises(ValueError):
        leading_spectrum(np.array([[4.0]]))


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([0.5, 1.0]), st.integers(1, 3))
def test_growing_bath_composition(v_B, n):
    d = 2
    with mpmath.workdps(60):
        e = mpmath.mpf(d) ** (2 * v_B)
        D = lambda m: mpmath.mpf(d) ** (2 * v_B * m)
        first = averaged_gate_mp(4, D(n + 1) * d, e)
        second = averaged_gate_mp(4, D(n + 2) * d, e)
        composed = chain_gates_mp(first, second, 4, D(n + 1) * d)
        direct = averaged_gate_mp(4, D(n + 2) * d, e * e)
        rel = max(abs(composed[i, j] - direct[i, j]) for i, j in itertools.product(range(24), repeat=2))
        assert rel / mpmath.mnorm(direct, 1) < 1e-10
