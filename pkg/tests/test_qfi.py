import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twopoint.psf import gaussian_psf, moments, overlaps
from twopoint.qfi import (DegenerateStateError, FisherMatrix, build_subspace, compatibility_check,
                          compatibility_residual_grid, qfim_closed_form, qfim_from_slds,
                          qfim_grid_oracle, qfim_rank2, quantum_fisher, rho_eigensystem,
                          sld_residual, sld_subspace)
from twopoint.scene import SourceParams

from conftest import STANDARD_Q, STANDARD_S

# frozen closed-form reference at (s=1, q=0.5), unit Gaussian
Q_REF = np.array([[0.805299804232, 0.0, 0.778800783071],
                  [0.0, 0.25, 0.0],
                  [0.778800783071, 0.0, 0.884796867714]])


def closed(psf, params):
    return qfim_closed_form(overlaps(psf, params.s), moments(psf), params)


def rank2(psf, params):
    ov = overlaps(psf, params.s)
    return qfim_rank2(build_subspace(ov, moments(psf), params), rho_eigensystem(ov, params.q))


def test_fisher_matrix_container():
    F = FisherMatrix(np.array([[1.0, 2.0, 0], [2.0 + 1e-13, 5, 0], [0, 0, 1]]))
    assert np.array_equal(F.entries, F.entries.T)
    assert F.entry("s0", "s") == pytest.approx(2.0)
    with pytest.raises(ValueError):
        F.entries[0, 0] = 3.0
    with pytest.raises(ValueError):
        FisherMatrix(np.eye(2))


def test_closed_form_reference(gauss):
    Q = closed(gauss, SourceParams(0, 1, 0.5))
    np.testing.assert_allclose(Q.entries, Q_REF, atol=1e-11)
    np.testing.assert_allclose(Q.entries, [[0.805300, 0, 0.778801], [0, 0.25, 0], [0.778801, 0, 0.884797]],
                               atol=1e-6)


def test_closed_form_decoupling(gauss, sinc_like):
    for psf in (gauss, sinc_like):
        for s in (0.3, 1.7):
            Q = closed(psf, SourceParams(0, s, 0.5)).entries
            assert Q[0, 1] == 0.0 and Q[1, 2] == 0.0


def test_closed_form_boundaries(gauss):
    Q = closed(gauss, SourceParams(0, 0, 0.3))
    assert Q.entries[2, 2] == 0 and Q.entries[0, 2] == 0 and Q.degenerate[2]
    Q = closed(gauss, SourceParams(0, 1, 1.0))
    assert Q.degenerate == (False, False, True)
    assert np.all(np.isfinite(Q.entries))


def test_eigensystem_values(gauss):
    ov = overlaps(gauss, 1.0)
    dec = rho_eigensystem(ov, 0.5)
    np.testing.assert_allclose(dec.lambdas, [(1 + ov.w) / 2, (1 - ov.w) / 2], atol=1e-15)
    np.testing.assert_allclose(dec.lambdas, [0.9412485, 0.0587515], atol=1e-7)
    np.testing.assert_allclose(rho_eigensystem(ov, 0.25).lambdas, [0.956646, 0.043354], atol=1e-6)
    np.testing.assert_allclose(rho_eigensystem(overlaps(gauss, 0.0), 0.3).lambdas, [1.0, 0.0], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(s=st.floats(0.01, 5.0), q=st.floats(0.0, 1.0))
def test_eigensystem_invariants(s, q):
    dec = rho_eigensystem(overlaps(gaussian_psf(), s), q)
    assert dec.lambda1 + dec.lambda2 == pytest.approx(1.0, abs=1e-12)
    assert dec.lambda1 >= dec.lambda2 >= 0
    if dec.lambda2 > 1e-10:
        np.testing.assert_allclose(dec.gram_products(), np.eye(2), atol=1e-10)


def test_subspace_gram_pattern(gauss):
    ov = overlaps(gauss, 1.0)
    sub = build_subspace(ov, moments(gauss), SourceParams(0, 1, 0.3))
    g = sub.momentum_gram()
    np.testing.assert_allclose(g, g.conj().T, atol=1e-15)
    assert np.linalg.eigvalsh(g).min() > -1e-12
    assert g[0, 1] == pytest.approx(ov.w)
    assert abs(g[0, 2]) < 1e-15 and abs(g[1, 3]) < 1e-15
    assert g[2, 2].real == pytest.approx(0.25)
    assert g[2, 3].real == pytest.approx(ov.tau)
    assert abs(abs(g[0, 3]) - ov.m) < 1e-15


def test_rank2_matches_closed_form(gauss):
    p = SourceParams(0, 1, 0.5)
    np.testing.assert_allclose(rank2(gauss, p).entries, closed(gauss, p).entries, atol=1e-8)
    R = rank2(gauss, p).entries
    assert abs(R[0, 1]) < 1e-10 and abs(R[1, 2]) < 1e-10


def test_rank2_rejects_pure_state(gauss):
    with pytest.raises(DegenerateStateError):
        rank2(gauss, SourceParams(0, 0, 0.5))


def test_rank2_and_oracle_at_s2_q03(gauss):
    p = SourceParams(0, 2, 0.3)
    R = rank2(gauss, p)
    assert R.min_eigenvalue() > -1e-9
    np.testing.assert_allclose(R.entries, qfim_grid_oracle(gauss, p).entries, atol=1e-6)


def test_grid_oracle_qss(gauss):
    assert qfim_grid_oracle(gauss, SourceParams(0, 1, 0.5)).entries[1, 1] == pytest.approx(0.25, abs=1e-6)


def test_grid_oracle_centroid_independence(gauss):
    a = qfim_grid_oracle(gauss, SourceParams(0, 1, 0.5)).entries
    b = qfim_grid_oracle(gauss, SourceParams(5, 1, 0.5)).entries
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_grid_oracle_spacing_convergence(gauss):
    p = SourceParams(0, 1, 0.3)
    a = qfim_grid_oracle(gauss, p, spacing=0.02).entries
    b = qfim_grid_oracle(gauss, p, spacing=0.01).entries
    assert np.max(np.abs(a - b)) < 1e-7


def test_grid_oracle_preconditions(gauss):
    with pytest.raises(ValueError):
        qfim_grid_oracle(gauss, SourceParams(0, 1, 0.5), spacing=0.05)
    with pytest.raises(ValueError):
        qfim_grid_oracle(gauss, SourceParams(0, 1, 0.5), margin=5.0)


@pytest.mark.slow
def test_three_way_agreement_standard_grid(gauss):
    worst = 0.0
    for s in STANDARD_S:
        for q in STANDARD_Q:
            p = SourceParams(0, s, q)
            c = closed(gauss, p).entries
            worst = max(worst, np.max(np.abs(rank2(gauss, p).entries - c)),
                        np.max(np.abs(qfim_grid_oracle(gauss, p).entries - c)))
    assert worst < 1e-6


def test_sampled_psf_three_way(sinc_like):
    p = SourceParams(0, 0.8, 0.3)
    c = closed(sinc_like, p).entries
    np.testing.assert_allclose(rank2(sinc_like, p).entries, c, atol=1e-8)
    np.testing.assert_allclose(qfim_grid_oracle(sinc_like, p, spacing=0.01).entries, c, atol=1e-6)


def test_psd_and_symmetry_on_grid(gauss):
    for s in STANDARD_S:
        for q in STANDARD_Q:
            a = closed(gauss, SourceParams(0, s, q))
            b = closed(gauss, SourceParams(0, s, 1 - q))
            assert a.min_eigenvalue() > -1e-9
            np.testing.assert_allclose(np.diag(a.entries), np.diag(b.entries), atol=1e-14)
            # q -> 1 - q flips the sign of the (s0, s) coupling only
            assert a.entries[0, 1] == pytest.approx(-b.entries[0, 1], abs=1e-14)


def test_sld_defining_equation_and_second_moment(gauss):
    p = SourceParams(0, 1, 0.5)
    sub = build_subspace(overlaps(gauss, 1.0), moments(gauss), p)
    for a in range(3):
        assert sld_residual(sub, sld_subspace(sub, a)) < 1e-9
    np.testing.assert_allclose(qfim_from_slds(sub), Q_REF, atol=1e-8)
    assert qfim_from_slds(sub)[1, 1] == pytest.approx(0.25, abs=1e-8)


def test_sld_centroid_single_source(gauss):
    # at s = 0 the state is pure and L_s0 = 2 (|psi><d psi| + |d psi><psi|) * (-1)
    p = SourceParams(0, 0, 0.4)
    sub = build_subspace(overlaps(gauss, 0.0), moments(gauss), p)
    sld = sld_subspace(sub, "s0")
    assert sld_residual(sub, sld) < 1e-12
    nonzero = sld.eigenvalues[np.abs(sld.eigenvalues) > 1e-9]
    np.testing.assert_allclose(np.sort(nonzero), [-1.0, 1.0], atol=1e-12)
    # the eigenmodes live in span{psi, d psi / dx}: coefficients on psi+ and psi- act alike
    modes = sld.modes[:, np.abs(sld.eigenvalues) > 1e-9]
    t, _ = sub.frame()
    assert np.linalg.matrix_rank(t @ modes, tol=1e-9) == 2


def test_compatibility_real_psf(gauss):
    for s in STANDARD_S:
        for q in STANDARD_Q:
            sub = build_subspace(overlaps(gauss, s), moments(gauss), SourceParams(0, s, q))
            r, ok = compatibility_check(sub)
            assert ok and np.max(np.abs(r)) < 1e-9
            assert np.all(np.diag(r) == 0)


def test_compatibility_grid_oracle(gauss, chirped):
    p = SourceParams(0, 1, 0.3)
    r_grid = compatibility_residual_grid(gauss, p)
    sub = build_subspace(overlaps(gauss, 1.0), moments(gauss), p)
    r_sub, _ = compatibility_check(sub)
    assert np.max(np.abs(r_grid - r_sub)) < 1e-7
    # a chirped amplitude breaks the condition
    assert np.max(np.abs(compatibility_residual_grid(chirped, p))) > 1e-3


def test_quantum_fisher_front_end(gauss):
    p = SourceParams(0, 1, 0.5)
    for method in ("closed-form", "rank2"):
        np.testing.assert_allclose(quantum_fisher(gauss, p, method).entries, Q_REF, atol=1e-8)
    with pytest.raises(ValueError):
        quantum_fisher(gauss, p, "nope")
