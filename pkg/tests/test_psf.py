import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twopoint.psf import (GaussianPsf, gaussian_psf, load_psf, moments, overlap_series, overlaps,
                          validate_real_psf)
from twopoint.quadrature import integrate

# frozen reference values (closed-form Gaussian expressions, unit width)
AMP0 = (2 * math.pi) ** -0.25
W1, M1, TAU1 = 0.8824969025845955, 0.22062422564614886, 0.16546816923461166


def test_gaussian_amplitude_at_origin(gauss):
    assert abs(gauss.amplitude(0.0) - 0.63161877774) < 1e-10
    assert abs(gauss.amplitude(0.0) - AMP0) < 1e-15


def test_gaussian_normalized(gauss):
    val, _ = integrate(lambda x: gauss.amplitude(x) ** 2, -14, 14)
    assert abs(val - 1.0) < 1e-12


def test_momentum_variance_width_two():
    assert gaussian_psf(2.0).momentum_variance == pytest.approx(1 / 16, abs=1e-15)
    assert moments(gaussian_psf(2.0), method="momentum").p2 == pytest.approx(1 / 16, rel=1e-10)


@pytest.mark.parametrize("width", [0.0, -1.0, float("nan")])
def test_bad_width_rejected(width):
    with pytest.raises(ValueError):
        GaussianPsf(width)


@pytest.mark.parametrize("method", ["analytic", "position", "momentum"])
def test_gaussian_moments(gauss, method):
    mom = moments(gauss, method=method)
    assert mom.p2 == pytest.approx(0.25, abs=1e-10)
    assert mom.p4 == pytest.approx(0.1875, abs=1e-10)
    assert mom.varP2 == pytest.approx(0.125, abs=1e-10)


def test_sampled_moments_match(sampled_gauss):
    mom = moments(sampled_gauss)
    assert mom.p2 == pytest.approx(0.25, abs=1e-8)
    assert mom.p4 == pytest.approx(0.1875, abs=1e-7)


def test_varP2_nonnegative(sinc_like):
    assert moments(sinc_like).varP2 >= 0


@pytest.mark.parametrize("method", ["analytic", "quadrature", "position"])
def test_overlaps_s1(gauss, method):
    ov = overlaps(gauss, 1.0, method=method)
    assert ov.w == pytest.approx(W1, abs=1e-9)
    assert ov.m == pytest.approx(M1, abs=1e-9)
    assert ov.tau == pytest.approx(TAU1, abs=1e-9)
    assert abs(ov.w - 0.8824969) < 1e-7 and abs(ov.m - 0.2206242) < 1e-7 and abs(ov.tau - 0.1654682) < 1e-7


def test_overlaps_s2(gauss):
    assert overlaps(gauss, 2.0).w == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert overlaps(gauss, 2.0, method="quadrature").w == pytest.approx(0.6065307, abs=1e-7)


@pytest.mark.parametrize("psf_name", ["gauss", "sampled_gauss", "sinc_like"])
def test_overlaps_at_zero(psf_name, request):
    psf = request.getfixturevalue(psf_name)
    ov = overlaps(psf, 0.0)
    assert ov.w == pytest.approx(1.0, abs=1e-10)
    assert ov.m == pytest.approx(0.0, abs=1e-10)
    assert ov.tau == pytest.approx(moments(psf).p2, abs=1e-8)


def test_one_minus_w_has_no_cancellation(gauss):
    s = 1e-6
    ov = overlaps(gauss, s)
    assert ov.one_minus_w == pytest.approx(-math.expm1(-s * s / 8), rel=1e-12)
    ov_pos = overlaps(gauss, 1e-3, method="position")
    assert ov_pos.one_minus_w == pytest.approx(-math.expm1(-1e-6 / 8), rel=1e-8)


def test_negative_separation_rejected(gauss):
    with pytest.raises(ValueError):
        overlaps(gauss, -0.1)


@pytest.mark.parametrize("psf_name", ["gauss", "sinc_like"])
def test_overlap_derivative_identities(psf_name, request):
    # m = -dw/ds and tau = -d2w/ds2 over a log grid of separations
    psf = request.getfixturevalue(psf_name)
    for s in np.geomspace(1e-3, 5.0, 7):
        h = 1e-4 * max(s, 1.0)
        wp, w0, wm = (overlaps(psf, s + d).w for d in (h, 0.0, -h))
        ov = overlaps(psf, s)
        assert abs(ov.m + (wp - wm) / (2 * h)) < 1e-6
        h2 = 1e-3 * max(s, 1.0)
        wp, wm = overlaps(psf, s + h2).w, overlaps(psf, s - h2).w
        assert abs(ov.tau + (wp - 2 * w0 + wm) / h2**2) < 1e-5


def test_series_values(gauss):
    mom = moments(gauss)
    ser = overlap_series(mom, 0.1)
    assert ser.m == pytest.approx(0.02496875, abs=1e-15)
    assert abs(ser.w - overlaps(gauss, 0.1).w) < 1e-6
    zero = overlap_series(mom, 0.0)
    assert zero.w == 1.0 and zero.m == 0.0


def test_series_error_scales_as_s6(gauss):
    mom = moments(gauss)
    ratios = []
    for s in (0.05, 0.1, 0.2):
        err = abs(overlap_series(mom, s).w - overlaps(gauss, s).w)
        ratios.append(err / (s * math.sqrt(mom.p2)) ** 6)
    assert max(ratios) / min(ratios) < 1.2


def test_series_guard_warns(gauss):
    with pytest.warns(UserWarning):
        overlap_series(moments(gauss), 3.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        overlap_series(moments(gauss), 1.0)


def test_quadrature_invariant_under_refinement(sinc_like):
    a = overlaps(sinc_like, 0.7, method="position", atol=1e-13)
    b = overlaps(sinc_like, 0.7, method="position", atol=1e-15)
    assert abs(a.w - b.w) < 1e-8 and abs(a.m - b.m) < 1e-8 and abs(a.tau - b.tau) < 1e-8


def test_parity_reports(gauss, sinc_like, chirped):
    assert validate_real_psf(gauss).is_real
    assert validate_real_psf(sinc_like).is_real
    rep = validate_real_psf(chirped)
    assert not rep.is_real
    assert rep.max_imag > 1e-3 and rep.symmetry_defect > 1e-6


def test_load_psf_renormalizes(tmp_path):
    x = np.arange(-12, 12.001, 0.05)
    path = tmp_path / "psf.txt"
    np.savetxt(path, np.column_stack([x, 3.0 * np.exp(-x**2 / 4)]), header="x amplitude")
    psf, factor = load_psf(path)
    assert factor == pytest.approx(1 / (3.0 * (2 * math.pi) ** 0.25), rel=1e-9)
    assert psf.amplitude(0.0) == pytest.approx(AMP0, rel=1e-9)


def test_load_psf_bad_columns(tmp_path):
    path = tmp_path / "bad.txt"
    np.savetxt(path, np.ones((10, 3)))
    with pytest.raises(ValueError):
        load_psf(path)


@settings(max_examples=25, deadline=None)
@given(s=st.floats(0.0, 6.0), width=st.floats(0.3, 3.0))
def test_overlap_bounds(s, width):
    ov = overlaps(gaussian_psf(width), s)
    assert -1.0 <= ov.w <= 1.0
    assert 0.0 <= ov.one_minus_w <= 1.0
    # Cauchy-Schwarz within the span of psi and P psi
    assert ov.m**2 <= moments(gaussian_psf(width)).p2 * (1 - ov.w**2) + 1e-15
