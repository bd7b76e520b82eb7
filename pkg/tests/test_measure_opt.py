import math

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermeval

from twopoint.cfi import PositionBins, measurement_cfi
from twopoint.measure_opt import (DesignSpec, ModeBasisError, givens_matrix, named_measurement,
                                  optimize_measurement, orthonormal_mode_basis)
from twopoint.psf import gaussian_psf, sampled_psf
from twopoint.scene import SourceParams


def hermite_gauss(x, k, width=1.0):
    u = x / width
    return hermeval(u, [0] * k + [1]) * np.exp(-u**2 / 4) / ((2 * math.pi) ** 0.25 * math.sqrt(width * math.factorial(k)))


@pytest.mark.parametrize("width", [1.0, 0.7])
def test_basis_is_hermite_gauss(width):
    basis = orthonormal_mode_basis(gaussian_psf(width), 5)
    x = np.linspace(-6, 6, 241) * width
    ref = np.stack([hermite_gauss(x, k, width) for k in range(5)])
    assert np.max(np.abs(basis.evaluate(x) - ref)) < 1e-8


def test_single_mode_is_psf(gauss):
    x = np.linspace(-5, 5, 101)
    np.testing.assert_allclose(orthonormal_mode_basis(gauss, 1).evaluate(x)[0], gauss.amplitude(x), atol=1e-14)


def test_basis_orthonormal(gauss, sinc_like):
    for psf in (gauss, sinc_like):
        g = orthonormal_mode_basis(psf, 4).gram()
        assert np.max(np.abs(g - np.eye(4))) < 1e-8


def test_rank_loss_reported():
    # a triangle amplitude has a piecewise-constant derivative and no usable second one
    x = np.linspace(-3, 3, 601)
    tri = sampled_psf(x, np.clip(1 - np.abs(x) / 2, 0, None) ** 6)
    with pytest.raises(ModeBasisError) as info:
        orthonormal_mode_basis(tri, 12)
    assert 0 < info.value.achieved < 12


def test_named_measurements(gauss):
    assert named_measurement("direct", gauss) == "direct"
    assert len(named_measurement("hg3", gauss)) == 3
    assert isinstance(named_measurement("bins:0.1:10", gauss), PositionBins)
    for bad in ("foo", "bins:1", "hgx"):
        with pytest.raises(ValueError):
            named_measurement(bad, gauss)


def test_givens_orthogonal():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5):
        o = givens_matrix(rng.uniform(-3, 3, n * (n - 1) // 2), n)
        np.testing.assert_allclose(o @ o.T, np.eye(n), atol=1e-14)
    np.testing.assert_array_equal(givens_matrix(np.zeros(6), 4), np.eye(4))
    with pytest.raises(ValueError):
        givens_matrix([0.1], 3)


def test_design_spec_validation():
    with pytest.raises(ValueError):
        DesignSpec(n=0)
    with pytest.raises(ValueError):
        DesignSpec(restarts=0)
    with pytest.raises(ValueError):
        DesignSpec(objective="nope")


def test_benchmark_four_modes(gauss):
    res = optimize_measurement(DesignSpec(n=4, objective="Hs", seed=1), gauss, SourceParams(0, 0.5, 0.5))
    assert res.fisher.entries[1, 1] >= 0.99 * 0.25
    assert res.objective <= res.bound + 1e-9
    assert res.loewner_margin >= -1e-9
    # the exported modes reproduce the achieved matrix
    again = measurement_cfi(res.measurement, gauss, SourceParams(0, 0.5, 0.5)).entries
    np.testing.assert_allclose(again, res.fisher.entries, atol=1e-10)


def test_single_mode_bounded(gauss):
    res = optimize_measurement(DesignSpec(n=1, objective="Hs", restarts=2), gauss, SourceParams(0, 0.5, 0.5))
    assert 0 < res.objective <= 0.25


def test_traces_monotone_and_start_respected(gauss):
    res = optimize_measurement(DesignSpec(n=3, objective="min-ratio", restarts=4, seed=3), gauss,
                               SourceParams(0, 0.7, 0.3))
    for trace in res.traces:
        assert all(b >= a for a, b in zip(trace, trace[1:]))
    assert res.objective >= max(res.start_values) - 1e-12
    assert res.objective <= 1.0 + 1e-9


def test_deterministic(gauss):
    spec = DesignSpec(n=3, objective="Hq", restarts=3, seed=5)
    p = SourceParams(0, 0.6, 0.3)
    a = optimize_measurement(spec, gauss, p)
    b = optimize_measurement(spec, gauss, p)
    assert a.traces == b.traces
    np.testing.assert_array_equal(a.angles, b.angles)
    c = optimize_measurement(DesignSpec(n=3, objective="Hq", restarts=3, seed=5, workers=3), gauss, p)
    assert c.traces == a.traces and c.best_restart == a.best_restart


def test_more_modes_never_worse(gauss):
    p = SourceParams(0, 0.5, 0.5)
    vals = [optimize_measurement(DesignSpec(n=n, objective="Hs", restarts=4, seed=2), gauss, p).objective
            for n in (1, 2, 3)]
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
