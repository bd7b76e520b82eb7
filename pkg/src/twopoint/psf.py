"""Point-spread-function models and their momentum-space functionals.

Lengths are measured in units of the PSF width. The momentum operator is
``P = -i d/dx``, so ``<P^2> = int |psi'|^2 dx`` and the overlap functionals

    w(s)   = <psi| exp(isP) |psi>        = int cos(sp) phi(p) dp
    m(s)   = Im <psi| exp(isP) P |psi>   = int p sin(sp) phi(p) dp
    tau(s) = <psi| exp(isP) P^2 |psi>    = int p^2 cos(sp) phi(p) dp

are all real for a real amplitude, with ``phi`` the momentum density.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial import hermite_e
from scipy.interpolate import make_interp_spline

from .quadrature import QuadratureError, integrate, nodes_from_edges

__all__ = [
    "PsfModel", "GaussianPsf", "SampledPsf", "PsfMoments", "OverlapSet", "ParityReport",
    "gaussian_psf", "sampled_psf", "load_psf", "moments", "overlaps", "overlap_series",
    "validate_real_psf", "QuadratureError",
]

# amplitude of a unit Gaussian drops below 1e-17 of its peak at ~12.5 widths
_GAUSS_EXTENT = 13.0
_SERIES_GUARD = 0.5


class PsfModel:
    """Interface shared by analytic and sampled PSFs."""

    kind: str
    width: float

    def amplitude(self, x):
        raise NotImplementedError

    def derivative(self, x, order: int = 1):
        """``order``-th derivative of the amplitude with respect to x."""
        raise NotImplementedError

    def momentum_density(self, p):
        raise NotImplementedError

    @property
    def half_extent(self) -> float:
        """Distance from the origin beyond which the amplitude is negligible."""
        raise NotImplementedError

    @property
    def is_real(self) -> bool:
        return True

    def intensity(self, x):
        a = self.amplitude(x)
        return (a * np.conj(a)).real

    def intensity_derivative(self, x):
        return 2.0 * (np.conj(self.amplitude(x)) * self.derivative(x)).real

    def intensity_moments(self) -> tuple[float, float, float]:
        """Mean, variance and third central moment of the intensity."""
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianPsf(PsfModel):
    """Gaussian amplitude whose intensity is a normal density of std ``width``."""

    width: float = 1.0
    kind: str = "analytic-gaussian"

    def __post_init__(self):
        if not (np.isfinite(self.width) and self.width > 0):
            raise ValueError(f"PSF width must be positive, got {self.width!r}")

    @property
    def momentum_variance(self) -> float:
        return 1.0 / (4.0 * self.width**2)

    def amplitude(self, x):
        x = np.asarray(x, dtype=float)
        norm = (2.0 * np.pi * self.width**2) ** -0.25
        return norm * np.exp(-(x**2) / (4.0 * self.width**2))

    def derivative(self, x, order: int = 1):
        # d^k/dx^k exp(-u^2/2) with u = x / (sqrt(2) width) gives (-1)^k He_k(u)
        x = np.asarray(x, dtype=float)
        scale = 1.0 / (math.sqrt(2.0) * self.width)
        u = x * scale
        coeffs = np.zeros(order + 1)
        coeffs[order] = 1.0
        return (-scale) ** order * hermite_e.hermeval(u, coeffs) * self.amplitude(x)

    def momentum_density(self, p):
        p = np.asarray(p, dtype=float)
        v = self.momentum_variance
        return np.exp(-(p**2) / (2.0 * v)) / math.sqrt(2.0 * np.pi * v)

    @property
    def half_extent(self) -> float:
        return _GAUSS_EXTENT * self.width

    def intensity_moments(self):
        return 0.0, self.width**2, 0.0


class SampledPsf(PsfModel):
    """Amplitude given on a uniform grid, interpolated by a quintic spline.

    The samples are renormalised to unit intensity; the applied factor is kept
    in ``norm_factor``. Outside the sampled window the amplitude is zero.
    """

    kind = "user-sampled"

    def __init__(self, x, amplitude, *, degree: int = 5):
        x = np.asarray(x, dtype=float)
        amplitude = np.asarray(amplitude)
        if x.ndim != 1 or x.shape != amplitude.shape:
            raise ValueError("x and amplitude must be 1-D arrays of equal length")
        if x.size < degree + 2:
            raise ValueError(f"need at least {degree + 2} samples")
        steps = np.diff(x)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-6 * steps.mean():
            raise ValueError("samples must lie on a strictly increasing uniform grid")
        self._x = x
        self._complex = np.iscomplexobj(amplitude) and np.any(amplitude.imag != 0)
        self._re = make_interp_spline(x, amplitude.real, k=degree)
        self._im = make_interp_spline(x, amplitude.imag, k=degree) if self._complex else None
        self._nodes, self._weights = nodes_from_edges(x, order=8)
        mass = float(self._raw_intensity(self._nodes) @ self._weights)
        if not mass > 0:
            raise ValueError("amplitude samples have zero norm")
        self.norm_factor = 1.0 / math.sqrt(mass)
        dens = self.intensity(self._nodes) * self._weights
        mean = float(np.sum(dens * self._nodes))
        var = float(np.sum(dens * (self._nodes - mean) ** 2))
        k3 = float(np.sum(dens * (self._nodes - mean) ** 3))
        self._moments = (mean, var, k3)
        self.width = math.sqrt(var)

    def _raw_intensity(self, x):
        re = self._re(x)
        im = self._im(x) if self._im is not None else 0.0
        return re * re + im * im

    @property
    def samples(self) -> np.ndarray:
        return self._x

    @property
    def knots(self) -> np.ndarray:
        return self._x

    @property
    def is_real(self) -> bool:
        return not self._complex

    @property
    def half_extent(self) -> float:
        return float(max(abs(self._x[0]), abs(self._x[-1])))

    def _eval(self, x, order: int):
        x = np.asarray(x, dtype=float)
        if order > self._re.k:
            # piecewise polynomial: higher derivatives vanish inside every knot interval
            return np.zeros(x.shape, dtype=complex if self._complex else float)
        inside = (x >= self._x[0]) & (x <= self._x[-1])
        xi = np.where(inside, x, self._x[0])
        out = self._re(xi, nu=order)
        if self._im is not None:
            out = out + 1j * self._im(xi, nu=order)
        return np.where(inside, out * self.norm_factor, 0.0)

    def amplitude(self, x):
        return self._eval(x, 0)

    def derivative(self, x, order: int = 1):
        return self._eval(x, order)

    def fourier(self, p, chunk: int = 256):
        """Momentum amplitude (2 pi)^-1/2 int psi(x) exp(-ipx) dx."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        vals = self.amplitude(self._nodes) * self._weights
        out = np.empty(p.shape, dtype=complex)
        for i in range(0, p.size, chunk):
            block = p[i:i + chunk]
            out[i:i + chunk] = np.exp(-1j * np.outer(block, self._nodes)) @ vals
        return out / math.sqrt(2.0 * np.pi)

    def momentum_density(self, p):
        p = np.asarray(p, dtype=float)
        return np.abs(self.fourier(p.ravel())).reshape(p.shape) ** 2

    def intensity_moments(self):
        return self._moments


def gaussian_psf(width: float = 1.0) -> GaussianPsf:
    """Gaussian PSF with amplitude (2 pi w^2)^-1/4 exp(-x^2 / 4 w^2)."""
    return GaussianPsf(float(width))


def sampled_psf(x, amplitude) -> SampledPsf:
    return SampledPsf(x, amplitude)


def load_psf(path) -> tuple[SampledPsf, float]:
    """Read a two-column ``x amplitude`` text file ('#' starts a comment).

    Returns the PSF and the renormalisation factor that was applied.
    """
    data = np.loadtxt(Path(path), comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (x, amplitude), got {data.shape[1]}")
    psf = SampledPsf(data[:, 0], data[:, 1])
    return psf, psf.norm_factor


# ---------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class PsfMoments:
    """Even momentum moments <P^2>, <P^4>, <P^6> of a PSF."""

    p2: float
    p4: float
    p6: float = float("nan")

    @property
    def varP2(self) -> float:
        return self.p4 - self.p2**2


def _position_domain(psf: PsfModel):
    if isinstance(psf, SampledPsf):
        return dict(lo=psf.knots[0], hi=psf.knots[-1], breakpoints=psf.knots,
                    panel_width=psf.knots[-1] - psf.knots[0], order=8)
    h = psf.half_extent
    return dict(lo=-h, hi=h, panel_width=0.5 * psf.width)


def _momentum_cutoff(psf: PsfModel) -> float:
    if isinstance(psf, GaussianPsf):
        return 14.0 * math.sqrt(psf.momentum_variance)
    return math.pi / float(np.diff(psf.knots).mean())


def moments(psf: PsfModel, method: str = "auto", rtol: float = 1e-12) -> PsfMoments:
    """Second, fourth and sixth momentum moments.

    ``method`` is ``analytic`` (Gaussian only), ``position`` (integrals of
    squared derivatives), ``momentum`` (integrals against the momentum
    density) or ``auto``.
    """
    if method == "auto":
        method = "analytic" if isinstance(psf, GaussianPsf) else "position"
    if method == "analytic":
        if not isinstance(psf, GaussianPsf):
            raise ValueError("analytic moments exist only for the Gaussian PSF")
        v = psf.momentum_variance
        return PsfMoments(v, 3.0 * v**2, 15.0 * v**3)
    if method == "position":
        dom = _position_domain(psf)
        lo, hi = dom.pop("lo"), dom.pop("hi")

        def f(x):
            return np.stack([np.abs(psf.derivative(x, k)) ** 2 for k in (1, 2, 3)])

        vals, _ = integrate(f, lo, hi, rtol=rtol, atol=0.0, **dom)
        return PsfMoments(*map(float, vals))
    if method == "momentum":
        cut = _momentum_cutoff(psf)

        def f(p):
            phi = psf.momentum_density(p)
            return np.stack([p**2 * phi, p**4 * phi, p**6 * phi])

        width = cut / 28.0 if isinstance(psf, GaussianPsf) else cut / 8.0
        vals, _ = integrate(f, -cut, cut, panel_width=width, rtol=rtol, atol=0.0)
        return PsfMoments(*map(float, vals))
    raise ValueError(f"unknown moment method {method!r}")


# ---------------------------------------------------------------------------
# overlaps


@dataclass(frozen=True)
class OverlapSet:
    """Separation-dependent scalars that determine the quantum Fisher matrix.

    ``one_minus_w`` carries 1 - w without cancellation; small-separation
    precisions depend on it.
    """

    s: float
    w: float
    m: float
    tau: float
    one_minus_w: float
    method: str

    @property
    def one_minus_w2(self) -> float:
        u = self.one_minus_w
        return u * (2.0 - u)


def _check_s(s: float) -> float:
    s = float(s)
    if not (np.isfinite(s) and s >= 0):
        raise ValueError(f"separation must be finite and nonnegative, got {s!r}")
    return s


def overlaps(psf: PsfModel, s: float, method: str = "auto", atol: float = 1e-13) -> OverlapSet:
    """Overlap functionals w, m, tau at separation ``s``.

    ``method``: ``analytic`` (Gaussian closed form), ``quadrature``
    (momentum-space integrals), ``position`` (shifted-amplitude integrals),
    or ``auto`` (analytic for the Gaussian, position for sampled PSFs).
    """
    s = _check_s(s)
    if method == "auto":
        method = "analytic" if isinstance(psf, GaussianPsf) else "position"
    if method == "analytic":
        if not isinstance(psf, GaussianPsf):
            raise ValueError("closed-form overlaps exist only for the Gaussian PSF")
        p2 = psf.momentum_variance
        a = 0.5 * s * s * p2
        w = math.exp(-a)
        return OverlapSet(s, w, s * p2 * w, (p2 - s * s * p2 * p2) * w, -math.expm1(-a), "analytic")
    if s == 0.0:
        p2 = moments(psf).p2
        return OverlapSet(0.0, 1.0, 0.0, p2, 0.0, method)
    if method == "quadrature":
        cut = _momentum_cutoff(psf)

        def f(p):
            phi = psf.momentum_density(p)
            c, sn = np.cos(s * p), np.sin(s * p)
            half = np.sin(0.5 * s * p)
            return np.stack([c * phi, p * sn * phi, p * p * c * phi, 2.0 * half * half * phi])

        width = min(cut / 28.0, 0.5 / max(s, 1e-12))
        vals, _ = integrate(f, -cut, cut, panel_width=width, rtol=0.0, atol=atol)
    elif method == "position":
        vals = _position_overlaps(psf, s, atol)
    else:
        raise ValueError(f"unknown overlap method {method!r}")
    w, m, tau, omw = map(float, vals)
    return OverlapSet(s, w, m, tau, omw, method)


def _position_overlaps(psf: PsfModel, s: float, atol: float) -> np.ndarray:
    # w = int psi(x) psi(x+s), m = -int psi psi'(x+s), tau = int psi' psi'(x+s),
    # 1 - w = (1/2) int (psi(x+s) - psi(x))^2 for a normalised amplitude
    def f(x):
        a, da = psf.amplitude(x), psf.derivative(x)
        b, db = psf.amplitude(x + s), psf.derivative(x + s)
        diff = b - a
        return np.stack([(np.conj(a) * b).real, -(np.conj(a) * db).real,
                         (np.conj(da) * db).real, 0.5 * np.abs(diff) ** 2])

    if isinstance(psf, SampledPsf):
        k = psf.knots
        lo, hi = k[0] - s, k[-1]
        if hi <= lo:
            return np.array([0.0, 0.0, 0.0, 1.0])
        edges = np.union1d(k, k - s)
        edges = edges[(edges >= lo) & (edges <= hi)]
        x, wts = nodes_from_edges(edges, order=8)
        return f(x) @ wts
    h = psf.half_extent
    vals, _ = integrate(f, -h - s, h, panel_width=0.5 * psf.width, rtol=0.0, atol=atol)
    return vals


def overlap_series(mom: PsfMoments, s: float, order: int = 4) -> OverlapSet:
    """Small-separation expansion of the overlap functionals.

    ``order=4`` keeps w to s^4 and m to s^3; ``order=6`` adds the <P^6> terms.
    """
    s = _check_s(s)
    if s * math.sqrt(mom.p2) > _SERIES_GUARD:
        warnings.warn(f"overlap series used outside its range (s*sqrt(p2) = {s * math.sqrt(mom.p2):.3g})",
                      stacklevel=2)
    p2, p4 = mom.p2, mom.p4
    omw = 0.5 * p2 * s**2 - p4 * s**4 / 24.0
    m = p2 * s - p4 * s**3 / 6.0
    tau = p2 - 0.5 * p4 * s**2
    if order == 6:
        if not np.isfinite(mom.p6):
            raise ValueError("sixth-order series needs the sixth moment")
        omw += mom.p6 * s**6 / 720.0
        m += mom.p6 * s**5 / 120.0
        tau += mom.p6 * s**4 / 24.0
    elif order != 4:
        raise ValueError("order must be 4 or 6")
    return OverlapSet(s, 1.0 - omw, m, tau, omw, "series")


# ---------------------------------------------------------------------------
# parity


@dataclass(frozen=True)
class ParityReport:
    max_imag: float
    symmetry_defect: float
    is_real: bool


def validate_real_psf(psf: PsfModel, tol: float = 1e-9, points: int = 2001) -> ParityReport:
    """Check that the amplitude is real and the momentum density even."""
    h = psf.half_extent
    x = np.linspace(-h, h, points)
    max_imag = float(np.max(np.abs(np.imag(psf.amplitude(x)))))
    cut = _momentum_cutoff(psf)
    if isinstance(psf, SampledPsf):
        cut = min(cut, 12.0 / psf.width)
    p = np.linspace(0.0, cut, 401)
    defect = float(np.max(np.abs(psf.momentum_density(p) - psf.momentum_density(-p))))
    return ParityReport(max_imag, defect, max_imag < tol and defect < tol)
