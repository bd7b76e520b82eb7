"""Two incoherent point sources: parameters, mean intensity and photon draws.

The "+" source sits at ``s0 + s/2`` and carries the fraction ``q`` of the
light; the "-" source sits at ``s0 - s/2`` with ``1 - q``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import ndtr

from .psf import GaussianPsf, PsfModel, SampledPsf
from .quadrature import gauss_legendre

PARAM_NAMES = ("s0", "s", "q")


@dataclass(frozen=True)
class SourceParams:
    s0: float = 0.0
    s: float = 1.0
    q: float = 0.5

    def __post_init__(self):
        for name in PARAM_NAMES:
            object.__setattr__(self, name, float(getattr(self, name)))
        if not all(np.isfinite([self.s0, self.s, self.q])):
            raise ValueError(f"non-finite source parameters {self}")
        if self.s < 0:
            raise ValueError(f"separation must be nonnegative, got {self.s}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"relative brightness must lie in [0, 1], got {self.q}")

    @property
    def Qsq(self) -> float:
        """Balance 4 q (1 - q): 1 for equal sources, 0 for a single one."""
        return 4.0 * self.q * (1.0 - self.q)

    @property
    def centers(self) -> tuple[float, float]:
        return self.s0 + 0.5 * self.s, self.s0 - 0.5 * self.s

    def as_array(self) -> np.ndarray:
        return np.array([self.s0, self.s, self.q])

    def replace(self, **changes) -> "SourceParams":
        values = dict(s0=self.s0, s=self.s, q=self.q)
        values.update(changes)
        return SourceParams(**values)


@dataclass(frozen=True)
class IntensityProfile:
    psf: PsfModel
    params: SourceParams

    def density(self, x):
        cp, cm = self.params.centers
        q = self.params.q
        return q * self.psf.intensity(x - cp) + (1.0 - q) * self.psf.intensity(x - cm)

    def window(self, margin: float | None = None) -> tuple[float, float]:
        """Interval outside which the density is negligible."""
        h = self.psf.half_extent if margin is None else margin
        cp, cm = self.params.centers
        return cm - h, cp + h


def intensity_profile(psf: PsfModel, params: SourceParams) -> IntensityProfile:
    return IntensityProfile(psf, params)


def intensity_gradients(psf: PsfModel, params: SourceParams, x) -> np.ndarray:
    """Parameter gradients of the mean intensity, shape (3, len(x)).

    Rows are ordered (s0, s, q).
    """
    x = np.asarray(x, dtype=float)
    cp, cm = params.centers
    q = params.q
    dp = psf.intensity_derivative(x - cp)
    dm = psf.intensity_derivative(x - cm)
    return np.stack([
        -(q * dp + (1.0 - q) * dm),
        -0.5 * (q * dp - (1.0 - q) * dm),
        psf.intensity(x - cp) - psf.intensity(x - cm),
    ])


def sample_photons(profile: IntensityProfile, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` photon positions from the mean intensity.

    ``seed`` may be an integer, a ``SeedSequence`` or a ``Generator``.
    """
    n = int(n)
    if n < 1:
        raise ValueError("need at least one photon")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cp, cm = profile.params.centers
    plus = rng.random(n) < profile.params.q
    centres = np.where(plus, cp, cm)
    psf = profile.psf
    if isinstance(psf, GaussianPsf):
        return centres + psf.width * rng.standard_normal(n)
    return centres + _inverse_cdf(psf)(rng.random(n))


def _inverse_cdf(psf: PsfModel):
    if isinstance(psf, SampledPsf):
        lo, hi = psf.knots[0], psf.knots[-1]
    else:
        lo, hi = -psf.half_extent, psf.half_extent
    x, w = gauss_legendre(lo, hi, (hi - lo) / 4000.0, order=4)
    cdf = np.concatenate([[0.0], np.cumsum(psf.intensity(x) * w)])
    grid = np.concatenate([[lo], x])
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return PchipInterpolator(cdf[keep], grid[keep])


def mixture_moments(psf: PsfModel, params: SourceParams) -> tuple[float, float, float]:
    """Mean, variance and third central moment of the mean intensity."""
    mu, var, k3 = psf.intensity_moments()
    q, s = params.q, params.s
    mean = params.s0 + mu + (q - 0.5) * s
    return mean, var + q * (1 - q) * s * s, k3 + q * (1 - q) * (1 - 2 * q) * s**3


def mixture_cdf(profile: IntensityProfile, x) -> np.ndarray:
    """Cumulative distribution of the mean intensity (Gaussian PSF only)."""
    psf = profile.psf
    if not isinstance(psf, GaussianPsf):
        raise NotImplementedError("closed-form CDF only for the Gaussian PSF")
    cp, cm = profile.params.centers
    q = profile.params.q
    x = np.asarray(x, dtype=float)
    return q * ndtr((x - cp) / psf.width) + (1 - q) * ndtr((x - cm) / psf.width)

