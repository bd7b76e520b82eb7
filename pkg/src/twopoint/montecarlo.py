"""Photon-level simulation and maximum-likelihood estimation.

Used to check that the classical Cramer-Rao bound of a measurement is
reached at finite photon numbers.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .cfi import Measurement, direct_imaging_cfi, measurement_cfi
from .psf import GaussianPsf, PsfModel
from .scene import PARAM_NAMES, SourceParams, intensity_profile, sample_photons

__all__ = [
    "DEFAULT_BOX", "MleResult", "EstimationRun", "log_likelihood", "moment_init", "mle",
    "simulate_counts", "crlb_saturation_study",
]

DEFAULT_BOX = ((-10.0, 10.0), (0.0, 10.0), (0.0, 1.0))
_RESTARTS = 4
_SCREEN_EVALS = 25
# restart jitter: (s0, s) in PSF widths, q absolute
_JITTER = (0.1, 0.1, 0.05)


def _log_mix(z: np.ndarray, q: float) -> float:
    """sum log(q e^z + (1-q) e^-z) without overflow."""
    if q == 1.0:
        return float(z.sum())
    if q == 0.0:
        return float(-z.sum())
    if np.max(np.abs(z)) < 300.0:
        ez = np.exp(z)
        return float(np.log(q * ez + (1.0 - q) / ez).sum())
    az = np.abs(z)
    t = np.exp(-2.0 * az)
    inner = np.where(z >= 0, q + (1.0 - q) * t, (1.0 - q) + q * t)
    return float(az.sum() + np.log(inner).sum())


class _DirectData:
    """Photon positions with the sums the Gaussian likelihood needs."""

    def __init__(self, x, psf: PsfModel):
        self.x = np.asarray(x, dtype=float)
        if self.x.ndim != 1 or self.x.size == 0:
            raise ValueError("need a nonempty one-dimensional array of photon positions")
        self.psf = psf
        self.n = self.x.size
        self.sum1 = float(self.x.sum())
        self.sum2 = float(self.x @ self.x)

    def loglik(self, s0, s, q):
        psf = self.psf
        if isinstance(psf, GaussianPsf):
            # log q N(x; c+) + (1-q) N(x; c-) = -u^2/2 - a^2/2 + log(q e^z + (1-q) e^-z), z = a u
            sig = psf.width
            a = 0.5 * s / sig
            z = a * (self.x - s0) / sig
            quad = (self.sum2 - 2.0 * s0 * self.sum1 + self.n * s0 * s0) / (sig * sig)
            return float(-0.5 * quad - 0.5 * self.n * a * a + _log_mix(z, q)
                         - self.n * np.log(sig * np.sqrt(2.0 * np.pi)))
        cp, cm = s0 + 0.5 * s, s0 - 0.5 * s
        with np.errstate(divide="ignore"):
            dens = q * psf.intensity(self.x - cp) + (1.0 - q) * psf.intensity(self.x - cm)
            return float(np.log(dens).sum())


class _CountData:
    def __init__(self, counts, meas: Measurement, psf: PsfModel):
        self.counts = np.asarray(counts, dtype=float)
        if self.counts.sum() <= 0:
            raise ValueError("need at least one detected photon")
        self.meas = meas
        self.psf = psf
        self.n = float(self.counts.sum())

    def loglik(self, s0, s, q):
        p = self.meas.probabilities(self.psf, SourceParams(s0, s, q))
        p = np.clip(p, 0.0, None)
        live = self.counts > 0
        with np.errstate(divide="ignore"):
            return float(self.counts[live] @ np.log(p[live]))


def log_likelihood(data, psf: PsfModel, params: SourceParams, measurement="direct") -> float:
    """Log-likelihood of photon positions (direct) or outcome counts."""
    obj = _DirectData(data, psf) if measurement == "direct" else _CountData(data, measurement, psf)
    return obj.loglik(params.s0, params.s, params.q)


def moment_init(x, psf: PsfModel, box=DEFAULT_BOX) -> SourceParams:
    """Method-of-moments start from the sample mean, variance and skewness.

    The mixture obeys var - sigma^2 = q(1-q)s^2 = A and k3 - k3_psf =
    q(1-q)(1-2q)s^3 = B, so d = (1-2q)s = B/A and s^2 = d^2 + 4A.
    """
    x = np.asarray(x, dtype=float)
    mu, var0, k30 = psf.intensity_moments()
    mean = float(x.mean())
    c = x - mean
    var, k3 = float(np.mean(c * c)), float(np.mean(c**3))
    spread = var - var0
    if spread <= 1e-3 * var0:
        s, q = np.sqrt(max(spread, 0.0) * 4.0) + 0.1 * psf.width, 0.5
    else:
        d = (k3 - k30) / spread
        s = float(np.sqrt(d * d + 4.0 * spread))
        q = 0.5 * (1.0 - d / s)
    s = float(np.clip(s, box[1][0], box[1][1]))
    q = float(np.clip(q, 0.05, 0.95))
    s0 = float(np.clip(mean - mu - (q - 0.5) * s, *box[0]))
    return SourceParams(s0, s, q)


@dataclass(frozen=True)
class MleResult:
    estimate: SourceParams
    loglik: float
    at_boundary: tuple
    evaluations: int
    improved: bool


def mle(data, psf: PsfModel, measurement="direct", init: SourceParams | None = None,
        box=DEFAULT_BOX, fixed=(), seed=None, xatol: float = 1e-4) -> MleResult:
    """Maximum-likelihood estimate of (s0, s, q) within ``box``.

    Bounded Nelder-Mead from ``init`` (method of moments for direct data) and
    from 4 jittered copies of it. Every start is screened with a short run and
    only the best is refined to ``xatol``. Parameters named in ``fixed`` stay at
    their initial value. A coordinate is snapped to a bound, and flagged, when
    doing so does not lower the likelihood.
    """
    direct = isinstance(measurement, str)
    if direct and measurement != "direct":
        raise ValueError(f"unknown measurement {measurement!r}")
    obj = _DirectData(data, psf) if direct else _CountData(data, measurement, psf)
    if init is None:
        if not direct:
            raise ValueError("count data need an explicit init")
        init = moment_init(obj.x, psf, box)
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    x0 = init.as_array()
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError(f"init {init} outside the search box")
    for name in fixed:
        if name not in PARAM_NAMES:
            raise ValueError(f"unknown parameter {name!r}")
    free = np.array([name not in fixed for name in PARAM_NAMES])
    if not free.any():
        ll = obj.loglik(*x0)
        return MleResult(init, ll, (False, False, False), 1, False)

    def full(y):
        v = x0.copy()
        v[free] = y
        return v

    evals = [0]

    def negll(y):
        evals[0] += 1
        v = np.clip(full(y), lo, hi)
        ll = obj.loglik(*v)
        return -ll if np.isfinite(ll) else 1e300

    bounds = list(zip(lo[free], hi[free]))
    rng = np.random.default_rng(seed)
    width = np.array(_JITTER) * np.array([psf.width, psf.width, 1.0])
    starts = [x0[free]]
    for _ in range(_RESTARTS):
        starts.append(np.clip(x0[free] + width[free] * rng.standard_normal(free.sum()),
                              lo[free], hi[free]))
    ll0 = -negll(x0[free])
    screened = []
    for y in starts:
        r = minimize(negll, y, method="Nelder-Mead", bounds=bounds,
                     options=dict(maxfev=_SCREEN_EVALS, xatol=xatol, fatol=1e-9))
        screened.append((r.fun, r.x))
    best_start = min(range(len(screened)), key=lambda i: screened[i][0])
    r = minimize(negll, screened[best_start][1], method="Nelder-Mead", bounds=bounds,
                 options=dict(maxfev=2000, xatol=xatol, fatol=1e-9))
    y = r.x if r.fun <= screened[best_start][0] else screened[best_start][1]
    v = np.clip(full(y), lo, hi)
    ll = obj.loglik(*v)
    flags = [False, False, False]
    for k in np.flatnonzero(free):
        for bound in (lo[k], hi[k]):
            if abs(v[k] - bound) > 1e-2 * (hi[k] - lo[k]):
                continue
            trial = v.copy()
            trial[k] = bound
            lt = obj.loglik(*trial)
            if lt >= ll - 1e-9 * max(1.0, abs(ll)):
                v, ll, flags[k] = trial, lt, True
    return MleResult(SourceParams(*v), float(ll), tuple(flags), evals[0], bool(ll >= ll0))


def simulate_counts(meas: Measurement, psf: PsfModel, params: SourceParams, n: int, rng) -> np.ndarray:
    p = np.clip(meas.probabilities(psf, params), 0.0, None)
    return rng.multinomial(int(n), p / p.sum())


@dataclass
class EstimationRun:
    seed: int
    n: int
    measurement: str
    truth: SourceParams
    estimated: tuple
    estimates: np.ndarray
    covariance: np.ndarray
    crlb: np.ndarray
    ratios: dict
    boundary_hits: int
    trials: int
    timing: float = 0.0
    fisher: np.ndarray = field(default=None, repr=False)

    def ratio_stderr(self) -> float:
        """Sampling error of a variance ratio over the trial count."""
        return float(np.sqrt(2.0 / (self.trials - 1)))


def _trial(args):
    psf, params, meas, n, seq, fixed, box = args
    rng = np.random.default_rng(seq)
    if isinstance(meas, str):
        x = sample_photons(intensity_profile(psf, params), n, rng)
        init = None if not fixed else _masked_init(moment_init(x, psf, box), params, fixed)
        res = mle(x, psf, "direct", init=init, box=box, fixed=fixed, seed=rng)
    else:
        counts = simulate_counts(meas, psf, params, n, rng)
        res = mle(counts, psf, meas, init=params, box=box, fixed=fixed, seed=rng)
    return res.estimate.as_array(), any(res.at_boundary)


def _masked_init(guess: SourceParams, truth: SourceParams, fixed) -> SourceParams:
    return guess.replace(**{name: getattr(truth, name) for name in fixed})


def crlb_saturation_study(psf: PsfModel, params: SourceParams, measurement="direct", n: int = 100_000,
                          trials: int = 200, seed: int = 0, *, estimate=PARAM_NAMES,
                          box=DEFAULT_BOX, workers: int = 1, check_regime: bool = True,
                          label: str | None = None) -> EstimationRun:
    """Repeat sample -> MLE and compare empirical variances with (F^-1)_aa / n.

    Parameters not listed in ``estimate`` are held at their true values and
    the bound is taken from the Fisher block of the estimated ones. Each trial
    draws from its own stream spawned from ``seed``, so results do not depend
    on ``workers``.
    """
    if check_regime and (n < 10_000 or trials < 100):
        raise ValueError("the saturation study needs n >= 1e4 photons and >= 100 trials")
    if trials < 2:
        raise ValueError("need at least two trials")
    estimate = tuple(estimate)
    fixed = tuple(name for name in PARAM_NAMES if name not in estimate)
    idx = [PARAM_NAMES.index(name) for name in estimate]
    start = time.perf_counter()
    if isinstance(measurement, str):
        fisher = direct_imaging_cfi(psf, params).entries
    else:
        fisher = measurement_cfi(measurement, psf, params).entries
    block = fisher[np.ix_(idx, idx)]
    crlb = np.linalg.inv(block) / n
    seqs = np.random.SeedSequence(seed).spawn(trials)
    jobs = [(psf, params, measurement, n, sq, fixed, box) for sq in seqs]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            out = list(pool.map(_trial, jobs, chunksize=max(1, trials // (4 * workers))))
    else:
        out = [_trial(j) for j in jobs]
    est = np.array([o[0] for o in out])
    cov = np.atleast_2d(np.cov(est[:, idx], rowvar=False))
    ratios = {name: float(cov[k, k] / crlb[k, k]) for k, name in enumerate(estimate)}
    desc = label or (measurement if isinstance(measurement, str) else "modes")
    return EstimationRun(seed, n, desc, params, estimate, est, cov, crlb, ratios,
                         int(sum(o[1] for o in out)), trials, time.perf_counter() - start, fisher)

