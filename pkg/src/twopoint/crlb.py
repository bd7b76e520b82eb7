"""Precisions (inverse Cramer-Rao variances) and their scaling with separation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .psf import OverlapSet, PsfModel, PsfMoments, moments, overlaps
from .qfi import FisherMatrix, qfim_closed_form
from .scene import PARAM_NAMES, SourceParams

__all__ = [
    "PrecisionTriple", "SlopeFit", "SweepRow", "precisions", "separation_precision_closed",
    "asymptotic_precisions", "loglog_slope", "sweep", "SERIES_SWITCH",
]

# below this value of s * sqrt(p2) the separation precision uses the series
SERIES_SWITCH = 1e-3
_DEGENERATE_RTOL = 1e-14


@dataclass(frozen=True)
class PrecisionTriple:
    """Inverse variances per detected photon, in (s0, s, q) order."""

    H_s0: float
    H_s: float
    H_q: float
    degenerate: tuple = (False, False, False)

    def as_array(self) -> np.ndarray:
        return np.array([self.H_s0, self.H_s, self.H_q])

    def __getitem__(self, name: str) -> float:
        return getattr(self, "H_" + name)


def precisions(F: FisherMatrix) -> PrecisionTriple:
    """H_a = 1 / (F^-1)_aa, the information left after profiling the others.

    Rows that are flagged or carry no information (diagonal below 1e-14 of the
    largest) are reported as degenerate with H = 0 and dropped from the
    inversion. When the matrix carries a square-root factor the Schur
    complements are taken from a QR decomposition of that factor, which keeps
    precisions far below the round-off of the entries themselves.
    """
    e = F.entries
    diag = np.diag(e).copy()
    scale = float(diag.max()) if diag.size else 0.0
    degenerate = [bool(F.degenerate[a]) or not diag[a] > _DEGENERATE_RTOL * scale or scale <= 0
                  for a in range(3)]
    active = [a for a in range(3) if not degenerate[a]]
    h = np.zeros(3)
    for a in active:
        others = [b for b in active if b != a]
        if F.factor is not None:
            r = np.linalg.qr(F.factor[:, others + [a]], mode="r")
            val = float(r[-1, -1] ** 2)
        elif others:
            blk = e[np.ix_(others, others)]
            f = e[others, a]
            coef = np.linalg.lstsq(blk, f, rcond=1e-13)[0]
            val = float(e[a, a] - f @ coef)
        else:
            val = float(e[a, a])
        h[a] = min(max(val, 0.0), e[a, a])
    return PrecisionTriple(*map(float, h), tuple(degenerate))


def _D_series(mom: PsfMoments, s: float) -> float:
    # p2 (1 - w^2) - m^2 expanded to s^6; the s^0 and s^2 terms cancel exactly
    p2, p4, p6 = mom.p2, mom.p4, mom.p6
    d4 = 0.25 * p2 * mom.varP2
    d6 = p2 * p2 * p4 / 24.0 - p4 * p4 / 36.0 - p2 * p6 / 72.0 if np.isfinite(p6) else 0.0
    return d4 * s**4 + d6 * s**6


def separation_precision_closed(ov: OverlapSet, mom: PsfMoments, q: float) -> float:
    """Quantum separation precision after profiling centroid and brightness.

    H_s = p2 Qsq (p2 (1 - w^2) - m^2) / (p2 (1 - w^2) - Qsq m^2),  Qsq = 4 q (1 - q).
    The difference p2 (1 - w^2) - m^2 is O(s^4) while both terms are O(s^2);
    below ``SERIES_SWITCH`` it is taken from its power series instead.
    At s = 0 the expression is 0/0 and the s -> 0 limit is returned.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    Qsq = 4.0 * q * (1.0 - q)
    p2, m, s = mom.p2, ov.m, ov.s
    if Qsq == 0.0:
        return 0.0
    if Qsq == 1.0:
        return p2
    if s == 0.0:
        return 0.0
    if s * math.sqrt(p2) < SERIES_SWITCH:
        d = _D_series(mom, s)
    else:
        d = p2 * ov.one_minus_w2 - m * m
    e = d + (1.0 - Qsq) * m * m
    return p2 * Qsq * d / e


def asymptotic_precisions(mom: PsfMoments, params: SourceParams) -> PrecisionTriple:
    """Leading small-separation behaviour of the quantum precisions.

    Uses Var(P^2) = p4 - p2^2. For equal brightness the separation precision
    is the constant p2.
    """
    q, s = params.q, params.s
    if not 0.0 < q < 1.0:
        raise ValueError("asymptotic precisions need 0 < q < 1")
    Qsq, var = params.Qsq, mom.varP2
    h_s = mom.p2 if q == 0.5 else Qsq / (4.0 * (1.0 - Qsq)) * var * s * s
    return PrecisionTriple(Qsq * var * s * s, h_s, var * s**4 / Qsq)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    points: int


def loglog_slope(pairs) -> SlopeFit:
    """Least-squares slope of log H against log s."""
    arr = np.asarray(list(pairs), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("expected a sequence of (s, H) pairs")
    if arr.shape[0] < 5:
        raise ValueError("need at least five points for a slope fit")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("log-log fit needs strictly positive, finite values")
    fit = stats.linregress(np.log(arr[:, 0]), np.log(arr[:, 1]))
    return SlopeFit(float(fit.slope), float(fit.stderr), float(fit.intercept), arr.shape[0])


@dataclass(frozen=True)
class SweepRow:
    s: float
    q: float
    s0: float
    quantum: PrecisionTriple
    classical: dict = field(default_factory=dict)


def sweep(psf: PsfModel, s_values, q_values, measurements=None, s0: float = 0.0) -> list[SweepRow]:
    """Quantum and classical precisions over a grid, q outer, s inner.

    ``measurements`` maps a column name to ``"direct"`` or a
    :class:`~twopoint.cfi.Measurement`.
    """
    from .cfi import direct_imaging_cfi, measurement_cfi

    measurements = dict(measurements or {})
    mom = moments(psf)
    rows = []
    for q in q_values:
        for s in s_values:
            params = SourceParams(s0, s, q)
            quantum = precisions(qfim_closed_form(overlaps(psf, s), mom, params))
            classical = {}
            for name, meas in measurements.items():
                if isinstance(meas, str):
                    if meas != "direct":
                        raise ValueError(f"unknown measurement {meas!r}")
                    fisher = direct_imaging_cfi(psf, params)
                else:
                    fisher = measurement_cfi(meas, psf, params)
                classical[name] = precisions(fisher)
            rows.append(SweepRow(float(s), float(q), float(s0), quantum, classical))
    return rows


def precision_names() -> tuple[str, ...]:
    return tuple("H" + n for n in PARAM_NAMES)
