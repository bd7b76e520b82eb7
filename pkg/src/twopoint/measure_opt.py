"""Design of finite mode-projection measurements.

A measurement is a rotation of an orthonormal n-mode basis built from the
PSF and its derivatives. Rotations are parametrized by Givens angles and the
classical Fisher information is maximized by multistart simplex search.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .cfi import ModeMeasurement, PositionBins, fisher_from_outcomes, mode_outcomes
from .psf import PsfModel, moments, overlaps
from .qfi import FisherMatrix, qfim_closed_form
from .quadrature import gauss_legendre
from .scene import SourceParams

__all__ = [
    "ModeBasisError", "orthonormal_mode_basis", "DesignSpec", "OptimizationResult",
    "givens_matrix", "optimize_measurement", "named_measurement", "OBJECTIVES",
]

OBJECTIVES = ("Hs", "Hq", "Hs0", "min-ratio")
_RANK_TOL = 1e-20
_LOEWNER_TOL = 1e-9


class ModeBasisError(ValueError):
    """The derivative family lost numerical rank before reaching n modes."""

    def __init__(self, requested: int, achieved: int):
        super().__init__(f"mode basis has numerical rank {achieved}, {requested} requested")
        self.requested = requested
        self.achieved = achieved


def orthonormal_mode_basis(psf: PsfModel, n: int) -> ModeMeasurement:
    """Gram-Schmidt of (-1)^k d^k Psi / dx^k, k < n, plus a bucket.

    For a Gaussian PSF this reproduces the Hermite-Gauss modes with positive
    leading coefficient. The rank test uses the determinant of the normalized
    Gram matrix.
    """
    n = int(n)
    if n < 1:
        raise ValueError("need at least one mode")
    if not psf.is_real:
        raise ValueError("mode bases are built for real PSF amplitudes only")
    h = psf.half_extent
    breakpoints = getattr(psf, "knots", None)
    panel = 0.25 * psf.width

    def raw(x):
        return np.stack([(-1.0) ** k * np.real(psf.derivative(x, k) if k else psf.amplitude(x))
                         for k in range(n)])

    x, w = gauss_legendre(-h, h, panel, 16, breakpoints)
    f = raw(x)
    gram = (f * w) @ f.T
    d = np.sqrt(np.diag(gram))
    for k in range(1, n + 1):
        if not d[k - 1] > 0:
            raise ModeBasisError(n, k - 1)
        sub = gram[:k, :k] / np.outer(d[:k], d[:k])
        if not np.linalg.det(sub) >= _RANK_TOL:
            raise ModeBasisError(n, k - 1)
    lower = np.linalg.cholesky(gram)
    transform = np.linalg.inv(lower)

    def functions(t):
        return transform @ raw(t)

    return ModeMeasurement(functions, tuple(f"m{k}" for k in range(n)), (-h, h),
                           panel=panel, breakpoints=breakpoints)


def named_measurement(name: str, psf: PsfModel):
    """Measurement by name: ``direct``, ``hgN`` (N-mode basis) or ``bins:W:R``."""
    key = name.strip().lower()
    if key == "direct":
        return "direct"
    if key.startswith("hg") and key[2:].isdigit():
        return orthonormal_mode_basis(psf, int(key[2:]))
    if key.startswith("bins:"):
        try:
            width, half = (float(v) for v in key.split(":")[1:])
        except ValueError:
            raise ValueError(f"bins measurement must look like bins:WIDTH:RANGE, got {name!r}") from None
        return PositionBins.uniform(width * psf.width, half * psf.width)
    raise ValueError(f"unknown measurement {name!r}")


def givens_matrix(angles, n: int) -> np.ndarray:
    """Product of plane rotations over index pairs (i, j), i < j, in lexicographic order."""
    angles = np.asarray(angles, dtype=float)
    if angles.size != n * (n - 1) // 2:
        raise ValueError(f"{n} modes need {n * (n - 1) // 2} angles, got {angles.size}")
    out = np.eye(n)
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            c, s = math.cos(angles[k]), math.sin(angles[k])
            rot = np.eye(n)
            rot[i, i] = rot[j, j] = c
            rot[i, j], rot[j, i] = -s, s
            out = rot @ out
            k += 1
    return out


@dataclass(frozen=True)
class DesignSpec:
    n: int = 4
    objective: str = "Hs"
    restarts: int = 16
    seed: int = 0
    points: tuple = ()
    fatol: float = 1e-10
    max_evals: int = 4000
    workers: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need n >= 1 modes")
        if self.restarts < 1:
            raise ValueError("need at least one restart")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")


@dataclass
class OptimizationResult:
    measurement: ModeMeasurement
    fisher: FisherMatrix
    quantum: FisherMatrix
    objective: float
    bound: float
    angles: np.ndarray
    rotation: np.ndarray
    best_restart: int
    traces: list = field(default_factory=list)
    start_values: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    loewner_margin: float = 0.0

    @property
    def ratio(self) -> float:
        return self.objective / self.bound if self.bound > 0 else float("nan")


def _objective_value(name: str, F: np.ndarray, Q: np.ndarray) -> float:
    # diagonal Fisher entries: the precision with the other parameters known
    if name == "Hs0":
        return float(F[0, 0])
    if name == "Hs":
        return float(F[1, 1])
    if name == "Hq":
        return float(F[2, 2])
    diag = np.diag(Q)
    live = diag > 0
    return float(np.min(np.diag(F)[live] / diag[live]))


def _bound_value(name: str, Q: np.ndarray) -> float:
    return 1.0 if name == "min-ratio" else _objective_value(name, Q, Q)


def optimize_measurement(spec: DesignSpec, psf: PsfModel, params) -> OptimizationResult:
    """Rotate an n-mode basis to maximize the chosen Fisher objective.

    Restart 0 starts from the unrotated basis, the others from angles drawn
    uniformly in [-pi, pi) with per-restart streams spawned from ``spec.seed``.
    With several parameter points the objective is their mean. Every
    evaluation checks F <= Q in Loewner order.
    """
    points = list(spec.points) or [params]
    if isinstance(params, SourceParams) and params not in points:
        points = [params] + points
    base = orthonormal_mode_basis(psf, spec.n)
    mom = moments(psf)
    base_ov = [base.overlaps(psf, p) for p in points]
    quantum = [qfim_closed_form(overlaps(psf, p.s), mom, p).entries for p in points]
    bound = float(np.mean([_bound_value(spec.objective, Q) for Q in quantum]))
    dim = spec.n * (spec.n - 1) // 2
    margin = [np.inf]

    def evaluate(angles):
        rot = givens_matrix(angles, spec.n)
        vals = []
        for p, ov, Q in zip(points, base_ov, quantum):
            prob, grad = mode_outcomes(rot @ ov, p.q)
            F = fisher_from_outcomes(prob, grad, True).entries
            gap = float(np.linalg.eigvalsh(Q - F).min())
            margin[0] = min(margin[0], gap)
            if gap < -_LOEWNER_TOL:
                raise RuntimeError(f"classical Fisher matrix exceeds the quantum bound by {-gap:.3e}")
            vals.append(_objective_value(spec.objective, F, Q))
        return float(np.mean(vals))

    streams = np.random.SeedSequence(spec.seed).spawn(spec.restarts)

    def run(index):
        rng = np.random.default_rng(streams[index])
        start = np.zeros(dim) if index == 0 else rng.uniform(-np.pi, np.pi, dim)
        trace = []
        best = [-np.inf]

        def loss(a):
            v = evaluate(a)
            best[0] = max(best[0], v)
            trace.append(best[0])
            return -v

        start_value = evaluate(start)
        if dim == 0:
            return start, start_value, [start_value], start_value, True
        res = minimize(loss, start, method="Nelder-Mead",
                       options=dict(fatol=spec.fatol, xatol=1e-8, maxfev=spec.max_evals,
                                    adaptive=dim > 4))
        x, val = (res.x, -res.fun) if -res.fun >= start_value else (start, start_value)
        return x, val, trace, start_value, bool(res.success)

    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            outcomes = list(pool.map(run, range(spec.restarts)))
    else:
        outcomes = [run(i) for i in range(spec.restarts)]

    values = [o[1] for o in outcomes]
    best = int(np.argmax(values))  # first maximum: lowest restart index wins ties
    angles = np.asarray(outcomes[best][0], dtype=float)
    rot = givens_matrix(angles, spec.n)
    meas = base.rotated(rot, labels=tuple(f"r{k}" for k in range(spec.n)))
    p0 = points[0]
    prob, grad = mode_outcomes(rot @ base_ov[0], p0.q)
    fisher = fisher_from_outcomes(prob, grad, True)
    qmat = FisherMatrix(quantum[0], "quantum", "closed-form")
    return OptimizationResult(
        measurement=meas, fisher=fisher, quantum=qmat, objective=values[best], bound=bound,
        angles=angles, rotation=rot, best_restart=best, traces=[o[2] for o in outcomes],
        start_values=[o[3] for o in outcomes], converged=[o[4] for o in outcomes],
        loewner_margin=margin[0],
    )
