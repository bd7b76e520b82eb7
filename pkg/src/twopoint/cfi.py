"""Classical Fisher information of concrete measurements.

Every classical matrix is returned with a square-root factor (one row per
outcome or quadrature node) so that ``crlb.precisions`` can profile nuisance
parameters by QR rather than by inverting a nearly singular matrix.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.interpolate import make_interp_spline

from .psf import PsfModel, SampledPsf
from .qfi import FisherMatrix, SldOperator
from .quadrature import QuadratureError, gauss_legendre, nodes_from_edges
from .scene import PARAM_NAMES, SourceParams, intensity_gradients

__all__ = [
    "Measurement", "ModeMeasurement", "PositionBins", "direct_imaging_cfi", "measurement_cfi",
    "sld_povm", "save_measurement", "load_measurement", "PROBABILITY_FLOOR", "mode_outcomes",
    "fisher_from_outcomes", "subspace_functions",
]

PROBABILITY_FLOOR = 1e-14
_SUM_TOL = 1e-9
_DIRECT_MARGIN = 12.0


def _breakpoints(psf: PsfModel, params: SourceParams, extra=None):
    """Spline knots of a sampled PSF at both source positions, plus ``extra``."""
    parts = [] if extra is None else [np.asarray(extra, dtype=float)]
    if isinstance(psf, SampledPsf):
        cp, cm = params.centers
        parts += [psf.knots + cp, psf.knots + cm]
    return np.unique(np.concatenate(parts)) if parts else None


def _fisher_from_rows(grad: np.ndarray, prob: np.ndarray, weights=None) -> tuple[np.ndarray, np.ndarray]:
    keep = prob > PROBABILITY_FLOOR
    scale = 1.0 / np.sqrt(prob[keep])
    if weights is not None:
        scale = scale * np.sqrt(weights[keep])
    factor = (grad[:, keep] * scale).T
    return factor.T @ factor, factor


def direct_imaging_cfi(psf: PsfModel, params: SourceParams, rtol: float = 1e-10,
                       max_doublings: int = 5) -> FisherMatrix:
    """Fisher matrix of ideal photon-position detection.

    F_ab = int d_a rho d_b rho / rho dx over the region where rho > 1e-300,
    truncated 12 widths beyond the outer sources. Panels are halved until the
    entries settle to ``rtol`` of the largest entry.
    """
    cp, cm = params.centers
    lo, hi = cm - _DIRECT_MARGIN * psf.width, cp + _DIRECT_MARGIN * psf.width
    panel = 0.5 * psf.width
    previous = None
    for _ in range(max_doublings + 1):
        x, w = gauss_legendre(lo, hi, panel, 16, _breakpoints(psf, params))
        q = params.q
        rho = q * psf.intensity(x - cp) + (1.0 - q) * psf.intensity(x - cm)
        grad = intensity_gradients(psf, params, x)
        mask = rho > 1e-300
        fisher, factor = _fisher_from_rows(grad[:, mask], rho[mask], w[mask])
        if previous is not None and np.max(np.abs(fisher - previous)) <= rtol * np.max(np.abs(fisher)):
            break
        previous = fisher
        panel /= 2.0
    else:
        raise QuadratureError("direct-imaging Fisher matrix did not converge",
                              float(np.max(np.abs(fisher - previous))))
    return FisherMatrix(fisher, "classical", "quadrature", factor=factor)


# ---------------------------------------------------------------------------
# measurements


class Measurement:
    """A projective measurement with finitely many outcomes.

    Subclasses supply ``outcome_model``: probabilities of the listed outcomes
    and their parameter gradients. An optional bucket outcome collects the
    complement of all listed projectors.
    """

    labels: tuple
    has_bucket: bool

    def outcome_model(self, psf: PsfModel, params: SourceParams) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def outcome_labels(self) -> tuple:
        return tuple(self.labels) + (("bucket",) if self.has_bucket else ())

    def probabilities(self, psf: PsfModel, params: SourceParams) -> np.ndarray:
        p, _ = self.outcome_model(psf, params)
        if self.has_bucket:
            p = np.append(p, 1.0 - p.sum())
        return p


def mode_outcomes(ov: np.ndarray, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and (s0, s, q) gradients from mode overlaps of shape (K, 4)."""
    ap, am, dp, dm = np.asarray(ov).T
    prob = q * ap**2 + (1.0 - q) * am**2
    grad = np.stack([
        -2.0 * (q * ap * dp + (1.0 - q) * am * dm),
        -q * ap * dp + (1.0 - q) * am * dm,
        ap**2 - am**2,
    ])
    return prob, grad


def fisher_from_outcomes(prob: np.ndarray, grad: np.ndarray, has_bucket: bool) -> FisherMatrix:
    """Classical Fisher matrix of listed outcomes, closing them with a bucket if asked."""
    if has_bucket:
        prob = np.append(prob, 1.0 - prob.sum())
        grad = np.concatenate([grad, -grad.sum(axis=1, keepdims=True)], axis=1)
        if prob[-1] < -_SUM_TOL:
            raise ValueError(f"mode probabilities exceed one by {-prob[-1]:.3e}; modes not orthonormal?")
    elif abs(prob.sum() - 1.0) > _SUM_TOL:
        raise ValueError(f"outcome probabilities sum to {prob.sum():.12f}, not 1")
    fisher, factor = _fisher_from_rows(grad, prob)
    return FisherMatrix(fisher, "classical", "quadrature", factor=factor)


class ModeMeasurement(Measurement):
    """Projections onto real orthonormal mode functions, plus a bucket.

    ``functions(x)`` returns an array of shape (K, len(x)). Overlaps are
    integrated on ``window`` with panels of ``panel`` widths.
    """

    def __init__(self, functions, labels, window, *, has_bucket: bool = True,
                 panel: float = 0.25, breakpoints=None):
        self.functions = functions
        self.labels = tuple(labels)
        self.window = (float(window[0]), float(window[1]))
        self.has_bucket = has_bucket
        self.panel = panel
        self.breakpoints = breakpoints

    def __len__(self):
        return len(self.labels)

    def evaluate(self, x) -> np.ndarray:
        return np.atleast_2d(self.functions(np.asarray(x, dtype=float)))

    def gram(self) -> np.ndarray:
        x, w = gauss_legendre(*self.window, self.panel, 16, self.breakpoints)
        f = self.evaluate(x)
        return (f * w) @ f.T

    def overlaps(self, psf: PsfModel, params: SourceParams) -> np.ndarray:
        """Rows: <phi_k| psi+>, <phi_k| psi->, <phi_k| psi+'>, <phi_k| psi-'>."""
        cp, cm = params.centers
        h = psf.half_extent
        if not psf.is_real:
            raise ValueError("mode measurements are implemented for real PSF amplitudes only")
        lo, hi = max(cm - h, self.window[0]), min(cp + h, self.window[1])
        x, w = gauss_legendre(lo, hi, self.panel, 16,
                              _breakpoints(psf, params, self.breakpoints))
        basis = np.stack([psf.amplitude(x - cp), psf.amplitude(x - cm),
                          psf.derivative(x - cp), psf.derivative(x - cm)]).real
        return (self.evaluate(x) * w) @ basis.T

    def outcome_model(self, psf, params):
        return mode_outcomes(self.overlaps(psf, params), params.q)

    def rotated(self, matrix: np.ndarray, labels=None) -> "ModeMeasurement":
        """Modes mixed by an orthogonal matrix: phi'_j = sum_k O_jk phi_k."""
        base = self.functions
        labels = labels or tuple(f"r{j}" for j in range(matrix.shape[0]))
        return ModeMeasurement(lambda x: matrix @ base(x), labels, self.window,
                               has_bucket=self.has_bucket, panel=self.panel,
                               breakpoints=self.breakpoints)


class PositionBins(Measurement):
    """Photon counting in contiguous position bins (a direct-imaging camera)."""

    def __init__(self, edges, *, has_bucket: bool = True, order: int = 6):
        edges = np.asarray(edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        self.edges = edges
        self.order = order
        self.has_bucket = has_bucket
        self.labels = tuple(f"bin{k}" for k in range(edges.size - 1))

    @classmethod
    def uniform(cls, width: float, half_range: float, **kw) -> "PositionBins":
        count = int(round(2 * half_range / width))
        return cls(np.linspace(-half_range, half_range, count + 1), **kw)

    def outcome_model(self, psf, params):
        x, w = nodes_from_edges(self.edges, self.order)
        cp, cm = params.centers
        q = params.q
        rho = q * psf.intensity(x - cp) + (1.0 - q) * psf.intensity(x - cm)
        grad = intensity_gradients(psf, params, x)
        nb = self.edges.size - 1
        prob = (rho * w).reshape(nb, self.order).sum(axis=1)
        dprob = (grad * w).reshape(3, nb, self.order).sum(axis=2)
        return prob, dprob


def measurement_cfi(meas: Measurement, psf: PsfModel, params: SourceParams) -> FisherMatrix:
    """Fisher matrix sum_k d_a P_k d_b P_k / P_k over outcomes with P_k > 1e-14."""
    prob, grad = meas.outcome_model(psf, params)
    return fisher_from_outcomes(prob, grad, meas.has_bucket)


# ---------------------------------------------------------------------------
# SLD eigenbasis


def subspace_functions(psf: PsfModel, params: SourceParams, coeffs: np.ndarray):
    """Callable evaluating sum_i c_ik e_i(x) for basis {psi+, psi-, psi+', psi-'}."""
    cp, cm = params.centers
    coeffs = np.asarray(coeffs, dtype=float)

    def functions(x):
        basis = np.stack([psf.amplitude(x - cp), psf.amplitude(x - cm),
                          psf.derivative(x - cp), psf.derivative(x - cm)]).real
        return coeffs.T @ basis

    return functions


def sld_povm(sld: SldOperator, psf: PsfModel) -> ModeMeasurement:
    """Projective measurement onto the eigenvectors of an SLD, plus a bucket."""
    params = sld.params
    cp, cm = params.centers
    h = psf.half_extent
    labels = tuple(f"L{PARAM_NAMES[sld.which]}[{v:+.6g}]" for v in sld.eigenvalues)
    return ModeMeasurement(subspace_functions(psf, params, sld.modes), labels,
                           (cm - h, cp + h), panel=0.25 * psf.width)


# ---------------------------------------------------------------------------
# text format


def save_measurement(meas: ModeMeasurement, path, x=None, fmt: str = "%.12g") -> None:
    """Write mode samples column-wise under a header row of outcome labels."""
    if x is None:
        x = np.linspace(meas.window[0], meas.window[1], 2001)
    x = np.asarray(x, dtype=float)
    cols = np.column_stack([x, meas.evaluate(x).T])
    header = "# bucket: {}\nx {}".format("yes" if meas.has_bucket else "no", " ".join(meas.labels))
    with open(Path(path), "w") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, cols, fmt=fmt)


def load_measurement(path, degree: int = 5) -> ModeMeasurement:
    """Read a file written by :func:`save_measurement`; modes are splined."""
    has_bucket = True
    labels = None
    with open(Path(path)) as fh:
        for line in fh:
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                key, _, value = stripped.lstrip("#").partition(":")
                if key.strip() == "bucket":
                    has_bucket = value.strip().lower() in ("yes", "true", "1")
                continue
            labels = stripped.split()[1:]
            break
    if labels is None:
        raise ValueError(f"{path}: missing header row")
    data = np.loadtxt(Path(path), comments="#", skiprows=_header_line(path) + 1, ndmin=2)
    x = data[:, 0]
    splines = [make_interp_spline(x, data[:, k + 1], k=degree) for k in range(len(labels))]
    lo, hi = float(x[0]), float(x[-1])

    def functions(t):
        t = np.asarray(t, dtype=float)
        inside = (t >= lo) & (t <= hi)
        tc = np.clip(t, lo, hi)
        return np.stack([np.where(inside, sp(tc), 0.0) for sp in splines])

    step = float(np.diff(x).mean())
    return ModeMeasurement(functions, labels, (lo, hi), has_bucket=has_bucket,
                           panel=max(step, 1e-3), breakpoints=x)


def _header_line(path) -> int:
    with open(Path(path)) as fh:
        for i, line in enumerate(fh):
            s = line.strip()
            if s and not s.startswith("#"):
                return i
    raise ValueError(f"{path}: missing header row")

