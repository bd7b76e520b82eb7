"""Quantum Fisher information for two incoherent point sources.

Three independent evaluations are provided:

* ``qfim_closed_form`` -- the compact matrix in terms of (w, m, p2);
* ``qfim_rank2`` -- the five-term rank-2 spectral formula, evaluated inside
  the four-dimensional span of {psi+, psi-, psi+', psi-'};
* ``qfim_grid_oracle`` -- brute force: discretise x, build the density
  kernel, differentiate it by finite differences, diagonalise and sum.

Parameter order is always (s0, s, q).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .psf import OverlapSet, PsfModel, PsfMoments, moments, overlaps
from .scene import PARAM_NAMES, SourceParams

__all__ = [
    "FisherMatrix", "SpectralDecomposition", "SubspaceRep", "SldOperator", "DegenerateStateError",
    "qfim_closed_form", "rho_eigensystem", "build_subspace", "qfim_rank2", "qfim_grid_oracle",
    "sld_subspace", "sld_residual", "compatibility_check", "compatibility_residual_grid",
    "qfim_from_slds", "quantum_fisher",
]


class DegenerateStateError(ValueError):
    """The density operator is (numerically) pure where rank 2 is required."""


@dataclass(frozen=True)
class FisherMatrix:
    """Symmetric 3x3 information matrix in (s0, s, q) order.

    ``factor``, when present, is a tall matrix A with ``entries = A.T @ A``;
    precisions are then computed from A by QR instead of from the entries.
    """

    entries: np.ndarray
    kind: str = "quantum"
    provenance: str = "closed-form"
    degenerate: tuple = (False, False, False)
    factor: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.shape != (3, 3):
            raise ValueError(f"Fisher matrix must be 3x3, got {e.shape}")
        e = 0.5 * (e + e.T)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "degenerate", tuple(bool(d) for d in self.degenerate))
        if self.factor is not None:
            f = np.array(self.factor, dtype=float)
            f.setflags(write=False)
            object.__setattr__(self, "factor", f)

    def __getitem__(self, idx):
        return self.entries[idx]

    def __array__(self, dtype=None, copy=None):
        return np.array(self.entries, dtype=dtype)

    def entry(self, a: str, b: str) -> float:
        return float(self.entries[PARAM_NAMES.index(a), PARAM_NAMES.index(b)])

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])


# ---------------------------------------------------------------------------
# closed form


def _check_consistent(ov: OverlapSet, params: SourceParams):
    if abs(ov.s - params.s) > 1e-12 * max(1.0, params.s):
        raise ValueError(f"overlaps evaluated at s={ov.s} but parameters have s={params.s}")


def qfim_closed_form(ov: OverlapSet, mom: PsfMoments, params: SourceParams) -> FisherMatrix:
    """Closed-form quantum Fisher matrix per detected photon.

    At q in {0, 1} or s = 0 the brightness row carries no information (or is
    undefined) and is returned as zeros with its degenerate flag set.
    """
    _check_consistent(ov, params)
    q, Qsq = params.q, params.Qsq
    p2, w, m = mom.p2, ov.w, ov.m
    e = np.zeros((3, 3))
    e[0, 0] = p2 - Qsq * m * m
    e[0, 1] = e[1, 0] = (q - 0.5) * p2
    e[1, 1] = 0.25 * p2
    q_degenerate = Qsq == 0.0 or ov.one_minus_w == 0.0
    if not q_degenerate:
        e[0, 2] = e[2, 0] = w * m
        e[2, 2] = ov.one_minus_w2 / Qsq
    return FisherMatrix(4.0 * e, "quantum", "closed-form", (False, False, q_degenerate))


# ---------------------------------------------------------------------------
# spectral decomposition of rho in the non-orthogonal basis {psi+, psi-}


@dataclass(frozen=True)
class SpectralDecomposition:
    """Nonzero eigenpairs of rho; row i of ``coeffs`` is (a_i, b_i) with
    |lambda_i> = a_i |psi+> + b_i |psi->."""

    lambdas: np.ndarray
    coeffs: np.ndarray
    w: float

    @property
    def lambda1(self) -> float:
        return float(self.lambdas[0])

    @property
    def lambda2(self) -> float:
        return float(self.lambdas[1])

    def gram_products(self) -> np.ndarray:
        g = np.array([[1.0, self.w], [self.w, 1.0]])
        return self.coeffs @ g @ self.coeffs.T


def rho_eigensystem(ov: OverlapSet, q: float) -> SpectralDecomposition:
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    w = ov.w
    det = q * (1.0 - q) * ov.one_minus_w2
    lam1 = 0.5 + math.sqrt(max(0.25 - det, 0.0))
    lam2 = det / lam1
    gram = np.array([[1.0, w], [w, 1.0]])
    rows = []
    for lam in (lam1, lam2):
        va = np.array([q * w, lam - q])
        vb = np.array([lam - (1.0 - q), (1.0 - q) * w])
        v = va if np.linalg.norm(va) >= np.linalg.norm(vb) else vb
        norm2 = float(v @ gram @ v)
        if norm2 <= 1e-300:
            rows.append(np.zeros(2))
            continue
        v = v / math.sqrt(norm2)
        lead = v[np.flatnonzero(np.abs(v) > 1e-14)[0]]
        rows.append(v if lead > 0 else -v)
    return SpectralDecomposition(np.array([lam1, lam2]), np.array(rows), w)


# ---------------------------------------------------------------------------
# four-dimensional subspace


@dataclass(frozen=True)
class SubspaceRep:
    """Operators on span{psi+, psi-, d psi+/dx, d psi-/dx}.

    An operator A = sum_ij C_ij |e_i><e_j| is stored by its coefficient matrix
    C. The derivative basis is used instead of P psi (= -i psi') so that every
    quantity stays real; ``momentum_gram`` gives the Gram matrix in the P basis.
    """

    gram: np.ndarray
    rho: np.ndarray
    drho: np.ndarray
    params: SourceParams

    def elements(self, coeff: np.ndarray) -> np.ndarray:
        """Matrix elements <e_i|A|e_j>."""
        return self.gram @ coeff @ self.gram

    def momentum_gram(self) -> np.ndarray:
        b = np.diag([1.0, 1.0, -1j, -1j])
        return b.conj().T @ self.gram @ b

    def frame(self, rtol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Maps to and from orthonormal coordinates of the span.

        Returns (T, T_inv) with gram = T.T @ T restricted to the numerical
        range; operator coordinates are ``T @ C @ T.T`` and an orthonormal
        coordinate vector y has basis coefficients ``T_inv @ y``.
        """
        vals, vecs = np.linalg.eigh(self.gram)
        keep = vals > rtol * vals[-1]
        vals, vecs = vals[keep], vecs[:, keep]
        return np.sqrt(vals)[:, None] * vecs.T, vecs / np.sqrt(vals)[None, :]

    def reduced(self, rtol: float = 1e-12):
        """Orthonormal-coordinate matrices of rho and the three derivatives."""
        t, _ = self.frame(rtol)
        return t @ self.rho @ t.T, np.stack([t @ d @ t.T for d in self.drho])


def build_subspace(ov: OverlapSet, mom: PsfMoments, params: SourceParams) -> SubspaceRep:
    _check_consistent(ov, params)
    w, m, tau, p2, q = ov.w, ov.m, ov.tau, mom.p2, params.q
    gram = np.array([
        [1.0, w, 0.0, -m],
        [w, 1.0, m, 0.0],
        [0.0, m, p2, tau],
        [-m, 0.0, tau, p2],
    ])
    rho = np.diag([q, 1.0 - q, 0.0, 0.0])
    # d psi(x - c)/dc = -psi'(x - c); c+ = s0 + s/2, c- = s0 - s/2
    sym_p = np.zeros((4, 4))
    sym_p[0, 2] = sym_p[2, 0] = 1.0
    sym_m = np.zeros((4, 4))
    sym_m[1, 3] = sym_m[3, 1] = 1.0
    d_s0 = -(q * sym_p + (1.0 - q) * sym_m)
    d_s = -0.5 * q * sym_p + 0.5 * (1.0 - q) * sym_m
    d_q = np.diag([1.0, -1.0, 0.0, 0.0])
    return SubspaceRep(gram, rho, np.stack([d_s0, d_s, d_q]), params)


def qfim_rank2(sub: SubspaceRep, dec: SpectralDecomposition, floor: float = 1e-12) -> FisherMatrix:
    """Quantum Fisher matrix from the five-term rank-2 formula."""
    lam1, lam2 = dec.lambda1, dec.lambda2
    if lam2 <= floor:
        raise DegenerateStateError(f"rho is numerically pure (lambda2 = {lam2:.3e})")
    g = sub.gram
    vec = np.zeros((2, 4))
    vec[:, :2] = dec.coeffs
    gv = g @ vec.T                       # columns G c_i
    # d[a, i, j] = <lambda_i| d_a rho |lambda_j>
    d = np.einsum("ki,akl,lj->aij", gv, sub.drho, gv)
    # dd[a, b, i] = <lambda_i| d_a rho d_b rho |lambda_i>
    dd = np.einsum("ki,akl,lm,bmn,ni->abi", gv, sub.drho, g, sub.drho, gv)
    q = (-3.0 / lam1 * np.outer(d[:, 0, 0], d[:, 0, 0])
         - 3.0 / lam2 * np.outer(d[:, 1, 1], d[:, 1, 1])
         + 4.0 * (1.0 - 1.0 / lam1 - 1.0 / lam2) * np.outer(d[:, 0, 1], d[:, 1, 0])
         + 4.0 / lam1 * dd[:, :, 0]
         + 4.0 / lam2 * dd[:, :, 1])
    return FisherMatrix(q, "quantum", "rank2")


# ---------------------------------------------------------------------------
# brute-force grid oracle


def _grid_vectors(psf: PsfModel, theta, x, h):
    s0, s, q = theta
    vp = math.sqrt(h) * psf.amplitude(x - s0 - 0.5 * s)
    vm = math.sqrt(h) * psf.amplitude(x - s0 + 0.5 * s)
    return vp, vm, q


def _grid_rho(psf, theta, x, h):
    vp, vm, q = _grid_vectors(psf, theta, x, h)
    return q * np.outer(vp, vp.conj()) + (1.0 - q) * np.outer(vm, vm.conj())


@dataclass(frozen=True)
class _GridState:
    lam: np.ndarray
    support: np.ndarray
    b: np.ndarray                        # b[a, i, n] = <lambda_i| d_a rho |n>, i in support


def _grid_state(psf, params, margin, spacing, step, leak_tol=1e-10) -> _GridState:
    if spacing > 0.02 * psf.width + 1e-15:
        raise ValueError("grid spacing must not exceed 0.02 PSF widths")
    margin = psf.half_extent if margin is None else margin
    if margin < 10.0 * psf.width:
        raise ValueError("grid must extend at least 10 PSF widths beyond both sources")
    cp, cm = params.centers
    x = np.arange(cm - margin, cp + margin + 0.5 * spacing, spacing)
    vp, vm, q = _grid_vectors(psf, params.as_array(), x, spacing)
    mass = q * np.vdot(vp, vp).real + (1.0 - q) * np.vdot(vm, vm).real
    if abs(1.0 - mass) > leak_tol:
        raise ValueError(f"grid misses {1.0 - mass:.3e} of the kernel mass; enlarge the extent")
    rho = q * np.outer(vp, vp.conj()) + (1.0 - q) * np.outer(vm, vm.conj())
    theta = params.as_array()
    drho = []
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        drho.append((_grid_rho(psf, theta + e, x, spacing)
                      - _grid_rho(psf, theta - e, x, spacing)) / (2.0 * step))
    lam, vecs = np.linalg.eigh(rho)
    support = lam > 1e-12 * lam[-1]
    vs = vecs[:, support]
    b = np.stack([(d @ vs).conj().T @ vecs for d in drho])
    lam = np.where(support, lam, 0.0)
    return _GridState(lam, support, b)


def qfim_grid_oracle(psf: PsfModel, params: SourceParams, margin: float | None = None,
                     spacing: float = 0.02, step: float = 1e-5) -> FisherMatrix:
    """Quantum Fisher matrix by direct discretisation of the density kernel.

    The sum runs over all eigenvector pairs with a nonzero eigenvalue sum;
    pairs inside the support are taken once, support/kernel pairs twice.
    """
    st = _grid_state(psf, params, margin, spacing, step)
    lam_s = st.lam[st.support]
    lam_all = st.lam
    denom = lam_s[:, None] + lam_all[None, :]
    weight = np.where(st.support[None, :], 2.0 / denom, 4.0 / denom)
    q = np.einsum("ain,bin,in->ab", st.b, st.b.conj(), weight).real
    return FisherMatrix(q, "quantum", "grid-oracle")


def _grid_sld_rows(st: _GridState) -> np.ndarray:
    lam_s = st.lam[st.support]
    denom = lam_s[:, None] + st.lam[None, :]
    return 2.0 * st.b / denom[None]


def compatibility_residual_grid(psf: PsfModel, params: SourceParams, margin: float | None = None,
                                spacing: float = 0.02, step: float = 1e-5) -> np.ndarray:
    """Im-part matrix r with Tr(rho [L_a, L_b]) = i r_ab, from the grid oracle."""
    st = _grid_state(psf, params, margin, spacing, step)
    rows = _grid_sld_rows(st)
    lam_s = st.lam[st.support]
    t = np.einsum("i,ain,bin->ab", lam_s, rows, rows.conj())
    return 2.0 * t.imag


# ---------------------------------------------------------------------------
# symmetric logarithmic derivatives


@dataclass(frozen=True)
class SldOperator:
    """SLD of one parameter on the four-dimensional span.

    ``matrix`` is in orthonormal coordinates; ``modes`` holds the eigenvectors
    as basis coefficients (columns), eigenvalues sorted in descending order.
    """

    which: int
    matrix: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray
    params: SourceParams

    @property
    def name(self) -> str:
        return PARAM_NAMES[self.which]


def _sld_matrices(rho: np.ndarray, drho: np.ndarray, max_cond: float = 1e12) -> np.ndarray:
    lam, u = np.linalg.eigh(rho)
    lam = np.where(lam > 1e-14 * lam[-1], lam, 0.0)
    denom = lam[:, None] + lam[None, :]
    active = denom > 0
    if np.any(active) and 2.0 / denom[active].min() > max_cond:
        raise np.linalg.LinAlgError("SLD equation is ill-conditioned (smallest eigenvalue sum "
                                    f"{denom[active].min():.3e})")
    inv = np.where(active, 2.0 / np.where(active, denom, 1.0), 0.0)
    out = []
    for d in drho:
        dt = u.T @ d @ u
        out.append(u @ (inv * dt) @ u.T)
    return np.stack(out)


def sld_subspace(sub: SubspaceRep, which: int | str, dec: SpectralDecomposition | None = None
                 ) -> SldOperator:
    """Solve (L rho + rho L) / 2 = d rho on the span and diagonalise L.

    The spectral decomposition is recomputed in orthonormal coordinates, so
    ``dec`` is optional; the coincident-source (rank-1) case is handled too.
    """
    a = PARAM_NAMES.index(which) if isinstance(which, str) else int(which)
    t, t_inv = sub.frame()
    rho, drho = sub.reduced()
    lmat = _sld_matrices(rho, drho[a:a + 1])[0]
    vals, vecs = np.linalg.eigh(lmat)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    for k in range(vecs.shape[1]):
        lead = vecs[np.flatnonzero(np.abs(vecs[:, k]) > 1e-12)[0], k]
        if lead < 0:
            vecs[:, k] = -vecs[:, k]
    return SldOperator(a, lmat, vals, t_inv @ vecs, sub.params)


def sld_residual(sub: SubspaceRep, sld: SldOperator) -> float:
    rho, drho = sub.reduced()
    lm = sld.matrix
    return float(np.max(np.abs(0.5 * (lm @ rho + rho @ lm) - drho[sld.which])))


def compatibility_check(sub: SubspaceRep, tol: float = 1e-9) -> tuple[np.ndarray, bool]:
    """Antisymmetric matrix Tr(rho [L_a, L_b]) and whether all entries are below tol."""
    rho, drho = sub.reduced()
    slds = _sld_matrices(rho, drho)
    r = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            if a != b:
                r[a, b] = np.trace(rho @ (slds[a] @ slds[b] - slds[b] @ slds[a]))
    return r, bool(np.max(np.abs(r)) < tol)


def qfim_from_slds(sub: SubspaceRep) -> np.ndarray:
    """Re Tr(rho L_a L_b), an SLD-side check on the Fisher matrix."""
    rho, drho = sub.reduced()
    slds = _sld_matrices(rho, drho)
    q = np.einsum("ij,ajk,bki->ab", rho, slds, slds)
    return 0.5 * (q + q.T)


# ---------------------------------------------------------------------------


def quantum_fisher(psf: PsfModel, params: SourceParams, method: str = "closed-form",
                   mom: PsfMoments | None = None) -> FisherMatrix:
    """Convenience front end: ``closed-form``, ``rank2`` or ``grid-oracle``."""
    if method == "grid-oracle":
        return qfim_grid_oracle(psf, params)
    mom = moments(psf) if mom is None else mom
    ov = overlaps(psf, params.s)
    if method == "closed-form":
        return qfim_closed_form(ov, mom, params)
    if method == "rank2":
        return qfim_rank2(build_subspace(ov, mom, params), rho_eigensystem(ov, params.q))
    raise ValueError(f"unknown QFIM method {method!r}")
