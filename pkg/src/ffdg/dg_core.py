"""Within-mesh matrices, upwind flux and the per-phase DG generators.

Generators act on row vectors of *mass coordinates* ``a = α ∘ w`` (the mass
carried by each basis function).  In these coordinates every ``Q^i`` has
zero row sums, so ``a e^{Q t}`` conserves total mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConservationViolation, IllDefinedEta, SpectrumViolation
from .model import ModelSpec
from .stencil import BasisSet

ROW_SUM_TOL = 1e-10
SPECTRUM_TOL = 1e-8

_LINEAR_M = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
_LINEAR_M_INV = np.array([[4.0, -2.0], [-2.0, 4.0]])
_LINEAR_G = np.array([[-0.5, 0.5], [-0.5, 0.5]])


def assemble_mass(basis: BasisSet) -> np.ndarray:
    M = np.zeros((basis.N, basis.N))
    for k, w in enumerate(basis.stencil.widths):
        s = basis.slice(k)
        M[s, s] = w if basis.sizes[k] == 1 else w * _LINEAR_M
    return M


def mass_inverse(basis: BasisSet) -> np.ndarray:
    """Exact block inverse of the mass matrix."""
    Minv = np.zeros((basis.N, basis.N))
    for k, w in enumerate(basis.stencil.widths):
        s = basis.slice(k)
        Minv[s, s] = 1.0 / w if basis.sizes[k] == 1 else _LINEAR_M_INV / w
    return Minv


def assemble_stiffness(basis: BasisSet) -> np.ndarray:
    G = np.zeros((basis.N, basis.N))
    for k in range(basis.n_meshes):
        if basis.sizes[k] == 2:
            s = basis.slice(k)
            G[s, s] = _LINEAR_G
    return G


def compute_eta(basis: BasisSet, l: int, k: int) -> float:
    """``η_{l,k} = w_k / w_l``: basis-integral ratio between adjacent meshes."""
    if abs(l - k) != 1:
        raise IllDefinedEta(f"meshes {l} and {k} are not adjacent")
    wl = basis.weights[basis.slice(l)]
    wk = basis.weights[basis.slice(k)]
    for w, m in ((wl, l), (wk, k)):
        if np.ptp(w) > 1e-12 * w.max():
            raise IllDefinedEta(f"unequal basis integrals on mesh {m}")
    return float(wk[0] / wl[0])


def assemble_flux(basis: BasisSet, sign: int, closed: bool = False) -> np.ndarray:
    """Upwind flux matrix for drift direction ``sign``.

    ``closed`` drops the outflow sink at the downstream end of the domain, so
    mass reaching the truncation level (or 0) stays in the boundary mesh.
    """
    N, nm = basis.N, basis.n_meshes
    F = np.zeros((N, N))
    L, R = basis.left, basis.right
    if sign > 0:
        for k in range(nm):
            s = basis.slice(k)
            if not (closed and k == nm - 1):
                F[s, s] -= np.outer(R[s], R[s])
            if k > 0:
                p = basis.slice(k - 1)
                F[p, s] += compute_eta(basis, k - 1, k) * np.outer(R[p], L[s])
    elif sign < 0:
        for k in range(nm):
            s = basis.slice(k)
            if not (closed and k == 0):
                F[s, s] += np.outer(L[s], L[s])
            if k < nm - 1:
                n = basis.slice(k + 1)
                F[n, s] -= compute_eta(basis, k + 1, k) * np.outer(L[n], R[s])
    return F


def phase_generator(c: float, basis: BasisSet, M_inv=None, G=None, closed: bool = True):
    """``Q = c (G + F) M^{-1}`` for one phase."""
    if c == 0:
        return np.zeros((basis.N, basis.N))
    if M_inv is None:
        M_inv = mass_inverse(basis)
    if G is None:
        G = assemble_stiffness(basis)
    F = assemble_flux(basis, int(np.sign(c)), closed=closed)
    return c * (G + F) @ M_inv


@dataclass(frozen=True)
class DGGenerators:
    basis: BasisSet
    M: np.ndarray
    G: np.ndarray
    Q: tuple  # one N×N generator per phase

    def __getitem__(self, i):
        return self.Q[i]

    def __len__(self):
        return len(self.Q)


def check_generator(Q: np.ndarray, phase=None) -> None:
    """Raise unless ``Q`` conserves mass and has no growing modes.

    Tolerances grow with the size and scale of ``Q`` to absorb rounding.
    """
    slack = 16 * np.finfo(float).eps * Q.shape[0] * np.abs(Q).max(initial=0.0)
    rows = np.abs(Q.sum(axis=1)).max(initial=0.0)
    if rows > max(ROW_SUM_TOL, slack):
        raise ConservationViolation(f"phase {phase}: max |row sum| = {rows:.3g}")
    top = np.linalg.eigvals(Q).real.max(initial=-np.inf)
    if top > max(SPECTRUM_TOL, slack):
        raise SpectrumViolation(f"phase {phase}: eigenvalue with real part {top:.3g}")


def assemble_generator(model: ModelSpec, basis: BasisSet, check: bool = True,
                       closed: bool = True) -> DGGenerators:
    M = assemble_mass(basis)
    G = assemble_stiffness(basis)
    M_inv = mass_inverse(basis)
    Qs = []
    for i, c in enumerate(model.c):
        Q = phase_generator(float(c), basis, M_inv, G, closed=closed)
        if check:
            check_generator(Q, model.phases[i])
        Qs.append(Q)
    return DGGenerators(basis, M, G, tuple(Qs))


def propagate(Q: np.ndarray, basis: BasisSet, alpha, t: float) -> np.ndarray:
    """Density coefficients after running the phase dynamics for time ``t``."""
    a = np.asarray(alpha, dtype=float) * basis.weights
    return (a @ expm(Q * t)) / basis.weights


def conservation_defect(Q: np.ndarray, basis: BasisSet, alpha, t: float) -> float:
    alpha = np.asarray(alpha, dtype=float)
    before = float(alpha @ basis.weights)
    after = float(propagate(Q, basis, alpha, t) @ basis.weights)
    return abs(after - before)
