"""Riccati solve for the first-return operator ψ and the level generator K.

``ψ`` solves ``D+- + ψ D-+ ψ + D++ ψ + ψ D-- = 0``.  Row ``n`` of ``ψ`` is the
distribution (in mass coordinates, over the ``-`` indices) of where the
process sits when the second fluid first returns to its starting level,
given that it left from basis function ``n`` of the ``+`` region.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import schur, solve_sylvester
from scipy.linalg.lapack import dtrsyl

from .errors import NoConvergence, NonFiniteIterate, RiccatiError, UnstableK
from .operators import BlockOperatorMatrix
from .stencil import BasisSet, point_mass

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
NEWTON_MAX_ITER = 200
FIXED_POINT_MAX_ITER = 50000
K_TOL = 1e-8


@dataclass(frozen=True)
class PsiSolution:
    psi: np.ndarray
    residual: float
    iterations: int
    method: str

    @property
    def row_mass(self) -> np.ndarray:
        return self.psi.sum(axis=1)


def riccati_residual(D: dict, psi: np.ndarray) -> np.ndarray:
    return D["+-"] + psi @ D["-+"] @ psi + D["++"] @ psi + psi @ D["--"]


def residual_norm(D: dict, psi: np.ndarray) -> float:
    res = riccati_residual(D, psi)
    if res.size == 0:
        return 0.0
    return float(np.linalg.norm(res, np.inf))


class _SchurSylvester:
    """Repeated solves of ``A X + X B = C`` with fixed ``A`` and ``B``."""

    def __init__(self, A, B):
        self.S, self.U = schur(A, output="real")
        self.T, self.V = schur(B, output="real")

    def __call__(self, C):
        Y, scale, info = dtrsyl(self.S, self.T, self.U.T @ C @ self.V)
        if info < 0:
            raise NoConvergence(f"Sylvester solve failed (info={info})")
        return self.U @ (Y / scale) @ self.V.T


def _newton(D, tol, max_iter):
    psi = np.zeros_like(D["+-"])
    res = riccati_residual(D, psi)
    for it in range(1, max_iter + 1):
        step = solve_sylvester(D["++"] + psi @ D["-+"], D["--"] + D["-+"] @ psi, -res)
        psi = psi + step
        if not np.all(np.isfinite(psi)):
            raise NonFiniteIterate(f"newton iterate {it} is not finite")
        res = riccati_residual(D, psi)
        err = float(np.linalg.norm(res, np.inf))
        if err <= tol:
            return psi, err, it
    raise NoConvergence(f"newton: residual {err:.3g} after {max_iter} iterations")


def fixed_point_iterates(D, max_iter=FIXED_POINT_MAX_ITER):
    """Yield ``ψ_1, ψ_2, ...`` of ``D++ ψ + ψ D-- = -(D+- + ψ D-+ ψ)`` from ``ψ_0 = 0``."""
    solve = _SchurSylvester(D["++"], D["--"])
    psi = np.zeros_like(D["+-"])
    for _ in range(max_iter):
        psi = solve(-(D["+-"] + psi @ D["-+"] @ psi))
        if not np.all(np.isfinite(psi)):
            raise NonFiniteIterate("fixed-point iterate is not finite")
        yield psi


def _fixed_point(D, tol, max_iter):
    err = np.inf
    for it, psi in enumerate(fixed_point_iterates(D, max_iter), start=1):
        err = residual_norm(D, psi)
        if err <= tol:
            return psi, err, it
    raise NoConvergence(f"fixed point: residual {err:.3g} after {max_iter} iterations")


def solve_psi(D: dict, method: str = "newton", tol: float = DEFAULT_TOL,
              max_iter: int | None = None, fallback: bool = True) -> PsiSolution:
    """Minimal nonnegative solution, reached by iterating from ``ψ = 0``.

    Newton failures fall back to the fixed-point iteration when ``fallback``
    is set.
    """
    if D["+-"].size == 0:
        return PsiSolution(np.zeros(D["+-"].shape), 0.0, 0, method)
    if method == "newton":
        try:
            psi, err, it = _newton(D, tol, max_iter or NEWTON_MAX_ITER)
            return PsiSolution(psi, err, it, "newton")
        except RiccatiError as exc:
            if not fallback:
                raise
            log.warning("newton failed (%s); falling back to fixed point", exc)
            psi, err, it = _fixed_point(D, tol, FIXED_POINT_MAX_ITER)
            return PsiSolution(psi, err, it, "fixed_point")
    if method == "fixed_point":
        psi, err, it = _fixed_point(D, tol, max_iter or FIXED_POINT_MAX_ITER)
        return PsiSolution(psi, err, it, "fixed_point")
    raise RiccatiError(f"unknown method {method!r}")


def build_K(D: dict, psi: np.ndarray, check: bool = True, tol: float = K_TOL) -> np.ndarray:
    K = D["++"] + psi @ D["-+"]
    if check and K.size:
        top = np.linalg.eigvals(K).real.max()
        if top >= -tol:
            raise UnstableK(
                f"K has an eigenvalue with real part {top:.3g}; the second fluid may not be "
                "positive recurrent or the truncation level may be too small")
    return K


@dataclass(frozen=True)
class ReturnCDF:
    """Distribution of the first fluid level at the first return, per phase.

    ``masses[i, k]`` is the returned mass in phase ``i`` and mesh ``k``.
    Boundary meshes are read as atoms at 0 and at the truncation level.
    """

    basis: BasisSet
    alpha: np.ndarray  # (P, N) returned density coefficients
    phases: tuple

    @property
    def masses(self) -> np.ndarray:
        a = self.alpha * self.basis.weights
        return np.add.reduceat(a, self.basis.offsets[:-1], axis=1)

    @property
    def nodes(self) -> np.ndarray:
        return self.basis.stencil.nodes

    def at_nodes(self) -> np.ndarray:
        """CDF at every node, shape ``(P, K)``; the value at 0 includes the atom."""
        m = self.masses
        out = np.concatenate([np.zeros((m.shape[0], 1)), np.cumsum(m, axis=1)], axis=1)
        if self.basis.stencil.boundary:
            out[:, 0] = m[:, 0]
        return out

    def total(self) -> np.ndarray:
        return self.masses.sum(axis=1)

    def __call__(self, phase: int, x) -> np.ndarray:
        basis = self.basis
        st = basis.stencil
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        cum = np.concatenate([[0.0], np.cumsum(self.masses[phase])])
        out = np.empty(len(xs))
        for n, xv in enumerate(xs):
            if xv < 0:
                out[n] = 0.0
                continue
            if xv >= st.length:
                out[n] = cum[-1]
                continue
            k = st.mesh_of(xv)
            if st.is_boundary(k):
                # atom at 0 counts from 0 on; atom at the top only at the top
                out[n] = cum[1] if k == 0 else cum[k]
                continue
            a, b = st.nodes[k], st.nodes[k + 1]
            coef = self.alpha[phase, basis.slice(k)]
            if basis.sizes[k] == 1:
                part = coef[0] * (xv - a)
            else:
                w = b - a
                part = coef[0] * (w * w - (b - xv) ** 2) / (2 * w) + coef[1] * (xv - a) ** 2 / (2 * w)
            out[n] = cum[k] + part
        return out


def plus_point_mass(B: BlockOperatorMatrix, basis: BasisSet, phase: int, x0: float) -> np.ndarray:
    """Unit point mass at ``(x0, phase)`` as a vector over the ``+`` indices."""
    full = np.zeros(B.n_phases * B.N)
    full[phase * B.N:(phase + 1) * B.N] = point_mass(basis, x0)
    idx = B.indices("+")
    if abs(full[idx].sum() - 1.0) > 1e-12:
        raise RiccatiError(f"({x0}, phase {phase}) is not in the + region")
    return full[idx]


def first_return_cdf(initial: np.ndarray, psi: np.ndarray, B: BlockOperatorMatrix,
                     basis: BasisSet, phases=None) -> ReturnCDF:
    """Map a ``+``-region mass vector through ψ and tabulate it per phase."""
    out = np.zeros(B.n_phases * B.N)
    out[B.indices("-")] = np.asarray(initial) @ psi
    a = out.reshape(B.n_phases, B.N)
    return ReturnCDF(basis, a / basis.weights, tuple(phases or range(B.n_phases)))
