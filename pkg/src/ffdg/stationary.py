"""Joint stationary distribution of (X, Y, phase).

The solution has an atom at ``Y = 0`` (carried by the ``-`` and ``0``
classes) and a density in ``y > 0`` of the form ``v e^{K y}``.  Everything is
held in mass coordinates over the product index space and converted to
density coefficients only when exported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, null_space

from .dg_core import assemble_generator
from .errors import NoStationaryReturn, StationaryError, UnstableK
from .model import ModelSpec, partition_rates, require_valid
from .operators import (BlockOperatorMatrix, RateOperators, assemble_B, assemble_D, assemble_R,
                        censored_inverse)
from .riccati import PsiSolution, build_K, solve_psi
from .stencil import BasisSet, CoefficientVector, mesh_index_sets

UNIT_EIG_TOL = 1e-6
SPLITS = ("on_off", "y_zero_positive")


@dataclass(frozen=True)
class Discretisation:
    """Everything assembled for one model on one basis."""

    model: ModelSpec
    basis: BasisSet
    gamma: object
    B: BlockOperatorMatrix
    R: RateOperators
    D: dict


def discretise(model: ModelSpec, basis: BasisSet, rho_mode: str = "normalized",
               zero_atom: bool = True, check: bool = True) -> Discretisation:
    require_valid(model)
    gamma = mesh_index_sets(basis.stencil, partition_rates(model), zero_atom=zero_atom)
    gens = assemble_generator(model, basis, check=check)
    B = assemble_B(model, basis, gamma, gens)
    R = assemble_R(model, basis, gamma, rho_mode, zero_atom)
    D = assemble_D(B, R, 0.0)
    return Discretisation(model, basis, gamma, B, R, D)


def _return_map(B: BlockOperatorMatrix, psi: np.ndarray):
    im, iz, ip = B.indices("-"), B.indices("0"), B.indices("+")
    cz = np.concatenate([im, iz])
    Bc_inv = censored_inverse(B.full[np.ix_(cz, cz)])
    to_plus = B.full[np.ix_(cz, ip)]
    return Bc_inv, to_plus


def solve_xi(B: BlockOperatorMatrix, psi: np.ndarray, tol: float = UNIT_EIG_TOL) -> np.ndarray:
    """Stationary law of (X, phase) at successive returns of Y to 0.

    ``ξ A = ξ`` with ``A`` the map from a ``-`` state at Y = 0, through the
    censored (−, 0) dynamics, up into ``+`` and back down through ψ.
    """
    Bc_inv, to_plus = _return_map(B, psi)
    nm = len(B.indices("-"))
    A = (Bc_inv @ to_plus @ psi)[:nm]
    ev, V = np.linalg.eig(A.T)
    order = np.argsort(np.abs(ev - 1))
    j = order[0]
    if abs(ev[j] - 1) > tol:
        raise NoStationaryReturn(
            f"return map has spectral radius {np.abs(ev).max():.6g}; the second fluid does not "
            "return to 0 with probability 1")
    if len(ev) > 1 and abs(ev[order[1]] - 1) <= tol:
        raise NoStationaryReturn("unit eigenvalue of the return map is not simple")
    xi = np.real(V[:, j])
    return xi / xi.sum()


def boundary_masses(xi: np.ndarray, B: BlockOperatorMatrix) -> np.ndarray:
    """Unnormalised Y = 0 masses over the concatenated (−, 0) indices."""
    Bc_inv, _ = _return_map(B, None)
    nz = len(B.indices("0"))
    return np.concatenate([xi, np.zeros(nz)]) @ Bc_inv


def first_fluid_stationary(B: BlockOperatorMatrix) -> np.ndarray:
    """Stationary mass vector of (X, phase) alone: the normalised left null vector of B."""
    ns = null_space(B.full.T)
    if ns.shape[1] != 1:
        raise StationaryError(f"first-fluid generator has {ns.shape[1]} stationary laws")
    v = ns[:, 0]
    return v / v.sum()


@dataclass
class StationarySolution:
    disc: Discretisation
    psi: PsiSolution | None
    recurrent: bool
    xi: np.ndarray | None = None
    K: np.ndarray | None = None
    p: np.ndarray | None = None  # Y = 0 masses over all P·N indices
    v: np.ndarray | None = None  # row vector driving e^{K y}
    int_density: np.ndarray | None = None  # ∫ π(y) dy over all P·N indices
    scale: float = 1.0
    info: dict = field(default_factory=dict)

    @property
    def basis(self) -> BasisSet:
        return self.disc.basis

    @property
    def B(self) -> BlockOperatorMatrix:
        return self.disc.B

    @property
    def shape(self):
        return (self.B.n_phases, self.B.N)

    def _coeffs(self, full_masses: np.ndarray) -> CoefficientVector:
        return CoefficientVector.from_masses(self.basis, full_masses.reshape(self.shape))

    def y_zero_probability(self) -> float:
        return float(self.p.sum())

    def total_probability(self) -> float:
        return float(self.p.sum() + self.int_density.sum())

    def point_masses(self) -> CoefficientVector:
        return self._coeffs(self.p)

    def density_at_y(self, y: float) -> dict:
        """Coefficient vectors of ``π^+(y)``, ``π^-(y)``, ``π^0(y)``."""
        if not self.recurrent:
            raise StationaryError("no stationary density in y for a transient second fluid")
        if y < 0:
            raise StationaryError("y must be nonnegative")
        return self._split_density(self.v @ expm(self.K * y))

    def integrated_density(self) -> dict:
        """Closed-form ``∫_0^∞ π(y) dy`` per sign class."""
        out = {}
        n = self.B.n_phases * self.B.N
        for s in "+-0":
            full = np.zeros(n)
            idx = self.B.indices(s)
            full[idx] = self.int_density[idx]
            out[s] = self._coeffs(full)
        return out

    def _split_density(self, u: np.ndarray) -> dict:
        B, R = self.B, self.disc.R
        ip, im, iz = B.indices("+"), B.indices("-"), B.indices("0")
        n = B.n_phases * B.N
        pp = u * R.plus
        pm = (u @ self.psi.psi) * R.minus
        pz = _zero_part(B, pp, pm)
        out = {}
        for s, idx, vals in (("+", ip, pp), ("-", im, pm), ("0", iz, pz)):
            full = np.zeros(n)
            full[idx] = vals * self.scale
            out[s] = self._coeffs(full)
        return out

    def joint_x(self, which: str) -> CoefficientVector:
        """Per-phase X-law restricted to ``Y = 0`` (``"zero"``) or ``Y > 0`` (``"positive"``)."""
        if which == "zero":
            return self._coeffs(self.p)
        if which == "positive":
            return self._coeffs(self.int_density)
        raise ValueError(which)

    def marginal_x(self, split: str = "y_zero_positive", groups: dict | None = None) -> dict:
        """Marginal densities of X summed over phase groups.

        ``y_zero_positive`` returns ``{"0": χ⁰, "+": χ⁺}`` from the joint law.
        ``on_off`` returns per-group marginals of the first fluid alone,
        computed independently from the first-fluid generator; the default
        groups are the phases where X fills (``"on"``) or drains (``"off"``).
        """
        model = self.disc.model
        if split == "y_zero_positive":
            return {"0": _sum_phases(self.joint_x("zero")),
                    "+": _sum_phases(self.joint_x("positive"))}
        if split == "on_off":
            if groups is None:
                groups = {"on": [i for i in range(model.n_phases) if model.c[i] > 0],
                          "off": [i for i in range(model.n_phases) if model.c[i] < 0]}
            chi = self._coeffs(first_fluid_stationary(self.B))
            return {g: _sum_phases(chi, [model.phase_index(i) for i in idx])
                    for g, idx in groups.items()}
        raise ValueError(f"split must be one of {SPLITS}")

    def summary(self) -> dict:
        return {
            "recurrent": self.recurrent,
            "P_Y_zero": self.y_zero_probability(),
            "P_Y_positive": float(self.int_density.sum()),
            "total_probability": self.total_probability(),
            **self.info,
        }


def _sum_phases(cv: CoefficientVector, phases=None) -> CoefficientVector:
    a = np.atleast_2d(cv.alpha)
    if phases is not None:
        a = a[list(phases)]
    return CoefficientVector(cv.basis, a.sum(axis=0))


def _zero_part(B: BlockOperatorMatrix, plus: np.ndarray, minus: np.ndarray) -> np.ndarray:
    ip, im, iz = B.indices("+"), B.indices("-"), B.indices("0")
    if len(iz) == 0:
        return np.zeros(0)
    into = np.vstack([B.full[np.ix_(ip, iz)], B.full[np.ix_(im, iz)]])
    return np.concatenate([plus, minus]) @ into @ censored_inverse(B.block("0", "0"))


def normalize(sol: StationarySolution) -> float:
    """Rescale masses and densities so the total probability is 1; returns the constant."""
    total = sol.p.sum() + sol.int_density.sum()
    if not np.isfinite(total) or total <= 0:
        raise StationaryError(f"cannot normalise a total mass of {total}")
    c = 1.0 / total
    sol.p = sol.p * c
    sol.int_density = sol.int_density * c
    sol.scale *= c
    return c


def solve_stationary(model: ModelSpec, basis: BasisSet, rho_mode: str = "normalized",
                     psi_method: str = "newton", psi_tol: float = 1e-10,
                     zero_atom: bool = True, allow_transient: bool = True) -> StationarySolution:
    """Full pipeline: assemble, solve ψ, then ξ, p and ``∫π`` and normalise.

    When the second fluid is transient the limit puts no mass at ``Y = 0``;
    with ``allow_transient`` the solution then carries the first-fluid law
    entirely in the ``Y > 0`` part and ``recurrent`` is false.
    """
    disc = discretise(model, basis, rho_mode, zero_atom)
    B, R, D = disc.B, disc.R, disc.D
    psi = solve_psi(D, method=psi_method, tol=psi_tol)
    n = B.n_phases * B.N
    info = {"psi_iterations": psi.iterations, "psi_residual": psi.residual,
            "psi_method": psi.method, "N": basis.N, "n_meshes": basis.n_meshes,
            "n_plus": len(B.indices("+")), "n_minus": len(B.indices("-")),
            "n_zero": len(B.indices("0"))}
    try:
        xi = solve_xi(B, psi.psi)
        K = build_K(D, psi.psi)
    except (NoStationaryReturn, UnstableK) as exc:
        if not allow_transient:
            raise
        sol = StationarySolution(disc, psi, False, info={**info, "reason": exc.code})
        sol.p = np.zeros(n)
        sol.int_density = first_fluid_stationary(B)
        return sol

    ip, im, iz = B.indices("+"), B.indices("-"), B.indices("0")
    cz = np.concatenate([im, iz])
    pc = boundary_masses(xi, B)
    p = np.zeros(n)
    p[cz] = pc
    v = pc @ B.full[np.ix_(cz, ip)]
    Kinv = np.linalg.inv(-K)
    w = v @ Kinv
    int_plus = w * R.plus
    int_minus = (w @ psi.psi) * R.minus
    dens = np.zeros(n)
    dens[ip] = int_plus
    dens[im] = int_minus
    dens[iz] = _zero_part(B, int_plus, int_minus)
    sol = StationarySolution(disc, psi, True, xi=xi, K=K, p=p, v=v, int_density=dens, info=info)
    normalize(sol)
    return sol
