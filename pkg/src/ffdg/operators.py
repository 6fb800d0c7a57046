"""DG approximations of the phase-and-sign block operators B, R and D(s).

All operators live on the product space (phase, basis function) in mass
coordinates.  Global index ``i * N + n`` is basis function ``n`` of phase
``i``; sign classes select subsets of these indices via the mesh index sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dg_core import DGGenerators
from .errors import OperatorError, SingularCensoredBlock, ZeroRho
from .model import SIGNS, ModelSpec
from .stencil import BasisSet, MeshIndexSets

RHO_MODES = ("normalized", "verbatim")


@dataclass(frozen=True)
class BlockOperatorMatrix:
    """A generator on the product space, viewed through its sign classes.

    ``full`` is the dense ``(P N) x (P N)`` matrix; ``signs`` labels every
    global index with its class.  ``block(l, m)`` returns the compact block
    over active indices, ``phase_block`` the masked ``N x N`` view.
    """

    full: np.ndarray
    signs: np.ndarray
    n_phases: int
    N: int

    def indices(self, sign: str) -> np.ndarray:
        return np.flatnonzero(self.signs == sign)

    def block(self, l: str, m: str) -> np.ndarray:
        return self.full[np.ix_(self.indices(l), self.indices(m))]

    def phase_block(self, l: str, i: int, m: str, j: int) -> np.ndarray:
        N = self.N
        rows = slice(i * N, (i + 1) * N)
        cols = slice(j * N, (j + 1) * N)
        out = np.zeros((N, N), dtype=self.full.dtype)
        rmask = self.signs[rows] == l
        cmask = self.signs[cols] == m
        sub = self.full[rows, cols]
        out[np.ix_(rmask, cmask)] = sub[np.ix_(rmask, cmask)]
        return out

    def split(self, sign: str) -> list:
        """Phase and local basis index of each active index in ``sign``."""
        idx = self.indices(sign)
        return [(int(g // self.N), int(g % self.N)) for g in idx]


def sign_labels(basis: BasisSet, gamma: MeshIndexSets) -> np.ndarray:
    labels = np.empty(gamma.n_phases * basis.N, dtype="<U1")
    for i in range(gamma.n_phases):
        for s in SIGNS:
            idx = basis.indices(gamma[(i, s)])
            labels[i * basis.N + idx] = s
    return labels


def assemble_B(model: ModelSpec, basis: BasisSet, gamma: MeshIndexSets,
               gens: DGGenerators) -> BlockOperatorMatrix:
    """Generator of (X, phase): jump blocks ``T_ij I`` plus drift blocks ``Q^i``.

    Restricting this matrix to (phase i, class l) rows and (phase j, class m)
    columns yields the three block cases: masked ``T_ij I`` for ``i != j``,
    drift across a sign boundary for ``i == j, l != m``, and
    ``T_ii I + Q^i`` on the class for ``i == j, l == m``.
    """
    P, N = model.n_phases, basis.N
    T = model.generator
    B = np.kron(T, np.eye(N))
    for i in range(P):
        B[i * N:(i + 1) * N, i * N:(i + 1) * N] += gens.Q[i]
    return BlockOperatorMatrix(B, sign_labels(basis, gamma), P, N)


def compute_rho(model: ModelSpec, basis: BasisSet, mode: str = "normalized",
                zero_atom: bool = True) -> np.ndarray:
    """Effective second-fluid rate per phase and basis function, shape ``(P, N)``.

    ``verbatim`` gives ``∫ r φ``; ``normalized`` divides by ``∫ φ``, so a rate
    constant on the mesh is reproduced exactly.  With ``zero_atom`` the
    boundary mesh at 0 takes the rate that applies while ``X`` sits at 0.
    """
    if mode not in RHO_MODES:
        raise OperatorError(f"unknown rho mode {mode!r}")
    rf = model.rates
    st = basis.stencil
    x = st.nodes
    bps = np.asarray(rf.breakpoints)
    rho = np.zeros((model.n_phases, basis.N))
    for k in range(basis.n_meshes):
        a, b = x[k], x[k + 1]
        cuts = np.unique(np.concatenate([[a, b], bps[(bps > a) & (bps < b)]]))
        mids = 0.5 * (cuts[:-1] + cuts[1:])
        lens = np.diff(cuts)
        # each basis is linear, so ∫ φ over a sub-piece is length × φ(mid)
        phi = basis.values(k, mids)  # (pieces, N_k)
        s = basis.slice(k)
        for i in range(model.n_phases):
            r = np.array([rf.rate(i, m) for m in mids])
            rho[i, s] = (lens * r) @ phi
        if zero_atom and k == 0 and st.boundary and rf.at_zero is not None:
            rho[:, s] = (rf.at_zero * basis.weights[s][0])[:, None]
    if mode == "normalized":
        rho = rho / basis.weights
    return rho


@dataclass(frozen=True)
class RateOperators:
    rho: np.ndarray  # (P, N)
    plus: np.ndarray  # diagonal of R^+ over the + indices
    minus: np.ndarray

    @property
    def R_plus(self) -> np.ndarray:
        return np.diag(self.plus)

    @property
    def R_minus(self) -> np.ndarray:
        return np.diag(self.minus)


def assemble_R(model: ModelSpec, basis: BasisSet, gamma: MeshIndexSets,
               mode: str = "normalized", zero_atom: bool = True) -> RateOperators:
    rho = compute_rho(model, basis, mode, zero_atom)
    labels = sign_labels(basis, gamma)
    flat = rho.reshape(-1)
    out = {}
    for s, sgn in (("+", 1.0), ("-", -1.0)):
        vals = flat[labels == s]
        if np.any(vals == 0):
            raise ZeroRho(f"zero effective rate on a {s} mesh")
        if np.any(np.sign(vals) != sgn):
            raise OperatorError(f"effective rate sign disagrees with class {s}")
        out[s] = 1.0 / np.abs(vals)
    return RateOperators(rho, out["+"], out["-"])


def censored_inverse(B00: np.ndarray, s: complex = 0.0) -> np.ndarray:
    """``(sI - B^{00})^{-1}``, raising when the block is singular."""
    n = B00.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=np.result_type(B00, s))
    A = s * np.eye(n) - B00
    try:
        inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise SingularCensoredBlock(str(exc)) from exc
    if not np.all(np.isfinite(inv)) or np.linalg.cond(A) > 1e14:
        raise SingularCensoredBlock("censored 0-block is numerically singular")
    return inv


def assemble_D(B: BlockOperatorMatrix, R: RateOperators, s: complex = 0.0) -> dict:
    """Blocks ``D^{lm}(s)`` for ``l, m`` in ``{+, -}``, keyed ``"++"`` etc."""
    cen = censored_inverse(B.block("0", "0"), s)
    scale = {"+": R.plus, "-": R.minus}
    D = {}
    for l in "+-":
        for m in "+-":
            blk = B.block(l, m) + B.block(l, "0") @ cen @ B.block("0", m)
            if l == m:
                blk = blk - s * np.eye(blk.shape[0])
            D[l + m] = scale[l][:, None] * blk
    return D
