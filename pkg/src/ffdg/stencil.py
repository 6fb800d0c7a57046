"""Nodal stencils, per-mesh bases and DG coefficient vectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadStencilParams, MisalignedBreakpoint, OutOfDomain, UnsupportedDegree
from .model import SIGNS, SignPartition

NODE_TOL = 1e-10


@dataclass(frozen=True)
class Stencil:
    """Sorted nodes ``x_1 < ... < x_K`` and the ``K - 1`` meshes between them.

    When ``boundary`` is true the first and last meshes are boundary meshes,
    which always carry a constant basis and stand in for point masses.
    """

    nodes: np.ndarray
    boundary: bool = True

    def __post_init__(self):
        x = np.array(self.nodes, dtype=float)
        if x.ndim != 1 or len(x) < 2:
            raise BadStencilParams("a stencil needs at least two nodes")
        if not np.all(np.isfinite(x)):
            raise BadStencilParams("nodes must be finite")
        if x[0] != 0.0:
            raise BadStencilParams(f"first node must be 0, got {x[0]}")
        if np.any(np.diff(x) <= 0):
            raise BadStencilParams("nodes must be strictly increasing")
        if self.boundary and len(x) < 4:
            raise BadStencilParams("boundary meshes need at least four nodes")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @property
    def K(self) -> int:
        return len(self.nodes)

    @property
    def n_meshes(self) -> int:
        return len(self.nodes) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def length(self) -> float:
        return float(self.nodes[-1])

    def is_boundary(self, k: int) -> bool:
        return self.boundary and k in (0, self.n_meshes - 1)

    def mesh_of(self, x: float) -> int:
        """Mesh containing ``x``; interior nodes belong to the mesh on their right."""
        if x < 0 or x > self.length:
            raise OutOfDomain(f"x = {x} outside [0, {self.length}]")
        k = int(np.searchsorted(self.nodes, x, side="right") - 1)
        return min(k, self.n_meshes - 1)

    def has_node(self, x: float) -> bool:
        return bool(np.any(np.abs(self.nodes - x) <= NODE_TOL * max(1.0, abs(x))))


def make_omega_stencil(K: int, h: float, dh: float) -> Stencil:
    """The ω stencil ``(0, dh, h, 2h, ..., (K-4)h, (K-3)h - dh, (K-3)h)``.

    Examples
    --------
    >>> make_omega_stencil(6, 1.0, 0.5).nodes.tolist()
    [0.0, 0.5, 1.0, 2.0, 2.5, 3.0]
    """
    if int(K) != K or K < 6:
        raise BadStencilParams(f"K must be an integer >= 6, got {K}")
    if not (0 < dh < h):
        raise BadStencilParams(f"need 0 < dh < h, got dh={dh}, h={h}")
    K = int(K)
    nodes = [0.0, dh] + [h * j for j in range(1, K - 3)] + [(K - 3) * h - dh, (K - 3) * h]
    return Stencil(np.array(nodes))


def make_uniform_stencil(h: float, dh: float, length: float,
                         breakpoints: Sequence[float] = ()) -> Stencil:
    """Stencil on ``[0, length]`` with boundary meshes of width ``dh``.

    Interior nodes are the multiples of ``h`` plus any ``breakpoints`` that are
    not already nodes, so the stencil works for ``h`` that does not divide the
    breakpoints or the length.
    """
    if not (0 < dh < h):
        raise BadStencilParams(f"need 0 < dh < h, got dh={dh}, h={h}")
    if length <= 2 * dh:
        raise BadStencilParams("length too short for two boundary meshes")
    top = length - dh
    tol = NODE_TOL * max(1.0, length)
    inner = [h * j for j in range(1, int(np.floor(top / h)) + 2)]
    inner += [float(b) for b in breakpoints]
    inner = sorted(v for v in inner if dh + tol < v < top - tol)
    merged = []
    for v in inner:
        if not merged or v - merged[-1] > tol:
            merged.append(v)
    return Stencil(np.array([0.0, dh, *merged, top, length]))


@dataclass(frozen=True)
class BasisSet:
    """Per-mesh nonnegative bases.

    Boundary meshes (and every mesh when ``degree == 0``) carry the constant
    1; interior meshes of degree 1 carry the partition-of-unity pair
    ``(x_{k+1} - x)/w`` and ``(x - x_k)/w``.  Global index ``offsets[k] + n``
    addresses basis ``n`` of mesh ``k``.
    """

    stencil: Stencil
    degree: int
    sizes: np.ndarray
    offsets: np.ndarray
    weights: np.ndarray  # ∫ φ over its mesh
    left: np.ndarray  # φ at the mesh's left endpoint
    right: np.ndarray  # φ at the mesh's right endpoint
    mesh: np.ndarray  # owning mesh of each global index

    @property
    def N(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_meshes(self) -> int:
        return self.stencil.n_meshes

    def slice(self, k: int) -> slice:
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def indices(self, meshes) -> np.ndarray:
        meshes = list(meshes)
        if not meshes:
            return np.zeros(0, dtype=int)
        return np.concatenate([np.arange(self.offsets[k], self.offsets[k + 1]) for k in meshes])

    def values(self, k: int, x) -> np.ndarray:
        """Basis values of mesh ``k`` at points ``x``; shape ``(len(x), N_k)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.sizes[k] == 1:
            return np.ones((len(x), 1))
        a, b = self.stencil.nodes[k], self.stencil.nodes[k + 1]
        w = b - a
        return np.column_stack([(b - x) / w, (x - a) / w])

    def mesh_mass(self, k: int) -> float:
        return float(self.weights[self.slice(k)].sum())


def make_basis(stencil: Stencil, degree: int = 1) -> BasisSet:
    if degree not in (0, 1):
        raise UnsupportedDegree(f"degree must be 0 or 1, got {degree}")
    nm = stencil.n_meshes
    widths = stencil.widths
    sizes = np.array([1 if degree == 0 or stencil.is_boundary(k) else 2 for k in range(nm)])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    N = int(offsets[-1])
    weights = np.empty(N)
    left = np.zeros(N)
    right = np.zeros(N)
    mesh = np.repeat(np.arange(nm), sizes)
    for k in range(nm):
        o = offsets[k]
        if sizes[k] == 1:
            weights[o] = widths[k]
            left[o] = right[o] = 1.0
        else:
            weights[o:o + 2] = widths[k] / 2
            left[o] = 1.0
            right[o + 1] = 1.0
    for arr in (sizes, offsets, weights, left, right, mesh):
        arr.setflags(write=False)
    return BasisSet(stencil, degree, sizes, offsets, weights, left, right, mesh)


@dataclass(frozen=True)
class MeshIndexSets:
    """``gamma[(phase, sign)]``: zero-based meshes of that phase in that sign class."""

    gamma: dict
    n_phases: int
    n_meshes: int

    def __getitem__(self, key) -> tuple:
        return self.gamma[key]

    def sign_of_mesh(self, phase: int, k: int) -> str:
        for s in SIGNS:
            if k in self.gamma[(phase, s)]:
                return s
        raise KeyError((phase, k))

    def one_based(self, phase: int, sign: str) -> tuple:
        return tuple(k + 1 for k in self.gamma[(phase, sign)])


def mesh_index_sets(stencil: Stencil, part: SignPartition, zero_atom: bool = True) -> MeshIndexSets:
    """Assign every mesh to exactly one sign class per phase.

    With ``zero_atom`` a sign set consisting of the single point 0 claims the
    boundary mesh at 0, since that mesh carries the point mass of ``X`` at 0.
    """
    if abs(stencil.length - part.truncation) > NODE_TOL * max(1.0, part.truncation):
        raise BadStencilParams(
            f"stencil ends at {stencil.length}, model truncation is {part.truncation}")
    x = stencil.nodes
    mids = 0.5 * (x[:-1] + x[1:])
    nphase = len(part.sets)
    gamma = {}
    for i in range(nphase):
        for s in SIGNS:
            for iv in part.intervals(i, s):
                if iv.is_point:
                    continue
                for end in (iv.lo, iv.hi):
                    if not stencil.has_node(end):
                        raise MisalignedBreakpoint(
                            f"phase {i}: sign change at {end:g} is not a node")
        labels = [part.sign_at(i, m) for m in mids]
        if zero_atom and stencil.boundary:
            for s in SIGNS:
                if any(iv.is_point and iv.lo == 0.0 for iv in part.intervals(i, s)):
                    labels[0] = s
        for s in SIGNS:
            gamma[(i, s)] = tuple(k for k, lab in enumerate(labels) if lab == s)
    return MeshIndexSets(gamma, nphase, stencil.n_meshes)


@dataclass
class CoefficientVector:
    """DG representation of a signed measure per phase.

    ``alpha`` holds density coefficients, shape ``(n_phases, N)`` or ``(N,)``
    for a single phase.  ``alpha * weights`` is the mass carried by each basis
    function.
    """

    basis: BasisSet
    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.shape[-1] != self.basis.N:
            raise ValueError(f"expected {self.basis.N} coefficients, got {self.alpha.shape[-1]}")

    @classmethod
    def from_masses(cls, basis: BasisSet, a) -> "CoefficientVector":
        return cls(basis, np.asarray(a, dtype=float) / basis.weights)

    @property
    def masses(self) -> np.ndarray:
        return self.alpha * self.basis.weights

    def mass(self) -> float:
        return float(self.masses.sum())

    def phase_mass(self) -> np.ndarray:
        return np.atleast_2d(self.masses).sum(axis=1)

    def cell_masses(self) -> np.ndarray:
        """Mass per mesh, shape ``(..., n_meshes)``."""
        a = np.atleast_2d(self.masses)
        out = np.add.reduceat(a, self.basis.offsets[:-1], axis=1)
        return out if self.alpha.ndim == 2 else out[0]

    def __call__(self, x):
        return evaluate(self, x)


def evaluate(coeffs: CoefficientVector, x):
    """Density ``Σ α φ`` at ``x``; interior nodes give the right limit.

    Scalar ``x`` with one-phase coefficients returns a float; otherwise the
    result has shape ``(n_phases, len(x))`` (or ``(len(x),)`` for one phase).
    """
    basis = coeffs.basis
    st = basis.stencil
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < 0) or np.any(xs > st.length) or not np.all(np.isfinite(xs)):
        raise OutOfDomain(f"points outside [0, {st.length}]")
    alpha = np.atleast_2d(coeffs.alpha)
    out = np.zeros((alpha.shape[0], len(xs)))
    ks = np.minimum(np.searchsorted(st.nodes, xs, side="right") - 1, st.n_meshes - 1)
    for k in np.unique(ks):
        sel = ks == k
        phi = basis.values(k, xs[sel])
        out[:, sel] = alpha[:, basis.slice(k)] @ phi.T
    if coeffs.alpha.ndim == 1:
        out = out[0]
        return float(out[0]) if np.ndim(x) == 0 else out
    return out


def point_mass(basis: BasisSet, x0: float) -> np.ndarray:
    """Mass coordinates of a unit point mass at ``x0``.

    The mass is split over the bases of the containing mesh in proportion to
    their values at ``x0`` (right-limit at interior nodes).
    """
    k = basis.stencil.mesh_of(x0)
    a = np.zeros(basis.N)
    a[basis.slice(k)] = basis.values(k, x0)[0]
    return a
