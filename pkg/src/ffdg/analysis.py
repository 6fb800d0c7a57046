"""Error metrics, the first-fluid marginal oracle and convergence studies."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eig, null_space
from scipy.optimize import brentq

from .errors import AnalysisError, DegenerateSpectrum
from .model import ModelSpec
from .stencil import CoefficientVector, evaluate, make_basis, make_uniform_stencil

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _gauss(f: Callable, a: float, b: float) -> np.ndarray:
    """Gauss-Legendre integral of a vector-valued ``f`` over ``[a, b]``."""
    if b <= a:
        return np.zeros(np.shape(f(np.array([a])))[0])
    x = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
    return 0.5 * (b - a) * (np.asarray(f(x)) @ _GL_W)


def _abs_integral(f: Callable, a: float, b: float, n_sub: int) -> float:
    """``∫ |f|`` over ``[a, b]`` for a scalar function, splitting at sign changes."""
    xs = np.linspace(a, b, n_sub + 1)
    vals = f(xs)
    cuts = [a]
    for k in range(n_sub):
        if vals[k] * vals[k + 1] < 0:
            cuts.append(brentq(lambda t: float(f(np.array([t]))[0]), xs[k], xs[k + 1],
                               xtol=1e-15, rtol=4 * np.finfo(float).eps))
    cuts.append(b)
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        total += abs(float(_gauss(lambda x: f(x)[None, :], lo, hi)[0]))
    return total


def star_seminorm(g: Callable, length: float, dh: float, nodes: Sequence[float] = (),
                  atoms=None, n_sub: int = 8) -> float:
    """``Σ_i |∫_0^dh g_i| + ∫_dh^{I-dh} |g_i| + |∫_{I-dh}^I g_i|``.

    ``g(x)`` returns an array ``(P, len(x))``.  ``nodes`` lists points where
    ``g`` may jump or kink; integration never crosses them.  ``atoms`` is an
    optional ``(P, 2)`` array of signed point masses at 0 and at ``length``
    that join the two boundary terms.
    """
    top = length - dh
    pts = np.unique(np.concatenate([[0.0, dh, top, length], np.asarray(nodes, dtype=float)]))
    pts = pts[(pts >= 0) & (pts <= length)]
    P = np.shape(g(np.array([0.0])))[0]
    atoms = np.zeros((P, 2)) if atoms is None else np.asarray(atoms, dtype=float)

    def pieces(a, b):
        inner = pts[(pts > a) & (pts < b)]
        edges = np.concatenate([[a], inner, [b]])
        return zip(edges[:-1], edges[1:])

    left = atoms[:, 0] + sum((_gauss(g, a, b) for a, b in pieces(0.0, dh)), np.zeros(P))
    right = atoms[:, 1] + sum((_gauss(g, a, b) for a, b in pieces(top, length)), np.zeros(P))
    total = float(np.abs(left).sum() + np.abs(right).sum())
    for i in range(P):
        gi = lambda x, i=i: np.asarray(g(x))[i]
        for a, b in pieces(dh, top):
            total += _abs_integral(gi, a, b, n_sub)
    return total


@dataclass(frozen=True)
class ChiOracle:
    """Stationary law of (X, phase) for the first fluid alone.

    On ``[0, length)`` the CDF is ``F(x) = Σ_k a_k v_k e^{z_k (x - s_k)}``, a
    sum of spectral modes of ``T C^{-1}`` (the constant mode carries ``π``).
    ``atom`` is the mass at ``X = 0``; for a finite buffer ``atom_top`` is the
    mass held at the upper level, otherwise the mass beyond ``length`` is
    reported by ``upper_mass``.
    """

    pi: np.ndarray
    z: np.ndarray
    coef: np.ndarray  # (n_modes, P): a_k v_k
    shift: np.ndarray  # s_k, keeps growing modes bounded
    atom: np.ndarray
    length: float = np.inf

    def _modes(self, x):
        return np.exp(np.outer(self.z, x) - (self.z * self.shift)[:, None])

    def cdf(self, x) -> np.ndarray:
        """``P[X <= x, phase = i]``, shape ``(P, len(x))``; atoms are included."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        val = np.real(self.coef.T @ self._modes(np.minimum(x, self.length)))
        val = np.where(x[None, :] >= self.length, self.pi[:, None], val)
        return np.where(x[None, :] < 0, 0.0, val)

    def density(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        val = np.real((self.coef.T * self.z[None, :]) @ self._modes(x))
        return np.where((x[None, :] < 0) | (x[None, :] > self.length), 0.0, val)

    def mass(self, a: float, b: float) -> np.ndarray:
        """Density mass on ``(a, b]`` per phase, atoms excluded."""
        def F(x):
            return np.real(self.coef.T @ self._modes(np.array([x])))[:, 0]
        return F(min(b, self.length)) - F(max(a, 0.0))

    def upper_mass(self, x: float) -> np.ndarray:
        """Mass above the density up to ``x``: the top atom plus anything beyond."""
        return self.pi - np.real(self.coef.T @ self._modes(np.array([x])))[:, 0]

    @property
    def atom_top(self) -> np.ndarray:
        if not np.isfinite(self.length):
            return np.zeros_like(self.pi)
        return self.upper_mass(self.length)

    def tail(self, x: float) -> np.ndarray:
        return self.upper_mass(x)


def analytic_chi_oracle(model: ModelSpec, truncated: bool = False, tol: float = 1e-9) -> ChiOracle:
    """Spectral solution of ``F'(x) C = F(x) T`` for the first-fluid queue.

    ``F_i(0) = 0`` for ``c_i > 0`` (no atom at 0 while filling).  On
    ``[0, ∞)`` only decaying modes survive and ``F(∞) = π``.  With
    ``truncated`` the queue is reflected at the truncation level, all modes
    are kept, and ``F_i(I-) = π_i`` for ``c_i < 0`` (no atom at the top while
    draining).
    """
    T = np.asarray(model.generator, dtype=float)
    c = np.asarray(model.c, dtype=float)
    if np.any(c == 0):
        raise DegenerateSpectrum("zero first-fluid rates are not supported")
    pi = null_space(T.T)
    if pi.shape[1] != 1:
        raise DegenerateSpectrum("phase generator has no unique stationary law")
    pi = np.real(pi[:, 0] / pi[:, 0].sum())
    drift = pi @ c
    ev, vl = eig(T / c[None, :], left=True, right=False)
    up, down = np.flatnonzero(c > 0), np.flatnonzero(c < 0)
    length = float(model.truncation) if truncated else np.inf

    if not truncated:
        if drift >= 0:
            raise DegenerateSpectrum(f"mean drift {drift:.4g} >= 0; the first fluid is unstable")
        keep = np.flatnonzero(ev.real < -tol)
        if len(keep) != len(up):
            raise DegenerateSpectrum(f"{len(keep)} decaying modes for {len(up)} boundary conditions")
    else:
        if abs(drift) < tol:
            raise DegenerateSpectrum("zero mean drift makes the zero eigenvalue defective")
        keep = np.flatnonzero(np.abs(ev) > tol)
        if len(keep) != len(c) - 1:
            raise DegenerateSpectrum("expected exactly one zero eigenvalue")
    z = ev[keep]
    if len(z) > 1 and np.min(np.abs(z[:, None] - z[None, :]) + np.eye(len(z))) < tol:
        raise DegenerateSpectrum("repeated eigenvalue")
    V = vl[:, keep].conj().T  # rows are left eigenvectors
    shift = np.where(z.real > 0, length if truncated else 0.0, 0.0)
    # prepend the constant mode carrying π
    z = np.concatenate([[0.0], z])
    V = np.vstack([pi, V]).astype(complex)
    shift = np.concatenate([[0.0], shift])

    if not truncated:
        # coefficient of π is 1; solve for the decaying modes
        A = V[1:, up].T
        rhs = -pi[up].astype(complex)
        a = np.concatenate([[1.0], _solve(A, rhs)])
    else:
        e_top = np.exp(z * (length - shift))
        rows = [V[:, i] for i in up] + [V[:, i] * e_top for i in down]
        rhs = np.concatenate([np.zeros(len(up)), pi[down]]).astype(complex)
        a = _solve(np.array(rows), rhs)
    coef = a[:, None] * V
    atom = np.real(coef.T @ np.exp(-z * shift))
    atom[up] = 0.0
    return ChiOracle(pi, z, coef, shift, atom, length)


def _solve(A, b):
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSpectrum(str(exc)) from exc


def chi_error(oracle: ChiOracle, chi: CoefficientVector, length: float, dh: float) -> float:
    """Star seminorm of ``χ - χ̂``.

    The oracle's atoms join the boundary terms; for an untruncated oracle
    its mass beyond ``length`` is counted in the last cell.
    """
    st = chi.basis.stencil
    alpha = np.atleast_2d(chi.alpha)
    g = lambda x: oracle.density(x) - np.atleast_2d(evaluate(CoefficientVector(chi.basis, alpha),
                                                             np.clip(x, 0.0, st.length)))
    atoms = np.column_stack([oracle.atom, oracle.upper_mass(length)])
    return star_seminorm(g, length, dh, nodes=st.nodes, atoms=atoms)


def fit_slope(xs, errs) -> tuple:
    """Least-squares slope of ``log err`` on ``log x``; returns ``(slope, intercept, R²)``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lx, ly = np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(errs, dtype=float))
    if len(lx) < 3:
        raise AnalysisError("at least three points are needed for a slope fit")
    if not np.all(np.isfinite(ly)):
        raise AnalysisError("errors must be positive")
    slope, icpt = np.polyfit(lx, ly, 1)
    pred = slope * lx + icpt
    ss = ((ly - ly.mean()) ** 2).sum()
    r2 = 1.0 - ((ly - pred) ** 2).sum() / ss if ss > 0 else 1.0
    return float(slope), float(icpt), float(r2)


@dataclass
class ConvergenceReport:
    variable: str  # "h" or "dh"
    degree: int
    values: list
    errors: list
    n_elements: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    slope: float = float("nan")
    intercept: float = float("nan")
    r2: float = float("nan")

    def fit(self) -> "ConvergenceReport":
        pos = [(v, e) for v, e in zip(self.values, self.errors) if e > 0]
        if len(pos) >= 3:
            self.slope, self.intercept, self.r2 = fit_slope(*zip(*pos))
        return self

    def rows(self) -> list:
        return [{"variable": self.variable, "degree": self.degree, "value": v, "error": e,
                 "n_elements": n, "seconds": s, "slope": self.slope}
                for v, e, n, s in zip(self.values, self.errors, self.n_elements, self.seconds)]


def approximate_chi(model: ModelSpec, h: float, dh: float, degree: int, **kw):
    """X-marginal per phase from the full fluid-fluid solve on a uniform stencil."""
    from .stationary import solve_stationary

    st = make_uniform_stencil(h, dh, model.truncation, model.breakpoints)
    basis = make_basis(st, degree)
    sol = solve_stationary(model, basis, **kw)
    a = sol.p + sol.int_density
    return CoefficientVector.from_masses(basis, a.reshape(model.n_phases, basis.N)), sol


def convergence_study(model: ModelSpec, hs: Sequence[float], dh: float = 1e-6,
                      degree: int = 1, oracle: ChiOracle | None = None, **kw) -> ConvergenceReport:
    oracle = oracle or analytic_chi_oracle(model, truncated=True)
    rep = ConvergenceReport("h", degree, [], [])
    for h in hs:
        t0 = time.perf_counter()
        chi, sol = approximate_chi(model, h, dh, degree, **kw)
        rep.seconds.append(time.perf_counter() - t0)
        rep.values.append(float(h))
        rep.errors.append(chi_error(oracle, chi, model.truncation, dh))
        rep.n_elements.append(model.n_phases * chi.basis.N)
    return rep.fit()


def point_mass_error(oracle: ChiOracle, chi: CoefficientVector, dh: float) -> float:
    """``Σ_i |mass of the boundary mesh at 0 - P[X <= dh, phase i]|``."""
    cells = np.atleast_2d(chi.cell_masses())[:, 0]
    return float(np.abs(cells - oracle.atom - oracle.mass(0.0, dh)).sum())


DEFAULT_DHS = (0.4, 0.2, 0.1, 0.05, 0.025)


def boundary_width_study(model: ModelSpec, dhs: Sequence[float] = DEFAULT_DHS, h: float = 1.0,
                         reference_dh: float = 0.005, degree: int = 1,
                         oracle: ChiOracle | None = None, metric: str = "star",
                         **kw) -> ConvergenceReport:
    """``|err(dh) - err(reference_dh)|`` against ``dh`` at fixed ``h``.

    ``metric="star"`` measures ``err`` in the star seminorm over the whole
    domain; ``"point_mass"`` uses only the boundary mesh at 0.
    """
    if any(not 0 < d < h for d in list(dhs) + [reference_dh]):
        raise AnalysisError("every boundary width must lie in (0, h)")
    if metric not in ("star", "point_mass"):
        raise AnalysisError(f"unknown metric {metric!r}")
    oracle = oracle or analytic_chi_oracle(model, truncated=True)

    def err(chi, d):
        if metric == "star":
            return chi_error(oracle, chi, model.truncation, d)
        return point_mass_error(oracle, chi, d)

    chi_ref, _ = approximate_chi(model, h, reference_dh, degree, **kw)
    ref = err(chi_ref, reference_dh)
    rep = ConvergenceReport("dh", degree, [], [])
    for d in dhs:
        t0 = time.perf_counter()
        chi, _ = approximate_chi(model, h, d, degree, **kw)
        rep.seconds.append(time.perf_counter() - t0)
        rep.values.append(float(d))
        rep.errors.append(abs(err(chi, d) - ref))
        rep.n_elements.append(model.n_phases * chi.basis.N)
    return rep.fit()
