"""Fluid-fluid model definition, validation and sign partitions.

A model is a finite phase process with generator ``T``, a first fluid ``X``
moving at rate ``c[i]`` in phase ``i`` (regulated at 0), and a second fluid
``Y`` whose rate ``r_i(x)`` is piecewise constant in the level of ``X``.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    BreakpointBeyondTruncation,
    EmptyNegativeClass,
    InvalidModel,
    InvalidParameter,
    ModelError,
    NegativeOffDiagonal,
    NonConservativeGenerator,
    ReducibleGenerator,
    ZeroFirstFluidRate,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

SIGNS = ("+", "-", "0")
ROW_SUM_TOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def sign_of(rate: float) -> str:
    if rate > 0:
        return "+"
    if rate < 0:
        return "-"
    return "0"


@dataclass(frozen=True)
class RateField:
    """Piecewise-constant second-fluid rates.

    Piece ``k`` covers ``[breakpoints[k], breakpoints[k+1])``; the last piece
    extends to infinity.  ``at_zero`` optionally overrides the rate while
    ``X`` sits at the regulated boundary 0.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    at_zero: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", _frozen(self.breakpoints))
        vals = np.atleast_2d(np.array(self.values, dtype=float))
        object.__setattr__(self, "values", _frozen(vals))
        if self.at_zero is not None:
            object.__setattr__(self, "at_zero", _frozen(self.at_zero))

    @property
    def n_pieces(self) -> int:
        return len(self.breakpoints)

    def piece_index(self, x: float, direction: int = 1) -> int:
        """Index of the piece containing ``x``.

        At a breakpoint the piece on the side ``direction`` points to wins
        (right by default, matching left-closed pieces).
        """
        if direction >= 0:
            return int(np.searchsorted(self.breakpoints, x, side="right") - 1)
        return max(int(np.searchsorted(self.breakpoints, x, side="left") - 1), 0)

    def rate(self, phase: int, x: float, direction: int = 1) -> float:
        return float(self.values[phase, self.piece_index(x, direction)])

    def rate_at_zero(self, phase: int) -> float:
        if self.at_zero is None:
            return float(self.values[phase, 0])
        return float(self.at_zero[phase])

    def mean_rate(self, phase: int, a: float, b: float) -> float:
        """Average of ``r_phase`` over ``[a, b]`` (exact for piecewise constants)."""
        edges = np.concatenate([self.breakpoints, [np.inf]])
        total = 0.0
        for k in range(self.n_pieces):
            lo, hi = max(a, edges[k]), min(b, edges[k + 1])
            if hi > lo:
                total += (hi - lo) * self.values[phase, k]
        return total / (b - a)


@dataclass(frozen=True)
class ModelSpec:
    phases: tuple
    generator: np.ndarray
    c: np.ndarray
    rates: RateField
    truncation: float
    name: str = "model"
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(str(p) for p in self.phases))
        T = np.array(self.generator, dtype=float)
        if T.ndim == 2 and T.shape[0] == T.shape[1]:
            # exact zero row sums when the input is conservative up to rounding
            off = T - np.diag(np.diag(T))
            rows = T.sum(axis=1)
            scale = max(1.0, float(np.abs(T).max(initial=0.0)))
            if np.all(np.abs(rows) <= ROW_SUM_TOL * scale):
                T = off - np.diag(off.sum(axis=1))
        object.__setattr__(self, "generator", _frozen(T))
        object.__setattr__(self, "c", _frozen(self.c))
        object.__setattr__(self, "truncation", float(self.truncation))
        object.__setattr__(self, "params", dict(self.params))

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    def phase_index(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            return int(label)
        return self.phases.index(str(label))

    @property
    def breakpoints(self) -> np.ndarray:
        """Interior rate breakpoints (the 0 start is excluded)."""
        return self.rates.breakpoints[self.rates.breakpoints > 0]


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)  # (name, passed, error class, message)

    def add(self, name, passed, error_cls, message=""):
        self.checks.append((name, bool(passed), error_cls, message))

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _, _ in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c[1]]

    def raise_for_failure(self):
        for name, passed, error_cls, message in self.checks:
            if not passed:
                raise error_cls(f"{name}: {message}")

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"check": n, "passed": p, "code": e.__name__, "message": m}
                for n, p, e, m in self.checks
            ],
        }


def validate_model(spec: ModelSpec) -> ValidationReport:
    """Check every model invariant; failures do not raise until asked."""
    rep = ValidationReport()
    n = spec.n_phases
    rep.add("phases nonempty", n > 0, InvalidModel, "no phases")
    rep.add("phases unique", len(set(spec.phases)) == n, InvalidModel, "duplicate labels")

    T = spec.generator
    shape_ok = T.shape == (n, n)
    rep.add("generator shape", shape_ok, InvalidModel, f"expected {n}x{n}, got {T.shape}")
    if not shape_ok:
        return rep
    off = T - np.diag(np.diag(T))
    rep.add("off-diagonals nonnegative", np.all(off >= 0), NegativeOffDiagonal,
            f"min off-diagonal {off.min():g}")
    rows = T.sum(axis=1)
    scale = max(1.0, float(np.abs(T).max()))
    rep.add("row sums zero", np.all(np.abs(rows) <= ROW_SUM_TOL * scale),
            NonConservativeGenerator, f"row sums {rows.tolist()}")
    ncomp, _ = connected_components(off > 0, directed=True, connection="strong")
    rep.add("irreducible", ncomp == 1, ReducibleGenerator, f"{ncomp} communicating classes")

    c = spec.c
    rep.add("c shape", c.shape == (n,), InvalidModel, f"expected {n} rates")
    rep.add("c finite", np.all(np.isfinite(c)), InvalidModel, "non-finite first-fluid rate")
    rep.add("c nonzero", np.all(c != 0), ZeroFirstFluidRate,
            "zero first-fluid rates are not supported")
    rep.add("some c negative", np.any(c < 0), InvalidModel,
            "no phase drains the first fluid")

    rf = spec.rates
    rep.add("rate table shape", rf.values.shape == (n, rf.n_pieces), InvalidModel,
            f"expected {n}x{rf.n_pieces} rates")
    rep.add("rates finite", np.all(np.isfinite(rf.values)), InvalidModel, "non-finite rate")
    bp = rf.breakpoints
    rep.add("breakpoints start at 0", len(bp) > 0 and bp[0] == 0.0, InvalidModel,
            "first piece must start at 0")
    rep.add("breakpoints increasing", np.all(np.diff(bp) > 0), InvalidModel,
            "breakpoints must be strictly increasing")
    rep.add("truncation positive", spec.truncation > 0, InvalidModel, "truncation must be > 0")
    rep.add("breakpoints inside truncation", np.all(bp < spec.truncation),
            BreakpointBeyondTruncation, f"breakpoint {bp.max():g} >= {spec.truncation:g}")
    if rf.at_zero is not None:
        rep.add("at_zero shape", rf.at_zero.shape == (n,), InvalidModel,
                f"expected {n} boundary rates")

    if rep.ok:
        part = partition_rates(spec)
        rep.add("negative class nonempty", len(part.S_minus) > 0, EmptyNegativeClass,
                "second fluid can never decrease")
    return rep


def require_valid(spec: ModelSpec) -> ModelSpec:
    validate_model(spec).raise_for_failure()
    return spec


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = False

    def contains(self, x: float) -> bool:
        above = x >= self.lo if self.lo_closed else x > self.lo
        below = x <= self.hi if self.hi_closed else x < self.hi
        return above and below

    @property
    def is_point(self) -> bool:
        return self.lo == self.hi


@dataclass(frozen=True)
class SignPartition:
    """Per-phase split of ``[0, truncation]`` by the sign of ``r_i``."""

    sets: tuple  # per phase: {sign: [Interval, ...]}
    truncation: float

    def intervals(self, phase: int, sign: str) -> list:
        return self.sets[phase][sign]

    def sign_at(self, phase: int, x: float) -> str:
        for s in SIGNS:
            if any(iv.contains(x) for iv in self.sets[phase][s]):
                return s
        raise ModelError(f"{x} outside partition of phase {phase}")

    def _class(self, sign):
        return tuple(i for i, d in enumerate(self.sets) if d[sign])

    @property
    def S_plus(self) -> tuple:
        return self._class("+")

    @property
    def S_minus(self) -> tuple:
        return self._class("-")

    @property
    def S_zero(self) -> tuple:
        return self._class("0")


def partition_rates(spec: ModelSpec) -> SignPartition:
    rf = spec.rates
    top = spec.truncation
    edges = [float(b) for b in rf.breakpoints if b < top] + [top]
    sets = []
    for i in range(spec.n_phases):
        pieces = []  # (lo, hi, lo_closed, hi_closed, sign)
        for k in range(len(edges) - 1):
            last = k == len(edges) - 2
            pieces.append([edges[k], edges[k + 1], True, last, sign_of(rf.values[i, k])])
        if rf.at_zero is not None and sign_of(rf.at_zero[i]) != pieces[0][4]:
            pieces[0][2] = False
            pieces.insert(0, [0.0, 0.0, True, True, sign_of(rf.at_zero[i])])
        merged = []
        for p in pieces:
            if merged and merged[-1][4] == p[4] and merged[-1][1] == p[0]:
                merged[-1][1], merged[-1][3] = p[1], p[3]
            else:
                merged.append(list(p))
        d = {s: [] for s in SIGNS}
        for lo, hi, lc, hc, s in merged:
            d[s].append(Interval(lo, hi, lc, hc))
        sets.append(d)
    return SignPartition(tuple(sets), top)


BANDWIDTH_DEFAULTS = {
    "alpha1": 11.0, "beta1": 1.0, "lambda1": 12.48, "theta1": 1.6, "kappa": 2.6,
    "alpha2": 22.0, "beta2": 1.0, "lambda2": 16.25, "theta2": 1.0, "x_star": 1.6,
    "truncation": 16.0,
}


def build_bandwidth_model(params: Mapping | None = None, **overrides) -> ModelSpec:
    """On-off bandwidth-sharing model with phases ``11, 10, 01, 00``.

    The first digit is the input state of buffer 1 (``X``), the second that of
    buffer 2 (``Y``).  Missing parameters default to the reference values.
    """
    p = dict(BANDWIDTH_DEFAULTS)
    p.update(params or {})
    p.update(overrides)
    unknown = set(p) - set(BANDWIDTH_DEFAULTS)
    if unknown:
        raise InvalidParameter(f"unknown parameters {sorted(unknown)}")
    p = {k: float(v) for k, v in p.items()}
    for k in ("alpha1", "beta1", "alpha2", "beta2", "lambda1", "lambda2", "theta1",
              "theta2", "kappa", "x_star", "truncation"):
        if not (p[k] > 0 and math.isfinite(p[k])):
            raise InvalidParameter(f"{k} must be positive, got {p[k]}")
    if not math.isclose(p["theta1"] + p["theta2"], p["kappa"], rel_tol=0, abs_tol=1e-12):
        raise InvalidParameter(
            f"theta1 + theta2 = {p['theta1'] + p['theta2']:g} must equal kappa = {p['kappa']:g}")
    if p["lambda1"] <= p["theta1"] or p["lambda2"] <= p["kappa"]:
        raise InvalidParameter("input rates must exceed output rates")
    if p["x_star"] >= p["truncation"]:
        raise BreakpointBeyondTruncation("x_star must lie below the truncation level")

    a1, b1, a2, b2 = p["alpha1"], p["beta1"], p["alpha2"], p["beta2"]
    T = np.array([
        [-(a1 + a2), a2, a1, 0.0],
        [b2, -(a1 + b2), 0.0, a1],
        [b1, 0.0, -(a2 + b1), a2],
        [0.0, b1, b2, -(b1 + b2)],
    ])
    l1, t1 = p["lambda1"], p["theta1"]
    l2, t2, k = p["lambda2"], p["theta2"], p["kappa"]
    c = [l1 - t1, l1 - t1, -t1, -t1]
    below = [l2 - t2, -t2, l2 - t2, -t2]
    above = [l2, 0.0, l2, 0.0]
    at_zero = [l2 - k, -k, l2 - k, -k]
    rates = RateField([0.0, p["x_star"]], np.column_stack([below, above]), at_zero)
    return ModelSpec(("11", "10", "01", "00"), T, c, rates, p["truncation"],
                     name="bandwidth", params=p)


def model_from_dict(d: Mapping) -> ModelSpec:
    """Build a model from the parsed config schema (see README)."""
    if "bandwidth" in d:
        params = dict(d["bandwidth"])
        if "truncation" in d and "truncation" not in params:
            params["truncation"] = d["truncation"]
        return build_bandwidth_model(params)
    try:
        rates = d["rates"]
        rf = RateField(rates["breakpoints"], rates["values"], rates.get("at_zero"))
        return ModelSpec(d["phases"], d["generator"], d["c"], rf, d["truncation"],
                         name=d.get("name", "model"))
    except KeyError as exc:
        raise InvalidModel(f"missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise InvalidModel(str(exc)) from exc


def load_model(path: str | Path) -> ModelSpec:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        d = json.loads(text)
    else:
        d = tomllib.loads(text)
    return model_from_dict(d)


def model_to_dict(spec: ModelSpec) -> dict:
    rf = spec.rates
    d = {
        "name": spec.name,
        "phases": list(spec.phases),
        "generator": spec.generator.tolist(),
        "c": spec.c.tolist(),
        "truncation": spec.truncation,
        "rates": {"breakpoints": rf.breakpoints.tolist(), "values": rf.values.tolist()},
    }
    if rf.at_zero is not None:
        d["rates"]["at_zero"] = rf.at_zero.tolist()
    return d


def phase_group(spec: ModelSpec, labels: Sequence[str]) -> list:
    return [spec.phase_index(lbl) for lbl in labels]
