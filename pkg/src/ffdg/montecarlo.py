"""Exact event-driven simulation of the fluid-fluid process.

Between events X and Y move linearly, so event times are found in closed
form: phase jumps, X reaching a rate breakpoint or 0, Y reaching 0, and the
horizon.  Each path draws from its own counter-based stream derived from
``(seed, path index)``, so results do not depend on thread scheduling.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .errors import MonteCarloError, NoRetainedPaths
from .model import ModelSpec

# numba falls back to another threading layer on its own; the notice is noise
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INF = 1e300

# trace columns
TRACE_FIELDS = ("t", "x", "y", "phase", "x_slope", "y_slope")


def set_threads(n: int | None = None) -> int:
    """Cap numba worker threads (``FFDG_THREADS`` when ``n`` is None)."""
    if n is None:
        env = os.environ.get("FFDG_THREADS")
        if not env:
            return numba.get_num_threads()
        try:
            n = int(env)
        except ValueError as exc:
            raise MonteCarloError(f"FFDG_THREADS must be an integer, got {env!r}") from exc
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _stream_state(seed, index):
    return _mix(_mix(np.uint64(seed) + _GOLDEN) ^ (np.uint64(index) * _GOLDEN))


@njit(cache=True)
def _uniform(state):
    state[0] += _GOLDEN
    return (_mix(state[0]) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _holding(state, rate):
    if rate <= 0.0:
        return _INF
    return -np.log(1.0 - _uniform(state)) / rate


@njit(cache=True)
def _jump(state, T, ph):
    total = -T[ph, ph]
    u = _uniform(state) * total
    acc = 0.0
    last = ph
    for j in range(T.shape[0]):
        if j == ph:
            continue
        acc += T[ph, j]
        last = j
        if u < acc:
            return j
    return last


@njit(cache=True)
def _x_slope(c, ph, x):
    if x <= 0.0 and c[ph] <= 0.0:
        return 0.0
    return c[ph]


@njit(cache=True)
def _y_rate(bps, vals, r0, ph, x, cx):
    """Second-fluid rate; at a breakpoint the piece X moves into applies."""
    if x == 0.0 and cx <= 0.0:
        return r0[ph]
    k = np.searchsorted(bps, x, side="right") - 1
    if cx < 0.0 and k > 0 and x == bps[k]:
        k -= 1
    return vals[ph, k]


@njit(cache=True)
def _x_event(bps, x, cx):
    """Time until X reaches the next breakpoint (0 included) along its motion."""
    if cx > 0.0:
        k = np.searchsorted(bps, x, side="right")
        if k < bps.shape[0]:
            return (bps[k] - x) / cx, bps[k]
        return _INF, 0.0
    if cx < 0.0:
        k = np.searchsorted(bps, x, side="left") - 1
        if k >= 0:
            return (x - bps[k]) / (-cx), bps[k]
    return _INF, 0.0


@njit(cache=True)
def _first_return(T, c, bps, vals, r0, x0, y0, ph0, V, state, trace, buf):
    """One path until Y returns to 0 after leaving it, or until time V.

    Returns ``(t, x, y, phase, censored, n_trace)``.
    """
    x = x0
    y = y0
    ph = ph0
    t = 0.0
    left = y0 > 0.0
    n = 0
    rem = _holding(state, -T[ph, ph])
    while True:
        cx = _x_slope(c, ph, x)
        r = _y_rate(bps, vals, r0, ph, x, cx)
        ry = r if (y > 0.0 or r > 0.0) else 0.0
        if trace and n < buf.shape[0]:
            buf[n, 0] = t
            buf[n, 1] = x
            buf[n, 2] = y
            buf[n, 3] = ph
            buf[n, 4] = cx
            buf[n, 5] = ry
            n += 1
        dtx, xnext = _x_event(bps, x, cx)
        dty = y / (-ry) if (ry < 0.0 and y > 0.0) else _INF
        dt = min(rem, dtx, dty, V - t)
        t += dt
        rem -= dt
        if dt == dtx:
            x = xnext
        else:
            x = max(x + cx * dt, 0.0)
        if dt == dty:
            y = 0.0
        else:
            y = max(y + ry * dt, 0.0)
        if ry > 0.0:
            left = True
        if dt == dty and left:
            return t, x, y, ph, False, n
        if t >= V:
            return t, x, y, ph, True, n
        if rem <= 0.0:
            ph = _jump(state, T, ph)
            rem = _holding(state, -T[ph, ph])


@njit(parallel=True, cache=True)
def _many_first_returns(T, c, bps, vals, r0, x0, y0, ph0, V, seed, start, n):
    out = np.empty((n, 5))
    dummy = np.empty((0, 6))
    for k in prange(n):
        state = np.empty(1, dtype=np.uint64)
        state[0] = _stream_state(seed, start + k)
        t, x, y, ph, cen, _ = _first_return(T, c, bps, vals, r0, x0, y0, ph0, V, state,
                                            False, dummy)
        out[k, 0] = t
        out[k, 1] = x
        out[k, 2] = y
        out[k, 3] = ph
        out[k, 4] = 1.0 if cen else 0.0
    return out


def _model_arrays(model: ModelSpec):
    rf = model.rates
    r0 = np.array([rf.rate_at_zero(i) for i in range(model.n_phases)])
    return (np.ascontiguousarray(model.generator, dtype=float),
            np.ascontiguousarray(model.c, dtype=float),
            np.ascontiguousarray(rf.breakpoints, dtype=float),
            np.ascontiguousarray(rf.values, dtype=float), r0)


@dataclass(frozen=True)
class PathRecord:
    tau: float
    x: float | None
    phase: int | None
    censored: bool
    trace: np.ndarray | None = None


@dataclass(frozen=True)
class PathRecords:
    """Columnar first-return records; ``x`` and ``phase`` are NaN / -1 when censored."""

    tau: np.ndarray
    x: np.ndarray
    phase: np.ndarray
    censored: np.ndarray

    def __len__(self):
        return len(self.tau)

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean())

    def __getitem__(self, k) -> PathRecord:
        if self.censored[k]:
            return PathRecord(float(self.tau[k]), None, None, True)
        return PathRecord(float(self.tau[k]), float(self.x[k]), int(self.phase[k]), False)


def _check_init(model, x0, y0, phase0, horizon):
    if x0 < 0 or y0 < 0:
        raise MonteCarloError("initial levels must be nonnegative")
    if not 0 <= phase0 < model.n_phases:
        raise MonteCarloError(f"phase {phase0} out of range")
    if not horizon > 0:
        raise MonteCarloError("horizon must be positive")


def simulate_first_return(model: ModelSpec, init, horizon: float, seed: int, index: int = 0,
                          trace: bool = False, max_trace: int = 100000) -> PathRecord:
    """One path from ``init = (x0, y0, phase)``; ``index`` selects the stream."""
    x0, y0, ph0 = float(init[0]), float(init[1]), model.phase_index(init[2])
    _check_init(model, x0, y0, ph0, horizon)
    arrays = _model_arrays(model)
    state = np.array([_stream_state(seed, index)], dtype=np.uint64)
    buf = np.empty((max_trace if trace else 0, 6))
    t, x, _, ph, cen, n = _first_return(*arrays, x0, y0, ph0, float(horizon), state, trace, buf)
    tr = buf[:n].copy() if trace else None
    if cen:
        return PathRecord(t, None, None, True, tr)
    return PathRecord(t, x, int(ph), False, tr)


def simulate_first_returns(model: ModelSpec, init, n_paths: int, horizon: float,
                           seed: int) -> PathRecords:
    x0, y0, ph0 = float(init[0]), float(init[1]), model.phase_index(init[2])
    _check_init(model, x0, y0, ph0, horizon)
    set_threads()
    out = _many_first_returns(*_model_arrays(model), x0, y0, ph0, float(horizon),
                              np.uint64(seed), 0, int(n_paths))
    cen = out[:, 4] > 0
    x = np.where(cen, np.nan, out[:, 1])
    ph = np.where(cen, -1, out[:, 3]).astype(int)
    return PathRecords(out[:, 0], x, ph, cen)


@dataclass(frozen=True)
class EmpiricalCDF:
    """Step CDFs of X at the return, per phase, over retained paths.

    Each phase's CDF is scaled by the fraction of retained paths ending in
    that phase, so the phase CDFs sum to 1 at infinity.
    """

    samples: dict  # phase -> sorted X values
    n_retained: int

    def __call__(self, phase: int, x) -> np.ndarray:
        s = self.samples.get(phase, np.zeros(0))
        return np.searchsorted(s, np.asarray(x, dtype=float), side="right") / self.n_retained

    def total(self, phase: int) -> float:
        return len(self.samples.get(phase, ())) / self.n_retained


def empirical_return_cdf(records: PathRecords, n_phases: int | None = None) -> EmpiricalCDF:
    keep = ~records.censored
    if not np.any(keep):
        raise NoRetainedPaths("every path was censored")
    phases = records.phase[keep]
    xs = records.x[keep]
    n_phases = n_phases or int(phases.max()) + 1
    samples = {i: np.sort(xs[phases == i]) for i in range(n_phases)}
    return EmpiricalCDF(samples, int(keep.sum()))


def ks_distance(model_cdf, emp: EmpiricalCDF, phase: int, grid=None) -> float:
    """Sup distance between a right-continuous CDF ``model_cdf(x)`` and the step CDF.

    Both functions are compared at every sample and grid point and just to
    the left of each, which catches jumps in either.
    """
    s = emp.samples.get(phase, np.zeros(0))
    extra = np.asarray(grid if grid is not None else [], dtype=float)
    pts = np.unique(np.concatenate([s, np.zeros(1), extra]))
    below = np.nextafter(pts, -np.inf)
    m_right = np.asarray(model_cdf(pts))
    m_left = np.where(below < 0, 0.0, np.asarray(model_cdf(np.maximum(below, 0.0))))
    e_right = emp(phase, pts)
    e_left = np.searchsorted(s, pts, side="left") / emp.n_retained
    return float(max(np.abs(m_right - e_right).max(), np.abs(m_left - e_left).max()))


@njit(cache=True)
def _occupation(T, c, bps, vals, r0, edges, x0, y0, ph0, t_burn, t_run, n_batches, state):
    P = T.shape[0]
    nb = edges.shape[0] - 1
    y_zero = np.zeros((n_batches, P))
    y_pos = np.zeros((n_batches, P))
    hist0 = np.zeros((n_batches, P, nb))  # Y = 0, X in bin (atom at X = 0 excluded)
    histp = np.zeros((n_batches, P, nb))
    atom0 = np.zeros((n_batches, P, 2))  # time at X = 0 with Y = 0 / Y > 0
    x = x0
    y = y0
    ph = ph0
    t = 0.0
    t_end = t_burn + t_run
    width = t_run / n_batches
    eps = 1e-12 * width
    rem = _holding(state, -T[ph, ph])
    while t < t_end - eps:
        cx = _x_slope(c, ph, x)
        r = _y_rate(bps, vals, r0, ph, x, cx)
        ry = r if (y > 0.0 or r > 0.0) else 0.0
        dtx, xnext = _x_event(bps, x, cx)
        dty = y / (-ry) if (ry < 0.0 and y > 0.0) else _INF
        # stop at batch boundaries so each step lies in one batch
        b = -1
        if t < t_burn - eps:
            dtb = t_burn - t
        else:
            b = min(int((t - t_burn) / width), n_batches - 1)
            dtb = t_burn + (b + 1) * width - t
            if dtb <= eps and b < n_batches - 1:
                b += 1
                dtb += width
        dt = min(rem, dtx, dty, dtb)
        if b >= 0 and dt > 0.0:
            zero = y == 0.0 and ry == 0.0
            if zero:
                y_zero[b, ph] += dt
            else:
                y_pos[b, ph] += dt
            if cx == 0.0:
                if x == 0.0:
                    atom0[b, ph, 0 if zero else 1] += dt
                else:
                    j = min(max(np.searchsorted(edges, x, side="right") - 1, 0), nb - 1)
                    if zero:
                        hist0[b, ph, j] += dt
                    else:
                        histp[b, ph, j] += dt
            else:
                lo = min(x, x + cx * dt)
                hi = max(x, x + cx * dt)
                j = min(max(np.searchsorted(edges, lo, side="right") - 1, 0), nb - 1)
                while j < nb and edges[j] < hi:
                    a = max(lo, edges[j])
                    e = hi if j == nb - 1 else min(hi, edges[j + 1])
                    if e > a:
                        if zero:
                            hist0[b, ph, j] += (e - a) / abs(cx)
                        else:
                            histp[b, ph, j] += (e - a) / abs(cx)
                    j += 1
        t += dt
        rem -= dt
        if dt == dtx:
            x = xnext
        else:
            x = max(x + cx * dt, 0.0)
        if dt == dty:
            y = 0.0
        else:
            y = max(y + ry * dt, 0.0)
        if rem <= 0.0:
            ph = _jump(state, T, ph)
            rem = _holding(state, -T[ph, ph])
    return y_zero, y_pos, hist0, histp, atom0


@njit(parallel=True, cache=True)
def _many_occupations(T, c, bps, vals, r0, edges, x0, y0, ph0, t_burn, t_run, n_batches,
                      seed, n_rep):
    P = T.shape[0]
    nb = edges.shape[0] - 1
    yz = np.zeros((n_rep, n_batches, P))
    yp = np.zeros((n_rep, n_batches, P))
    h0 = np.zeros((n_rep, n_batches, P, nb))
    hp = np.zeros((n_rep, n_batches, P, nb))
    a0 = np.zeros((n_rep, n_batches, P, 2))
    for k in prange(n_rep):
        state = np.empty(1, dtype=np.uint64)
        state[0] = _stream_state(seed, k)
        a, b, c_, d, e = _occupation(T, c, bps, vals, r0, edges, x0, y0, ph0, t_burn, t_run,
                                     n_batches, state)
        yz[k] = a
        yp[k] = b
        h0[k] = c_
        hp[k] = d
        a0[k] = e
    return yz, yp, h0, hp, a0


@dataclass(frozen=True)
class OccupationEstimate:
    """Time-average occupation fractions with batch-means standard errors.

    Arrays carry a leading batch axis (replicas × batches); properties
    average over it.
    """

    edges: np.ndarray
    y_zero: np.ndarray  # (batches, P)
    y_pos: np.ndarray
    hist_zero: np.ndarray  # (batches, P, bins), X > 0 only
    hist_pos: np.ndarray
    atom: np.ndarray  # (batches, P, 2): X = 0 with Y = 0 / Y > 0
    batch_time: float

    def _mean_se(self, per_batch):
        per_batch = np.asarray(per_batch) / self.batch_time
        n = per_batch.shape[0]
        mean = per_batch.mean(axis=0)
        se = per_batch.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full_like(mean, np.nan)
        return mean, se

    @property
    def p_y_zero(self):
        return self._mean_se(self.y_zero.sum(axis=1))

    @property
    def p_y_positive(self):
        return self._mean_se(self.y_pos.sum(axis=1))

    @property
    def phase_y_zero(self):
        return self._mean_se(self.y_zero)

    def x_atom(self):
        """Per-phase probability of ``X = 0``."""
        return self._mean_se(self.atom.sum(axis=2))[0]

    def x_hist(self):
        """Per-phase probability of X in each bin (X > 0)."""
        return self._mean_se(self.hist_zero + self.hist_pos)[0]

    def x_cdf(self, phases=None) -> np.ndarray:
        """CDF of X at the bin edges (summed over ``phases``), atom at 0 included."""
        atom = self.x_atom()
        hist = self.x_hist()
        if phases is not None:
            atom, hist = atom[list(phases)], hist[list(phases)]
        cdf = atom.sum() + np.concatenate([[0.0], np.cumsum(hist.sum(axis=0))])
        return cdf


def estimate_stationary(model: ModelSpec, T_burn: float, T_run: float, seed: int,
                        n_batches: int = 20, n_replicas: int = 1, edges=None,
                        init=(0.0, 0.0, 0)) -> OccupationEstimate:
    """Long-run occupation of ``Y = 0`` and of X-bins, from ``n_replicas`` paths.

    Each replica's run is split into ``n_batches`` equal time windows after
    the burn-in; the windows are the batches of the batch-means error.
    """
    if T_run <= 0 or T_burn < 0 or n_batches < 1 or n_replicas < 1:
        raise MonteCarloError("need T_run > 0, T_burn >= 0 and at least one batch and replica")
    if edges is None:
        edges = np.linspace(0.0, model.truncation, 41)
    edges = np.ascontiguousarray(edges, dtype=float)
    x0, y0, ph0 = float(init[0]), float(init[1]), model.phase_index(init[2])
    set_threads()
    yz, yp, h0, hp, a0 = _many_occupations(*_model_arrays(model), edges, x0, y0, ph0,
                                           float(T_burn), float(T_run), int(n_batches),
                                           np.uint64(seed), int(n_replicas))
    flat = lambda a: a.reshape((-1,) + a.shape[2:])
    return OccupationEstimate(edges, flat(yz), flat(yp), flat(h0), flat(hp), flat(a0),
                              T_run / n_batches)
