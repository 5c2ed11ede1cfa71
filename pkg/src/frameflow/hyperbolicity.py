"""Lyapunov spectra, periodic-orbit exponent bounds, splittings and window certificates."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import subspace_angles

from .dynamics import DEFAULT_STEP, SuspensionSystem, step_count
from .errors import (
    BackwardUnavailableError,
    InconclusiveSplitError,
    UnsupportedReorderingError,
)
from .frames import FrameState, evolve_frame, initial_frame, random_frame, transversal_growth
from .shadowing import PeriodicOrbit, cycle_exponents

log = logging.getLogger(__name__)

ZERO_THRESHOLD = 1e-6
CLUSTER_TOL = 1e-9
MAP_TRANSIENT = 100


def _clusters(sorted_values, tol=CLUSTER_TOL):
    groups = [[0]]
    for i in range(1, len(sorted_values)):
        if sorted_values[i] - sorted_values[i - 1] <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


@dataclass
class SpectrumEstimate:
    exponents: np.ndarray
    horizon: float
    tail_drift: float
    frame_seed: int
    clusters: list = field(default_factory=list)
    system: str = ""

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "exponents": [float(v) for v in self.exponents],
            "horizon": float(self.horizon),
            "tail_drift": float(self.tail_drift),
            "frame_seed": int(self.frame_seed),
            "multiplicities": [len(c) for c in self.clusters],
        }

    def csv_rows(self):
        return [(i, float(v), float(self.tail_drift)) for i, v in enumerate(self.exponents)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "exponent", "tail_drift"])
        for i, v, d in self.csv_rows():
            w.writerow([i, repr(v), repr(d)])
        return buf.getvalue()


def lyapunov_spectrum(
    sys,
    seed_state,
    k=None,
    T=10_000,
    *,
    h=DEFAULT_STEP,
    reorth_every=1,
    transient=None,
    seed=0,
    orbit_points=None,
) -> SpectrumEstimate:
    """Sorted finite-time exponents from a seeded random frame.

    ``transient`` steps (or time) are run first and discarded; by default
    maps burn in ``MAP_TRANSIENT`` iterates, which removes the O(1/T) bias of
    the random initial frame, and flows start immediately.  With
    ``orbit_points`` the Jacobians of that cycle are replayed instead of
    iterating the map.  ``tail_drift`` compares the average over the second
    half of the horizon with the full average.
    """
    k = sys.dimension if k is None else k
    if not T > 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    fs = random_frame(sys, seed_state, k, rng)
    along = None if orbit_points is None else np.asarray(orbit_points, dtype=float)
    if along is not None:
        fs = FrameState(along[0].copy(), fs.columns, fs.log_growth, 0.0)

    def run(fs, n, phase):
        a = None if along is None else np.roll(along, -(phase % len(along)), axis=0)
        return evolve_frame(sys, fs, n, reorth_every, h, along=a)

    if transient is None:
        transient = 0 if sys.is_flow else MAP_TRANSIENT
    if transient:
        fs = run(fs, transient, 0).restart()
    t0 = int(transient) if not sys.is_flow else 0
    if sys.is_flow:
        half = T / 2
        first = evolve_frame(sys, fs, half, reorth_every, h)
        end = evolve_frame(sys, first, T - half, reorth_every, h)
    else:
        T = int(T)
        half = T // 2
        first = run(fs, half, t0) if half else fs
        end = run(first, T - half, t0 + half)
    full = end.log_growth / end.elapsed
    tail = (end.log_growth - first.log_growth) / (end.elapsed - first.elapsed)
    order = np.argsort(full, kind="stable")
    exps = full[order]
    return SpectrumEstimate(
        exponents=exps,
        horizon=float(T),
        tail_drift=float(np.max(np.abs(tail - full))),
        frame_seed=seed,
        clusters=_clusters(exps),
        system=getattr(sys, "name", ""),
    )


def periodic_spectrum(orbit: PeriodicOrbit, sys=None) -> np.ndarray:
    """log|eig(monodromy)| / period, sorted.

    Orbits whose monodromy was too ill-conditioned to store are recomputed from
    the cycle Jacobians when ``sys`` is given.
    """
    if orbit.monodromy is not None:
        mags = np.abs(np.linalg.eigvals(np.asarray(orbit.monodromy, dtype=float)))
        return np.sort(np.log(mags) / orbit.period)
    if sys is not None and orbit.kind == "map":
        return cycle_exponents(sys.jacobian(np.asarray(orbit.points)), orbit.period)[0]
    return np.sort(np.asarray(orbit.exponents, dtype=float))


@dataclass
class ExtremalBounds:
    smallest_exponent_bound: float
    largest_exponent_bound: float
    separated: bool

    def __iter__(self):
        return iter((self.smallest_exponent_bound, self.largest_exponent_bound))


def extremal_exponent_bounds(orbits) -> ExtremalBounds:
    """(max over orbits of the smallest exponent, min over orbits of the largest)."""
    if not orbits:
        raise ValueError("need at least one orbit")
    lows = [float(np.min(o.exponents)) for o in orbits]
    highs = [float(np.max(o.exponents)) for o in orbits]
    s, v = max(lows), min(highs)
    return ExtremalBounds(s, v, s < 0 < v)


@dataclass
class IndexReport:
    constant: bool
    index: int | None
    witness: tuple | None = None
    excluded: list = field(default_factory=list)

    def to_dict(self):
        return {
            "constant": self.constant,
            "index": self.index,
            "witness": list(self.witness) if self.witness else None,
            "excluded": list(self.excluded),
        }


def check_index_constancy(orbits, zero_threshold=ZERO_THRESHOLD) -> IndexReport:
    """Common stable index of all hyperbolic orbits, or the first differing pair.

    Orbits with an exponent within ``zero_threshold`` of zero are excluded
    (and logged).  The witness is (position of the first counted orbit,
    position of the first orbit that differs).
    """
    if not orbits:
        raise ValueError("need at least one orbit")
    ref = None
    excluded = []
    for pos, o in enumerate(orbits):
        exps = np.asarray(o.exponents, dtype=float)
        if np.min(np.abs(exps)) < zero_threshold:
            log.warning("orbit %d has an exponent within %.1e of zero; excluded", pos, zero_threshold)
            excluded.append(pos)
            continue
        idx = int(np.sum(exps < 0))
        if ref is None:
            ref = (pos, idx)
        elif idx != ref[1]:
            return IndexReport(False, None, (ref[0], pos), excluded)
    if ref is None:
        return IndexReport(False, None, None, excluded)
    return IndexReport(True, ref[1], None, excluded)


# ---------------------------------------------------------------------------
# reorderings


@dataclass
class ReorderingResult:
    frame: np.ndarray
    requested: np.ndarray
    achieved: np.ndarray
    mismatched: list

    @property
    def realized(self) -> bool:
        return not self.mismatched


def _orbit_monodromy(sys, orbit):
    if orbit.monodromy is not None:
        return np.asarray(orbit.monodromy, dtype=float)
    M = np.eye(sys.dimension)
    for J in sys.jacobian(np.asarray(orbit.points)):
        M = J @ M
    return M


def _transversal_basis(sys, orbit):
    """Columns spanning the transversal space in which the monodromy is written."""
    n = sys.dimension
    if not sys.is_flow:
        return np.eye(n)
    if isinstance(sys, SuspensionSystem):
        return np.vstack([np.eye(n), np.zeros((1, n))])
    S = sys.velocity(orbit.point)
    Q, _ = np.linalg.qr(np.column_stack([S, np.eye(n + 1)]))
    return Q[:, 1 : n + 1]


def realize_reordering(sys, orbit: PeriodicOrbit, perm, basis=None, tol=1e-8) -> ReorderingResult:
    """Frame along monodromy eigendirections in the order ``perm``; rates over one period.

    Without ``basis`` the eigendirections are ordered by increasing exponent.
    Column i starts along ``basis[:, perm[i]]`` and should grow at that
    direction's exponent; achieved rates differing by more than ``tol`` are
    listed in ``mismatched``.
    """
    M = _orbit_monodromy(sys, orbit)
    n = M.shape[0]
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of 0..{n - 1}")
    eig, vec = np.linalg.eig(M)
    if np.max(np.abs(eig.imag)) > 1e-12 * np.max(np.abs(eig)):
        raise UnsupportedReorderingError("monodromy has complex multipliers")
    mags = np.abs(eig.real)
    if n > 1 and np.min(np.diff(np.sort(np.log(mags)))) <= 1e-9:
        raise UnsupportedReorderingError("monodromy has repeated multiplier magnitudes")
    rate_of = np.log(mags) / orbit.period
    vec = vec.real
    if basis is None:
        order = np.argsort(rate_of)
        basis, rates = vec[:, order], rate_of[order]
    else:
        basis = np.asarray(basis, dtype=float)
        # match each supplied direction to its eigendirection
        rates = np.empty(n)
        for c in range(n):
            b = basis[:, c] / np.linalg.norm(basis[:, c])
            align = np.abs(b @ (vec / np.linalg.norm(vec, axis=0)))
            if np.max(align) < 1 - 1e-8:
                raise UnsupportedReorderingError(f"basis column {c} is not an eigendirection of the monodromy")
            rates[c] = rate_of[int(np.argmax(align))]
    cols = basis[:, perm]
    requested = rates[perm]
    B = _transversal_basis(sys, orbit)
    fs = initial_frame(sys, orbit.point, B @ cols)
    if sys.is_flow:
        out = evolve_frame(sys, fs, orbit.period, 1, orbit.step or DEFAULT_STEP)
    else:
        out = evolve_frame(sys, fs, int(orbit.period), 1, along=orbit.points)
    achieved = out.log_growth / orbit.period
    mismatched = [i for i in range(n) if abs(achieved[i] - requested[i]) > tol]
    return ReorderingResult(fs.columns, requested, achieved, mismatched)


# ---------------------------------------------------------------------------
# splittings and bundles


def _require_inverse(sys):
    if sys.is_flow or sys.inverse is None:
        raise BackwardUnavailableError(f"{getattr(sys, 'name', 'system')} has no inverse map")


def _orth(X):
    if X.shape[1] == 1:
        return X / np.linalg.norm(X)
    Q, R = np.linalg.qr(X)
    return Q * np.sign(np.diag(R))


def _sweep(mats, F):
    """Push a frame through a sequence of matrices, re-orthonormalizing each step."""
    frames = [F]
    for A in mats:
        F = _orth(A @ F)
        frames.append(F)
    return frames


def forward_orbit(sys, x, n):
    pts = np.empty((n + 1, sys.dimension))
    pts[0] = x
    for k in range(n):
        pts[k + 1] = sys.reduce(sys.evaluate(pts[k]))
    return pts


def stable_bundle(sys, points, dim, buffer=60, seed=0):
    """Orthonormal frames of the ``dim``-dimensional most contracting bundle along ``points``.

    A random frame placed ``buffer`` steps past the last point is swept
    backward with inverse Jacobians, so each returned frame is the image of a
    long backward iteration and stays inside the stable bundle despite
    rounding.
    """
    points = np.asarray(points, dtype=float)
    tail = forward_orbit(sys, points[-1], buffer)
    allpts = np.vstack([points, tail[1:]])
    inv = np.linalg.inv(sys.jacobian(allpts[:-1]))
    F = _orth(np.random.default_rng(seed).standard_normal((sys.dimension, dim)))
    frames = _sweep(inv[::-1], F)[::-1]
    return np.array(frames[: len(points)])


@dataclass
class SplittingEstimate:
    base: np.ndarray
    stable_frame: np.ndarray
    unstable_frame: np.ndarray
    angle: float
    exponents: np.ndarray

    def to_dict(self):
        return {
            "base": self.base.tolist(),
            "stable_frame": self.stable_frame.T.tolist(),
            "unstable_frame": self.unstable_frame.T.tolist(),
            "angle": float(self.angle),
            "exponents": [float(v) for v in self.exponents],
        }


def oseledets_splitting(sys, x, T=50, *, seed=0, zero_threshold=ZERO_THRESHOLD, spectrum_steps=2000) -> SplittingEstimate:
    """Stable and unstable subspaces at ``x`` from T-step forward and backward sweeps.

    The stable dimension is the number of negative exponents of a
    ``spectrum_steps`` run from ``x``.  The unstable frame is a random frame
    pushed forward along the backward orbit x_{-T}, ..., x_{-1}; the stable
    frame is pushed backward from x_T with inverse Jacobians.
    """
    _require_inverse(sys)
    x = np.asarray(x, dtype=float)
    n = sys.dimension
    spec = lyapunov_spectrum(sys, x, n, spectrum_steps, seed=seed)
    if np.min(np.abs(spec.exponents)) < zero_threshold:
        raise InconclusiveSplitError(f"exponent within {zero_threshold} of zero: {spec.exponents.tolist()}")
    ns = int(np.sum(spec.exponents < 0))
    if ns in (0, n):
        raise InconclusiveSplitError("all exponents have one sign; no splitting")
    rng = np.random.default_rng(seed)
    back = forward_orbit(sys.inverse, x, T)[::-1]  # x_{-T}, ..., x_0
    U = _sweep(sys.jacobian(back[:-1]), _orth(rng.standard_normal((n, n - ns))))[-1]
    fwd = forward_orbit(sys, x, T)
    inv = np.linalg.inv(sys.jacobian(fwd[:-1]))
    S = _sweep(inv[::-1], _orth(rng.standard_normal((n, ns))))[-1]
    angle = float(np.min(subspace_angles(S, U)))
    return SplittingEstimate(x, S, U, angle, spec.exponents)


# ---------------------------------------------------------------------------
# window certificates


@dataclass
class HyperbolicityCertificate:
    sigma: float
    T0: float
    Tmax: float
    stride: float
    horizon: float
    windows_checked: int
    worst_window_average: float
    verdict: str
    witness: dict | None = None
    expansion_rate: float | None = None
    samples: int = 0
    tolerance: float = 1e-9

    def to_dict(self):
        return {
            "sigma": self.sigma,
            "expansion_rate": self.expansion_rate,
            "T0": self.T0,
            "Tmax": self.Tmax,
            "stride": self.stride,
            "horizon": self.horizon,
            "samples": self.samples,
            "windows_checked": self.windows_checked,
            "worst_window_average": self.worst_window_average,
            "bound": -self.sigma / 2,
            "verdict": self.verdict,
            "witness": self.witness,
            "tolerance": self.tolerance,
        }


def _window_maxima(cum, Ts, stride):
    """Worst window average of a cumulative sum per window length, with its start."""
    out = []
    L = len(cum) - 1
    for T in Ts:
        starts = np.arange(0, L - T + 1, stride)
        if len(starts) == 0:
            continue
        avg = (cum[starts + T] - cum[starts]) / T
        j = int(np.argmax(avg))
        out.append((float(avg[j]), int(starts[j]), T, len(starts)))
    return out


def _map_rates(sys, x, v, L, bundle_dim, buffer):
    pts = forward_orbit(sys, x, L)
    Js = sys.jacobian(pts[:-1]) if sys.matrix is None else np.broadcast_to(sys.matrix, (L,) + sys.matrix.shape)
    frames = stable_bundle(sys, pts, bundle_dim, buffer) if bundle_dim else None
    u = np.asarray(v, dtype=float)
    u = u / np.linalg.norm(u)
    rates = np.empty(L)
    for k in range(L):
        y = Js[k] @ u
        if frames is not None:
            F = frames[k + 1]
            y = F @ (F.T @ y)
        nrm = np.linalg.norm(y)
        rates[k] = math.log(nrm)
        u = y / nrm
    return rates


def certify_uniform_contraction(
    sys,
    bundle_samples,
    sigma,
    T0,
    Tmax,
    stride,
    *,
    horizon=None,
    bundle_dim=None,
    h=DEFAULT_STEP,
    buffer=60,
    tol=1e-9,
    expansion_rate=None,
) -> HyperbolicityCertificate:
    """Sampled check that every window average of the contraction rate is <= -sigma/2.

    Each sample (state, direction) is transported over ``horizon`` (default
    2 Tmax).  Maps record per-step log norm changes (the direction is
    renormalized every step, which also avoids underflow); with
    ``bundle_dim`` the transported vector is kept inside the
    ``bundle_dim``-dimensional stable bundle computed by a backward sweep.
    Flows record the rate function at every integrator node.  Windows start
    every ``stride`` and have lengths T0, T0 + stride, ..., Tmax.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not T0 < Tmax:
        raise ValueError("need T0 < Tmax")
    if not bundle_samples:
        raise ValueError("need at least one bundle sample")
    horizon = 2 * Tmax if horizon is None else horizon
    bound = -sigma / 2
    worst, witness, checked = -math.inf, None, 0
    for idx, (x, v) in enumerate(bundle_samples):
        if sys.is_flow:
            nsteps = step_count(horizon, h)
            dt = horizon / nsteps
            _, _, r = transversal_growth(sys, x, v, horizon, h, return_rates=True)
            cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (r[1:] + r[:-1]))]) / dt
            unit = dt
        else:
            L = int(horizon)
            cum = np.concatenate([[0.0], np.cumsum(_map_rates(sys, x, v, L, bundle_dim, buffer))])
            unit = 1.0
        n0 = max(1, int(round(T0 / unit)))
        n1 = int(round(Tmax / unit))
        ns = max(1, int(round(stride / unit)))
        for avg, s, T, count in _window_maxima(cum, range(n0, n1 + 1, ns), ns):
            checked += count
            if avg > worst:
                worst = avg
                witness = {"sample": idx, "start": s * unit, "length": T * unit, "average": avg}
    if worst > bound + tol:
        verdict = "refuted"
    elif worst <= bound - tol:
        verdict = "certified"
        witness = None
    else:
        verdict = "inconclusive"
    return HyperbolicityCertificate(
        sigma=float(sigma),
        T0=float(T0),
        Tmax=float(Tmax),
        stride=float(stride),
        horizon=float(horizon),
        windows_checked=checked,
        worst_window_average=float(worst),
        verdict=verdict,
        witness=witness,
        expansion_rate=expansion_rate,
        samples=len(bundle_samples),
        tolerance=tol,
    )
