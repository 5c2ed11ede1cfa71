"""Recurrences, periodic-orbit refinement, shadowing checks and exact toral enumeration."""
from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .dynamics import (
    DEFAULT_STEP,
    SuspensionSystem,
    Trajectory,
    advance_flow,
    distance,
    reduce_torus,
    trajectory,
)
from .errors import (
    NewtonDivergenceError,
    NonHyperbolicPeriodError,
    SingularNewtonError,
)

VERIFIED_RESIDUAL = 1e-10


@dataclass
class RecurrentSegment:
    """Orbit arc from ``start`` returning within ``gap`` after ``span``."""

    start: np.ndarray
    span: float
    gap: float
    start_index: int = 0
    end_index: int = 0
    path: np.ndarray | None = None
    geometry: str = "euclidean"

    def endpoint_gap(self, end_state) -> float:
        return float(distance(self.start, end_state, self.geometry))


@dataclass
class PeriodicOrbit:
    """A periodic orbit with its monodromy data.

    ``points`` holds one period of the orbit (every iterate for maps, every
    integrator node for flows).  ``residual`` is the largest one-step closing
    defect around the cycle; for period one this is |g(p) - p|.
    """

    point: np.ndarray
    period: float
    multipliers: np.ndarray
    exponents: np.ndarray
    index: int
    residual: float
    points: np.ndarray
    monodromy: np.ndarray | None = None
    kind: str = "map"
    geometry: str = "euclidean"
    iterations: int = 0
    exact_points: list | None = None
    step: float | None = None

    @property
    def verified(self) -> bool:
        return self.residual <= VERIFIED_RESIDUAL

    def to_dict(self) -> dict:
        out = {
            "point": [float(v) for v in self.point],
            "period": int(self.period) if self.kind == "map" else float(self.period),
            "multipliers": [float(v) for v in self.multipliers],
            "exponents": [float(v) for v in self.exponents],
            "index": int(self.index),
            "residual": float(self.residual),
        }
        if self.exact_points is not None:
            out["exact_points"] = [[str(c) for c in p] for p in self.exact_points]
        return out


# ---------------------------------------------------------------------------
# recurrences


def _close_pairs(states, alpha, geometry):
    if geometry == "torus":
        tree = cKDTree(reduce_torus(states), boxsize=1.0)
        return tree.query_pairs(alpha, output_type="ndarray")
    if geometry == "suspension":
        tree = cKDTree(reduce_torus(states[:, :-1]), boxsize=1.0)
        pairs = tree.query_pairs(alpha, output_type="ndarray")
        keep = distance(states[pairs[:, 0]], states[pairs[:, 1]], geometry) < alpha
        return pairs[keep]
    return cKDTree(states).query_pairs(alpha, output_type="ndarray")


def find_recurrences(traj: Trajectory, alpha, min_span=None, start_index=None, max_span=None):
    """All returns within ``alpha`` after at least ``min_span`` time, sorted by span.

    Hits are deduplicated by keeping the smallest gap per span (maps) or per
    window of adjacent spans (flows, whose consecutive samples overlap).
    With ``start_index`` only returns of that one state are reported.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    states = np.asarray(traj.states, dtype=float)
    times = np.asarray(traj.times, dtype=float)
    geometry = traj.geometry
    if min_span is None:
        min_span = 2.0 if traj.is_flow else 1
    if start_index is not None:
        d = distance(states[start_index], states[start_index + 1 :], geometry)
        j = np.flatnonzero(d < alpha) + start_index + 1
        pairs = np.column_stack([np.full(len(j), start_index), j]).astype(int)
    else:
        pairs = _close_pairs(states, alpha, geometry)
        if len(pairs):
            pairs = np.sort(pairs, axis=1)
    if len(pairs) == 0:
        return []
    spans = times[pairs[:, 1]] - times[pairs[:, 0]]
    keep = spans >= min_span - 1e-9
    if max_span is not None:
        keep &= spans <= max_span + 1e-9
    pairs, spans = pairs[keep], spans[keep]
    if len(pairs) == 0:
        return []
    gaps = distance(states[pairs[:, 0]], states[pairs[:, 1]], geometry)
    lag = pairs[:, 1] - pairs[:, 0]
    order = np.lexsort((pairs[:, 0], gaps, lag))
    pairs, gaps, lag, spans = pairs[order], gaps[order], lag[order], spans[order]
    first = np.ones(len(lag), dtype=bool)
    first[1:] = lag[1:] != lag[:-1]
    pairs, gaps, lag, spans = pairs[first], gaps[first], lag[first], spans[first]
    if traj.is_flow:
        window = np.cumsum(np.r_[True, np.diff(lag) > 1])
        best = {}
        for idx, wdx in enumerate(window):
            if wdx not in best or gaps[idx] < gaps[best[wdx]]:
                best[wdx] = idx
        sel = np.array(sorted(best.values()))
        pairs, gaps, spans = pairs[sel], gaps[sel], spans[sel]
    out = []
    for (i, j), g, s in zip(pairs, gaps, spans):
        out.append(
            RecurrentSegment(
                start=states[i].copy(),
                span=float(s) if traj.is_flow else int(round(s)),
                gap=float(g),
                start_index=int(i),
                end_index=int(j),
                path=states[i:j] if not traj.is_flow else None,
                geometry=geometry,
            )
        )
    return out


# ---------------------------------------------------------------------------
# exponents of a cycle


def cycle_exponents(jacobians, period=None):
    """Sorted log multiplier magnitudes per unit period for a cyclic product of Jacobians.

    Uses eigenvalues of the rescaled product when it is well conditioned and a
    periodic QR iteration otherwise.  Returns ``(exponents, monodromy or None)``.
    """
    Js = np.asarray(jacobians, dtype=float)
    m = len(Js)
    period = m if period is None else period
    n = Js.shape[-1]
    M = np.eye(n)
    logscale = 0.0
    for J in Js:
        M = J @ M
        s = np.linalg.norm(M)
        M = M / s
        logscale += math.log(s)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] > 1e-12 * sv[0]:
        mags = np.abs(np.linalg.eigvals(M))
        exps = (np.log(mags) + logscale) / period
        mono = M * math.exp(logscale) if logscale < 700 else None
        return np.sort(exps), mono
    Q = np.eye(n)
    prev = None
    acc = np.zeros(n)
    cycles = 0
    for c in range(400):
        sums = np.zeros(n)
        for J in Js:
            Q, R = np.linalg.qr(J @ Q)
            d = np.diag(R)
            sums += np.log(np.abs(d))
            Q = Q * np.sign(d)
        if c >= 3:
            acc += sums
            cycles += 1
            if prev is not None and np.max(np.abs(sums - prev)) < 1e-13 * max(1.0, m):
                acc = sums * cycles
                break
        prev = sums
    return np.sort(acc / cycles / period), None


def _orbit_from_points(sys, P, residual, iterations, geometry):
    Js = sys.jacobian(P)
    exps, mono = cycle_exponents(Js)
    m = len(P)
    with np.errstate(over="ignore"):
        mults = np.exp(np.sort(exps) * m)
    return PeriodicOrbit(
        point=P[0].copy(),
        period=m,
        multipliers=mults,
        exponents=exps,
        index=int(np.sum(exps < 0)),
        residual=residual,
        points=P,
        monodromy=mono,
        kind="map",
        geometry=geometry,
        iterations=iterations,
    )


def _cycle_residual(sys, P):
    G = sys.reduce(sys.evaluate(P))
    return float(np.max(distance(G, np.roll(P, -1, axis=0), sys.geometry)))


def _minimal_period(P, geometry, tol):
    m = len(P)
    for d in range(1, m):
        if m % d == 0 and np.max(distance(P, np.roll(P, -d, axis=0), geometry)) <= tol:
            return d
    return m


# ---------------------------------------------------------------------------
# refinement


def refine_periodic(sys, seg: RecurrentSegment, tol=1e-12, max_iter=50, h=DEFAULT_STEP) -> PeriodicOrbit:
    """Newton-refine a recurrent segment into a periodic orbit.

    Maps use multiple shooting in the covering space on the whole cycle
    ``g(p_j) = p_{j+1} (+ integer translate)``.  Flows use single shooting with
    the phase condition <p - start, S(start)> = 0 (a hyperplane section
    orthogonal to S) and solve for the return time together with the point.
    Suspensions are refined through their base map.
    """
    if isinstance(sys, SuspensionSystem):
        return _refine_suspension(sys, seg, tol, max_iter, h)
    if sys.is_flow:
        return _refine_flow(sys, seg, tol, max_iter, h)
    return _refine_map(sys, seg, tol, max_iter)


def _seed_points(sys, seg, m):
    if seg.path is not None and len(seg.path) == m:
        return np.array(seg.path, dtype=float)
    P = np.empty((m, sys.dimension))
    w = np.array(seg.start, dtype=float)
    for j in range(m):
        P[j] = w
        w = sys.reduce(sys.evaluate(w))
    return P


def _refine_map(sys, seg, tol, max_iter):
    m = int(round(seg.span))
    if m < 1:
        raise ValueError("map periods are positive integers")
    n = sys.dimension
    P = _seed_points(sys, seg, m)
    G = sys.evaluate(P)
    K = np.zeros_like(P)
    if sys.geometry == "torus":
        K = np.round(G - np.roll(P, -1, axis=0))
    iterations = 0
    for it in range(max_iter + 1):
        G = sys.evaluate(P)
        R = G - np.roll(P, -1, axis=0) - K
        res = float(np.max(np.abs(R)))
        if not np.isfinite(res):
            raise NewtonDivergenceError(res, it)
        if res <= tol:
            break
        if it == max_iter:
            raise NewtonDivergenceError(res, it)
        Js = sys.jacobian(P)
        A = _shooting_matrix(Js)
        rhs = -R.reshape(-1)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            try:
                delta = spla.spsolve(A.tocsc(), rhs)
                ok = np.all(np.isfinite(delta)) and np.linalg.norm(A @ delta - rhs) <= 1e-6 * max(1.0, np.linalg.norm(rhs))
            except Exception:
                ok = False
        if not ok:
            raise SingularNewtonError(_near_neutral_multiplier(Js))
        P = P + delta.reshape(m, n)
        iterations += 1
    P = sys.reduce(P)
    d = _minimal_period(P, sys.geometry, max(1e3 * tol, 1e-9))
    P = P[:d].copy()
    return _orbit_from_points(sys, P, _cycle_residual(sys, P), iterations, sys.geometry)


def _shooting_matrix(Js):
    m, n, _ = Js.shape
    rows, cols, vals = [], [], []
    bi, bj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    for j in range(m):
        rows.append(j * n + bi.ravel())
        cols.append(j * n + bj.ravel())
        vals.append(Js[j].ravel())
        nxt = (j + 1) % m
        rows.append(j * n + np.arange(n))
        cols.append(nxt * n + np.arange(n))
        vals.append(-np.ones(n))
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m * n, m * n))
    return A.tocsr()


def _near_neutral_multiplier(Js):
    M = np.eye(Js.shape[-1])
    for J in Js:
        M = J @ M
    eig = np.linalg.eigvals(M)
    mu = eig[np.argmin(np.abs(eig - 1.0))]
    return complex(mu) if abs(mu.imag) > 0 else float(mu.real)


def transversal_monodromy(sys, p, Phi):
    """Return-map derivative on the hyperplane orthogonal to S(p)."""
    S = sys.velocity(p)
    d = len(S)
    Q, _ = np.linalg.qr(np.column_stack([S, np.eye(d)]))
    B = Q[:, 1:d]
    return B.T @ Phi @ B


def _refine_flow(sys, seg, tol, max_iter, h):
    p0 = np.array(seg.start, dtype=float)
    S0 = sys.velocity(p0)
    p = p0.copy()
    tau = float(seg.span)
    d = len(p)
    shift = None
    iterations = 0
    for it in range(max_iter + 1):
        w1, Phi = advance_flow(sys, p, np.eye(d), tau, h, reduce=False)
        if shift is None:
            shift = np.round(w1 - p) if sys.geometry == "torus" else np.zeros(d)
        F = w1 - p - shift
        phase = float(S0 @ (p - p0))
        res = float(max(np.max(np.abs(F)), abs(phase)))
        if not np.isfinite(res):
            raise NewtonDivergenceError(res, it)
        if res <= tol:
            break
        if it == max_iter:
            raise NewtonDivergenceError(res, it)
        A = np.zeros((d + 1, d + 1))
        A[:d, :d] = Phi - np.eye(d)
        A[:d, d] = sys.velocity(w1)
        A[d, :d] = S0
        if np.linalg.cond(A) > 1e13:
            eig = np.linalg.eigvals(transversal_monodromy(sys, p, Phi))
            mu = eig[np.argmin(np.abs(eig - 1.0))]
            raise SingularNewtonError(complex(mu) if abs(mu.imag) > 0 else float(mu.real))
        delta = np.linalg.solve(A, -np.r_[F, phase])
        p = p + delta[:d]
        tau = tau + delta[d]
        iterations += 1
    p = sys.reduce(p)
    _, Phi = advance_flow(sys, p, np.eye(d), tau, h)
    M = transversal_monodromy(sys, p, Phi)
    mags = np.sort(np.abs(np.linalg.eigvals(M)))
    exps = np.log(mags) / tau
    traj = trajectory(sys, p, tau, h)
    closing = float(distance(traj.states[-1], p, traj.geometry))
    return PeriodicOrbit(
        point=p,
        period=tau,
        multipliers=mags,
        exponents=exps,
        index=int(np.sum(exps < 0)),
        residual=max(res, closing),
        points=traj.states[:-1],
        monodromy=M,
        kind="flow",
        geometry=sys.geometry,
        iterations=iterations,
        step=traj.step,
    )


def _refine_suspension(sys, seg, tol, max_iter, h):
    base = sys.base_map
    m = max(1, int(round(seg.span / sys.roof)))
    start = np.asarray(seg.start, dtype=float)
    base_seg = RecurrentSegment(start[:-1], m, seg.gap, geometry=base.geometry)
    orb = _refine_map(base, base_seg, tol, max_iter)
    return suspension_orbit(sys, orb, float(start[-1]), h)


def suspension_orbit(sys: SuspensionSystem, base_orbit: PeriodicOrbit, s0=0.0, h=DEFAULT_STEP) -> PeriodicOrbit:
    """Lift a periodic orbit of the base map to the suspension flow."""
    p = np.append(base_orbit.point, s0)
    tau = base_orbit.period * sys.roof
    traj = trajectory(sys, p, tau, h)
    closing = float(distance(traj.states[-1], p, sys.geometry))
    return PeriodicOrbit(
        point=p,
        period=tau,
        multipliers=base_orbit.multipliers,
        exponents=base_orbit.exponents / sys.roof,
        index=base_orbit.index,
        residual=max(base_orbit.residual, closing),
        points=traj.states[:-1],
        monodromy=base_orbit.monodromy,
        kind="flow",
        geometry=sys.geometry,
        iterations=base_orbit.iterations,
        step=traj.step,
    )


# ---------------------------------------------------------------------------
# shadowing


@dataclass
class ShadowReport:
    shadows: bool
    max_offset: float
    time_of_max: float

    def __bool__(self):
        return self.shadows


def verify_shadow(traj: Trajectory, orbit: PeriodicOrbit, eps, sys=None) -> ShadowReport:
    """Does the orbit stay within ``eps`` of the trajectory at every sample?

    Map orbits are replayed cyclically.  Flow orbits are re-integrated from
    ``orbit.point`` at the trajectory's step when ``sys`` is given, otherwise
    replayed from their stored samples (which must share the step).
    """
    states = np.asarray(traj.states, dtype=float)
    if orbit.kind == "flow" and sys is not None:
        T = traj.times[-1] - traj.times[0]
        replay = trajectory(sys, orbit.point, T, traj.step or DEFAULT_STEP).states
        replay = replay[: len(states)]
    else:
        idx = np.arange(len(states)) % len(orbit.points)
        replay = np.asarray(orbit.points)[idx]
    offsets = distance(states, replay, traj.geometry)
    k = int(np.argmax(offsets))
    worst = float(offsets[k])
    return ShadowReport(worst < eps, worst, float(traj.times[k] - traj.times[0]))


# ---------------------------------------------------------------------------
# exact enumeration for toral automorphisms


def _int_matmul(A, B):
    n = len(A)
    return [[sum(A[i][k] * B[k][j] for k in range(n)) for j in range(len(B[0]))] for i in range(n)]


def _int_power(A, m):
    n = len(A)
    R = [[int(i == j) for j in range(n)] for i in range(n)]
    for _ in range(m):
        R = _int_matmul(R, A)
    return R


def enumerate_periodic_toral(A, m: int):
    """All points with A^m p = p (mod 1), grouped into orbits with exact rational coordinates.

    The solutions form the group (A^m - I)^{-1} Z^n / Z^n of order
    |det(A^m - I)|; it is generated by the columns of the inverse, so a
    breadth-first closure in units of 1/|det| enumerates it exactly.
    """
    import sympy

    if m < 1:
        raise ValueError("period must be positive")
    A = [[int(v) for v in row] for row in np.asarray(A)]
    n = len(A)
    B = sympy.Matrix(_int_power(A, m)) - sympy.eye(n)
    D = int(B.det())
    if D == 0:
        raise NonHyperbolicPeriodError(f"det(A^{m} - I) = 0: A^{m} has eigenvalue 1")
    N = abs(D)
    adj = B.adjugate()
    sign = 1 if D > 0 else -1
    gens = [tuple(int(sign * adj[i, j]) % N for i in range(n)) for j in range(n)]
    zero = tuple([0] * n)
    seen = {zero}
    queue = deque([zero])
    while queue:
        q = queue.popleft()
        for g in gens:
            r = tuple((a + b) % N for a, b in zip(q, g))
            if r not in seen:
                seen.add(r)
                queue.append(r)
    if len(seen) != N:
        raise AssertionError(f"enumeration found {len(seen)} points, expected {N}")

    def image(q):
        return tuple(sum(A[i][k] * q[k] for k in range(n)) % N for i in range(n))

    Af = np.array(A, dtype=float)
    eig = np.abs(np.linalg.eigvals(Af))
    base_exps = np.sort(np.log(eig))
    orbits, visited = [], set()
    for q in sorted(seen):
        if q in visited:
            continue
        cycle = [q]
        visited.add(q)
        nxt = image(q)
        while nxt != q:
            cycle.append(nxt)
            visited.add(nxt)
            nxt = image(nxt)
        exact = [tuple(Fraction(c, N) for c in pt) for pt in cycle]
        pts = np.array([[float(c) for c in pt] for pt in exact])
        d = len(cycle)
        mono = np.linalg.matrix_power(Af, d)
        orbits.append(
            PeriodicOrbit(
                point=pts[0].copy(),
                period=d,
                multipliers=np.sort(eig**d),
                exponents=base_exps.copy(),
                index=int(np.sum(base_exps < 0)),
                residual=float(np.max(distance(reduce_torus(pts @ Af.T), np.roll(pts, -1, axis=0), "torus"))),
                points=pts,
                monodromy=mono,
                kind="map",
                geometry="torus",
                exact_points=exact,
            )
        )
    return orbits


def enumerate_up_to(A, max_period: int):
    """Distinct orbits of minimal period <= max_period, plus point counts per period."""
    counts, orbits, keys = {}, [], set()
    for m in range(1, max_period + 1):
        found = enumerate_periodic_toral(A, m)
        counts[m] = sum(len(o.points) for o in found)
        for o in found:
            key = frozenset(o.exact_points)
            if key not in keys:
                keys.add(key)
                orbits.append(o)
    return orbits, counts
