"""Finitely supported measures, observables and the bounded-Lipschitz distance."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment, linprog, minimize_scalar

from .dynamics import Trajectory, distance
from .errors import GeometryMismatchError, UnverifiedOrbitError

# largest union of supports handled by the exact pairwise LP
LP_ATOMS = 300
# beyond this many atoms per measure the transport route subsamples
MAX_ATOMS = 2000


@dataclass
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray
    geometry: str = "euclidean"
    provenance: dict = field(default_factory=lambda: {"kind": "custom"})

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.points) != len(self.weights):
            raise ValueError("one weight per atom")
        if len(self.weights) == 0:
            raise ValueError("a measure needs at least one atom")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        total = self.weights.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"total mass {total!r} is not 1")

    def __len__(self):
        return len(self.weights)

    def compress(self, decimals=12) -> "DiscreteMeasure":
        """Merge atoms whose coordinates agree to ``decimals`` places."""
        first, inv = _merge_index(self.points, self.geometry, decimals)
        w = np.bincount(inv, weights=self.weights, minlength=len(first))
        return DiscreteMeasure(self.points[first], w / w.sum(), self.geometry, dict(self.provenance))

    def to_dict(self) -> dict:
        return {
            "atoms": [[*map(float, p), float(w)] for p, w in zip(self.points, self.weights)],
            "geometry": self.geometry,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc) -> "DiscreteMeasure":
        atoms = np.asarray(doc["atoms"], dtype=float)
        return cls(atoms[:, :-1], atoms[:, -1], doc.get("geometry", "euclidean"), doc.get("provenance", {"kind": "custom"}))


def _merge_index(points, geometry, decimals=12):
    """Indices of first occurrences and the atom -> merged-atom map."""
    key = np.round(points, decimals)
    if geometry == "torus":
        key = np.round(np.mod(key, 1.0), decimals) % 1.0
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return first, inv.reshape(-1)


def dirac(point, geometry="euclidean") -> DiscreteMeasure:
    return DiscreteMeasure([point], [1.0], geometry)


@dataclass
class Observable:
    """Test function with declared sup and Lipschitz bounds."""

    eval: Callable
    lip_bound: float
    sup_bound: float
    name: str = "observable"

    @property
    def bl_norm(self) -> float:
        return self.sup_bound + self.lip_bound

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals = np.asarray(self.eval(pts), dtype=float)
        if vals.shape != (len(pts),):
            vals = np.array([float(self.eval(p)) for p in pts])
        return vals


def fourier_observable(k, phase=0.0) -> Observable:
    """cos(2 pi <k, w> + phase), periodic on the torus."""
    k = np.asarray(k, dtype=float)

    def ev(w):
        return np.cos(2 * np.pi * (np.asarray(w)[..., : len(k)] @ k) + phase)

    return Observable(ev, 2 * np.pi * float(np.linalg.norm(k)), 1.0, f"cos(2pi k.w) k={k.tolist()}")


def constant_observable(c) -> Observable:
    return Observable(lambda w: np.full(len(w), float(c)), 0.0, abs(float(c)), f"const {c}")


def bump_observable(center, radius, geometry="euclidean") -> Observable:
    """Tent of height 1 and support radius ``radius`` around ``center``."""
    center = np.asarray(center, dtype=float)

    def ev(w):
        return np.maximum(0.0, 1.0 - distance(w, center, geometry) / radius)

    return Observable(ev, 1.0 / radius, 1.0, "bump")


def empirical_measure(traj: Trajectory, T=None) -> DiscreteMeasure:
    """Time-average measure of the orbit over [0, T] (maps: the first T iterates).

    Map atoms get weight 1/N; flow samples get trapezoid weights so that
    integration approximates (1/T) times the time integral.
    """
    states = np.asarray(traj.states, dtype=float)
    times = np.asarray(traj.times, dtype=float)
    if len(states) == 0:
        raise ValueError("empty trajectory")
    t0 = times[0]
    if not traj.is_flow:
        N = len(states) - 1 if T is None else int(T)
        N = max(N, 1)
        if N > len(states):
            raise ValueError(f"trajectory has {len(states)} samples, horizon {N} requested")
        prov = {"kind": "empirical", "start": states[0].tolist(), "horizon": N}
        return DiscreteMeasure(states[:N], np.full(N, 1.0 / N), traj.geometry, prov)
    if T is None:
        T = times[-1] - t0
    if T > times[-1] - t0 + 1e-9:
        raise ValueError("trajectory shorter than the horizon")
    n = int(np.searchsorted(times - t0, T - 1e-12)) + 1
    pts, t = states[:n], times[:n] - t0
    if n == 1:
        return DiscreteMeasure(pts, [1.0], traj.geometry, {"kind": "empirical", "horizon": 0.0})
    dt = np.diff(t)
    w = np.zeros(n)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    prov = {"kind": "empirical", "start": states[0].tolist(), "horizon": float(t[-1])}
    return DiscreteMeasure(pts, w / w.sum(), traj.geometry, prov)


def periodic_measure(orbit) -> DiscreteMeasure:
    """Uniform measure over one period of a verified orbit.

    Flow orbits are stored at equally spaced integrator nodes, so uniform
    weights are the time weights step/period.
    """
    if not orbit.verified:
        raise UnverifiedOrbitError(f"orbit residual {orbit.residual:.3e} above verification threshold")
    pts = np.asarray(orbit.points, dtype=float)
    prov = {"kind": "periodic", "point": [float(v) for v in orbit.point], "period": float(orbit.period)}
    return DiscreteMeasure(pts, np.full(len(pts), 1.0 / len(pts)), orbit.geometry, prov)


def integrate(m: DiscreteMeasure, f) -> float:
    vals = f(m.points) if isinstance(f, Observable) else Observable(f, 0.0, 0.0)(m.points)
    return float(m.weights @ vals)


def push_forward(m: DiscreteMeasure, sys) -> DiscreteMeasure:
    """Image measure under one step of a map."""
    return DiscreteMeasure(sys.reduce(sys.evaluate(m.points)), m.weights, m.geometry, dict(m.provenance))


# ---------------------------------------------------------------------------
# bounded-Lipschitz distance


def _check_geometry(m1, m2):
    if m1.geometry != m2.geometry:
        raise GeometryMismatchError(f"{m1.geometry} vs {m2.geometry}")
    if m1.points.shape[1] != m2.points.shape[1]:
        raise GeometryMismatchError("measures live in different dimensions")


def _pairwise(P, Q, geometry):
    return distance(P[:, None, :], Q[None, :, :], geometry)


def _union(m1, m2):
    """Merged support of both measures and the signed weight difference on it."""
    pts = np.vstack([m1.points, m2.points])
    signed = np.concatenate([m1.weights, -m2.weights])
    first, inv = _merge_index(pts, m1.geometry)
    return pts[first], np.bincount(inv, weights=signed, minlength=len(first))


def bl_distance_lp(m1: DiscreteMeasure, m2: DiscreteMeasure) -> float:
    """Exact value of the dual LP over (phi_i, a, b) on the union of supports.

    maximize sum_i c_i phi_i  s.t.  |phi_i| <= a,  phi_i - phi_j <= b d_ij,  a + b <= 1.
    """
    _check_geometry(m1, m2)
    pts, c = _union(m1, m2)
    N = len(c)
    if np.max(np.abs(c)) <= 1e-15:
        return 0.0
    D = _pairwise(pts, pts, m1.geometry)
    ia, ib = N, N + 1
    i, j = np.nonzero(~np.eye(N, dtype=bool))
    npair = len(i)
    r = np.arange(npair)
    rows = np.concatenate([r, r, r])
    cols = np.concatenate([i, j, np.full(npair, ib)])
    vals = np.concatenate([np.ones(npair), -np.ones(npair), -D[i, j]])
    pair_block = sp.coo_matrix((vals, (rows, cols)), shape=(npair, N + 2))
    eye = sp.identity(N, format="coo")
    a_col = sp.coo_matrix((-np.ones(N), (np.arange(N), np.full(N, ia))), shape=(N, N + 2))
    box = sp.vstack([sp.hstack([eye, sp.coo_matrix((N, 2))]) + a_col, sp.hstack([-eye, sp.coo_matrix((N, 2))]) + a_col])
    budget = sp.coo_matrix(([1.0, 1.0], ([0, 0], [ia, ib])), shape=(1, N + 2))
    A = sp.vstack([box, pair_block, budget]).tocsr()
    rhs = np.zeros(A.shape[0])
    rhs[-1] = 1.0
    cost = np.concatenate([-c, [0.0, 0.0]])
    bounds = [(None, None)] * N + [(0, 1), (0, 1)]
    res = linprog(cost, A_ub=A, b_ub=rhs, bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return max(0.0, float(-res.fun))


def _transport(w1, w2, C):
    if len(w1) == len(w2) and np.allclose(w1, w1[0]) and np.allclose(w2, w2[0]):
        r, c = linear_sum_assignment(C)
        return float(C[r, c].sum() / len(w1))
    n1, n2 = C.shape
    rows_a = np.repeat(np.arange(n1), n2)
    rows_b = n1 + np.tile(np.arange(n2), n1)
    cols = np.arange(n1 * n2)
    A = sp.coo_matrix((np.ones(2 * n1 * n2), (np.concatenate([rows_a, rows_b]), np.concatenate([cols, cols]))), shape=(n1 + n2, n1 * n2))
    res = linprog(C.ravel(), A_eq=A.tocsr(), b_eq=np.concatenate([w1, w2]), bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _subsample(m: DiscreteMeasure, k):
    if len(m) <= k:
        return m, 0.0
    order = np.argsort(-m.weights, kind="stable")
    stride = len(m) / k
    take = order[(np.arange(k) * stride).astype(int)]
    w = m.weights[take]
    return DiscreteMeasure(m.points[take], w / w.sum(), m.geometry, dict(m.provenance)), 1.0 / np.sqrt(k)


def bl_distance_transport(m1: DiscreteMeasure, m2: DiscreteMeasure, max_atoms=MAX_ATOMS, return_bound=False):
    """Second route through transport duality.

    For fixed a + b = 1 the supremum equals the optimal transport cost with
    ground cost min(b d, 2a); that value is concave in a, so a bounded scalar
    search finds the maximum.  Measures with more than ``max_atoms`` atoms are
    subsampled; the returned bound is diameter / sqrt(k) per subsampled side.
    """
    _check_geometry(m1, m2)
    m1, m2 = m1.compress(), m2.compress()
    bound = 0.0
    diam = np.sqrt(m1.points.shape[1]) * (0.5 if m1.geometry == "torus" else 1.0)
    if len(m1) > max_atoms or len(m2) > max_atoms:
        m1, e1 = _subsample(m1, max_atoms)
        m2, e2 = _subsample(m2, max_atoms)
        if m1.geometry != "torus":
            allpts = np.vstack([m1.points, m2.points])
            diam = float(np.linalg.norm(allpts.max(0) - allpts.min(0)))
        bound = diam * (e1 + e2)
    D = _pairwise(m1.points, m2.points, m1.geometry)

    def value(a):
        return _transport(m1.weights, m2.weights, np.minimum((1 - a) * D, 2 * a))

    res = minimize_scalar(lambda a: -value(a), bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-10})
    best = max(-res.fun, value(0.0), value(1.0))
    best = max(0.0, float(best))
    return (best, bound) if return_bound else best


def bl_distance(m1: DiscreteMeasure, m2: DiscreteMeasure) -> float:
    """sup of (int phi dm1 - int phi dm2) over |phi|_inf + Lip(phi) <= 1.

    Small supports use the exact LP; larger ones the transport route.
    """
    _check_geometry(m1, m2)
    if len(m1.compress()) + len(m2.compress()) <= LP_ATOMS:
        return bl_distance_lp(m1, m2)
    return bl_distance_transport(m1, m2)
