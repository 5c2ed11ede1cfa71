"""Maps, flows, their tangent dynamics, and suspension flows.

State arrays are vectorized over leading axes: a state has shape ``(..., d)``
and a tangent frame ``(..., d, k)``.  Torus coordinates are reduced mod 1 after
every step; tangent data always lives in the covering space and is never
reduced.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import logm

from .errors import (
    BackwardUnavailableError,
    FrameflowError,
    NonFiniteStateError,
    SingularFieldError,
)

DEFAULT_STEP = 1e-3
SINGULAR_THRESHOLD = 1e-10
GEOMETRIES = ("torus", "euclidean")


def reduce_torus(w):
    r = np.mod(w, 1.0)
    # np.mod(-1e-17, 1.0) == 1.0
    return np.where(r >= 1.0, 0.0, r)


def displacement(a, b, geometry):
    """Shortest displacement from ``a`` to ``b`` (minimal image on the torus)."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    if geometry == "torus":
        d = d - np.round(d)
    elif geometry == "suspension":
        # torus base, fiber coordinate measured plainly
        d[..., :-1] -= np.round(d[..., :-1])
    return d


def distance(a, b, geometry):
    """Euclidean distance, with coordinate-wise min(|d|, 1-|d|) on torus coordinates."""
    return np.linalg.norm(displacement(a, b, geometry), axis=-1)


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """A discrete map ``w -> g(w)`` or a vector field ``w' = S(w)``.

    ``dimension`` is the state dimension n for maps and the transversal
    dimension n for flows, whose ambient space is (n+1)-dimensional.  For torus
    maps ``evaluate`` is the lift to the covering space; reduction happens in
    the evolution routines.
    """

    name: str
    kind: str
    dimension: int
    evaluate: Callable
    jacobian: Callable
    geometry: str = "euclidean"
    inverse: "SystemSpec | None" = None
    matrix: np.ndarray | None = None
    sampler: Callable | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("map", "flow"):
            raise ValueError(f"kind must be 'map' or 'flow', got {self.kind!r}")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")

    @property
    def is_flow(self) -> bool:
        return self.kind == "flow"

    @property
    def ambient_dim(self) -> int:
        return self.dimension + 1 if self.is_flow else self.dimension

    def reduce(self, w):
        return reduce_torus(w) if self.geometry == "torus" else w

    def velocity(self, w):
        return self.evaluate(w)

    def generator(self, w):
        """Matrix driving the tangent equation (S'(w) for flows)."""
        return self.jacobian(w)

    def sample_state(self, rng: np.random.Generator) -> np.ndarray:
        if self.sampler is not None:
            return np.asarray(self.sampler(rng), dtype=float)
        if self.geometry == "torus":
            return rng.random(self.ambient_dim)
        return rng.uniform(-1.0, 1.0, self.ambient_dim)


@dataclass
class Trajectory:
    """Sampled orbit: ``states[k]`` at ``times[k]``."""

    states: np.ndarray
    times: np.ndarray
    geometry: str = "euclidean"
    step: float | None = None

    def __len__(self):
        return len(self.states)

    @property
    def is_flow(self) -> bool:
        return self.step is not None

    def segment(self, i, j) -> "Trajectory":
        return Trajectory(self.states[i : j + 1], self.times[i : j + 1], self.geometry, self.step)


def _check_finite(w):
    if not np.all(np.isfinite(w)):
        raise NonFiniteStateError(f"non-finite state encountered: {np.asarray(w).tolist()}")


def _field(sys, w):
    S = sys.velocity(w)
    norm = np.linalg.norm(S, axis=-1)
    if np.any(norm < SINGULAR_THRESHOLD):
        flat = np.reshape(w, (-1, np.shape(w)[-1]))
        i = int(np.argmin(np.reshape(norm, -1)))
        raise SingularFieldError(flat[i], float(np.reshape(norm, -1)[i]))
    return S


def _rk4_step(sys, w, X, dt):
    k1 = _field(sys, w)
    w2 = w + 0.5 * dt * k1
    k2 = _field(sys, w2)
    w3 = w + 0.5 * dt * k2
    k3 = _field(sys, w3)
    w4 = w + dt * k3
    k4 = _field(sys, w4)
    w_new = w + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if X is None:
        return w_new, None
    K1 = sys.generator(w) @ X
    K2 = sys.generator(w2) @ (X + 0.5 * dt * K1)
    K3 = sys.generator(w3) @ (X + 0.5 * dt * K2)
    K4 = sys.generator(w4) @ (X + dt * K3)
    return w_new, X + dt / 6.0 * (K1 + 2 * K2 + 2 * K3 + K4)


def step_count(t, h) -> int:
    if h <= 0:
        raise ValueError("integration step h must be positive")
    return int(math.ceil(abs(t) / h - 1e-9)) if t != 0 else 0


def advance_flow(sys, w, X, t, h=DEFAULT_STEP, reduce=True):
    """Fixed-step RK4 for ``(w, X)`` over time ``t``: ceil(|t|/h) steps of t/N."""
    w = np.array(w, dtype=float)
    X = None if X is None else np.array(X, dtype=float)
    if hasattr(sys, "advance"):
        return sys.advance(w, X, t, h)
    nsteps = step_count(t, h)
    if nsteps == 0:
        return w, X
    dt = t / nsteps
    for _ in range(nsteps):
        w, X = _rk4_step(sys, w, X, dt)
        if reduce:
            w = sys.reduce(w)
        _check_finite(w)
    if X is not None:
        _check_finite(X)
    return w, X


def advance_map(sys, w, X, n, reduce=True):
    """``n`` iterates of the map; tangent columns pushed by chained Jacobians."""
    if n < 0:
        if sys.inverse is None:
            raise BackwardUnavailableError(f"system {sys.name!r} has no explicit inverse")
        return advance_map(sys.inverse, w, X, -n, reduce)
    w = np.array(w, dtype=float)
    X = None if X is None else np.array(X, dtype=float)
    for _ in range(int(n)):
        if X is not None:
            X = sys.jacobian(w) @ X
        w = sys.evaluate(w)
        if reduce:
            w = sys.reduce(w)
        _check_finite(w)
    if X is not None:
        _check_finite(X)
    return w, X


def evolve_flow(sys, w, t, h=DEFAULT_STEP):
    if not sys.is_flow:
        raise TypeError("evolve_flow requires a flow")
    return advance_flow(sys, w, None, t, h)[0]


def evolve_map(sys, w, n):
    if sys.is_flow:
        raise TypeError("evolve_map requires a discrete map")
    return advance_map(sys, w, None, n)[0]


def evolve(sys, w, t, h=DEFAULT_STEP):
    return evolve_flow(sys, w, t, h) if sys.is_flow else evolve_map(sys, w, int(t))


def evolve_tangent(sys, w, x, t=None, *, n=None, h=DEFAULT_STEP):
    """Return ``(phi(t, w), Phi_{t,w} x)``; ``x`` may be a vector or a (d, k) frame."""
    x = np.asarray(x, dtype=float)
    vector = x.ndim == np.ndim(w)
    X = x[..., None] if vector else x
    if sys.is_flow:
        if t is None:
            raise ValueError("flows need a time t")
        w1, X1 = advance_flow(sys, w, X, t, h)
    else:
        steps = n if n is not None else t
        if steps is None:
            raise ValueError("maps need a step count n")
        w1, X1 = advance_map(sys, w, X, int(steps))
    return w1, (X1[..., 0] if vector else X1)


def trajectory(sys, w, T, h=DEFAULT_STEP) -> Trajectory:
    """Orbit samples: every iterate for maps, every integrator node for flows."""
    w = np.array(w, dtype=float)
    if not sys.is_flow:
        steps = int(T)
        states = np.empty((steps + 1, w.shape[-1]))
        states[0] = w
        ev, red = sys.evaluate, sys.reduce
        for k in range(steps):
            w = red(ev(w))
            states[k + 1] = w
        _check_finite(states)
        return Trajectory(states, np.arange(steps + 1, dtype=float), sys.geometry, None)
    nsteps = step_count(T, h)
    dt = T / nsteps if nsteps else h
    states = np.empty((nsteps + 1, w.shape[-1]))
    states[0] = w
    for k in range(nsteps):
        w = advance_flow(sys, w, None, dt, h)[0]
        states[k + 1] = w
    return Trajectory(states, dt * np.arange(nsteps + 1), getattr(sys, "geometry", "euclidean"), dt)


def jacobian_error(sys, w, eps_dir, h):
    """|central difference of evaluate - jacobian . eps| (vectorized)."""
    fd = (sys.evaluate(w + h * eps_dir) - sys.evaluate(w - h * eps_dir)) / (2 * h)
    return np.linalg.norm(fd - (sys.jacobian(w) @ eps_dir[..., None])[..., 0], axis=-1)


# ---------------------------------------------------------------------------
# suspension flows


def _rk4_propagator(K, dt):
    A = K * dt
    I = np.eye(len(K))
    A2 = A @ A
    return I + A + A2 / 2 + A2 @ A / 6 + A2 @ A2 / 24


def real_logarithm(M):
    L = logm(np.asarray(M, dtype=float))
    if np.iscomplexobj(L):
        if np.max(np.abs(L.imag)) > 1e-10 * max(1.0, np.max(np.abs(L.real))):
            raise FrameflowError("base Jacobian has no real logarithm; cannot suspend")
        L = L.real
    return L


@dataclass(frozen=True, eq=False)
class SuspensionSystem:
    """Unit-speed suspension of a map with identification (x, roof) ~ (g(x), 0).

    States are ``(x, s)`` with ``s`` in ``[0, roof)``.  Tangent vectors are
    expressed in the adapted orthonormal frame of the metric
    ``ds^2 + |exp((s/roof) log Dg(x)) dx|^2``, which is continuous across the
    identification.  In that frame the velocity is the constant unit vector
    along the fiber, the transversal bundle is the base directions, and the
    tangent equation is driven by ``log(Dg(x)) / roof``.  The base Jacobian
    must therefore have a real logarithm (orientation preserving, no negative
    real eigenvalues).
    """

    base_map: SystemSpec
    roof: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    kind = "flow"
    is_flow = True

    def __post_init__(self):
        if self.base_map.is_flow:
            raise TypeError("only discrete maps can be suspended")
        if not self.roof > 0:
            raise ValueError("roof must be positive")

    @property
    def name(self) -> str:
        return f"suspension:{self.base_map.name}"

    @property
    def dimension(self) -> int:
        return self.base_map.dimension

    @property
    def ambient_dim(self) -> int:
        return self.dimension + 1

    @property
    def geometry(self) -> str:
        return "suspension" if self.base_map.geometry == "torus" else "euclidean"

    @property
    def inverse(self):
        return None

    @property
    def params(self) -> dict:
        return {"roof": self.roof, **self.base_map.params}

    def reduce(self, w):
        w = np.array(w, dtype=float)
        w[..., :-1] = self.base_map.reduce(w[..., :-1])
        return w

    def velocity(self, w):
        w = np.asarray(w, dtype=float)
        S = np.zeros_like(w)
        S[..., -1] = 1.0
        return S

    evaluate = velocity

    def base_generator(self, x):
        if self.base_map.matrix is not None:
            key = None
        else:
            key = np.asarray(x, dtype=float).tobytes()
        K = self._cache.get(key)
        if K is None:
            K = real_logarithm(self.base_map.jacobian(np.asarray(x, dtype=float))) / self.roof
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = K
        return K

    def generator(self, w):
        w = np.asarray(w, dtype=float)
        flat = w.reshape(-1, w.shape[-1])
        d = w.shape[-1]
        out = np.zeros((len(flat), d, d))
        for i, wi in enumerate(flat):
            out[i, :-1, :-1] = self.base_generator(wi[:-1])
        return out.reshape(w.shape + (d,))

    jacobian = generator

    def sample_state(self, rng):
        x = self.base_map.sample_state(rng)
        return np.append(x, rng.random() * self.roof)

    def advance(self, w, X, t, h=DEFAULT_STEP, reduce=True):
        w = np.array(w, dtype=float)
        if w.ndim == 1:
            return self._advance_one(w, X, t, h)
        shape = w.shape
        flat = w.reshape(-1, shape[-1]).copy()
        Xf = None if X is None else np.array(X, dtype=float).reshape((-1,) + X.shape[-2:])
        s = flat[:, -1]
        inside = (s + t < self.roof) & (s + t >= 0.0)
        if np.any(inside):
            # no fiber crossing: constant generator per element
            nsteps = step_count(t, h)
            idx = np.flatnonzero(inside)
            if Xf is not None and nsteps:
                for i in idx:
                    P = _rk4_propagator(self.base_generator(flat[i, :-1]), t / nsteps)
                    Xf[i, :-1] = np.linalg.matrix_power(P, nsteps) @ Xf[i, :-1]
            flat[idx, -1] = s[idx] + t
        for i in np.flatnonzero(~inside):
            wi, Xi = self._advance_one(flat[i], None if Xf is None else Xf[i], t, h)
            flat[i] = wi
            if Xf is not None:
                Xf[i] = Xi
        return flat.reshape(shape), (None if X is None else Xf.reshape(X.shape))

    def _advance_one(self, w, X, t, h):
        base = self.base_map
        x = np.array(w[:-1], dtype=float)
        s = float(w[-1])
        X = None if X is None else np.array(X, dtype=float)
        sign = 1.0 if t >= 0 else -1.0
        left = abs(float(t))
        floor = 1e-14 * max(1.0, left)
        while left > floor:
            if sign < 0 and s <= 0.0:
                if base.inverse is None:
                    raise BackwardUnavailableError(f"{base.name!r} has no inverse; cannot flow backward")
                x = base.reduce(base.inverse.evaluate(x))
                s = self.roof
            gap = self.roof - s if sign > 0 else s
            crossing = left >= gap
            seg = gap if crossing else left
            if X is not None and seg > 0:
                # a sliver shorter than the step-count slack still needs one step
                nsteps = max(1, step_count(seg, h))
                P = _rk4_propagator(self.base_generator(x), sign * seg / nsteps)
                X[:-1] = np.linalg.matrix_power(P, nsteps) @ X[:-1]
            if crossing:
                if sign > 0:
                    x = base.reduce(base.evaluate(x))
                s = 0.0
                left -= gap
            else:
                s += sign * seg
                left = 0.0
        _check_finite(x)
        return np.append(x, s), X


def suspend(base_map: SystemSpec, roof: float = 1.0) -> SuspensionSystem:
    return SuspensionSystem(base_map, float(roof))


# ---------------------------------------------------------------------------
# built-in systems


def linear_map(M, name="linear", geometry="euclidean", sampler=None) -> SystemSpec:
    M = np.array(M, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError("matrix must be square")
    if geometry == "torus" and not np.allclose(M, np.round(M)):
        raise ValueError("torus maps need an integer matrix")

    def make(mat, nm):
        return SystemSpec(
            name=nm,
            kind="map",
            dimension=n,
            evaluate=lambda w: np.asarray(w, dtype=float) @ mat.T,
            jacobian=lambda w: np.broadcast_to(mat, np.shape(w)[:-1] + mat.shape),
            geometry=geometry,
            matrix=mat,
            sampler=sampler,
        )

    inv = None
    if abs(np.linalg.det(M)) > 1e-12:
        Minv = np.linalg.inv(M)
        if geometry == "torus":
            Minv = np.round(Minv)
            if not np.allclose(Minv @ M, np.eye(n)):
                Minv = None
        if Minv is not None:
            inv = make(Minv, name + "^-1")
    fwd = make(M, name)
    return SystemSpec(**{**fwd.__dict__, "inverse": inv})


def cat_map() -> SystemSpec:
    return linear_map([[2, 1], [1, 1]], name="cat", geometry="torus")


def cat_perturbed(eps: float = 0.01) -> SystemSpec:
    """Cat map plus eps * (sin 2 pi w1, 0), inverted by Newton on the first coordinate."""
    if not 2 * math.pi * abs(eps) < 1:
        raise ValueError("cat-perturbed needs 2*pi*|eps| < 1 to stay a diffeomorphism")
    tau = 2 * math.pi

    def ev(w):
        w = np.asarray(w, dtype=float)
        x, y = w[..., 0], w[..., 1]
        return np.stack([2 * x + y + eps * np.sin(tau * x), x + y], axis=-1)

    def jac(w):
        w = np.asarray(w, dtype=float)
        x = w[..., 0]
        J = np.empty(w.shape[:-1] + (2, 2))
        J[..., 0, 0] = 2 + tau * eps * np.cos(tau * x)
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = 1.0
        J[..., 1, 1] = 1.0
        return J

    def preimage(v):
        v = np.asarray(v, dtype=float)
        c = v[..., 0] - v[..., 1]
        x = np.array(c, dtype=float)
        for _ in range(60):
            dx = (x + eps * np.sin(tau * x) - c) / (1 + tau * eps * np.cos(tau * x))
            x = x - dx
            if np.all(np.abs(dx) < 1e-16):
                break
        return np.stack([x, v[..., 1] - x], axis=-1)

    def inv_jac(v):
        return np.linalg.inv(jac(preimage(v)))

    inverse = SystemSpec("cat-perturbed^-1", "map", 2, preimage, inv_jac, "torus", params={"eps": eps})
    return SystemSpec("cat-perturbed", "map", 2, ev, jac, "torus", inverse=inverse, params={"eps": eps})


def diag_map(entries) -> SystemSpec:
    d = [float(e) for e in entries]
    return linear_map(
        np.diag(d),
        name="diag:" + ",".join(f"{e:g}" for e in d),
        sampler=lambda rng: np.zeros(len(d)),
    )


def linear_flow(M, name="linear-flow", sampler=None) -> SystemSpec:
    M = np.array(M, dtype=float)
    d = M.shape[0]
    return SystemSpec(
        name=name,
        kind="flow",
        dimension=d - 1,
        evaluate=lambda w: np.asarray(w, dtype=float) @ M.T,
        jacobian=lambda w: np.broadcast_to(M, np.shape(w)[:-1] + M.shape),
        matrix=M,
        sampler=sampler,
    )


def constant_flow(c=(1.0, 0.0, 0.0)) -> SystemSpec:
    c = np.array(c, dtype=float)
    d = len(c)
    return SystemSpec(
        name="constant-flow",
        kind="flow",
        dimension=d - 1,
        evaluate=lambda w: np.broadcast_to(c, np.shape(w)).copy(),
        jacobian=lambda w: np.zeros(np.shape(w) + (d,)),
        params={"c": c.tolist()},
    )


def rotation_flow(omega: float = 1.0, decay: float = 1.0) -> SystemSpec:
    """Planar rotation attracted to the unit circle, times a contracting axis.

    x' = x - omega y - x r^2,  y' = omega x + y - y r^2,  z' = -decay z.
    The unit circle is a periodic orbit of period 2 pi / omega with transversal
    exponents {-2, -decay}.
    """

    def ev(w):
        w = np.asarray(w, dtype=float)
        x, y, z = w[..., 0], w[..., 1], w[..., 2]
        r2 = x * x + y * y
        return np.stack([x - omega * y - x * r2, omega * x + y - y * r2, -decay * z], axis=-1)

    def jac(w):
        w = np.asarray(w, dtype=float)
        x, y = w[..., 0], w[..., 1]
        J = np.zeros(w.shape[:-1] + (3, 3))
        J[..., 0, 0] = 1 - 3 * x * x - y * y
        J[..., 0, 1] = -omega - 2 * x * y
        J[..., 1, 0] = omega - 2 * x * y
        J[..., 1, 1] = 1 - x * x - 3 * y * y
        J[..., 2, 2] = -decay
        return J

    def sampler(rng):
        r = rng.uniform(0.8, 1.2)
        th = rng.uniform(0, 2 * math.pi)
        return np.array([r * math.cos(th), r * math.sin(th), rng.uniform(-0.2, 0.2)])

    return SystemSpec("rotation-flow", "flow", 2, ev, jac, sampler=sampler,
                      params={"omega": omega, "decay": decay})


def get_system(name: str, *, eps: float = 0.01, roof: float = 1.0):
    """Resolve a registry name, ``diag:<d1>,<d2>,...``, ``suspension:<map>`` or a JSON path."""
    if name.startswith("suspension:"):
        return suspend(get_system(name[len("suspension:"):], eps=eps), roof)
    if name == "cat":
        return cat_map()
    if name == "cat-perturbed":
        return cat_perturbed(eps)
    if name.startswith("diag:"):
        try:
            entries = [float(v) for v in name[5:].split(",") if v.strip()]
        except ValueError as exc:
            raise ValueError(f"bad diagonal entries in {name!r}") from exc
        if not entries:
            raise ValueError("diag needs at least one entry")
        return diag_map(entries)
    if name == "rotation-flow":
        return rotation_flow()
    if name == "constant-flow":
        return constant_flow()
    if name.endswith(".json") or Path(name).is_file():
        return load_system_json(name)
    raise ValueError(f"unknown system {name!r}")


# ---------------------------------------------------------------------------
# JSON-defined systems


def _compile_expressions(exprs, d, parameters):
    import sympy

    syms = sympy.symbols(f"w0:{d}")
    local = {f"w{i}": syms[i] for i in range(d)}
    local.update({k: sympy.Float(v) for k, v in parameters.items()})
    local["pi"] = sympy.pi
    parsed = [sympy.sympify(e, locals=local) for e in exprs]
    if len(parsed) != d:
        raise ValueError(f"expected {d} expressions, got {len(parsed)}")
    f = sympy.lambdify(syms, parsed, "numpy")
    jm = sympy.Matrix(parsed).jacobian(sympy.Matrix(syms))
    jf = sympy.lambdify(syms, jm.tolist(), "numpy")

    def evaluate(w):
        w = np.asarray(w, dtype=float)
        out = f(*[w[..., i] for i in range(d)])
        return np.stack([np.broadcast_to(np.asarray(o, dtype=float), w.shape[:-1]) for o in out], axis=-1)

    def jacobian(w):
        w = np.asarray(w, dtype=float)
        rows = jf(*[w[..., i] for i in range(d)])
        return np.stack(
            [np.stack([np.broadcast_to(np.asarray(e, dtype=float), w.shape[:-1]) for e in row], -1) for row in rows],
            -2,
        )

    return evaluate, jacobian


def _table(doc, key):
    tab = doc[key]
    if isinstance(tab, dict):
        return [tab[k] for k in sorted(tab, key=lambda s: int(s.lstrip("w")))]
    return list(tab)


def load_system_json(source) -> SystemSpec:
    """Build a system from ``{kind, dimension, geometry, matrix | expression-table}``.

    Optional keys: ``name``, ``parameters`` (constants usable in expressions)
    and ``inverse`` (a matrix or expression table, maps only).  For flows,
    ``dimension`` is the transversal dimension n and the field lives in n+1
    coordinates ``w0..wn``.
    """
    if isinstance(source, dict):
        doc = source
    else:
        doc = json.loads(Path(source).read_text())
    kind = doc["kind"]
    if kind not in ("map", "flow"):
        raise ValueError("kind must be 'map' or 'flow'")
    n = int(doc["dimension"])
    d = n + 1 if kind == "flow" else n
    geometry = doc.get("geometry", "euclidean")
    name = doc.get("name", "custom")
    params = dict(doc.get("parameters", {}))
    if "matrix" in doc:
        M = np.array(doc["matrix"], dtype=float)
        if M.shape != (d, d):
            raise ValueError(f"matrix must be {d}x{d}")
        if kind == "flow":
            spec = linear_flow(M, name=name)
            return SystemSpec(**{**spec.__dict__, "geometry": geometry, "params": params})
        return linear_map(M, name=name, geometry=geometry)
    if "expression-table" not in doc:
        raise ValueError("system JSON needs 'matrix' or 'expression-table'")
    ev, jac = _compile_expressions(_table(doc, "expression-table"), d, params)
    inverse = None
    if kind == "map" and "inverse" in doc:
        inv_doc = doc["inverse"]
        if isinstance(inv_doc, dict) and "matrix" in inv_doc:
            inverse = linear_map(inv_doc["matrix"], name=name + "^-1", geometry=geometry)
        else:
            table = _table({"t": inv_doc}, "t")
            iev, ijac = _compile_expressions(table, d, params)
            inverse = SystemSpec(name + "^-1", "map", n, iev, ijac, geometry, params=params)
    return SystemSpec(name, kind, n, ev, jac, geometry, inverse=inverse, params=params)
