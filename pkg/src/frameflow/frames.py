"""Transversal frames, Gram-Schmidt reorthonormalization and qualitative rates.

For a flow the frame lives in the hyperplane orthogonal to S(w).  Between
Gram-Schmidt events the columns evolve under the raw tangent flow and are only
projected; normalization happens at the reorthonormalization events, whose log
norms accumulate into ``log_growth``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import DEFAULT_STEP, SINGULAR_THRESHOLD, advance_flow, step_count
from .errors import DegenerateFrameError, NonFiniteStateError, SingularFieldError

DEGENERACY = 1e-12


def transversal_project(S_w, v):
    """Component of ``v`` orthogonal to ``S_w``: v - <v,S>/|S|^2 S."""
    S = np.asarray(S_w, dtype=float)
    v = np.asarray(v, dtype=float)
    nn = np.sum(S * S, axis=-1, keepdims=True)
    if np.any(np.sqrt(nn) < SINGULAR_THRESHOLD):
        raise SingularFieldError(np.zeros(S.shape[-1]), float(np.sqrt(np.min(nn))))
    return v - np.sum(v * S, axis=-1, keepdims=True) / nn * S


def project_frame(S_w, X):
    """Apply ``transversal_project`` to every column of a (..., d, k) frame."""
    S = np.asarray(S_w, dtype=float)[..., :, None]
    nn = np.sum(S * S, axis=-2, keepdims=True)
    if np.any(np.sqrt(nn) < SINGULAR_THRESHOLD):
        raise SingularFieldError(np.zeros(S.shape[-2]), float(np.sqrt(np.min(nn))))
    return X - S * (np.sum(S * X, axis=-2, keepdims=True) / nn)


def gram_schmidt(vectors, threshold=DEGENERACY):
    """Orthonormalize columns; return ``(frame, log of reduced column lengths)``.

    A list or tuple is read as a sequence of vectors; an array as a
    ``(..., d, k)`` stack of columns.  A column whose reduced length falls
    below ``threshold`` times its original length raises
    :class:`DegenerateFrameError`.
    """
    if isinstance(vectors, (list, tuple)):
        X = np.stack([np.asarray(v, dtype=float) for v in vectors], axis=-1)
    else:
        X = np.asarray(vectors, dtype=float)
    k = X.shape[-1]
    Q = np.empty_like(X)
    logs = np.empty(X.shape[:-2] + (k,))
    for i in range(k):
        v = X[..., :, i].copy()
        orig = np.linalg.norm(v, axis=-1)
        for _ in range(2):
            for j in range(i):
                u = Q[..., :, j]
                v -= np.sum(u * v, axis=-1, keepdims=True) * u
        r = np.linalg.norm(v, axis=-1)
        bad = ~(r > threshold * orig) | (orig == 0)
        if np.any(bad):
            rel = np.where(orig > 0, r / np.where(orig > 0, orig, 1.0), 0.0)
            raise DegenerateFrameError(i, float(np.min(rel)))
        Q[..., :, i] = v / r[..., None]
        logs[..., i] = np.log(r)
    return Q, logs


@dataclass(frozen=True)
class FrameState:
    """Base point, k orthonormal (transversal) columns and accumulated log growth."""

    base: np.ndarray
    columns: np.ndarray
    log_growth: np.ndarray
    elapsed: float = 0.0

    @property
    def k(self) -> int:
        return self.columns.shape[-1]

    def exponents(self) -> np.ndarray:
        return self.log_growth / self.elapsed

    def restart(self) -> "FrameState":
        """Same base and frame with the growth counters zeroed."""
        return replace(self, log_growth=np.zeros_like(self.log_growth), elapsed=0.0)


@dataclass(frozen=True)
class RateSample:
    base: np.ndarray
    column_index: int
    value: float


def frame_errors(sys, fs: FrameState):
    """(max |<u_i,u_j> - delta_ij|, max |<u_i, S/|S|>|); the second is 0 for maps."""
    Q = fs.columns
    ortho = float(np.max(np.abs(Q.T @ Q - np.eye(Q.shape[1]))))
    if not sys.is_flow:
        return ortho, 0.0
    S = sys.velocity(fs.base)
    return ortho, float(np.max(np.abs(S @ Q)) / np.linalg.norm(S))


def initial_frame(sys, w, vectors) -> FrameState:
    """Frame from user vectors: projected (flows) and Gram-Schmidt-ed."""
    w = np.array(w, dtype=float)
    X = np.asarray(vectors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if sys.is_flow:
        X = project_frame(sys.velocity(w), X)
    Q, _ = gram_schmidt(X)
    return FrameState(w, Q, np.zeros(Q.shape[1]), 0.0)


def random_frame(sys, w, k, rng: np.random.Generator) -> FrameState:
    d = sys.ambient_dim
    if k > sys.dimension:
        raise ValueError(f"at most {sys.dimension} transversal columns, got {k}")
    return initial_frame(sys, w, rng.standard_normal((d, k)))


def evolve_frame(sys, fs: FrameState, t_or_steps, reorth_every=1, h=DEFAULT_STEP, along=None) -> FrameState:
    """Push the frame forward; Gram-Schmidt every ``reorth_every`` steps and at the end.

    For maps ``t_or_steps`` counts iterates; ``along`` optionally replays the
    Jacobians of a fixed cyclic orbit (``along[0]`` must be the base).  For
    flows it is a time, integrated in ceil(t/h) RK4 steps.
    """
    if reorth_every < 1:
        raise ValueError("reorth_every must be a positive count")
    if sys.is_flow:
        return _evolve_frame_flow(sys, fs, float(t_or_steps), int(reorth_every), h)
    return _evolve_frame_map(sys, fs, int(t_or_steps), int(reorth_every), along)


def _gs_plain(X):
    """Gram-Schmidt of one small (d, k) frame on Python floats; same contract as gram_schmidt."""
    if X.size > 32:
        return gram_schmidt(X)
    done, logs = [], []
    for i, v in enumerate(X.T.tolist()):
        orig = math.sqrt(sum(a * a for a in v))
        for _ in range(2):
            for q in done:
                c = sum(a * b for a, b in zip(q, v))
                v = [a - c * b for a, b in zip(v, q)]
        r = math.sqrt(sum(a * a for a in v))
        if not r > DEGENERACY * orig:
            raise DegenerateFrameError(i, r / orig if orig > 0 else 0.0)
        done.append([a / r for a in v])
        logs.append(math.log(r))
    return np.array(done).T, np.array(logs)


def _evolve_frame_map(sys, fs, steps, reorth, along):
    w = np.array(fs.base, dtype=float)
    X = np.array(fs.columns, dtype=float)
    logs = np.array(fs.log_growth, dtype=float)
    ev, red = sys.evaluate, sys.reduce
    M = sys.matrix
    jac = sys.jacobian if M is None else (lambda _w: M)
    if along is not None:
        along = np.asarray(along, dtype=float)
        m = len(along)
    since = 0
    for step in range(steps):
        if along is None:
            X = jac(w) @ X
            w = red(ev(w))
        else:
            X = jac(along[step % m]) @ X
            w = along[(step + 1) % m]
        since += 1
        if since == reorth or step == steps - 1:
            try:
                X, lg = _gs_plain(X)
            except DegenerateFrameError as exc:
                raise DegenerateFrameError(exc.column, exc.norm, fs.elapsed + step + 1) from None
            logs += lg
            since = 0
    if not np.all(np.isfinite(w)) or not np.all(np.isfinite(X)):
        raise NonFiniteStateError("frame evolution produced non-finite values")
    return FrameState(w, X, logs, fs.elapsed + steps)


def _evolve_frame_flow(sys, fs, t, reorth, h):
    w = np.array(fs.base, dtype=float)
    X = np.array(fs.columns, dtype=float)
    logs = np.array(fs.log_growth, dtype=float)
    nsteps = step_count(t, h)
    if nsteps == 0:
        return fs
    dt = t / nsteps
    done = 0
    while done < nsteps:
        chunk = min(reorth, nsteps - done)
        # h slightly above dt so advance_flow takes exactly `chunk` steps of size dt
        w, X = advance_flow(sys, w, X, chunk * dt, abs(dt) * (1 + 1e-12))
        X = project_frame(sys.velocity(w), X)
        done += chunk
        try:
            X, lg = _gs_plain(X)
        except DegenerateFrameError as exc:
            raise DegenerateFrameError(exc.column, exc.norm, fs.elapsed + done * dt) from None
        logs += lg
    return FrameState(w, X, logs, fs.elapsed + t)


def _require_flow(sys):
    if not sys.is_flow:
        raise TypeError("qualitative rates are defined for flows")


def qualitative_rate(sys, fs: FrameState, i: int) -> RateSample:
    """Instantaneous log-growth rate of the i-th Gram-Schmidt column (0-based).

    Computed as <u_i, P S'(w) P u_i> with P the orthogonal projection onto the
    complement of span{S(w), u_0, ..., u_{i-1}}.
    """
    _require_flow(sys)
    w = np.asarray(fs.base, dtype=float)
    S = sys.velocity(w)
    if np.linalg.norm(S) < SINGULAR_THRESHOLD:
        raise SingularFieldError(w, float(np.linalg.norm(S)))
    span = np.column_stack([S] + [fs.columns[:, j] for j in range(i)])
    B, _ = np.linalg.qr(span)
    P = np.eye(len(w)) - B @ B.T
    u = fs.columns[:, i]
    value = float(u @ P @ sys.generator(w) @ P @ u)
    return RateSample(w, i, value)


def qualitative_rates(sys, fs: FrameState) -> np.ndarray:
    return np.array([qualitative_rate(sys, fs, i).value for i in range(fs.k)])


def unit_rate(sys, w, x):
    """Rate for the unit transversal bundle, vectorized: <u, S'(w) u> with u = Px/|Px|."""
    _require_flow(sys)
    w = np.asarray(w, dtype=float)
    u = transversal_project(sys.velocity(w), x)
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    return np.einsum("...i,...ij,...j->...", u, sys.generator(w), u)


def transversal_growth(sys, w, x, T, h=DEFAULT_STEP, return_rates=False):
    """Log growth of |Psi_T x| for unit transversal ``x`` and the trapezoid integral of the rate.

    Both are returned unnormalized (divide by T for averages).  Vectorized over
    leading axes of ``w`` and ``x``.  With ``return_rates`` the rate at every
    integrator node is returned as a third value, shape ``(N+1, ...)``.
    """
    _require_flow(sys)
    w = np.array(w, dtype=float)
    x = transversal_project(sys.velocity(w), np.asarray(x, dtype=float))
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    nsteps = step_count(T, h)
    dt = T / nsteps if nsteps else 0.0
    r = unit_rate(sys, w, x)
    rates = [r] if return_rates else None
    log_norm = np.zeros(np.shape(r))
    integral = np.zeros(np.shape(r))
    for _ in range(nsteps):
        w, X = advance_flow(sys, w, x[..., None], dt, abs(dt) * (1 + 1e-12))
        xp = transversal_project(sys.velocity(w), X[..., 0])
        nrm = np.linalg.norm(xp, axis=-1)
        log_norm = log_norm + np.log(nrm)
        x = xp / nrm[..., None]
        r_new = np.einsum("...i,...ij,...j->...", x, sys.generator(w), x)
        integral = integral + 0.5 * dt * (r + r_new)
        r = r_new
        if return_rates:
            rates.append(r)
    if return_rates:
        return log_norm, integral, np.array(rates)
    return log_norm, integral
