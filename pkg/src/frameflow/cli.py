"""Command-line front end.

Exit codes: 0 success (or certified), 2 configuration error, 3 numerical
failure, 4 certificate refuted, 5 certificate inconclusive.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import sys as _sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import get_system, suspend, trajectory
from .errors import FrameflowError, InconclusiveSplitError
from .hyperbolicity import (
    ZERO_THRESHOLD,
    certify_uniform_contraction,
    check_index_constancy,
    extremal_exponent_bounds,
    lyapunov_spectrum,
    oseledets_splitting,
    stable_bundle,
)
from .measures import bl_distance, empirical_measure, periodic_measure
from .shadowing import enumerate_up_to, find_recurrences, refine_periodic

log = logging.getLogger("frameflow")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_REFUTED, EXIT_INCONCLUSIVE = 0, 2, 3, 4, 5

COMMON_DEFAULTS = {"seed": 0, "format": "both", "output": None, "h": 1e-3, "eps": 0.01, "roof": 1.0, "state": None}
DEFAULTS = {
    "spectrum": {"steps": 10_000, "time": 100.0, "k": None, "reorth_every": None, "transient": None},
    "suspend-spectrum": {"time": 1000.0, "k": None, "reorth_every": 100},
    "periodic": {"max_period": 3, "exact": False, "alpha": 0.01, "steps": 100_000, "limit": 20},
    "certify": {"sigma": None, "t0": 10.0, "tmax": 1000.0, "stride": 10.0, "samples": 4, "zero_threshold": ZERO_THRESHOLD},
    "measures": {"steps": 100_000, "alphas": "0.3,0.2,0.12,0.08,0.05"},
}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="frameflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"frameflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        # --system may also come from --config, so its presence is checked after merging
        sp.add_argument("--system", help="registry name, diag:<d1,...>, suspension:<map> or JSON path")
        sp.add_argument("--config", help="JSON file mirroring the flags; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output", help="directory for report files (stdout only if omitted)")
        sp.add_argument("--format", choices=["csv", "json", "both"])
        sp.add_argument("--h", type=float, help="integration step for flows")
        sp.add_argument("--eps", type=float, help="perturbation strength for cat-perturbed")
        sp.add_argument("--roof", type=float, help="roof height for suspensions")
        sp.add_argument("--state", help="initial state as comma-separated coordinates")
        sp.set_defaults(_parser=sp)

    sp = sub.add_parser("spectrum", help="Lyapunov spectrum from a random frame")
    common(sp)
    sp.add_argument("--steps", type=int, help="map iterates")
    sp.add_argument("--time", type=float, help="flow time horizon")
    sp.add_argument("--k", type=int, help="number of frame columns")
    sp.add_argument("--reorth-every", dest="reorth_every", type=int)
    sp.add_argument("--transient", type=int)

    sp = sub.add_parser("suspend-spectrum", help="transversal spectrum of the suspension of a map")
    common(sp)
    sp.add_argument("--time", type=float)
    sp.add_argument("--k", type=int)
    sp.add_argument("--reorth-every", dest="reorth_every", type=int)

    sp = sub.add_parser("periodic", help="periodic orbits, exponent bounds and index constancy")
    common(sp)
    sp.add_argument("--max-period", dest="max_period", type=int)
    sp.add_argument("--exact", action="store_const", const=True, help="exact enumeration for integer toral maps")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--limit", type=int, help="maximum number of recurrences to refine")

    sp = sub.add_parser("certify", help="window certificate for the stable and unstable bundles")
    common(sp)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--t0", type=float)
    sp.add_argument("--tmax", type=float)
    sp.add_argument("--stride", type=float)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--zero-threshold", dest="zero_threshold", type=float)

    sp = sub.add_parser("measures", help="bounded-Lipschitz distance of periodic to empirical measures")
    common(sp)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--alphas", help="comma-separated recurrence thresholds")
    return p


def resolve_config(args) -> dict:
    """Merge defaults, the optional JSON config file and explicit flags."""
    cfg = dict(COMMON_DEFAULTS)
    cfg.update(DEFAULTS[args.command])
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(doc) - set(cfg) - {"system"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    for key, val in vars(args).items():
        if key in ("command", "config", "_parser") or val is None:
            continue
        cfg[key] = val
    if not cfg.get("system"):
        args._parser.error("the following arguments are required: --system (flag or config key)")
    cfg["command"] = args.command
    _validate(cfg)
    return cfg


def _validate(cfg):
    def positive(key, integer=False):
        v = cfg.get(key)
        if v is None:
            return
        if integer and (not isinstance(v, int) or isinstance(v, bool)):
            raise ConfigError(f"{key} must be an integer")
        if not v > 0:
            raise ConfigError(f"{key} must be positive, got {v}")

    for key in ("steps", "max_period", "reorth_every", "k", "samples", "limit"):
        positive(key, integer=True)
    for key in ("time", "h", "roof", "alpha", "sigma", "t0", "tmax", "stride", "zero_threshold"):
        positive(key)
    if cfg.get("transient") is not None and cfg["transient"] < 0:
        raise ConfigError("transient must be nonnegative")
    if cfg["command"] == "certify" and not cfg["t0"] < cfg["tmax"]:
        raise ConfigError("need t0 < tmax")
    if cfg["format"] not in ("csv", "json", "both"):
        raise ConfigError("format must be csv, json or both")
    if cfg["command"] == "measures":
        try:
            alphas = [float(a) for a in str(cfg["alphas"]).split(",") if a.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad alphas {cfg['alphas']!r}") from exc
        if not alphas or min(alphas) <= 0:
            raise ConfigError("alphas must be positive")


def _system(cfg):
    try:
        return get_system(cfg["system"], eps=cfg["eps"], roof=cfg["roof"])
    except (ValueError, KeyError, OSError, TypeError) as exc:
        raise ConfigError(f"system {cfg['system']!r}: {exc}") from exc


def _initial_state(sys, cfg):
    if cfg.get("state"):
        try:
            w = np.array([float(v) for v in str(cfg["state"]).split(",")])
        except ValueError as exc:
            raise ConfigError(f"bad state {cfg['state']!r}") from exc
        if len(w) != sys.ambient_dim:
            raise ConfigError(f"state needs {sys.ambient_dim} coordinates")
        return w
    return sys.sample_state(np.random.default_rng(cfg["seed"]))


# ---------------------------------------------------------------------------
# commands; each returns (exit code, payload dict, csv header, csv rows)


def cmd_spectrum(cfg):
    sys = _system(cfg)
    w = _initial_state(sys, cfg)
    T = cfg["time"] if sys.is_flow else cfg["steps"]
    reorth = cfg["reorth_every"] or (10 if sys.is_flow else 1)
    est = lyapunov_spectrum(sys, w, cfg["k"], T, h=cfg["h"], reorth_every=reorth,
                            transient=cfg["transient"], seed=cfg["seed"])
    payload = {"spectrum": est.to_dict(), "initial_state": w.tolist()}
    return EXIT_OK, payload, ["index", "exponent", "tail_drift"], est.csv_rows()


def cmd_suspend_spectrum(cfg):
    base = _system(cfg)
    if base.is_flow:
        raise ConfigError("suspend-spectrum needs a discrete map")
    sys = suspend(base, cfg["roof"])
    w = _initial_state(sys, cfg)
    est = lyapunov_spectrum(sys, w, cfg["k"], cfg["time"], h=cfg["h"], reorth_every=cfg["reorth_every"], seed=cfg["seed"])
    base_est = lyapunov_spectrum(base, w[:-1], cfg["k"], int(round(cfg["time"] / cfg["roof"])), seed=cfg["seed"])
    payload = {
        "spectrum": est.to_dict(),
        "base_spectrum": base_est.to_dict(),
        "max_difference": float(np.max(np.abs(est.exponents * cfg["roof"] - base_est.exponents))),
        "initial_state": w.tolist(),
    }
    return EXIT_OK, payload, ["index", "exponent", "tail_drift"], est.csv_rows()


def _orbit_summary(orbits, sys_dim):
    counts = {}
    for o in orbits:
        counts[int(o.period) if float(o.period).is_integer() else float(o.period)] = counts.get(o.period, 0) + 1
    hist = {}
    for o in orbits:
        hist[o.index] = hist.get(o.index, 0) + 1
    bounds = extremal_exponent_bounds(orbits)
    constancy = check_index_constancy(orbits)
    return {
        "orbits_per_period": {str(k): v for k, v in sorted(counts.items())},
        "index_histogram": {str(k): v for k, v in sorted(hist.items())},
        "extremal_bounds": {"smallest_exponent_bound": bounds.smallest_exponent_bound,
                            "largest_exponent_bound": bounds.largest_exponent_bound,
                            "bounded_away_from_zero": bounds.separated},
        "index_constancy": constancy.to_dict(),
    }


def cmd_periodic(cfg):
    sys = _system(cfg)
    rows = []
    if cfg["exact"]:
        if sys.is_flow or sys.matrix is None or sys.geometry != "torus":
            raise ConfigError("--exact needs an integer toral automorphism")
        orbits, counts = enumerate_up_to(np.round(sys.matrix).astype(int), cfg["max_period"])
        extra = {"points_dividing_period": {str(m): c for m, c in counts.items()}}
    else:
        w = _initial_state(sys, cfg)
        # for flows --steps counts integrator steps
        horizon = cfg["steps"] * cfg["h"] if sys.is_flow else cfg["steps"]
        traj = trajectory(sys, w, horizon, cfg["h"])
        max_span = cfg["max_period"] * (getattr(sys, "roof", 1.0) if sys.is_flow else 1)
        segs = find_recurrences(traj, cfg["alpha"], max_span=max_span)
        orbits, failures, seen = [], 0, set()
        for seg in segs[: cfg["limit"]]:
            try:
                orb = refine_periodic(sys, seg, h=cfg["h"])
            except FrameflowError as exc:
                failures += 1
                log.info("refinement from index %d failed: %s", seg.start_index, exc)
                continue
            key = (round(float(orb.period), 6), tuple(np.round(np.sort(np.round(orb.points, 9), axis=0)[0], 8)))
            if orb.verified and key not in seen:
                seen.add(key)
                orbits.append(orb)
        if not orbits:
            raise FrameflowError(f"refine_periodic: no orbit refined from {len(segs)} recurrences")
        extra = {"recurrences": len(segs), "refinement_failures": failures, "initial_state": w.tolist()}
    orbits.sort(key=lambda o: (float(o.period), tuple(o.point)))
    for i, o in enumerate(orbits):
        rows.append((i, o.period, o.index, *[float(e) for e in o.exponents], o.residual))
    payload = {"orbits": [o.to_dict() for o in orbits], "summary": {**_orbit_summary(orbits, sys.dimension), **extra}}
    n = sys.dimension
    header = ["orbit", "period", "index", *[f"exponent_{i}" for i in range(n)], "residual"]
    return EXIT_OK, payload, header, rows


def _bundle_frames(sys, points, zero_threshold, seed):
    """Stable/unstable frames at each point, plus the stable dimension used."""
    n = sys.dimension
    frames, index, lenient = [], None, False
    for x in points:
        try:
            sp = oseledets_splitting(sys, x, seed=seed, zero_threshold=zero_threshold)
            index = sp.stable_frame.shape[1]
            frames.append((sp.stable_frame, sp.unstable_frame))
        except InconclusiveSplitError as exc:
            # count near-zero exponents as stable so neutral directions get tested
            lenient = True
            spec = lyapunov_spectrum(sys, x, n, 2000, seed=seed)
            index = int(np.sum(spec.exponents < zero_threshold))
            log.info("splitting inconclusive at %s (%s); using stable dimension %d", x, exc, index)
            S = stable_bundle(sys, [x], index, seed=seed)[0] if index else np.zeros((n, 0))
            U = stable_bundle(sys.inverse, [x], n - index, seed=seed)[0] if index < n else np.zeros((n, 0))
            frames.append((S, U))
    return frames, index, lenient


def cmd_certify(cfg):
    sys = _system(cfg)
    if sys.is_flow:
        raise ConfigError("certify supports invertible maps; flows are certified through the Python API")
    if sys.inverse is None:
        raise ConfigError(f"{sys.name} has no inverse map")
    rng = np.random.default_rng(cfg["seed"])
    if cfg.get("state"):
        points = [_initial_state(sys, cfg)]
    else:
        points = [sys.sample_state(rng) for _ in range(cfg["samples"])]
    frames, index, lenient = _bundle_frames(sys, points, cfg["zero_threshold"], cfg["seed"])
    sigma = cfg["sigma"]
    if sigma is None:
        spec = lyapunov_spectrum(sys, points[0], None, 10_000, seed=cfg["seed"])
        sigma = 0.9 * abs(float(spec.exponents[0]))
        if not sigma > 0:
            raise ConfigError("cannot derive a default sigma; pass --sigma")
    kw = dict(horizon=2 * cfg["tmax"])
    results = {}
    if index:
        samples = [(x, S[:, 0]) for x, (S, _) in zip(points, frames)]
        results["stable"] = certify_uniform_contraction(sys, samples, sigma, cfg["t0"], cfg["tmax"], cfg["stride"],
                                                        bundle_dim=index, **kw)
    if index < sys.dimension:
        samples = [(x, U[:, 0]) for x, (_, U) in zip(points, frames)]
        results["unstable"] = certify_uniform_contraction(sys.inverse, samples, sigma, cfg["t0"], cfg["tmax"], cfg["stride"],
                                                          bundle_dim=sys.dimension - index, **kw)
    verdicts = [c.verdict for c in results.values()]
    if "refuted" in verdicts:
        verdict, code = "refuted", EXIT_REFUTED
    elif all(v == "certified" for v in verdicts):
        verdict, code = "certified", EXIT_OK
    else:
        verdict, code = "inconclusive", EXIT_INCONCLUSIVE
    expansion_rate = -results["unstable"].worst_window_average if "unstable" in results else None
    if "stable" in results:
        results["stable"].expansion_rate = expansion_rate
    payload = {
        "verdict": verdict,
        "stable_dimension": index,
        "lenient_index": lenient,
        "sigma": sigma,
        "expansion_rate": expansion_rate,
        "sample_states": [x.tolist() for x in points],
        "certificates": {k: c.to_dict() for k, c in results.items()},
    }
    rows = [(k, c.verdict, c.worst_window_average, -c.sigma / 2, c.windows_checked) for k, c in results.items()]
    return code, payload, ["bundle", "verdict", "worst_window_average", "bound", "windows_checked"], rows


def cmd_measures(cfg):
    sys = _system(cfg)
    if sys.is_flow:
        raise ConfigError("measures supports maps")
    alphas = sorted({float(a) for a in str(cfg["alphas"]).split(",") if a.strip()}, reverse=True)
    w = _initial_state(sys, cfg)
    traj = trajectory(sys, w, cfg["steps"])
    rows, used, last_gap = [], set(), math.inf
    for alpha in alphas:
        segs = [s for s in find_recurrences(traj, alpha, start_index=0) if s.gap < min(alpha, last_gap) or s.gap == 0]
        if not segs:
            log.info("no return of the seed within %g", alpha)
            continue
        seg = segs[0]
        if seg.span in used:
            continue
        try:
            orb = refine_periodic(sys, seg)
        except FrameflowError as exc:
            log.info("refinement at alpha=%g failed: %s", alpha, exc)
            continue
        used.add(seg.span)
        last_gap = seg.gap
        d = bl_distance(periodic_measure(orb), empirical_measure(traj, seg.span))
        rows.append((len(rows), alpha, int(orb.period), int(seg.span), float(seg.gap), d))
    if not rows:
        raise FrameflowError("find_recurrences: no recurrence of the seed for any alpha")
    dists = [r[-1] for r in rows]
    trend = all(b <= 1.1 * a + 1e-12 for a, b in zip(dists, dists[1:]))
    payload = {
        "rows": [dict(zip(["level", "alpha", "period", "span", "gap", "bl_distance"], r)) for r in rows],
        "non_increasing_within_10pct": trend,
        "initial_state": w.tolist(),
    }
    return EXIT_OK, payload, ["level", "alpha", "period", "span", "gap", "bl_distance"], rows


COMMANDS = {
    "spectrum": cmd_spectrum,
    "suspend-spectrum": cmd_suspend_spectrum,
    "periodic": cmd_periodic,
    "certify": cmd_certify,
    "measures": cmd_measures,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def render_payload(cfg, payload) -> str:
    doc = {"config": {k: v for k, v in sorted(cfg.items()) if k != "output"}, "version": __version__, "result": payload}
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _configure_logging():
    level = os.environ.get("FRAMEFLOW_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        cfg = resolve_config(args)
        code, payload, header, rows = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"frameflow {args.command}: configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except (FrameflowError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"frameflow {args.command}: numerical failure in {type(exc).__name__}: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC
    text = render_payload(cfg, payload)
    if cfg["output"]:
        out = Path(cfg["output"])
        out.mkdir(parents=True, exist_ok=True)
        stem = args.command
        if cfg["format"] in ("json", "both"):
            (out / f"{stem}.json").write_text(text)
        if cfg["format"] in ("csv", "both"):
            (out / f"{stem}.csv").write_text(render_csv(header, rows))
        meta = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(), "runtime_seconds": time.time() - started,
                "exit_code": code}
        (out / f"{stem}.meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    else:
        _sys.stdout.write(text)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
