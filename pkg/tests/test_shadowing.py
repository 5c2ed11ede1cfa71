import math
from fractions import Fraction

import numpy as np
import pytest

from frameflow.dynamics import distance, get_system, load_system_json, trajectory
from frameflow.errors import NonHyperbolicPeriodError
from frameflow.shadowing import (
    RecurrentSegment,
    cycle_exponents,
    enumerate_periodic_toral,
    enumerate_up_to,
    find_recurrences,
    refine_periodic,
    verify_shadow,
)

from oracles import CAT, CAT_EXPONENT, brute_periodic_points, pigeonhole_return


@pytest.mark.parametrize("m,count", [(1, 1), (2, 5), (3, 16)])
def test_cat_point_counts(m, count):
    orbits = enumerate_periodic_toral(CAT, m)
    pts = {p for o in orbits for p in o.exact_points}
    assert len(pts) == count
    N, hits = brute_periodic_points(CAT, m)
    assert N == count
    assert pts == {tuple(Fraction(c, N) for c in h) for h in hits}


def test_counts_for_other_automorphism():
    A = [[3, 1], [2, 1]]
    for m in (1, 2, 3):
        N, hits = brute_periodic_points(A, m)
        assert sum(len(o.points) for o in enumerate_periodic_toral(A, m)) == N == len(hits)


def test_enumerated_orbits_are_exact_cycles():
    for o in enumerate_periodic_toral(CAT, 4):
        assert o.verified and o.residual < 1e-14
        assert np.allclose(o.exponents, [-CAT_EXPONENT, CAT_EXPONENT], atol=1e-12)
        assert o.index == 1


def test_enumerate_up_to_dedupes():
    orbits, counts = enumerate_up_to(CAT, 4)
    assert counts == {1: 1, 2: 5, 3: 16, 4: 45}
    periods = sorted(o.period for o in orbits)
    # minimal periods: 1 fixed point, 2 two-cycles, 5 three-cycles, 10 four-cycles
    assert periods.count(1) == 1 and periods.count(2) == 2
    assert periods.count(3) == 5 and periods.count(4) == 10


def test_non_hyperbolic_period_rejected():
    with pytest.raises(NonHyperbolicPeriodError):
        enumerate_periodic_toral([[0, -1], [1, 0]], 4)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_refine_recovers_exact_points(cat, m):
    rng = np.random.default_rng(m)
    for o in enumerate_periodic_toral(CAT, m):
        seed = o.point + rng.uniform(-1e-3, 1e-3, 2)
        got = refine_periodic(cat, RecurrentSegment(seed, o.period, 1e-3, geometry="torus"))
        assert got.verified
        assert distance(got.point, o.point, "torus") < 1e-10


def test_exact_seed_needs_no_iterations(cat):
    o = enumerate_periodic_toral(CAT, 1)[0]
    got = refine_periodic(cat, RecurrentSegment(o.point, 1, 0.0, geometry="torus"))
    assert got.iterations == 0 and got.residual < 1e-15


def test_refine_reports_minimal_period(cat):
    # a seed near the fixed point refined as a 2-cycle is still the fixed point
    got = refine_periodic(cat, RecurrentSegment(np.array([1e-4, -2e-4]), 2, 1e-3, geometry="torus"))
    assert got.period == 1


def test_refine_nonlinear_map():
    g = get_system("cat-perturbed", eps=0.05)
    got = refine_periodic(g, RecurrentSegment(np.array([0.01, -0.01]), 1, 0.02, geometry="torus"))
    assert got.verified and distance(got.point, [0.0, 0.0], "torus") < 1e-12
    # fixed point at the origin: multipliers of the Jacobian there
    J = np.array([[2 + 0.1 * math.pi, 1.0], [1.0, 1.0]])
    assert np.allclose(got.multipliers, np.sort(np.abs(np.linalg.eigvals(J))), atol=1e-10)


def test_cycle_exponents_product():
    Js = [np.diag([2.0, 0.5]), np.diag([3.0, 0.25])]
    exps, mono = cycle_exponents(Js, 2)
    assert np.allclose(exps, np.sort([math.log(0.125) / 2, math.log(6.0) / 2]))
    assert np.allclose(mono, np.diag([6.0, 0.125]))


def test_flow_refinement_finds_circle():
    rot = get_system("rotation-flow")
    seg = RecurrentSegment(np.array([1.05, 0.02, 0.01]), 6.2, 0.05)
    orb = refine_periodic(rot, seg, h=0.01)
    assert orb.verified
    assert orb.period == pytest.approx(2 * math.pi, abs=1e-6)
    assert np.allclose(orb.exponents, [-2.0, -1.0], atol=1e-4)


def test_pigeonhole_recurrence_on_rotation():
    theta = math.sqrt(2) - 1
    alpha = 0.1
    rot = load_system_json(
        {"kind": "map", "dimension": 1, "geometry": "torus", "expression-table": [f"w0 + {theta!r}"]}
    )
    tr = trajectory(rot, [0.0], 20)
    segs = find_recurrences(tr, alpha)
    assert segs
    first = min(s.span for s in segs)
    assert first <= 10  # pigeonhole bound ceil(1/alpha)
    assert first == pigeonhole_return(theta, alpha, 21)


def test_cat_recurrences_exist(cat):
    tr = trajectory(cat, [0.1234567, 0.7654321], 10_000)
    segs = find_recurrences(tr, 1e-2)
    assert len(segs) >= 1
    for s in segs[:50]:
        assert s.gap < 1e-2
        assert distance(tr.states[s.start_index], tr.states[s.end_index], "torus") == pytest.approx(s.gap)


def test_shadowing_check(cat):
    o = [o for o in enumerate_periodic_toral(CAT, 3) if o.period == 3][0]
    exact = trajectory(cat, o.point, 30)
    assert verify_shadow(exact, o, 1e-9)
    off = trajectory(cat, o.point + np.array([1e-6, 0.0]), 30)
    report = verify_shadow(off, o, 1e-3)
    assert not report and report.max_offset > 1e-3
