import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frameflow.dynamics import SystemSpec, constant_flow, get_system, linear_map, suspend
from frameflow.errors import DegenerateFrameError, SingularFieldError
from frameflow.frames import (
    evolve_frame,
    frame_errors,
    gram_schmidt,
    initial_frame,
    qualitative_rate,
    random_frame,
    transversal_growth,
    transversal_project,
    unit_rate,
)

from oracles import CAT_EXPONENT, fd_rate_ivp, fd_rate_suspension, qr_frame


def test_projection_examples():
    assert np.allclose(transversal_project([1, 0, 0], [2, 3, 4]), [0, 3, 4])
    assert np.allclose(transversal_project([1, 2, 2], [2, 4, 4]), 0.0)
    s = np.array([1.0, 1.0]) / math.sqrt(2)
    assert np.allclose(transversal_project(s, [1.0, 0.0]), [0.5, -0.5], atol=1e-15)
    with pytest.raises(SingularFieldError):
        transversal_project([0.0, 0.0], [1.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
)
def test_projection_idempotent_and_orthogonal(S, v):
    p = transversal_project(S, v)
    assert np.allclose(transversal_project(S, p), p, atol=1e-12 * (1 + np.linalg.norm(v)))
    assert abs(np.dot(p, S)) <= 1e-12 * np.linalg.norm(S) * (1 + np.linalg.norm(v))


def test_gram_schmidt_examples():
    Q, logs = gram_schmidt([(1, 0), (1, 1)])
    assert np.allclose(Q, np.eye(2)) and np.allclose(logs, 0.0)
    Q, logs = gram_schmidt([(2, 0), (0, 3)])
    assert np.allclose(Q, np.eye(2)) and np.allclose(logs, [math.log(2), math.log(3)])
    Q, logs = gram_schmidt([(1, 1), (1, 0)])
    r = 1 / math.sqrt(2)
    assert np.allclose(Q[:, 0], [r, r]) and np.allclose(Q[:, 1], [r, -r])
    assert np.allclose(logs, [math.log(math.sqrt(2)), math.log(r)])


def test_gram_schmidt_degenerate_names_column():
    with pytest.raises(DegenerateFrameError) as exc:
        gram_schmidt([(1, 2, 3), (2, 4, 6), (0, 0, 1)])
    assert exc.value.column == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_gram_schmidt_matches_qr(d, seed):
    X = np.random.default_rng(seed).standard_normal((d, d))
    Q, logs = gram_schmidt(X)
    Qr, logr = qr_frame(X)
    assert np.allclose(Q, Qr, atol=1e-9)
    assert np.allclose(logs, logr, atol=1e-9)


def test_diagonal_cocycle_log_growth():
    g = get_system("diag:2,0.5")
    fs = initial_frame(g, [0.0, 0.0], np.eye(2))
    out = evolve_frame(g, fs, 10)
    assert np.allclose(out.log_growth, [10 * math.log(2), -10 * math.log(2)], atol=1e-13)
    assert out.elapsed == 10


def test_cat_frame_exponents(cat):
    fs = random_frame(cat, [0.1, 0.7], 2, np.random.default_rng(1))
    out = evolve_frame(cat, fs, 10_000)
    assert np.allclose(out.log_growth / 1e4, [CAT_EXPONENT, -CAT_EXPONENT], atol=1e-3)
    assert frame_errors(cat, out)[0] < 1e-10


def test_reorthonormalization_cadence_invariance(cat):
    fs = random_frame(cat, [0.31, 0.52], 2, np.random.default_rng(2))
    rates = [evolve_frame(cat, fs, 10_000, r).exponents() for r in (1, 5, 10)]
    assert np.max(np.abs(rates[0] - rates[1])) < 1e-6
    assert np.max(np.abs(rates[0] - rates[2])) < 1e-6


def test_suspension_frame_exponents(cat):
    sus = suspend(cat)
    fs = random_frame(sus, [0.2, 0.4, 0.0], 2, np.random.default_rng(3))
    out = evolve_frame(sus, fs, 1000.0, 100)
    assert np.allclose(out.exponents(), [CAT_EXPONENT, -CAT_EXPONENT], atol=5e-3)
    ortho, trans = frame_errors(sus, out)
    assert ortho < 1e-10 and trans < 1e-10


def test_flow_frame_stays_transversal():
    rot = get_system("rotation-flow")
    fs = random_frame(rot, [1.1, 0.2, 0.3], 2, np.random.default_rng(4))
    for _ in range(5):
        fs = evolve_frame(rot, fs, 0.5, 7)
        ortho, trans = frame_errors(rot, fs)
        assert ortho < 1e-10 and trans < 1e-10


def test_degeneracy_reports_elapsed():
    # second column is squashed onto the first in one step
    g = linear_map([[1.0, 1.0], [0.0, 1e-13]])
    fs = initial_frame(g, [0.0, 0.0], np.eye(2))
    with pytest.raises(DegenerateFrameError) as exc:
        evolve_frame(g, fs, 3)
    assert exc.value.column == 1 and exc.value.elapsed == 1


def test_constant_field_has_zero_rate():
    sys = constant_flow()
    fs = initial_frame(sys, [0.0, 0.0, 0.0], [[0, 0], [1, 0], [0, 1]])
    assert qualitative_rate(sys, fs, 0).value == 0.0
    assert qualitative_rate(sys, fs, 1).value == 0.0


def test_shear_field_rate():
    a = 0.37
    sys = SystemSpec(
        "shear", "flow", 1,
        lambda w: np.stack([np.ones(np.shape(w)[:-1]), a * np.asarray(w)[..., 1]], axis=-1),
        lambda w: np.broadcast_to(np.array([[0.0, 0.0], [0.0, a]]), np.shape(w)[:-1] + (2, 2)),
    )
    w = np.array([0.3, 0.0])
    fs = initial_frame(sys, w, [0.0, 1.0])
    assert qualitative_rate(sys, fs, 0).value == pytest.approx(a, abs=1e-14)
    fd = fd_rate_ivp(sys.evaluate, sys.jacobian, w, np.array([0.0, 1.0]), 1e-3)
    assert fd == pytest.approx(a, abs=1e-6)


def test_suspension_diag_rate_along_base_direction():
    sus = get_system("suspension:diag:2,0.5")
    fs = initial_frame(sus, [0.1, 0.2, 0.4], [[1.0], [0.0], [0.0]])
    assert qualitative_rate(sus, fs, 0).value == pytest.approx(math.log(2), abs=1e-12)
    assert fd_rate_suspension(np.diag([2.0, 0.5]), 1.0, None, np.array([1.0, 0.0]), 1e-3) == pytest.approx(math.log(2), abs=1e-9)


def test_second_column_rate_uses_reduced_projection():
    # for a linear field the rates of a full transversal frame sum to the transversal trace
    M = np.array([[0.0, 0.0, 0.0], [0.0, -1.0, 2.0], [0.0, 0.5, -3.0]])
    sys = SystemSpec(
        "affine", "flow", 2,
        lambda w: np.asarray(w) @ M.T + np.array([1.0, 0.0, 0.0]),
        lambda w: np.broadcast_to(M, np.shape(w)[:-1] + (3, 3)),
    )
    fs = random_frame(sys, [0.0, 0.2, 0.1], 2, np.random.default_rng(0))
    S = sys.velocity(fs.base)
    Q, _ = np.linalg.qr(np.column_stack([S, np.eye(3)]))
    B = Q[:, 1:3]
    total = qualitative_rate(sys, fs, 0).value + qualitative_rate(sys, fs, 1).value
    assert total == pytest.approx(np.trace(B.T @ M @ B), abs=1e-12)


@pytest.mark.parametrize("name", ["rotation-flow", "suspension:cat"])
def test_growth_identity(name, rng):
    sys = get_system(name)
    w = np.array([sys.sample_state(rng) for _ in range(5)])
    x = rng.standard_normal(w.shape)
    ln, integral = transversal_growth(sys, w, x, 10.0)
    assert np.max(np.abs(ln - integral)) / 10.0 < 1e-6


def test_growth_identity_is_second_order():
    rot = get_system("rotation-flow")
    w = np.array([[0.5, 0.9, 0.3]])
    x = np.array([[0.0, 0.3, 1.0]])
    errs = []
    for h in (0.04, 0.02):
        ln, integral = transversal_growth(rot, w, x, 2.0, h)
        errs.append(abs(ln - integral)[0])
    assert errs[1] < errs[0] / 3


def test_unit_rate_vectorized_matches_frame_rate(rng):
    rot = get_system("rotation-flow")
    w = rot.sample_state(rng)
    x = rng.standard_normal(3)
    fs = initial_frame(rot, w, x)
    assert float(unit_rate(rot, w, x)) == pytest.approx(qualitative_rate(rot, fs, 0).value, abs=1e-13)


def test_suspension_diag_rate_is_second_order_in_fd(rng):
    sus = get_system("suspension:diag:2,0.5")
    D = np.diag([2.0, 0.5])
    ratios = []
    for _ in range(100):
        w = sus.sample_state(rng)
        v = rng.standard_normal(2)
        exact = qualitative_rate(sus, initial_frame(sus, w, np.append(v, 0.0)), 0).value
        e1 = abs(fd_rate_suspension(D, 1.0, w[:2], v, 1e-2) - exact)
        e2 = abs(fd_rate_suspension(D, 1.0, w[:2], v, 5e-3) - exact)
        ratios.append(e1 / e2)
    assert np.all((np.array(ratios) > 3.5) & (np.array(ratios) < 4.5))
