import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frameflow.dynamics import (
    SystemSpec,
    constant_flow,
    distance,
    evolve,
    evolve_flow,
    evolve_tangent,
    get_system,
    jacobian_error,
    linear_flow,
    load_system_json,
    reduce_torus,
    suspend,
    trajectory,
)
from frameflow.errors import BackwardUnavailableError, NonFiniteStateError, SingularFieldError

from oracles import CAT, tangent_flow_ivp


def test_constant_field_translates():
    sys = constant_flow((1.0, 0.5, -2.0))
    w = evolve_flow(sys, [0.1, 0.2, 0.3], 2.0)
    assert np.allclose(w, [2.1, 1.2, -3.7], atol=1e-12)


def test_exponential_field():
    sys = linear_flow(np.eye(2))
    w = evolve_flow(sys, [1.0, 0.0], 1.0)
    assert abs(w[0] - math.e) < 1e-8 and abs(w[1]) < 1e-15


def test_zero_time_is_identity(cat):
    rot = get_system("rotation-flow")
    w = np.array([0.7, 0.1, 0.2])
    assert np.array_equal(evolve_flow(rot, w, 0.0), w)
    w1, x1 = evolve_tangent(rot, w, [0.0, 1.0, 0.0], 0.0)
    assert np.array_equal(w1, w) and np.array_equal(x1, [0.0, 1.0, 0.0])
    w1, x1 = evolve_tangent(cat, [0.3, 0.4], [1.0, 0.0], n=0)
    assert np.array_equal(w1, [0.3, 0.4]) and np.array_equal(x1, [1.0, 0.0])


def test_rotation_tangent_quarter_turn():
    sys = linear_flow([[0.0, 1.0], [-1.0, 0.0]])
    _, x = evolve_tangent(sys, [1.0, 0.0], [1.0, 0.0], math.pi / 2)
    assert np.allclose(x, [0.0, -1.0], atol=1e-8)


def test_cat_one_step(cat):
    w = np.array([0.3, 0.9])
    w1, x1 = evolve_tangent(cat, w, [1.0, 0.0], n=1)
    assert np.allclose(w1, np.mod(CAT @ w, 1.0), atol=1e-15)
    assert np.array_equal(x1, [2.0, 1.0])


def test_negative_time_reverses_flow():
    rot = get_system("rotation-flow")
    w = np.array([0.9, 0.3, 0.1])
    back = evolve_flow(rot, evolve_flow(rot, w, 1.5), -1.5)
    assert np.allclose(back, w, atol=1e-10)


def test_singular_field_rejected():
    sys = linear_flow(np.eye(3))
    with pytest.raises(SingularFieldError) as exc:
        evolve_flow(sys, [0.0, 0.0, 0.0], 1.0)
    assert np.allclose(exc.value.state, 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_state_rejected():
    sys = linear_flow(np.eye(2) * 800.0)
    with pytest.raises(NonFiniteStateError):
        evolve_flow(sys, [1.0, 1.0], 2.0, h=0.01)


def test_backward_map_needs_inverse():
    g = SystemSpec("noinv", "map", 1, lambda w: 2 * np.asarray(w), lambda w: np.full(np.shape(w) + (1,), 2.0))
    with pytest.raises(BackwardUnavailableError):
        evolve(g, [0.5], -1)


def test_backward_cat_uses_inverse(cat):
    w = np.array([0.123, 0.456])
    assert np.allclose(evolve(cat, evolve(cat, w, 5), -5), w, atol=1e-12)


def test_cat_perturbed_inverse_round_trip(rng):
    g = get_system("cat-perturbed", eps=0.05)
    w = rng.random((50, 2))
    back = g.inverse.reduce(g.inverse.evaluate(g.reduce(g.evaluate(w))))
    assert np.max(distance(back, w, "torus")) < 1e-13


def test_reduce_torus_never_returns_one():
    assert reduce_torus(np.array([-1e-17]))[0] == 0.0


def test_trajectory_steps_match_evolution(cat):
    tr = trajectory(cat, [0.2, 0.7], 20)
    assert np.all(np.diff(tr.times) > 0)
    for k in range(20):
        assert np.allclose(tr.states[k + 1], reduce_torus(CAT @ tr.states[k]), atol=1e-12)
    rot = get_system("rotation-flow")
    tf = trajectory(rot, [0.8, 0.0, 0.1], 0.05, h=0.01)
    assert len(tf) == 6 and tf.step == pytest.approx(0.01)
    assert np.allclose(tf.states[3], evolve_flow(rot, tf.states[2], 0.01, h=0.01), atol=1e-14)


@pytest.mark.parametrize("name", ["rotation-flow", "cat-perturbed"])
def test_flow_and_chain_properties(name, rng):
    sys = get_system(name)
    w = sys.sample_state(rng)
    if sys.is_flow:
        s, t = 0.7, 1.3
        a = evolve_flow(sys, evolve_flow(sys, w, s), t)
        assert np.allclose(a, evolve_flow(sys, w, s + t), atol=1e-6)
    else:
        x = rng.standard_normal(2)
        w1, x1 = evolve_tangent(sys, w, x, n=3)
        w2, x2 = evolve_tangent(sys, w1, x1, n=4)
        w3, x3 = evolve_tangent(sys, w, x, n=7)
        assert np.allclose(w2, w3, atol=1e-12)
        assert np.allclose(x2, x3, rtol=1e-9)


def test_rotation_tangent_against_adaptive_solver(rng):
    rot = get_system("rotation-flow")
    for _ in range(5):
        w = rot.sample_state(rng)
        x = rng.standard_normal(3)
        w1, x1 = evolve_tangent(rot, w, x, 2.0)
        w_ref, x_ref = tangent_flow_ivp(rot.evaluate, rot.jacobian, w, x, 2.0)
        assert np.allclose(w1, w_ref, atol=1e-9)
        assert np.allclose(x1, x_ref, atol=1e-8)


@pytest.mark.parametrize("name", ["cat-perturbed", "rotation-flow"])
def test_jacobian_matches_central_differences(name):
    sys = get_system(name)
    rng = np.random.default_rng(0)
    for _ in range(100):
        w = sys.sample_state(rng)
        e = rng.standard_normal(len(w))
        e1 = jacobian_error(sys, w, e, 1e-3)
        e2 = jacobian_error(sys, w, e, 5e-4)
        assert e1 < 1e-4
        # second-order: halving h quarters the error unless it is at rounding level
        assert e2 <= 0.3 * e1 + 1e-10


def test_suspension_return_map(cat):
    sus = suspend(cat, 1.0)
    w = np.array([0.3, 0.6, 0.0])
    w1, X = evolve_tangent(sus, w, np.eye(3), 1.0)
    assert np.allclose(w1[:2], np.mod(CAT @ w[:2], 1.0), atol=1e-12)
    assert abs(w1[2]) < 1e-12 or abs(w1[2] - 1.0) < 1e-12
    assert np.allclose(X[:2, :2], CAT, atol=1e-9)


def test_identity_suspension_is_periodic():
    sus = suspend(get_system("diag:1,1"), 1.0)
    w = np.array([0.2, -0.4, 0.25])
    assert np.allclose(evolve_flow(sus, w, 1.0), w, atol=1e-12)
    assert np.linalg.norm(sus.velocity(w)) >= 1.0


def test_suspension_roof_scales_return_time(cat):
    sus = suspend(cat, 2.5)
    w = evolve_flow(sus, [0.1, 0.2, 0.0], 2.5)
    assert np.allclose(w[:2], np.mod(CAT @ [0.1, 0.2], 1.0), atol=1e-12)


def test_json_expression_system(tmp_path):
    doc = {
        "kind": "map",
        "dimension": 2,
        "geometry": "torus",
        "name": "shear",
        "parameters": {"k": 0.1},
        "expression-table": ["2*w0 + w1 + k*sin(2*pi*w0)", "w0 + w1"],
        "inverse": ["w0 - w1 - k*sin(2*pi*(w0 - w1))", "2*w1 - w0 + k*sin(2*pi*(w0 - w1))"],
    }
    path = tmp_path / "sys.json"
    import json

    path.write_text(json.dumps(doc))
    sys = get_system(str(path))
    ref = get_system("cat-perturbed", eps=0.1)
    w = np.array([[0.3, 0.8], [0.05, 0.5]])
    assert np.allclose(sys.evaluate(w), ref.evaluate(w), atol=1e-14)
    assert np.allclose(sys.jacobian(w), ref.jacobian(w), atol=1e-13)
    assert sys.inverse is not None


def test_json_matrix_flow():
    sys = load_system_json({"kind": "flow", "dimension": 1, "matrix": [[0, 1], [-1, 0]]})
    assert sys.is_flow and sys.dimension == 1 and sys.ambient_dim == 2


def test_unknown_system():
    with pytest.raises(ValueError):
        get_system("no-such-system")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_torus_distance_axioms(a, b):
    d = distance(a, b, "torus")
    assert 0 <= d <= math.sqrt(2) / 2 + 1e-12
    assert d == pytest.approx(distance(b, a, "torus"), abs=1e-12)
    assert distance(a, np.add(a, [3, -2]), "torus") < 1e-9
