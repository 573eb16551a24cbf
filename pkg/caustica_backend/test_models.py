#!/usr/bin/env python3
"""
=============================================================================
TEST MODELS — Exponential maps of the geodesic model zoo
=============================================================================

Closed forms against the variational ODE, the return identity, the sphere's
determinant, the product structure and model parsing.

Usage
-----
  python caustica_backend/test_models.py
  pytest caustica_backend/test_models.py
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from caustica_backend.geodesic_engine import (
    flow_start_error,
    jacobian_agreement,
    return_identity_error,
)
from caustica_backend.models import (
    ConformalModel,
    EuclideanModel,
    GaussianLens,
    LensSpeed,
    MagneticFlow,
    ProductModel,
    SphereModel,
    parse_model,
    stereo,
    stereo_inverse,
)

coords = st.floats(min_value=-1.5, max_value=1.5, allow_nan=False)


def test_parse_model():
    print("\n" + "=" * 70)
    print("TEST: parse_model")
    print("=" * 70)

    circle = parse_model("circle2d")
    assert isinstance(circle, MagneticFlow) and circle.dim == 2 and circle.name == "circle2d"
    magnetic = parse_model("magnetic3d:2")
    assert magnetic.dim == 3 and magnetic.alpha == 2.0 and magnetic.name == "magnetic3d:2"
    assert isinstance(parse_model("sphere"), SphereModel)
    product = parse_model("product")
    assert isinstance(product, ProductModel) and product.dim == 3
    assert isinstance(parse_model("conformal"), ConformalModel)
    assert parse_model("euclidean3d").dim == 3
    with pytest.raises(ValueError, match="unknown model"):
        parse_model("torus")
    with pytest.raises(ValueError):
        MagneticFlow(3, 0.0)
    with pytest.raises(ValueError):
        MagneticFlow(4, 1.0)
    print("✓ all model specs parse; bad ones rejected")


def test_magnetic_closed_form_matches_ode():
    print("\n" + "=" * 70)
    print("TEST: magnetic closed form vs variational ODE")
    print("=" * 70)

    model = parse_model("magnetic3d:1.5")
    p = np.array([0.2, -0.1, 0.3])
    v = np.array([0.9, 0.4, 0.5])
    q, w = model.exp(p, v)
    q_ode, w_ode, _ = model.ode_exp_dexp(p, v)
    assert np.max(np.abs(q - q_ode)) < 1e-8
    assert np.max(np.abs(w - w_ode)) < 1e-8
    err = jacobian_agreement(model, p, v)
    assert err < 1e-7
    print(f"✓ |d exp closed - d exp ODE| = {err:.1e}")


def test_magnetic_dexp_matches_differences():
    print("\n" + "=" * 70)
    print("TEST: magnetic d exp vs central differences")
    print("=" * 70)

    model = parse_model("magnetic3d:2")
    p = np.zeros(3)
    v = np.array([0.8, -0.3, 0.6])
    D = model.dexp(p, v)
    h = 1e-6
    fd = np.stack([(model.exp(p, v + h * e)[0] - model.exp(p, v - h * e)[0]) / (2 * h) for e in np.eye(3)], axis=1)
    assert np.max(np.abs(D - fd)) < 1e-7
    batch = model.dexp_batch(p, np.stack([v, 2 * v]))
    assert np.max(np.abs(batch[0] - D)) < 1e-12
    print("✓ analytic Jacobian matches finite differences")


def test_magnetic_return_identity():
    print("\n" + "=" * 70)
    print("TEST: exp of the reversed flow returns to p")
    print("=" * 70)

    for spec in ("circle2d", "magnetic3d:2"):
        model = parse_model(spec)
        v = np.linspace(0.4, 1.1, model.dim)
        err = return_identity_error(model, np.zeros(model.dim), v)
        assert err < 1e-11
        print(f"✓ {spec}: {err:.1e}")


def test_flow_starts_at_p():
    print("\n" + "=" * 70)
    print("TEST: flow(p, u, 0) = p and initial velocity u")
    print("=" * 70)

    for model in (parse_model("circle2d"), parse_model("conformal")):
        p = model.default_point()
        u = model.unit(p, np.array([1.0, 0.2]))
        pos, vel = flow_start_error(model, p, u)
        assert pos == 0.0
        assert vel < 1e-6
        print(f"✓ {model.name}: velocity error {vel:.1e}")


def test_sphere_closed_form():
    print("\n" + "=" * 70)
    print("TEST: sphere in the stereographic chart")
    print("=" * 70)

    model = SphereModel()
    p = model.default_point()
    theta = model.unit(p, np.array([-1.0, 0.0]))
    det = model.invariant_det(p, 0.5 * np.pi * theta)
    assert abs(det - 2.0 / np.pi) < 1e-8

    q, _ = model.exp(p, np.pi * theta)
    assert np.allclose(q, [-1.0, 0.0], atol=1e-10)

    v = np.array([-0.9, 0.35])
    err = jacobian_agreement(model, p, v)
    assert err < 1e-6
    q_ode, _, _ = model.ode_exp_dexp(p, v)
    assert np.max(np.abs(model.exp(p, v)[0] - q_ode)) < 1e-8
    print(f"✓ det d exp at t=π/2 = {det:.10f}; antipode at t=π; ODE agreement {err:.1e}")


@given(x=coords, y=coords)
@settings(max_examples=100, deadline=None)
def test_stereographic_round_trip(x, y):
    p = np.array([x, y])
    X = stereo_inverse(p)
    assert abs(np.linalg.norm(X) - 1.0) < 1e-12
    assert np.max(np.abs(stereo(X) - p)) < 1e-10


@given(x=coords, y=coords, a=coords, b=coords)
@settings(max_examples=50, deadline=None)
def test_conformal_acceleration_jacobian(x, y, a, b):
    model = ConformalModel()
    pos = np.array([x, y])
    u = np.array([a, b])
    ax, au = model.acceleration_jacobian(pos, u)
    h = 1e-6
    fd_x = np.stack([(model.acceleration(pos + h * e, u) - model.acceleration(pos - h * e, u)) / (2 * h) for e in np.eye(2)], axis=1)
    fd_u = np.stack([(model.acceleration(pos, u + h * e) - model.acceleration(pos, u - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
    assert np.max(np.abs(ax - fd_x)) < 1e-6
    assert np.max(np.abs(au - fd_u)) < 1e-6


def test_conformal_return_identity():
    print("\n" + "=" * 70)
    print("TEST: conformal geodesics are reversible")
    print("=" * 70)

    model = parse_model("conformal")
    p = model.default_point()
    err = return_identity_error(model, p, np.array([2.5, 0.4]))
    assert err < 1e-8
    print(f"✓ |exp_q(w) - p| = {err:.1e}")


def test_lens_speed():
    print("\n" + "=" * 70)
    print("TEST: lens speed profiles")
    print("=" * 70)

    speed = LensSpeed()
    assert speed.value(np.zeros(2)) == pytest.approx(0.5)
    assert speed.value(np.array([10.0, 0.0])) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        LensSpeed((GaussianLens(amplitude=1.2),))
    with pytest.raises(ValueError):
        LensSpeed((GaussianLens(width=0.0),))

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "lens.json"
        path.write_text(json.dumps({"background": 2.0, "lenses": [{"amplitude": 0.5, "width": 0.7, "center": [1.0, 0.0]}]}))
        model = parse_model(f"conformal:{path}")
        assert model.speed.background == 2.0
        assert model.speed.value(np.array([1.0, 0.0])) == pytest.approx(1.5)
    print("✓ default lens, validation and JSON profiles")


def test_product_structure():
    print("\n" + "=" * 70)
    print("TEST: product exp = (exp'(v'), p'' + v'')")
    print("=" * 70)

    model = ProductModel()
    p = np.array([0.1, 0.2, 0.3])
    v = np.array([1.0, 0.5, -0.7])
    q, w = model.exp(p, v)
    q2, w2 = model.factor.exp(p[:2], v[:2])
    assert np.allclose(q[:2], q2) and np.allclose(w[:2], w2)
    assert q[2] == pytest.approx(p[2] + v[2]) and w[2] == pytest.approx(-v[2])
    D = model.dexp(p, v)
    assert D[2, 2] == 1.0 and np.all(D[2, :2] == 0.0) and np.all(D[:2, 2] == 0.0)
    with pytest.raises(NotImplementedError):
        model.integrate(p, v, 1.0)
    assert model.reversed().factor.alpha == -1.0
    print("✓ factor and line split cleanly")


def test_euclidean_has_no_conjugate_points():
    print("\n" + "=" * 70)
    print("TEST: flat model")
    print("=" * 70)

    model = EuclideanModel(2)
    for t in (0.5, 3.0, 10.0):
        assert model.invariant_det(np.zeros(2), np.array([t, 0.0])) == pytest.approx(1.0)
    print("✓ det d exp ≡ 1")


def run_all_tests():
    """Run all tests."""
    print("\n" + "=" * 70)
    print("MODELS - TEST SUITE")
    print("=" * 70)

    tests = [
        ("Model parsing", test_parse_model),
        ("Magnetic closed form vs ODE", test_magnetic_closed_form_matches_ode),
        ("Magnetic d exp", test_magnetic_dexp_matches_differences),
        ("Magnetic return identity", test_magnetic_return_identity),
        ("Flow start", test_flow_starts_at_p),
        ("Sphere", test_sphere_closed_form),
        ("Stereographic chart", test_stereographic_round_trip),
        ("Conformal acceleration Jacobian", test_conformal_acceleration_jacobian),
        ("Conformal return identity", test_conformal_return_identity),
        ("Lens speed", test_lens_speed),
        ("Product", test_product_structure),
        ("Euclidean", test_euclidean_has_no_conjugate_points),
    ]

    passed = 0
    failed = 0
    for name, test_func in tests:
        try:
            test_func()
            passed += 1
        except AssertionError as e:
            print(f"✗ FAILED: {name}: {e}")
            failed += 1
        except Exception as e:
            print(f"✗ ERROR: {name}: {e}")
            failed += 1

    print("\n" + "=" * 70)
    print(f"TEST RESULTS: {passed} passed, {failed} failed")
    print("=" * 70)
    return failed == 0


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
