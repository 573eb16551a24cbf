#!/usr/bin/env python3
"""
=============================================================================
TEST GEODESIC ENGINE — Conjugate loci, folds, conormals and the graph test
=============================================================================

Usage
-----
  python caustica_backend/test_geodesic_engine.py
  pytest caustica_backend/test_geodesic_engine.py
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from caustica_backend.geodesic_engine import (
    Caustic,
    canonical_map,
    conjugate_locus,
    conormal_bundle,
    direction_patch,
    find_conjugate,
    find_fold,
    fold_symmetry,
    graph_test,
    jacobi_conormal_check,
    ring_directions,
    sing_fit_inputs,
)
from caustica_backend.models import parse_model

ORIGIN2 = np.zeros(2)
ORIGIN3 = np.zeros(3)


def _conformal_fold():
    model = parse_model("conformal")
    p = model.default_point()
    angles = np.linspace(0.05, 0.6, 12)
    rec = find_fold(model, p, np.stack([np.cos(angles), np.sin(angles)], axis=1))
    return model, p, rec


def test_circle_conjugate_point():
    print("\n" + "=" * 70)
    print("TEST: circle2d conjugate point")
    print("=" * 70)

    model = parse_model("circle2d")
    rec = find_conjugate(model, ORIGIN2, (1.0, 0.0))
    assert rec is not None
    assert rec.t_star == pytest.approx(np.pi, abs=1e-9)
    assert rec.kernel_dim == 1
    assert rec.classification == Caustic.FOLD
    assert np.linalg.norm(rec.q - ORIGIN2) == pytest.approx(2.0, abs=1e-9)
    assert rec.A == pytest.approx(1.0 / np.pi, rel=1e-6)
    print(f"✓ t* = {rec.t_star:.12f}, |q - p| = 2, transversality {rec.transversality:.3f} rad")


def test_magnetic_ring():
    print("\n" + "=" * 70)
    print("TEST: magnetic3d:2 on the equator")
    print("=" * 70)

    model = parse_model("magnetic3d:2")
    locus = conjugate_locus(model, ORIGIN3, ring_directions(6))
    assert locus.fold_fraction == 1.0
    assert not locus.warning
    assert np.max(np.abs(locus.t_star - 0.5 * np.pi)) < 1e-8
    dq = locus.q
    resid = np.abs((dq[:, 0] ** 2 + dq[:, 1] ** 2) / 4.0 + dq[:, 2] ** 2 / np.pi ** 2 - 0.25)
    assert resid.max() < 1e-8
    assert np.max(locus.tangency) < 1e-3
    print(f"✓ t* = π/2 on {len(locus.t_star)} directions; tangency {locus.tangency.max():.1e}")


def test_magnetic_off_equator():
    print("\n" + "=" * 70)
    print("TEST: magnetic3d conjugate times off the equator")
    print("=" * 70)

    model = parse_model("magnetic3d:1")
    for z, t_ref in ((0.3, 3.2627), (0.6, 3.7278), (0.9, 5.1897)):
        theta = (np.sqrt(1.0 - z * z), 0.0, z)
        rec = find_conjugate(model, ORIGIN3, theta)
        assert rec is not None
        assert rec.t_star == pytest.approx(t_ref, abs=1e-3)
        assert abs(rec.t_star - model.conjugate_time(theta)) < 1e-8
        assert rec.t_star > np.pi
        assert rec.classification == Caustic.FOLD
        dq = rec.q
        resid = (dq[0] ** 2 + dq[1] ** 2) / 4.0 + dq[2] ** 2 / np.pi ** 2 - 1.0
        assert resid > 1e-3
        print(f"✓ z={z}: t* = {rec.t_star:.6f}, Fold, ellipsoid residual {resid:.3e}")

    fast = parse_model("magnetic3d:2")
    theta = (0.8, 0.0, 0.6)
    assert fast.conjugate_time(theta) == pytest.approx(0.5 * model.conjugate_time(theta), rel=1e-12)
    assert model.conjugate_time((1.0, 1.0, 0.0)) == pytest.approx(np.pi)
    assert model.conjugate_time((0.0, 0.0, 1.0)) is None

    tilted = ring_directions(12, z=0.4)
    locus = conjugate_locus(model, ORIGIN3, tilted)
    assert locus.fold_fraction == 1.0
    expected = np.array([model.conjugate_time(v) for v in locus.v])
    assert np.max(np.abs(locus.t_star - expected)) < 1e-8
    print("✓ tilted ring: every sample Fold at the closed-form time")


def test_no_conjugate_points_in_flat_space():
    print("\n" + "=" * 70)
    print("TEST: euclidean2d has no conjugate points")
    print("=" * 70)

    model = parse_model("euclidean2d")
    assert find_conjugate(model, ORIGIN2, (0.3, 1.0), t_max=50.0) is None
    with pytest.raises(ValueError, match="no caustic in range"):
        find_fold(model, ORIGIN2, ring_directions(4, dim=2))
    with pytest.raises(ValueError, match="no caustic in range"):
        conjugate_locus(model, ORIGIN2, ring_directions(4, dim=2))
    with pytest.raises(ValueError):
        find_conjugate(model, ORIGIN2, (1.0, 0.0), t_max=-1.0)
    print("✓ none found; loci report 'no caustic in range'")


def test_sphere_antipode_is_not_fold():
    print("\n" + "=" * 70)
    print("TEST: sphere conjugate point at the antipode")
    print("=" * 70)

    model = parse_model("sphere")
    p = model.default_point()
    rec = find_conjugate(model, p, (-1.0, 0.2))
    assert rec is not None
    assert rec.t_star == pytest.approx(np.pi, abs=1e-8)
    assert rec.kernel_dim == 1
    assert rec.classification != Caustic.FOLD
    assert rec.transversality < 1e-3
    print(f"✓ t* = π, classified {rec.classification.value}")


def test_direction_sets():
    print("\n" + "=" * 70)
    print("TEST: ring and patch directions")
    print("=" * 70)

    ring = ring_directions(16, dim=3, z=0.3)
    assert ring.shape == (16, 3)
    assert np.allclose(np.linalg.norm(ring, axis=1), 1.0)
    assert np.allclose(ring[:, 2], 0.3)

    arc = direction_patch((0.0, 1.0), 0.4, 9)
    angles = np.arctan2(arc[:, 1], arc[:, 0]) - 0.5 * np.pi
    assert np.allclose(np.linalg.norm(arc, axis=1), 1.0)
    assert np.max(np.abs(angles)) == pytest.approx(0.4)

    cap = direction_patch((0.0, 0.0, 1.0), 0.3, 16)
    assert cap.shape == (16, 3)
    assert np.allclose(np.linalg.norm(cap, axis=1), 1.0)
    assert np.min(cap[:, 2]) >= np.cos(np.arctan(np.sqrt(2.0) * np.tan(0.3))) - 1e-12
    print("✓ unit directions on rings, arcs and caps")


def test_circle_locus():
    print("\n" + "=" * 70)
    print("TEST: circle2d conjugate locus")
    print("=" * 70)

    locus = conjugate_locus(parse_model("circle2d"), ORIGIN2, ring_directions(8, dim=2))
    assert locus.fold_fraction == 1.0
    assert locus.missed == 0
    assert np.max(locus.tangency) < 1e-3
    assert np.allclose(np.linalg.norm(locus.q, axis=1), 2.0, atol=1e-9)
    assert np.allclose(locus.D, 2.0 / np.pi, rtol=1e-6)
    print("✓ Σ(p) is the circle of radius 2 and w is tangent to it")


def test_conormal_translation_invariant():
    print("\n" + "=" * 70)
    print("TEST: conormal bundle of translation-invariant flows")
    print("=" * 70)

    circle = parse_model("circle2d")
    s = conormal_bundle(circle, ORIGIN2, (np.pi, 0.0))
    assert np.linalg.norm(s.eta + s.xi) < 1e-8
    assert np.linalg.norm(s.eta) == pytest.approx(1.0)
    dp = s.p - s.q
    assert abs(s.xi @ dp) / (np.linalg.norm(s.xi) * np.linalg.norm(dp)) == pytest.approx(1.0, abs=1e-8)
    assert s.xi @ dp > 0

    magnetic = parse_model("magnetic3d:1")
    rec = find_conjugate(magnetic, ORIGIN3, (0.0, 1.0, 0.0))
    m = conormal_bundle(magnetic, ORIGIN3, rec.v)
    assert np.linalg.norm(m.eta + m.xi) / np.linalg.norm(m.xi) < 1e-4
    with pytest.raises(ValueError, match="not a simple fold point"):
        conormal_bundle(circle, ORIGIN2, (1.0, 0.0))
    print("✓ η = -ξ and ξ ∥ p - q")


def test_jacobi_cross_check():
    print("\n" + "=" * 70)
    print("TEST: conormal vs kernel Jacobi field (conformal lens)")
    print("=" * 70)

    model, p, rec = _conformal_fold()
    check = jacobi_conormal_check(model, p, rec.v)
    assert max(check.xi_error, check.eta_error) < 1e-4
    assert check.sign_consistent
    with pytest.raises(ValueError):
        jacobi_conormal_check(parse_model("circle2d"), ORIGIN2, (np.pi, 0.0))
    print(f"✓ ξ error {check.xi_error:.1e}, η error {check.eta_error:.1e}")


def test_graph_test():
    print("\n" + "=" * 70)
    print("TEST: N*Σ as a graph over T*M")
    print("=" * 70)

    circle = graph_test(parse_model("circle2d"), ORIGIN2, (np.pi, 0.0))
    assert circle.is_graph and circle.rank == 3
    product = graph_test(parse_model("product"), ORIGIN3, (np.pi, 0.0, 0.0))
    assert not product.is_graph
    assert product.rank == 2 * product.dim - 2
    magnetic = graph_test(parse_model("magnetic3d:1"), ORIGIN3, (np.pi, 0.0, 0.0))
    assert magnetic.is_graph and magnetic.rank == 5
    print(f"✓ circle2d rank {circle.rank}/3; magnetic3d rank {magnetic.rank}/5; product rank {product.rank}/5")


def test_canonical_map_homogeneous():
    print("\n" + "=" * 70)
    print("TEST: (p, ξ) ↦ (q, η) is homogeneous of degree one")
    print("=" * 70)

    model = parse_model("circle2d")
    v0 = np.array([np.pi, 0.0])
    xi = conormal_bundle(model, ORIGIN2, v0).xi
    one = canonical_map(model, ORIGIN2, xi, v0)
    three = canonical_map(model, ORIGIN2, 3.0 * xi, v0)
    assert np.linalg.norm(three.eta - 3.0 * one.eta) < 1e-8 * np.linalg.norm(three.eta)
    assert np.linalg.norm(three.q - one.q) < 1e-8
    assert np.linalg.norm(one.eta + xi) < 1e-8 * np.linalg.norm(xi)
    with pytest.raises(ValueError):
        canonical_map(model, ORIGIN2, (0.0, 0.0), v0)

    magnetic = parse_model("magnetic3d:1")
    v3 = np.array([np.pi, 0.0, 0.0])
    xi3 = conormal_bundle(magnetic, ORIGIN3, v3).xi
    one3 = canonical_map(magnetic, ORIGIN3, xi3, v3)
    two3 = canonical_map(magnetic, ORIGIN3, 2.0 * xi3, v3)
    assert np.linalg.norm(two3.eta - 2.0 * one3.eta) < 1e-8 * np.linalg.norm(two3.eta)
    assert np.linalg.norm(two3.q - one3.q) < 1e-8
    print("✓ η(3ξ) = 3η(ξ) on circle2d, η(2ξ) = 2η(ξ) on magnetic3d")


def test_fold_symmetry():
    print("\n" + "=" * 70)
    print("TEST: fold at (p, v) is a fold at (q, w)")
    print("=" * 70)

    sym = fold_symmetry(parse_model("circle2d"), ORIGIN2, (np.pi, 0.0))
    assert sym.holds
    assert sym.return_error < 1e-10
    print(f"✓ both ends Fold; |d_v w·N| = {sym.image_norm:.3f}")


def test_sing_fit_inputs_circle():
    print("\n" + "=" * 70)
    print("TEST: √z' law inputs on circle2d")
    print("=" * 70)

    fit = sing_fit_inputs(parse_model("circle2d"), ORIGIN2, (np.pi, 0.0))
    assert fit.A == pytest.approx(1.0 / np.pi, rel=1e-6)
    assert fit.D == pytest.approx(2.0 / np.pi, rel=1e-6)
    assert fit.W_sigma == pytest.approx(1.0 / np.pi)
    assert fit.predicted_coeff == pytest.approx(1.0, rel=1e-6)
    assert fit.b_equals_ad_error is None
    assert fit.phi is not None and fit.phi > 0.1
    with pytest.raises(ValueError, match="no conjugate point"):
        sing_fit_inputs(parse_model("circle2d"), ORIGIN2, (1.0, 0.0))
    print(f"✓ A = 1/π, D = 2/π, predicted coefficient {fit.predicted_coeff:.8f}")


def test_sing_fit_inputs_conformal():
    print("\n" + "=" * 70)
    print("TEST: B = A·D for a Riemannian surface")
    print("=" * 70)

    model, p, rec = _conformal_fold()
    fit = sing_fit_inputs(model, p, rec.v)
    assert fit.b_equals_ad_error is not None
    assert fit.b_equals_ad_error < 1e-5
    assert fit.predicted_coeff > 0
    print(f"✓ |B - AD|/AD = {fit.b_equals_ad_error:.1e}")


def run_all_tests():
    """Run all tests."""
    print("\n" + "=" * 70)
    print("GEODESIC ENGINE - TEST SUITE")
    print("=" * 70)

    tests = [
        ("Circle conjugate point", test_circle_conjugate_point),
        ("Magnetic ring", test_magnetic_ring),
        ("Magnetic off the equator", test_magnetic_off_equator),
        ("Flat space", test_no_conjugate_points_in_flat_space),
        ("Sphere antipode", test_sphere_antipode_is_not_fold),
        ("Direction sets", test_direction_sets),
        ("Circle locus", test_circle_locus),
        ("Conormal bundle", test_conormal_translation_invariant),
        ("Jacobi cross-check", test_jacobi_cross_check),
        ("Graph test", test_graph_test),
        ("Canonical map", test_canonical_map_homogeneous),
        ("Fold symmetry", test_fold_symmetry),
        ("Fit inputs (circle)", test_sing_fit_inputs_circle),
        ("Fit inputs (conformal)", test_sing_fit_inputs_conformal),
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
