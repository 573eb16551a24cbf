#!/usr/bin/env python3
"""
=============================================================================
TEST FIELD CORE — Grids, fields, wavepackets and windowed energy
=============================================================================

Usage
-----
  python caustica_backend/test_field_core.py
  pytest caustica_backend/test_field_core.py
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from caustica_backend.field_core import (
    Grid2D,
    PhasePoint,
    ScalarField2D,
    WavepacketSpec,
    apply_symbol,
    fft2,
    ifft2,
    make_wavepacket,
    probe_ratio,
    windowed_energy,
    wrap,
)

GRID = Grid2D(256, 16.0)
CENTER = PhasePoint((0.0, 0.0), (1.0, 0.0), 16.0)


def _packet(center: PhasePoint = CENTER, width: float = 0.5) -> ScalarField2D:
    return make_wavepacket(WavepacketSpec(center, width), GRID)


def test_grid_validation():
    print("\n" + "=" * 70)
    print("TEST: Grid2D validation")
    print("=" * 70)

    for n in (100, 32):
        with pytest.raises(ValueError):
            Grid2D(n, 16.0)
    with pytest.raises(ValueError):
        Grid2D(256, 0.0)

    ax = GRID.axis()
    assert ax[GRID.n // 2] == 0.0
    assert GRID.h == pytest.approx(1.0 / 16.0)
    assert GRID.frequency_axis().min() == pytest.approx(-GRID.nyquist)
    assert GRID.index_of(0.0) == GRID.n // 2
    print(f"✓ n must be a power of two >= 64; origin at index {GRID.n // 2}")


def test_field_norms_and_fft():
    print("\n" + "=" * 70)
    print("TEST: L² norm and unitary FFT")
    print("=" * 70)

    ones = ScalarField2D(GRID, np.ones((GRID.n, GRID.n)))
    assert ones.norm() == pytest.approx(GRID.L)

    rng = np.random.default_rng(3)
    f = ScalarField2D(GRID, rng.normal(size=(GRID.n, GRID.n)))
    F = fft2(f)
    assert F.domain == "frequency"
    assert F.norm() == pytest.approx(f.norm(), rel=1e-12)
    back = ifft2(F)
    assert np.max(np.abs(back.values - f.values)) < 1e-12
    print(f"✓ ‖1‖ = L, ‖fft2 f‖ = ‖f‖ = {f.norm():.4f}")


def test_field_rejects_bad_samples():
    print("\n" + "=" * 70)
    print("TEST: ScalarField2D input checks")
    print("=" * 70)

    with pytest.raises(ValueError):
        ScalarField2D(GRID, np.zeros(10))
    bad = np.zeros((GRID.n, GRID.n))
    bad[3, 4] = np.nan
    with pytest.raises(ValueError):
        ScalarField2D(GRID, bad)
    other = ScalarField2D(Grid2D(128, 16.0), np.zeros((128, 128)))
    with pytest.raises(ValueError):
        _ = ScalarField2D(GRID, np.zeros((GRID.n, GRID.n))) + other
    print("✓ wrong size, NaN samples and grid mismatch rejected")


def test_apply_symbol_keeps_real():
    print("\n" + "=" * 70)
    print("TEST: apply_symbol")
    print("=" * 70)

    f = _packet()
    same = apply_symbol(f, np.ones((GRID.n, GRID.n)))
    assert not same.is_complex
    assert np.max(np.abs(same.values - f.values)) < 1e-12
    shifted = apply_symbol(f, np.exp(1j * np.ones((GRID.n, GRID.n))))
    assert shifted.is_complex
    print("✓ real symbols keep real fields real")


def test_phase_point_normalizes():
    print("\n" + "=" * 70)
    print("TEST: PhasePoint")
    print("=" * 70)

    p = PhasePoint((1.0, 2.0), (3.0, 4.0), 10.0)
    assert p.xi == pytest.approx((0.6, 0.8))
    assert p.moved((1.0, -2.0)).x == (2.0, 0.0)
    assert p.flipped().xi == pytest.approx((-0.6, -0.8))
    with pytest.raises(ValueError):
        PhasePoint((0.0, 0.0), (0.0, 0.0), 1.0)
    with pytest.raises(ValueError):
        PhasePoint((0.0, 0.0), (1.0, 0.0), 0.0)
    print("✓ directions normalized, degenerate points rejected")


def test_wavepacket_unit_norm_and_leak():
    print("\n" + "=" * 70)
    print("TEST: make_wavepacket")
    print("=" * 70)

    g = _packet()
    assert g.norm() == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError, match="packet leaks across period"):
        _packet(PhasePoint((7.5, 0.0), (1.0, 0.0), 16.0), width=0.5)
    with pytest.raises(ValueError):
        WavepacketSpec(CENTER, 0.0)
    print("✓ unit norm; packets near the edge rejected")


def test_windowed_energy_localizes():
    print("\n" + "=" * 70)
    print("TEST: windowed_energy")
    print("=" * 70)

    g = _packet()
    near = windowed_energy(g, CENTER, sigma=0.5, band=0.25)
    mirror = windowed_energy(g, CENTER.flipped(), sigma=0.5, band=0.25)
    far = windowed_energy(g, CENTER.moved((4.0, 0.0)), sigma=0.5, band=0.25)
    across = windowed_energy(g, PhasePoint((0.0, 0.0), (0.0, 1.0), 16.0), sigma=0.5, band=0.25)
    both = windowed_energy(g, CENTER, sigma=0.5, band=0.25, symmetric=True)

    assert near > 0.05
    assert mirror == pytest.approx(near, rel=1e-6)
    assert both == pytest.approx(near + mirror, rel=1e-6)
    assert far < 1e-6 * near
    assert across < 1e-6 * near
    assert probe_ratio(g, g, CENTER, 0.5) == pytest.approx(1.0)
    print(f"✓ energy {near:.3e} at the packet, {far:.1e} away, {across:.1e} across")


def test_windowed_energy_rejects_bad_inputs():
    print("\n" + "=" * 70)
    print("TEST: windowed_energy input checks")
    print("=" * 70)

    g = _packet()
    with pytest.raises(ValueError):
        windowed_energy(g, CENTER, band=0.0)
    with pytest.raises(ValueError):
        windowed_energy(g, CENTER, sigma=-1.0)
    with pytest.raises(ValueError, match="Nyquist"):
        windowed_energy(g, PhasePoint((0.0, 0.0), (1.0, 0.0), 0.9 * GRID.nyquist))
    zero = g * 0.0
    with pytest.raises(ValueError, match="reference energy vanished"):
        probe_ratio(g, zero, CENTER, 0.5)
    print("✓ bad band, width, frequency and vanishing reference rejected")


@given(d=st.floats(min_value=-1e3, max_value=1e3, allow_nan=False), L=st.floats(min_value=0.5, max_value=50.0))
@settings(max_examples=200, deadline=None)
def test_wrap_range(d, L):
    w = float(wrap(np.array(d), L))
    assert -0.5 * L - 1e-9 <= w < 0.5 * L + 1e-9
    turns = (d - w) / L
    assert abs(turns - round(turns)) < 1e-6


@given(a=st.complex_numbers(max_magnitude=10.0, allow_nan=False, allow_infinity=False), seed=st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_inner_product_sesquilinear(a, seed):
    rng = np.random.default_rng(seed)
    grid = Grid2D(64, 4.0)
    f = ScalarField2D(grid, rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64)))
    g = ScalarField2D(grid, rng.normal(size=(64, 64)))
    assert abs((f * a).inner(g) - a * f.inner(g)) <= 1e-9 * (1.0 + abs(a * f.inner(g)))
    assert abs(f.inner(g) - np.conj(g.inner(f))) <= 1e-9 * (1.0 + abs(f.inner(g)))
    assert f.inner(f).real == pytest.approx(f.norm() ** 2, rel=1e-12)


def test_fft_round_trip_all_sizes():
    print("\n" + "=" * 70)
    print("TEST: FFT round trip on every supported grid size")
    print("=" * 70)

    rng = np.random.default_rng(11)
    for n in (64, 128, 256, 512):
        grid = Grid2D(n, 16.0)
        f = ScalarField2D(grid, rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
        back = ifft2(fft2(f))
        assert np.max(np.abs(back.values - f.values)) < 1e-12
        print(f"✓ n = {n}")


def test_wavepacket_translation():
    print("\n" + "=" * 70)
    print("TEST: shifted packet equals shifted samples")
    print("=" * 70)

    a = (8 * GRID.h, -4 * GRID.h)
    base = _packet()
    moved = _packet(CENTER.moved(a))
    rolled = np.roll(base.values, (8, -4), axis=(0, 1))
    assert np.max(np.abs(moved.values - rolled)) < 1e-12
    print("✓ grid-aligned shift commutes with make_wavepacket")


def test_windowed_energy_at_own_phase_point():
    print("\n" + "=" * 70)
    print("TEST: packet energy at its own phase point")
    print("=" * 70)

    grid = Grid2D(512, 16.0)
    center = PhasePoint((0.0, 0.0), (1.0, 0.0), 32.0)
    g = make_wavepacket(WavepacketSpec(center, 0.5), grid)
    both = windowed_energy(g, center, sigma=0.5, band=0.5, symmetric=True)
    one = windowed_energy(g, center, sigma=0.5, band=0.5)
    # matched widths keep ∫w²g² / ∫g² = 2/3
    assert both >= 0.5 * g.norm() ** 2
    assert both == pytest.approx(2.0 / 3.0, rel=0.01)
    assert one == pytest.approx(0.5 * both, rel=1e-6)
    assert windowed_energy(g * 0.0, center, sigma=0.5, band=0.5) == 0.0
    print(f"✓ symmetric energy {both:.6f}, one-sided {one:.6f}, zero field 0")


@given(c=st.complex_numbers(max_magnitude=10.0, allow_nan=False, allow_infinity=False), seed=st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_windowed_energy_quadratic(c, seed):
    rng = np.random.default_rng(seed)
    grid = Grid2D(64, 4.0)
    at = PhasePoint((0.3, -0.2), (0.6, 0.8), 16.0)
    f = ScalarField2D(grid, rng.normal(size=(64, 64)))
    g = ScalarField2D(grid, rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64)))
    ef = windowed_energy(f, at, sigma=0.5, band=0.25)
    eg = windowed_energy(g, at, sigma=0.5, band=0.25)
    assert windowed_energy(f * c, at, sigma=0.5, band=0.25) == pytest.approx(abs(c) ** 2 * ef, rel=1e-10, abs=1e-300)
    plus = windowed_energy(f + g, at, sigma=0.5, band=0.25)
    minus = windowed_energy(f - g, at, sigma=0.5, band=0.25)
    assert plus + minus == pytest.approx(2.0 * (ef + eg), rel=1e-9)
    assert plus <= 2.0 * (ef + eg) * (1.0 + 1e-12)


@given(sx=st.integers(-32, 32), sy=st.integers(-32, 32), seed=st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_windowed_energy_translation(sx, sy, seed):
    rng = np.random.default_rng(seed)
    grid = Grid2D(64, 4.0)
    at = PhasePoint((0.25, 0.5), (1.0, 0.0), 16.0)
    f = ScalarField2D(grid, rng.normal(size=(64, 64)))
    shifted = f.with_values(np.roll(f.values, (sx, sy), axis=(0, 1)))
    before = windowed_energy(f, at, sigma=0.5, band=0.25)
    after = windowed_energy(shifted, at.moved((sx * grid.h, sy * grid.h)), sigma=0.5, band=0.25)
    assert after == pytest.approx(before, rel=1e-10)


def run_all_tests():
    """Run all tests."""
    print("\n" + "=" * 70)
    print("FIELD CORE - TEST SUITE")
    print("=" * 70)

    tests = [
        ("Grid validation", test_grid_validation),
        ("Norms and FFT", test_field_norms_and_fft),
        ("Field input checks", test_field_rejects_bad_samples),
        ("apply_symbol", test_apply_symbol_keeps_real),
        ("PhasePoint", test_phase_point_normalizes),
        ("Wavepacket", test_wavepacket_unit_norm_and_leak),
        ("Windowed energy", test_windowed_energy_localizes),
        ("Windowed energy checks", test_windowed_energy_rejects_bad_inputs),
        ("wrap", test_wrap_range),
        ("Inner product", test_inner_product_sesquilinear),
        ("FFT round trip", test_fft_round_trip_all_sizes),
        ("Wavepacket translation", test_wavepacket_translation),
        ("Energy at own phase point", test_windowed_energy_at_own_phase_point),
        ("Energy is quadratic", test_windowed_energy_quadratic),
        ("Energy translation", test_windowed_energy_translation),
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
