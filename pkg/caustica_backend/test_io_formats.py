#!/usr/bin/env python3
"""
=============================================================================
TEST IO FORMATS — CSF2 fields, CSV tables and versioned JSON
=============================================================================

Usage
-----
  python caustica_backend/test_io_formats.py
  pytest caustica_backend/test_io_formats.py
"""

import json
import struct
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from caustica_backend.field_core import Grid2D, ScalarField2D
from caustica_backend.io_formats import (
    iter_floats,
    read_csf2,
    read_rows_csv,
    versioned,
    write_csf2,
    write_field_csv,
    write_json,
    write_rows_csv,
)

GRID = Grid2D(64, 4.0)


def test_csf2_real_and_complex():
    print("\n" + "=" * 70)
    print("TEST: CSF2 files")
    print("=" * 70)

    rng = np.random.default_rng(0)
    real = ScalarField2D(GRID, rng.normal(size=(64, 64)))
    cplx = ScalarField2D(GRID, rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64)))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "nested" / "f.csf2"
        write_csf2(path, real)
        raw = path.read_bytes()
        assert raw[:4] == b"CSF2"
        assert struct.unpack_from("<I", raw, 4)[0] == 64
        assert struct.unpack_from("<d", raw, 8)[0] == 4.0
        assert len(raw) == 16 + 8 * 64 * 64
        back = read_csf2(path)
        assert not back.is_complex and np.array_equal(back.values, real.values)

        write_csf2(path, cplx)
        assert path.stat().st_size == 16 + 16 * 64 * 64
        back = read_csf2(path)
        assert back.is_complex and np.array_equal(back.values, cplx.values)
    print("✓ header layout, real and complex payloads")


def test_csf2_rejects_bad_files():
    print("\n" + "=" * 70)
    print("TEST: CSF2 reader checks")
    print("=" * 70)

    with tempfile.TemporaryDirectory() as tmp:
        short = Path(tmp) / "short.csf2"
        short.write_bytes(b"CSF2")
        with pytest.raises(ValueError, match="truncated"):
            read_csf2(short)
        magic = Path(tmp) / "magic.csf2"
        magic.write_bytes(struct.pack("<4sId", b"XXXX", 64, 4.0) + bytes(8 * 64 * 64))
        with pytest.raises(ValueError, match="not a CSF2 file"):
            read_csf2(magic)
        sized = Path(tmp) / "sized.csf2"
        sized.write_bytes(struct.pack("<4sId", b"CSF2", 64, 4.0) + bytes(8 * 100))
        with pytest.raises(ValueError, match="does not match"):
            read_csf2(sized)
    print("✓ truncated, foreign and mis-sized files rejected")


def test_csv_tables():
    print("\n" + "=" * 70)
    print("TEST: CSV tables with headers")
    print("=" * 70)

    rows = [{"k": 16.0, "rho_N": np.float64(0.125), "class": "Fold"}, {"k": 32.0, "rho_N": 1e-3, "n": np.int64(4)}]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.csv"
        write_rows_csv(path, rows, ["k", "rho_N", "class"])
        text = path.read_text(encoding="utf-8").splitlines()
        assert text[0] == "k,rho_N,class"
        back = read_rows_csv(path)
        assert float(back[0]["rho_N"]) == 0.125
        assert back[1]["class"] == ""

        field_path = Path(tmp) / "f.csv"
        write_field_csv(field_path, ScalarField2D(GRID, np.ones((64, 64))))
        table = read_rows_csv(field_path)
        assert len(table) == 64 * 64 and set(table[0]) == {"x", "y", "value"}
    print("✓ header row, exact floats, missing cells left empty")


def test_versioned_json():
    print("\n" + "=" * 70)
    print("TEST: JSON metadata")
    print("=" * 70)

    doc = versioned({"b": np.array([1.0, np.nan]), "a": np.bool_(True), "c": 2 + 3j})
    assert doc["schema_version"] == 1
    assert doc["b"] == [1.0, None]
    assert doc["a"] is True
    assert doc["c"] == [2.0, 3.0]

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "out" / "r.json"
        write_json(path, {"z": 1, "a": (1, 2)})
        first = path.read_text(encoding="utf-8")
        write_json(path, {"a": (1, 2), "z": 1})
        assert path.read_text(encoding="utf-8") == first
        loaded = json.loads(first)
        assert loaded == {"a": [1, 2], "schema_version": 1, "z": 1}
    print("✓ schema_version 1, numpy values converted, byte-identical reruns")


def test_iter_floats():
    print("\n" + "=" * 70)
    print("TEST: list parsing")
    print("=" * 70)

    assert list(iter_floats("16,32, 64")) == [16.0, 32.0, 64.0]
    assert list(iter_floats("0.01:0.25")) == [0.01, 0.25]
    assert list(iter_floats("")) == []
    with pytest.raises(ValueError):
        list(iter_floats("1,x"))
    print("✓ commas and colons")


def run_all_tests():
    """Run all tests."""
    print("\n" + "=" * 70)
    print("IO FORMATS - TEST SUITE")
    print("=" * 70)

    tests = [
        ("CSF2 files", test_csf2_real_and_complex),
        ("CSF2 reader checks", test_csf2_rejects_bad_files),
        ("CSV tables", test_csv_tables),
        ("JSON metadata", test_versioned_json),
        ("List parsing", test_iter_floats),
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
