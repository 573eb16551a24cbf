"""
=============================================================================
CIRCULAR RADON — Unit-circle transform, normal operator, A0 + F+ + F- split
=============================================================================

The transform Rf(x) = ∫ f over the unit circle centred at x is a convolution,
so it has two independent realizations on the periodic grid:

- quadrature: (2π/m)·Σ_a f(x + ω_a) with off-grid values from a periodic
  spline (cubic B-spline by default, bilinear on request);
- multiplier: 2π·J0(|ξ|) applied through the unitary FFT.

R is real and even, so R* = R and the normal operator is the multiplier
(2π·J0)². Writing J0 through its Hankel asymptotics splits (2πJ0)² into a
non-oscillating elliptic part A0 and two pieces F± carrying e^{±2i|ξ|}, i.e.
shifts by ∓2 along the frequency direction.

Usage
-----
  Rf = circular_transform_multiplier(f)
  Rq = circular_transform_quadrature(f, m=1024)
  parts = decompose(f, terms=2)       # parts.a0, parts.fplus, parts.fminus, parts.residual
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, special

from caustica_backend.field_core import Grid2D, ScalarField2D, apply_symbol, frequency_grid

logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Defaults
# -----------------------------------------------------------------------------
DEFAULT_QUADRATURE = 1024
MIN_QUADRATURE = 64
SERIES_SEAM = 12.0
SERIES_TERMS = 12
LOW_FREQUENCY_CAP = 0.5
A0_FLOOR = 1e-6
KERNEL_WIDTHS = (0.05, 0.025)


def hankel_coefficient(k: int) -> float:
    """a_k(0) = Π_{j≤k} (-(2j-1)²) / (k!·8^k)."""
    num = 1.0
    for j in range(1, k + 1):
        num *= -float((2 * j - 1) ** 2)
    return num / (math.factorial(k) * 8.0 ** k)


@dataclass(frozen=True)
class BesselAsymptotics:
    """Truncated P, Q series of J0 and the switch point z_min.

    p_coeffs[i] multiplies z^(-2i), q_coeffs[i] multiplies z^(-2i-1), so that
    J0(z) = sqrt(2/(πz))·(P cos χ - Q sin χ) with χ = z - π/4.
    """

    p_coeffs: Tuple[float, ...]
    q_coeffs: Tuple[float, ...]
    z_min: float = SERIES_SEAM

    @classmethod
    def standard(cls, terms: int = SERIES_TERMS, z_min: float = SERIES_SEAM) -> "BesselAsymptotics":
        if terms < 1:
            raise ValueError(f"need at least one asymptotic term, got {terms}")
        p = tuple((-1) ** i * hankel_coefficient(2 * i) for i in range(terms))
        q = tuple((-1) ** i * hankel_coefficient(2 * i + 1) for i in range(terms))
        return cls(p, q, z_min)

    def pq(self, z: np.ndarray, terms: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        n = len(self.p_coeffs) if terms is None else terms
        if n < 1 or n > len(self.p_coeffs):
            raise ValueError(f"terms must lie in [1, {len(self.p_coeffs)}], got {terms}")
        inv2 = 1.0 / (z * z)
        P = np.zeros_like(z)
        Q = np.zeros_like(z)
        # Horner in 1/z²
        for i in reversed(range(n)):
            P = P * inv2 + self.p_coeffs[i]
            Q = Q * inv2 + self.q_coeffs[i]
        return P, Q / z

    def j0_asymptotic(self, z: np.ndarray, terms: Optional[int] = None) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        P, Q = self.pq(z, terms)
        chi = z - 0.25 * np.pi
        return np.sqrt(2.0 / (np.pi * z)) * (P * np.cos(chi) - Q * np.sin(chi))

    def j0(self, z: np.ndarray) -> np.ndarray:
        """J0 with the library evaluation below z_min and the series above."""
        z = np.abs(np.asarray(z, dtype=float))
        out = special.j0(z)
        far = z >= self.z_min
        if np.any(far):
            out = np.where(far, self.j0_asymptotic(np.where(far, z, self.z_min)), out)
        return out


ASYMPTOTICS = BesselAsymptotics.standard()


@dataclass(frozen=True)
class RadialMultiplier:
    """m(|ξ|)·exp(i·phase_shift·|ξ|) applied through the FFT."""

    symbol: Callable[[np.ndarray], np.ndarray]
    phase_shift: int = 0
    label: str = ""

    def __post_init__(self):
        if self.phase_shift not in (0, 2, -2):
            raise ValueError(f"phase shift must be one of 0, +2, -2, got {self.phase_shift}")

    def values(self, grid: Grid2D) -> np.ndarray:
        _, _, kr = frequency_grid(grid)
        vals = np.asarray(self.symbol(kr))
        if self.phase_shift:
            vals = vals * np.exp(1j * self.phase_shift * kr)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"multiplier {self.label or '?'} is not finite on the lattice")
        return vals

    def apply(self, f: ScalarField2D) -> ScalarField2D:
        return apply_symbol(f, self.values(f.grid))


def capped(rho: np.ndarray, cap: float = LOW_FREQUENCY_CAP) -> np.ndarray:
    return np.maximum(rho, cap)


# -----------------------------------------------------------------------------
# R and R*R
# -----------------------------------------------------------------------------
def circle_symbol(rho: np.ndarray) -> np.ndarray:
    return 2.0 * np.pi * ASYMPTOTICS.j0(rho)


def normal_symbol(rho: np.ndarray) -> np.ndarray:
    return circle_symbol(rho) ** 2


CIRCLE_MULTIPLIER = RadialMultiplier(circle_symbol, 0, "2pi J0")
NORMAL_MULTIPLIER = RadialMultiplier(normal_symbol, 0, "(2pi J0)^2")


def circular_transform_multiplier(f: ScalarField2D) -> ScalarField2D:
    return CIRCLE_MULTIPLIER.apply(f)


def normal_operator(f: ScalarField2D) -> ScalarField2D:
    return NORMAL_MULTIPLIER.apply(f)


def _spline_weights(t: float, order: str) -> List[Tuple[int, float]]:
    if order == "linear":
        return [(0, 1.0 - t), (1, t)]
    s = 1.0 - t
    return [
        (-1, s * s * s / 6.0),
        (0, (3.0 * t ** 3 - 6.0 * t * t + 4.0) / 6.0),
        (1, (-3.0 * t ** 3 + 3.0 * t * t + 3.0 * t + 1.0) / 6.0),
        (2, t ** 3 / 6.0),
    ]


def _circle_average_real(values: np.ndarray, grid: Grid2D, m: int, order: str) -> np.ndarray:
    n = grid.n
    coeffs = values if order == "linear" else ndimage.spline_filter(values, order=3, mode="grid-wrap")
    pad = int(np.ceil(1.0 / grid.h)) + 3
    padded = np.pad(coeffs, pad, mode="wrap")
    out = np.zeros((n, n))
    angles = 2.0 * np.pi * np.arange(m) / m
    for a in angles:
        sx = np.cos(a) / grid.h
        sy = np.sin(a) / grid.h
        ix = int(np.floor(sx))
        iy = int(np.floor(sy))
        rows = np.zeros((n, n + 2 * pad))
        for k, w in _spline_weights(sx - ix, order):
            start = pad + ix + k
            rows += w * padded[start:start + n, :]
        for k, w in _spline_weights(sy - iy, order):
            start = pad + iy + k
            out += w * rows[:, start:start + n]
    return out * (2.0 * np.pi / m)


def circular_transform_quadrature(
    f: ScalarField2D, m: int = DEFAULT_QUADRATURE, order: str = "cubic"
) -> ScalarField2D:
    """(2π/m)·Σ_a f(x + (cos 2πa/m, sin 2πa/m)) with periodic spline interpolation."""
    if m < MIN_QUADRATURE:
        raise ValueError(f"quadrature size must be >= {MIN_QUADRATURE}, got {m}")
    if order not in ("cubic", "linear"):
        raise ValueError(f"unknown interpolation order {order!r}")
    if f.is_complex:
        re = _circle_average_real(np.ascontiguousarray(f.values.real), f.grid, m, order)
        im = _circle_average_real(np.ascontiguousarray(f.values.imag), f.grid, m, order)
        return ScalarField2D(f.grid, re + 1j * im)
    return ScalarField2D(f.grid, _circle_average_real(f.values, f.grid, m, order))


def normal_kernel_analytic(r):
    """4/(r·sqrt(4 - r²)) for 0 < r < 2."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0.0) or np.any(r_arr >= 2.0):
        raise ValueError("normal-operator kernel is defined for 0 < r < 2")
    out = 4.0 / (r_arr * np.sqrt(4.0 - r_arr * r_arr))
    return float(out) if out.ndim == 0 else out


# -----------------------------------------------------------------------------
# A0 + F+ + F-
# -----------------------------------------------------------------------------
def decomposition_multipliers(
    terms: Optional[int], cap: float = LOW_FREQUENCY_CAP
) -> Tuple[RadialMultiplier, RadialMultiplier, RadialMultiplier]:
    """(A0, F+, F-) as multipliers; terms=None uses the exact Hankel-function split."""
    if terms is not None and terms < 1:
        raise ValueError(f"need at least one asymptotic term, got {terms}")

    if terms is None:
        def elliptic(rho):
            r = capped(rho, cap)
            return 2.0 * np.pi ** 2 * np.abs(special.hankel1(0, r)) ** 2

        def plus(rho):
            r = capped(rho, cap)
            return np.pi ** 2 * special.hankel1(0, r) ** 2 * np.exp(-2j * rho)

        label = "hankel"
    else:
        def elliptic(rho):
            r = capped(rho, cap)
            P, Q = ASYMPTOTICS.pq(r, terms)
            return 4.0 * np.pi * (P * P + Q * Q) / r

        def plus(rho):
            r = capped(rho, cap)
            P, Q = ASYMPTOTICS.pq(r, terms)
            return -2j * np.pi / r * (P + 1j * Q) ** 2 * np.exp(2j * (r - rho))

        label = f"{terms}-term"

    def minus(rho):
        return np.conj(plus(rho))

    return (
        RadialMultiplier(elliptic, 0, f"A0 ({label})"),
        RadialMultiplier(plus, 2, f"F+ ({label})"),
        RadialMultiplier(minus, -2, f"F- ({label})"),
    )


@dataclass(frozen=True)
class Decomposition:
    a0: ScalarField2D
    fplus: ScalarField2D
    fminus: ScalarField2D
    residual: ScalarField2D
    terms: Optional[int] = None


def decompose(f: ScalarField2D, terms: Optional[int] = 2) -> Decomposition:
    """Split R*R f = A0 f + F+ f + F- f (+ residual from the truncated series)."""
    a0, fp, fm = decomposition_multipliers(terms)
    a0f = a0.apply(f)
    fpf = fp.apply(f)
    fmf = fm.apply(f)
    residual = normal_operator(f) - (a0f + fpf + fmf)
    return Decomposition(a0f, fpf, fmf, residual, terms)


# -----------------------------------------------------------------------------
# Approximate-identity probe of the R*R kernel
# -----------------------------------------------------------------------------
@dataclass
class KernelTable:
    radii: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    coarse: np.ndarray
    fine: np.ndarray
    widths: Tuple[float, float] = KERNEL_WIDTHS

    @property
    def relative_error(self) -> np.ndarray:
        return np.abs(self.numeric - self.analytic) / self.analytic


def _grid_radii(grid: Grid2D, r_min: float, r_max: float, samples: int) -> Tuple[np.ndarray, np.ndarray]:
    """Grid offsets (i, j) whose distances best cover linspace(r_min, r_max, samples)."""
    reach = int(np.ceil(r_max / grid.h)) + 1
    i, j = np.meshgrid(np.arange(reach + 1), np.arange(reach + 1), indexing="ij")
    dist = grid.h * np.hypot(i, j).ravel()
    order = np.argsort(dist, kind="stable")
    dist = dist[order]
    offsets = np.stack([i.ravel()[order], j.ravel()[order]], axis=1)
    chosen: List[int] = []
    for r in np.linspace(r_min, r_max, samples):
        idx = int(np.clip(np.searchsorted(dist, r), 1, len(dist) - 1))
        if abs(dist[idx - 1] - r) <= abs(dist[idx] - r):
            idx -= 1
        if r_min <= dist[idx] <= r_max and (not chosen or chosen[-1] != idx):
            chosen.append(idx)
    return dist[chosen], offsets[chosen]


def bump_probed_kernel(
    grid: Grid2D,
    r_min: float = 0.2,
    r_max: float = 1.8,
    samples: int = 400,
    widths: Tuple[float, float] = KERNEL_WIDTHS,
) -> KernelTable:
    """Sample R*R applied to Gaussian bumps of widths ε and ε/2, Richardson-combined."""
    wide, narrow = widths
    if not np.isclose(wide, 2.0 * narrow):
        raise ValueError("bump widths must differ by a factor of two")
    radii, offsets = _grid_radii(grid, r_min, r_max, samples)
    X, Y = grid.coords()
    origin = grid.n // 2
    probes = []
    for eps in (wide, narrow):
        bump = np.exp(-(X * X + Y * Y) / (2.0 * eps * eps))
        bump /= bump.sum() * grid.h ** 2
        response = normal_operator(ScalarField2D(grid, bump)).values
        probes.append(response[origin + offsets[:, 0], origin + offsets[:, 1]])
    coarse, fine = probes
    numeric = (4.0 * fine - coarse) / 3.0
    return KernelTable(radii, normal_kernel_analytic(radii), numeric, coarse, fine, widths)
