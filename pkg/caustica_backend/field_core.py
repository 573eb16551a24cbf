"""
=============================================================================
FIELD CORE — Periodic grids, sampled fields, FFTs and microlocal probes
=============================================================================

Shared numerical plumbing for the planar experiments. The plane is replaced
by a periodic square of side L sampled on n×n points (n a power of two), so
every radial Fourier multiplier is applied exactly by one FFT pair. Wavepackets
stand in for conormal singularities, and windowed_energy turns "is (x, ξ) in
the wavefront set" into a measurable number: the L² mass of a spatially
windowed field inside a narrow frequency cone.

Conventions
-----------
- x_j = -L/2 + j·h, h = L/n, so the origin sits at index n/2.
- Arrays are indexed [i, j] ↔ (x_i, y_j) ("ij" meshgrid).
- fft2/ifft2 use the unitary ("ortho") normalization, so multipliers act on
  the symbol values literally and ‖fft2(f)‖ = ‖f‖.
- L² norms include the cell area: ‖f‖² = h²·Σ|f|².

Usage
-----
  grid = Grid2D(n=512, L=16.0)
  g = make_wavepacket(WavepacketSpec(PhasePoint((0, 0), (1, 0), 32.0), 0.5), grid)
  e = windowed_energy(g, PhasePoint((0, 0), (1, 0), 32.0), sigma=0.5, band=0.5, symmetric=True)
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Defaults
# -----------------------------------------------------------------------------
DEFAULT_N = 512
DEFAULT_L = 16.0
DEFAULT_WINDOW_SIGMA = 1.0
DEFAULT_BAND = 0.25
MIN_N = 64
LEAK_TOLERANCE = 1e-8
MIN_SIGMA_K = 4.0


@dataclass(frozen=True)
class Grid2D:
    """Periodic n×n grid of side L."""

    n: int
    L: float

    def __post_init__(self):
        n = int(self.n)
        if n < MIN_N or n & (n - 1):
            raise ValueError(f"grid size must be a power of two >= {MIN_N}, got {self.n}")
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"period length must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def nyquist(self) -> float:
        return np.pi / self.h

    def axis(self) -> np.ndarray:
        return -0.5 * self.L + self.h * np.arange(self.n)

    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        ax = self.axis()
        return np.meshgrid(ax, ax, indexing="ij")

    def frequency_axis(self) -> np.ndarray:
        """Angular frequencies in FFT order: 2π/L · {0, 1, …, -n/2, …, -1}."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    def index_of(self, x: float) -> int:
        """Nearest grid index of coordinate x (periodic)."""
        return int(round((x + 0.5 * self.L) / self.h)) % self.n


def frequency_grid(grid: Grid2D) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(kx, ky, |ξ|) on the frequency lattice, FFT order, "ij" indexing."""
    k = grid.frequency_axis()
    kx, ky = np.meshgrid(k, k, indexing="ij")
    return kx, ky, np.sqrt(kx * kx + ky * ky)


def wrap(d: np.ndarray, L: float) -> np.ndarray:
    """Periodic displacement in [-L/2, L/2)."""
    return (d + 0.5 * L) % L - 0.5 * L


@dataclass(frozen=True)
class ScalarField2D:
    """Samples of a (possibly complex) function on a Grid2D.

    `domain` is "space" for point samples and "frequency" for fft2 output.
    """

    grid: Grid2D
    values: np.ndarray
    domain: str = "space"

    def __post_init__(self):
        arr = np.asarray(self.values)
        n = self.grid.n
        if arr.size != n * n:
            raise ValueError(f"field has {arr.size} samples, grid needs {n * n}")
        arr = arr.reshape(n, n)
        if not np.all(np.isfinite(arr)):
            raise ValueError("field contains non-finite samples")
        object.__setattr__(self, "values", arr)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    @property
    def flat(self) -> np.ndarray:
        """Row-major view of length n²."""
        return self.values.reshape(-1)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2)) * self.grid.h)

    def inner(self, other: "ScalarField2D") -> complex:
        """L² inner product ⟨self, other⟩ (linear in the first slot)."""
        self._check_same_grid(other)
        return complex(np.sum(self.values * np.conj(other.values)) * self.grid.h ** 2)

    def with_values(self, values: np.ndarray) -> "ScalarField2D":
        return ScalarField2D(self.grid, values, self.domain)

    def real(self) -> "ScalarField2D":
        return self.with_values(np.real(self.values).copy())

    def _check_same_grid(self, other: "ScalarField2D"):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other: "ScalarField2D") -> "ScalarField2D":
        self._check_same_grid(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ScalarField2D") -> "ScalarField2D":
        self._check_same_grid(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c: complex) -> "ScalarField2D":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self) -> "ScalarField2D":
        return self.with_values(-self.values)


@dataclass(frozen=True)
class PhasePoint:
    """Position x, unit direction xi, center frequency k."""

    x: Tuple[float, float]
    xi: Tuple[float, float]
    k: float

    def __post_init__(self):
        x = tuple(float(c) for c in self.x)
        xi = np.asarray(self.xi, dtype=float)
        norm = float(np.hypot(xi[0], xi[1]))
        if norm == 0.0:
            raise ValueError("phase point direction must be nonzero")
        if abs(norm - 1.0) > 1e-12:
            xi = xi / norm
        if not self.k > 0:
            raise ValueError(f"center frequency must be positive, got {self.k}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", (float(xi[0]), float(xi[1])))
        object.__setattr__(self, "k", float(self.k))

    def moved(self, shift: Sequence[float]) -> "PhasePoint":
        return PhasePoint((self.x[0] + shift[0], self.x[1] + shift[1]), self.xi, self.k)

    def flipped(self) -> "PhasePoint":
        return PhasePoint(self.x, (-self.xi[0], -self.xi[1]), self.k)


@dataclass(frozen=True)
class WavepacketSpec:
    center: PhasePoint
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"packet width must be positive, got {self.width}")


def fft2(f: ScalarField2D) -> ScalarField2D:
    return ScalarField2D(f.grid, np.fft.fft2(f.values, norm="ortho"), domain="frequency")


def ifft2(F: ScalarField2D) -> ScalarField2D:
    return ScalarField2D(F.grid, np.fft.ifft2(F.values, norm="ortho"), domain="space")


def apply_symbol(f: ScalarField2D, symbol: np.ndarray, keep_real: bool = True) -> ScalarField2D:
    """Multiply the spectrum of f by symbol (FFT-ordered array) and transform back.

    Real input stays real when keep_real is set and the symbol is Hermitian.
    """
    out = np.fft.ifft2(np.fft.fft2(f.values, norm="ortho") * symbol, norm="ortho")
    if keep_real and not f.is_complex and np.isrealobj(symbol):
        out = out.real
    return ScalarField2D(f.grid, out)


def make_wavepacket(spec: WavepacketSpec, grid: Grid2D, normalize: bool = True) -> ScalarField2D:
    """exp(-|x-x0|²/(2σ²))·cos(k⟨xi, x-x0⟩), unit L² norm unless normalize=False."""
    c = spec.center
    sigma = spec.width
    if sigma * c.k < MIN_SIGMA_K:
        logger.warning(f"wavepacket σ·k = {sigma * c.k:.2f} < {MIN_SIGMA_K}: direction poorly resolved")

    half = 0.5 * grid.L
    if not (-half <= c.x[0] < half and -half <= c.x[1] < half):
        raise ValueError("packet leaks across period")

    X, Y = grid.coords()
    dx = X - c.x[0]
    dy = Y - c.x[1]
    envelope = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma ** 2))
    # boundary rows/columns, plain (non-periodic) distance
    boundary = max(envelope[0].max(), envelope[-1].max(), envelope[:, 0].max(), envelope[:, -1].max())
    if boundary > LEAK_TOLERANCE:
        raise ValueError("packet leaks across period")
    values = envelope * np.cos(c.k * (c.xi[0] * dx + c.xi[1] * dy))
    field = ScalarField2D(grid, values)
    if normalize:
        norm = field.norm()
        if norm == 0.0:
            raise ValueError("wavepacket vanished on the grid")
        field = field * (1.0 / norm)
    return field


def gaussian_window(grid: Grid2D, center: Sequence[float], sigma: float) -> np.ndarray:
    """exp(-|x-c|²/(4σ²)) with periodic distance; |window|² has width σ."""
    X, Y = grid.coords()
    dx = wrap(X - center[0], grid.L)
    dy = wrap(Y - center[1], grid.L)
    return np.exp(-(dx * dx + dy * dy) / (4.0 * sigma ** 2))


def cone_mask(
    grid: Grid2D, direction: Sequence[float], k: float, band: float, symmetric: bool = False
) -> np.ndarray:
    """Lattice frequencies with ||ξ|-k| < band·k and angle(ξ, ±direction) < band."""
    kx, ky, kr = frequency_grid(grid)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (kx * direction[0] + ky * direction[1]) / kr
    cos = np.nan_to_num(cos, nan=0.0)
    if symmetric:
        cos = np.abs(cos)
    angle = np.arccos(np.clip(cos, -1.0, 1.0))
    return (np.abs(kr - k) < band * k) & (angle < band) & (kr > 0)


def windowed_energy(
    f: ScalarField2D,
    probe: PhasePoint,
    sigma: float = DEFAULT_WINDOW_SIGMA,
    band: float = DEFAULT_BAND,
    symmetric: bool = False,
) -> float:
    """L² mass of (window at probe.x)·f inside the frequency cone at (probe.k, probe.xi)."""
    if not 0.0 < band < 1.0:
        raise ValueError(f"band must lie in (0, 1), got {band}")
    if not sigma > 0:
        raise ValueError(f"window width must be positive, got {sigma}")
    grid = f.grid
    if probe.k >= grid.nyquist * (1.0 - band):
        raise ValueError(
            f"probe frequency {probe.k:g} not below Nyquist·(1-band) = {grid.nyquist * (1.0 - band):g}"
        )
    mask = cone_mask(grid, probe.xi, probe.k, band, symmetric)
    if not mask.any():
        raise ValueError("band unresolved at this grid")
    windowed = np.fft.fft2(gaussian_window(grid, probe.x, sigma) * f.values, norm="ortho")
    return float(np.sum(np.abs(windowed[mask]) ** 2) * grid.h ** 2)


def probe_ratio(
    numerator: ScalarField2D,
    reference: ScalarField2D,
    probe: PhasePoint,
    sigma: float,
    band: float = DEFAULT_BAND,
    symmetric: bool = True,
    floor: Optional[float] = 1e-30,
) -> float:
    """windowed_energy(numerator)/windowed_energy(reference) at one probe."""
    ref = windowed_energy(reference, probe, sigma, band, symmetric)
    if floor is not None and ref < floor:
        raise ValueError("reference energy vanished")
    return windowed_energy(numerator, probe, sigma, band, symmetric) / ref
