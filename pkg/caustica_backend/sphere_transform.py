"""
=============================================================================
SPHERE TRANSFORM — Great-circle integrals on S² and the odd-function kernel
=============================================================================

Every great circle is invariant under the antipodal map J(x) = -x, so the
great-circle transform cannot see the odd part of a function: odd functions
form its kernel and singularities placed at x and -x with opposite signs
cancel completely.

Grid
----
Colatitudes are Gauss-Legendre nodes (symmetrized so that node j and node
n_lat-1-j are exact mirror images), longitudes are 2πk/n_lon with n_lon even.
No node sits on a pole. With this layout f∘J is an exact re-indexing of the
samples, and bilinear interpolation commutes with J: interpolating an odd
field gives an odd function, so trapezoidal sums over a great circle with an
even node count cancel in antipodal pairs.

Interpolation
-------------
- bilinear : default; rows beyond the first/last colatitude are virtual rows
             across the pole (the same ring shifted by half a turn).
- spectral : Gauss-Legendre/FFT analysis followed by spherical-harmonic
             synthesis, exact for band-limited fields.

Usage
-----
  f = ScalarFieldS2.from_harmonic(3, 1)
  value = great_circle_transform(f, (0.0, 0.0, 1.0))
  report = antipodal_cancellation_check(ScalarFieldS2.from_harmonic(2, 0), f)
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

DEFAULT_N_LAT = 65
DEFAULT_N_LON = 128
MIN_N_LAT = 32
DEFAULT_NODES = 512
MIN_NODES = 128
REFERENCE_NODES = 10 ** 6
PARITY_TOL = 1e-10
INTERPOLATIONS = ("bilinear", "spectral")

PointFunction = Callable[[np.ndarray], np.ndarray]


# -----------------------------------------------------------------------------
# Spherical harmonics
# -----------------------------------------------------------------------------
def _sph_harm(l, m, polar, azimuth):
    """Complex Y_l^m with the polar angle first; older scipy only ships sph_harm."""
    if hasattr(special, "sph_harm_y"):
        return special.sph_harm_y(l, m, polar, azimuth)
    return special.sph_harm(m, l, azimuth, polar)


def to_spherical(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(colatitude, longitude in [0, 2π)) of unit vectors."""
    points = np.asarray(points, float)
    colat = np.arctan2(np.hypot(points[..., 0], points[..., 1]), points[..., 2])
    lon = np.mod(np.arctan2(points[..., 1], points[..., 0]), 2.0 * np.pi)
    return colat, lon


def to_cartesian(colat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    s = np.sin(colat)
    return np.stack([s * np.cos(lon), s * np.sin(lon), np.cos(colat)], axis=-1)


def real_harmonic(l: int, m: int) -> PointFunction:
    """Real orthonormal harmonic: √2·Re Y_l^m (m > 0), Y_l^0, √2·Im Y_l^|m| (m < 0)."""
    if l < 0 or abs(m) > l:
        raise ValueError(f"need 0 <= |m| <= l, got l={l}, m={m}")

    def evaluate(points: np.ndarray) -> np.ndarray:
        colat, lon = to_spherical(points)
        y = _sph_harm(l, abs(m), colat, lon)
        if m > 0:
            return np.sqrt(2.0) * y.real
        if m < 0:
            return np.sqrt(2.0) * y.imag
        return y.real

    return evaluate


# -----------------------------------------------------------------------------
# Grid
# -----------------------------------------------------------------------------
@lru_cache(maxsize=16)
def gauss_colatitudes(n_lat: int) -> Tuple[np.ndarray, np.ndarray]:
    """Colatitudes (increasing) and Gauss-Legendre weights, mirror-symmetric about the equator."""
    x, w = np.polynomial.legendre.leggauss(n_lat)
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    order = np.argsort(-x)
    return np.arccos(x[order]), w[order]


def longitudes(n_lon: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_lon) / n_lon


@dataclass(frozen=True)
class ScalarFieldS2:
    """Samples on the Gauss-Legendre × uniform-longitude grid, values[j, k]."""

    n_lat: int
    n_lon: int
    values: np.ndarray

    def __post_init__(self):
        if self.n_lat < MIN_N_LAT:
            raise ValueError(f"n_lat must be >= {MIN_N_LAT}, got {self.n_lat}")
        if self.n_lon < 4 or self.n_lon % 2:
            raise ValueError(f"n_lon must be even and >= 4, got {self.n_lon}")
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.n_lat, self.n_lon):
            raise ValueError(f"values of shape {values.shape} do not match ({self.n_lat}, {self.n_lon})")
        object.__setattr__(self, "values", values)

    @property
    def colatitudes(self) -> np.ndarray:
        return gauss_colatitudes(self.n_lat)[0]

    @property
    def longitudes(self) -> np.ndarray:
        return longitudes(self.n_lon)

    def points(self) -> np.ndarray:
        colat, lon = np.meshgrid(self.colatitudes, self.longitudes, indexing="ij")
        return to_cartesian(colat, lon)

    @classmethod
    def from_function(
        cls, func: PointFunction, n_lat: int = DEFAULT_N_LAT, n_lon: int = DEFAULT_N_LON
    ) -> "ScalarFieldS2":
        colat, lon = np.meshgrid(gauss_colatitudes(n_lat)[0], longitudes(n_lon), indexing="ij")
        return cls(n_lat, n_lon, np.asarray(func(to_cartesian(colat, lon)), dtype=float))

    @classmethod
    def from_harmonic(cls, l: int, m: int, n_lat: int = DEFAULT_N_LAT, n_lon: int = DEFAULT_N_LON) -> "ScalarFieldS2":
        return cls.from_function(real_harmonic(l, m), n_lat, n_lon)

    @classmethod
    def constant(cls, value: float = 1.0, n_lat: int = DEFAULT_N_LAT, n_lon: int = DEFAULT_N_LON) -> "ScalarFieldS2":
        return cls(n_lat, n_lon, np.full((n_lat, n_lon), float(value)))

    def with_values(self, values: np.ndarray) -> "ScalarFieldS2":
        return ScalarFieldS2(self.n_lat, self.n_lon, values)

    def _check_same_grid(self, other: "ScalarFieldS2"):
        if (self.n_lat, self.n_lon) != (other.n_lat, other.n_lon):
            raise ValueError("fields live on different sphere grids")

    def __add__(self, other: "ScalarFieldS2") -> "ScalarFieldS2":
        self._check_same_grid(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ScalarFieldS2") -> "ScalarFieldS2":
        self._check_same_grid(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> "ScalarFieldS2":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def antipodal(self) -> "ScalarFieldS2":
        """f∘J: colatitude j ↔ n_lat-1-j, longitude k ↔ k + n_lon/2."""
        return self.with_values(np.roll(self.values[::-1], -self.n_lon // 2, axis=1))

    def parity_parts(self) -> Tuple["ScalarFieldS2", "ScalarFieldS2"]:
        """(even, odd) parts under J."""
        flipped = self.antipodal().values
        return self.with_values(0.5 * (self.values + flipped)), self.with_values(0.5 * (self.values - flipped))

    def evaluate(self, points: np.ndarray, interpolation: str = "bilinear", lmax: Optional[int] = None) -> np.ndarray:
        if interpolation == "bilinear":
            return _bilinear(self, points)
        if interpolation == "spectral":
            return _synthesize(spectral_coefficients(self, lmax), points)
        raise ValueError(f"unknown interpolation {interpolation!r}; choose from {INTERPOLATIONS}")

    def rotated(self, R: np.ndarray, interpolation: str = "spectral", lmax: Optional[int] = None) -> "ScalarFieldS2":
        """x ↦ f(Rᵀx), resampled on the same grid."""
        R = np.asarray(R, float)
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-12):
            raise ValueError("rotation must be an orthogonal 3x3 matrix")
        pts = self.points().reshape(-1, 3) @ R
        return self.with_values(self.evaluate(pts, interpolation, lmax).reshape(self.n_lat, self.n_lon))


# -----------------------------------------------------------------------------
# Interpolation
# -----------------------------------------------------------------------------
def _bilinear(f: ScalarFieldS2, points: np.ndarray) -> np.ndarray:
    colat, lon = to_spherical(points)
    theta = f.colatitudes
    half = f.n_lon // 2
    # virtual rows across each pole
    ext_theta = np.concatenate([[-theta[0]], theta, [2.0 * np.pi - theta[-1]]])
    ext_values = np.vstack([np.roll(f.values[0], -half), f.values, np.roll(f.values[-1], -half)])

    i = np.clip(np.searchsorted(ext_theta, colat, side="right") - 1, 0, f.n_lat)
    t = (colat - ext_theta[i]) / (ext_theta[i + 1] - ext_theta[i])

    u = lon * f.n_lon / (2.0 * np.pi)
    k0 = np.floor(u)
    s = u - k0
    k0 = k0.astype(int) % f.n_lon
    k1 = (k0 + 1) % f.n_lon

    upper = (1.0 - s) * ext_values[i, k0] + s * ext_values[i, k1]
    lower = (1.0 - s) * ext_values[i + 1, k0] + s * ext_values[i + 1, k1]
    return (1.0 - t) * upper + t * lower


def _band_limit(f: ScalarFieldS2, lmax: Optional[int]) -> int:
    top = min(f.n_lat - 1, f.n_lon // 2 - 1)
    if lmax is None:
        return top
    if not 0 <= lmax <= top:
        raise ValueError(f"lmax must lie in [0, {top}] for this grid, got {lmax}")
    return int(lmax)


def _degree_order(lmax: int) -> Tuple[np.ndarray, np.ndarray]:
    l = np.concatenate([np.full(2 * n + 1, n) for n in range(lmax + 1)])
    m = np.concatenate([np.arange(-n, n + 1) for n in range(lmax + 1)])
    return l, m


@dataclass(frozen=True)
class SpectralCoefficients:
    lmax: int
    degrees: np.ndarray
    orders: np.ndarray
    values: np.ndarray


def spectral_coefficients(f: ScalarFieldS2, lmax: Optional[int] = None) -> SpectralCoefficients:
    """a_lm = ∫ f·conj(Y_l^m) by Gauss-Legendre in colatitude and the trapezoid rule in longitude."""
    lmax = _band_limit(f, lmax)
    theta, weights = gauss_colatitudes(f.n_lat)
    l, m = _degree_order(lmax)
    # longitudinal Fourier coefficients: ∫ f e^{-imφ} dφ
    fourier = np.fft.fft(f.values, axis=1) * (2.0 * np.pi / f.n_lon)
    Y = _sph_harm(l[:, None], m[:, None], theta[None, :], 0.0)
    coeff = np.sum(weights[None, :] * np.conj(Y) * fourier[:, m % f.n_lon].T, axis=1)
    return SpectralCoefficients(lmax, l, m, coeff)


def _synthesize(coeffs: SpectralCoefficients, points: np.ndarray) -> np.ndarray:
    colat, lon = to_spherical(points)
    shape = colat.shape
    colat = colat.reshape(-1)
    lon = lon.reshape(-1)
    out = np.zeros(colat.size)
    # chunks bound the (harmonics × points) work array
    step = 4096
    for start in range(0, colat.size, step):
        sl = slice(start, start + step)
        Y = _sph_harm(coeffs.degrees[:, None], coeffs.orders[:, None], colat[None, sl], lon[None, sl])
        out[sl] = np.real(coeffs.values @ Y)
    return out.reshape(shape)


# -----------------------------------------------------------------------------
# Great circles
# -----------------------------------------------------------------------------
def circle_frame(axis: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal (u, w) spanning the plane normal to axis."""
    a = np.asarray(axis, float)
    if a.shape != (3,) or abs(np.linalg.norm(a) - 1.0) > 1e-12:
        raise ValueError("circle axis must be a unit 3-vector")
    _, _, vt = np.linalg.svd(a[None, :])
    u, w = vt[1], vt[2]
    return u, w


def circle_points(axis: Sequence[float], m: int = DEFAULT_NODES) -> np.ndarray:
    u, w = circle_frame(axis)
    s = 2.0 * np.pi * np.arange(m) / m
    return np.cos(s)[:, None] * u + np.sin(s)[:, None] * w


def great_circle_transform(
    f: ScalarFieldS2,
    axis: Sequence[float],
    m: int = DEFAULT_NODES,
    interpolation: str = "bilinear",
    lmax: Optional[int] = None,
) -> float:
    """Trapezoidal ∫ f over the great circle normal to axis (arc length, total 2π)."""
    if m < MIN_NODES:
        raise ValueError(f"need at least {MIN_NODES} quadrature nodes, got {m}")
    values = f.evaluate(circle_points(axis, m), interpolation, lmax)
    return float(2.0 * np.pi * np.mean(values))


def transform_sweep(
    f: ScalarFieldS2,
    axes: np.ndarray,
    m: int = DEFAULT_NODES,
    interpolation: str = "bilinear",
    lmax: Optional[int] = None,
) -> np.ndarray:
    """great_circle_transform over many axes in one vectorized evaluation."""
    axes = np.atleast_2d(np.asarray(axes, float))
    if m < MIN_NODES:
        raise ValueError(f"need at least {MIN_NODES} quadrature nodes, got {m}")
    pts = np.stack([circle_points(a, m) for a in axes])
    values = f.evaluate(pts.reshape(-1, 3), interpolation, lmax).reshape(len(axes), m)
    return 2.0 * np.pi * values.mean(axis=1)


def great_circle_reference(func: PointFunction, axis: Sequence[float], nodes: int = REFERENCE_NODES) -> float:
    """High-resolution trapezoidal integral of an analytic function, no grid involved."""
    return float(2.0 * np.pi * np.mean(func(circle_points(axis, nodes))))


# -----------------------------------------------------------------------------
# Random inputs
# -----------------------------------------------------------------------------
def random_axes(count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_rotation(seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_band_limited(
    degrees: Sequence[int], seed: int = 0, n_lat: int = DEFAULT_N_LAT, n_lon: int = DEFAULT_N_LON
) -> Tuple[ScalarFieldS2, PointFunction]:
    """Random combination of real harmonics of the given degrees, plus its exact point function."""
    rng = np.random.default_rng(seed)
    terms = [(l, m, rng.normal()) for l in degrees for m in range(-l, l + 1)]

    def func(points: np.ndarray) -> np.ndarray:
        return sum(c * real_harmonic(l, m)(points) for l, m, c in terms)

    return ScalarFieldS2.from_function(func, n_lat, n_lon), func


def random_odd_field(
    degrees: Sequence[int] = (1, 3, 5), seed: int = 0, n_lat: int = DEFAULT_N_LAT, n_lon: int = DEFAULT_N_LON
) -> ScalarFieldS2:
    if any(l % 2 == 0 for l in degrees):
        raise ValueError(f"odd fields need odd degrees, got {list(degrees)}")
    field, _ = random_band_limited(degrees, seed, n_lat, n_lon)
    # exact parity on the grid
    return field.parity_parts()[1]


# -----------------------------------------------------------------------------
# Kernel check
# -----------------------------------------------------------------------------
@dataclass
class AntipodalReport:
    axes: np.ndarray
    even: np.ndarray
    total: np.ndarray
    odd: np.ndarray
    parity_error: float

    @property
    def max_difference(self) -> float:
        return float(np.max(np.abs(self.total - self.even))) if self.even.size else 0.0

    @property
    def max_odd(self) -> float:
        return float(np.max(np.abs(self.odd))) if self.odd.size else 0.0

    def rows(self):
        for a, e, t in zip(self.axes, self.even, self.total):
            yield {"ax": a[0], "ay": a[1], "az": a[2], "even": e, "total": t, "difference": t - e}


def parity_error(f: ScalarFieldS2) -> float:
    """max |f + f∘J|."""
    return float(np.max(np.abs(f.values + f.antipodal().values)))


def antipodal_cancellation_check(
    f_even: ScalarFieldS2,
    f_odd: ScalarFieldS2,
    axes: Optional[np.ndarray] = None,
    count: int = 100,
    seed: int = 0,
    m: int = DEFAULT_NODES,
    interpolation: str = "bilinear",
) -> AntipodalReport:
    """Transforms of f_even and f_even + f_odd over sampled circles."""
    f_even._check_same_grid(f_odd)
    err = parity_error(f_odd)
    scale = max(1.0, float(np.max(np.abs(f_odd.values))))
    if err > PARITY_TOL * scale:
        logger.error(f"parity error {err:.3e} exceeds {PARITY_TOL * scale:.1e}")
        raise ValueError("f_odd not odd")

    axes = random_axes(count, seed) if axes is None else np.atleast_2d(np.asarray(axes, float))
    even = transform_sweep(f_even, axes, m, interpolation)
    total = transform_sweep(f_even + f_odd, axes, m, interpolation)
    odd = transform_sweep(f_odd, axes, m, interpolation)
    report = AntipodalReport(axes, even, total, odd, err)
    logger.info(f"antipodal check over {len(axes)} circles: max difference {report.max_difference:.3e}")
    return report
