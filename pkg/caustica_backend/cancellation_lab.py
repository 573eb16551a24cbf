"""
=============================================================================
CANCELLATION LAB — Pairs of packets whose singularities the transform misses
=============================================================================

For the unit-circle transform R the normal operator splits as
R*R = A0 + F+ + F-, where A0 is elliptic and F± move a packet at (x0, ξ̂) to
(x0 ∓ 2ξ̂, ξ̂). Restricting to circles centred near c0 = x0 + side·ξ̂ keeps half
of A0 and one F component, so the partner

    f1 = -2·A0⁻¹·F_side f2

(a packet sitting at x0 + 2·side·ξ̂) makes the localized normal operator
nearly annihilate f1 + f2 at both phase points. The lab builds that pair,
measures how much energy survives, and sweeps the frequency.

Measured quantities
-------------------
- rho_N: windowed energy of N_loc(f1 + f2) over that of N_loc f2, maximised
  over the probes at x0 and at the image x0 + 2·side·ξ̂ (both cone halves).
- rho_R: the same ratio for one application of R, probed at the circle centre
  c0 where both packets are seen.

Usage
-----
  pair = build_pair(PhasePoint((0, 0), (1, 0), 32.0), side=+1, grid=Grid2D(512, 8.0))
  rho_n, rho_r = cancellation_ratio(pair)
  sweep = cancellation_sweep((16, 32, 64, 128))
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from caustica_backend.circular_radon import (
    CIRCLE_MULTIPLIER,
    decomposition_multipliers,
    normal_operator,
)
from caustica_backend.field_core import (
    Grid2D,
    PhasePoint,
    ScalarField2D,
    WavepacketSpec,
    frequency_grid,
    make_wavepacket,
    probe_ratio,
    wrap,
)
from caustica_backend.geodesic_engine import (
    conormal_bundle,
    find_conjugate,
    unit_weight,
)
from caustica_backend.models import GeodesicModel
from caustica_backend.settings import thread_cap

logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Construction parameters
# -----------------------------------------------------------------------------
DEFAULT_TERMS = 2
A0_FLOOR = 1e-6
WIDTH_K = 6.0
PROBE_BAND = 0.25
SAFE_MARGIN = 3.0
LOCALIZER_RADIUS = 1.0
REFERENCE_FLOOR = 1e-30
SWEEP_KS = (16.0, 32.0, 64.0, 128.0)
SWEEP_GRID = (1024, 8.0)
PAIR_GRID = (512, 8.0)
SCON_ANGLE = 1e-3


@dataclass
class CancellationPair:
    f2: ScalarField2D
    f1: ScalarField2D
    k: float
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def center(self) -> PhasePoint:
        return PhasePoint(self.meta["x0"], self.meta["xi"], self.k)

    @property
    def side(self) -> int:
        return int(self.meta["side"])

    @property
    def width(self) -> float:
        return float(self.meta["width"])

    @property
    def terms(self) -> Optional[int]:
        return self.meta["terms"]

    @property
    def image(self) -> PhasePoint:
        """(x0 + 2·side·ξ̂, ξ̂): where f1 lives."""
        xi = self.center.xi
        return self.center.moved((2.0 * self.side * xi[0], 2.0 * self.side * xi[1]))

    @property
    def circle_center(self) -> PhasePoint:
        xi = self.center.xi
        return self.center.moved((self.side * xi[0], self.side * xi[1]))

    def total(self, sign: float = 1.0) -> ScalarField2D:
        return self.f2 + self.f1 * sign


@dataclass
class CancellationRow:
    k: float
    rho_N: float
    rho_R: float

    def as_dict(self) -> Dict[str, float]:
        return {"k": self.k, "rho_N": self.rho_N, "rho_R": self.rho_R}


@dataclass
class CancellationSweep:
    rows: List[CancellationRow]
    params: Dict[str, Any]

    @property
    def monotone(self) -> bool:
        rho = [r.rho_N for r in self.rows]
        return all(b < a for a, b in zip(rho, rho[1:]))


@dataclass
class SconWitness:
    found: bool
    theta: Optional[np.ndarray]
    xi: Optional[np.ndarray]
    angle: float
    tried: int

    def __bool__(self) -> bool:
        return self.found


# -----------------------------------------------------------------------------
# Construction
# -----------------------------------------------------------------------------
def _check_safe(center: PhasePoint, side: int, width: float, grid: Grid2D):
    """x0 and its image x0 + 2·side·ξ̂ must stay SAFE_MARGIN packet widths inside the period."""
    limit = 0.5 * grid.L - SAFE_MARGIN * width
    x0 = np.asarray(center.x)
    xi = np.asarray(center.xi)
    for point in (x0, x0 + 2.0 * side * xi):
        if np.any(np.abs(point) >= limit):
            raise ValueError("image point leaks")


def _partner_symbol(grid: Grid2D, xi: Sequence[float], side: int, terms: Optional[int]) -> np.ndarray:
    """-2·F_side/A0 on the lattice; F_side moves the ξ̂ lobe by +2·side·ξ̂."""
    a0, fplus, fminus = decomposition_multipliers(terms)
    kx, ky, _ = frequency_grid(grid)
    forward = kx * xi[0] + ky * xi[1] >= 0.0
    lead, trail = (fminus, fplus) if side > 0 else (fplus, fminus)
    f_side = np.where(forward, lead.values(grid), trail.values(grid))
    elliptic = a0.values(grid)
    elliptic = np.where(np.abs(elliptic) < A0_FLOOR, A0_FLOOR, elliptic)
    return -2.0 * f_side / elliptic


def partner(f2: ScalarField2D, xi: Sequence[float], side: int = 1, terms: Optional[int] = DEFAULT_TERMS) -> ScalarField2D:
    """f1 for a given f2; linear in f2."""
    symbol = _partner_symbol(f2.grid, xi, side, terms)
    out = np.fft.ifft2(np.fft.fft2(f2.values, norm="ortho") * symbol, norm="ortho").real
    return ScalarField2D(f2.grid, out)


def build_pair(
    center: PhasePoint,
    k: Optional[float] = None,
    side: int = 1,
    grid: Optional[Grid2D] = None,
    width: Optional[float] = None,
    terms: Optional[int] = DEFAULT_TERMS,
) -> CancellationPair:
    """Packet f2 at center and its cancelling partner f1 at x0 + 2·side·ξ̂."""
    if side not in (1, -1):
        raise ValueError(f"side must be +1 or -1, got {side}")
    if k is not None:
        center = PhasePoint(center.x, center.xi, k)
    grid = grid or Grid2D(*PAIR_GRID)
    if center.k >= 0.5 * grid.nyquist:
        raise ValueError(f"k={center.k:g} not below Nyquist/2 = {0.5 * grid.nyquist:g}")
    width = float(width or WIDTH_K / center.k)
    _check_safe(center, side, width, grid)

    f2 = make_wavepacket(WavepacketSpec(center, width), grid)
    f1 = partner(f2, center.xi, side, terms)
    meta = {
        "x0": center.x,
        "xi": center.xi,
        "k": center.k,
        "side": side,
        "width": width,
        "terms": terms,
        "n": grid.n,
        "L": grid.L,
    }
    logger.debug(f"pair at {center.x} side {side:+d}: |f1| = {f1.norm():.4f}")
    return CancellationPair(f2=f2, f1=f1, k=center.k, meta=meta)


# -----------------------------------------------------------------------------
# Localized operators
# -----------------------------------------------------------------------------
def circle_localizer(grid: Grid2D, c0: Sequence[float], radius: float = LOCALIZER_RADIUS) -> np.ndarray:
    """Smooth bump exp(1 - 1/(1 - r²)) on circle centres, r = |c - c0|/radius."""
    X, Y = grid.coords()
    dx = wrap(X - c0[0], grid.L) / radius
    dy = wrap(Y - c0[1], grid.L) / radius
    r2 = dx * dx + dy * dy
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def localized_normal_operator(
    f: ScalarField2D, center: Sequence[float], radius: float = LOCALIZER_RADIUS
) -> ScalarField2D:
    """R*(χ·R f) with χ = circle_localizer(center, radius): only circles centred near center."""
    chi = circle_localizer(f.grid, center, radius)
    Rf = CIRCLE_MULTIPLIER.apply(f)
    return CIRCLE_MULTIPLIER.apply(Rf.with_values(chi * Rf.values))


def cancellation_ratio(pair: CancellationPair, sign: float = 1.0) -> Tuple[float, float]:
    """(rho_N, rho_R) for f2 + sign·f1; sign = -1 is the no-cancellation control."""
    c0 = pair.circle_center.x
    total = pair.total(sign)

    n_total = localized_normal_operator(total, c0)
    n_ref = localized_normal_operator(pair.f2, c0)
    rho_n = max(
        probe_ratio(n_total, n_ref, probe, pair.width, PROBE_BAND, True, REFERENCE_FLOOR)
        for probe in (pair.center, pair.image)
    )

    r_total = CIRCLE_MULTIPLIER.apply(total)
    r_ref = CIRCLE_MULTIPLIER.apply(pair.f2)
    rho_r = probe_ratio(r_total, r_ref, pair.circle_center, pair.width, PROBE_BAND, True, REFERENCE_FLOOR)
    return float(rho_n), float(rho_r)


def off_target_ratio(pair: CancellationPair) -> float:
    """Global R*R(f1 + f2) vs R*R f2 at x0 - 2·side·ξ̂, a point outside the cancelling set."""
    probe = pair.center.moved(tuple(-2.0 * pair.side * c for c in pair.center.xi))
    return probe_ratio(
        normal_operator(pair.total()), normal_operator(pair.f2), probe, pair.width, PROBE_BAND, True, REFERENCE_FLOOR
    )


def mirrored_pair(pair: CancellationPair) -> CancellationPair:
    """Same construction started from the image point, pointing back at x0."""
    grid = pair.f2.grid
    return build_pair(pair.image, side=-pair.side, grid=grid, width=pair.width, terms=pair.terms)


# -----------------------------------------------------------------------------
# Sweep
# -----------------------------------------------------------------------------
def cancellation_sweep(
    ks: Sequence[float] = SWEEP_KS,
    grid: Optional[Grid2D] = None,
    x0: Sequence[float] = (0.0, 0.0),
    xi: Sequence[float] = (1.0, 0.0),
    side: int = 1,
    terms: Optional[int] = DEFAULT_TERMS,
    sign: float = 1.0,
    workers: Optional[int] = None,
    progress: Optional[Callable[[CancellationRow], None]] = None,
) -> CancellationSweep:
    """rho_N, rho_R for each k; frequencies run as independent jobs."""
    grid = grid or Grid2D(*SWEEP_GRID)
    ks = sorted(float(k) for k in ks)
    if not ks:
        raise ValueError("need at least one frequency")

    def job(k: float) -> CancellationRow:
        pair = build_pair(PhasePoint(tuple(x0), tuple(xi), k), side=side, grid=grid, terms=terms)
        rho_n, rho_r = cancellation_ratio(pair, sign)
        row = CancellationRow(k, rho_n, rho_r)
        logger.info(f"k={k:g}: rho_N={rho_n:.3e} rho_R={rho_r:.3e}")
        if progress:
            progress(row)
        return row

    workers = max(1, min(workers or thread_cap(), len(ks)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(job, ks))

    params = {
        "n": grid.n,
        "L": grid.L,
        "x0": list(x0),
        "xi": list(xi),
        "side": side,
        "terms": terms,
        "sign": sign,
        "width_k": WIDTH_K,
        "band": PROBE_BAND,
        "localizer_radius": LOCALIZER_RADIUS,
    }
    sweep = CancellationSweep(rows, params)
    if not sweep.monotone:
        logger.warning("rho_N is not strictly decreasing across the sweep")
    return sweep


# -----------------------------------------------------------------------------
# Conormal condition
# -----------------------------------------------------------------------------
def _orthogonal_directions(xi1: np.ndarray, samples: int) -> np.ndarray:
    """Unit θ with ξ₁(θ) = 0: ±Jξ₁ in the plane, a circle of them in 3D."""
    dim = xi1.size
    xi_hat = xi1 / np.linalg.norm(xi1)
    if dim == 2:
        j = np.array([-xi_hat[1], xi_hat[0]])
        return np.array([j, -j])
    basis = np.linalg.svd(xi_hat[None, :])[2][1:]
    angles = 2.0 * np.pi * np.arange(samples) / samples
    return np.cos(angles)[:, None] * basis[0] + np.sin(angles)[:, None] * basis[1]


def _angle_to_line(a: np.ndarray, b: np.ndarray) -> float:
    c = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(min(1.0, c)))


def scon_probe(
    model: GeodesicModel,
    p0,
    xi1,
    samples: int = 16,
    t_max: Optional[float] = None,
    weight: Callable[[np.ndarray, np.ndarray], float] = unit_weight,
    tol: float = SCON_ANGLE,
) -> SconWitness:
    """Look for θ₁ ⟂ ξ₁ whose conjugate locus is not conormal to ξ₁ at p0."""
    p0 = np.asarray(p0, float)
    xi1 = np.asarray(xi1, float)
    if xi1.shape != (model.dim,) or not np.linalg.norm(xi1) > 0:
        raise ValueError(f"xi1 must be a nonzero {model.dim}-covector")

    reached = 0
    best = 0.0
    for theta in _orthogonal_directions(xi1, samples):
        if weight(p0, theta) == 0.0:
            continue
        rec = find_conjugate(model, p0, theta, t_max, classify=True)
        if rec is None or rec.kernel_dim != 1:
            continue
        reached += 1
        xi = conormal_bundle(model, p0, rec.v, rec).xi
        angle = _angle_to_line(xi, xi1)
        best = max(best, angle)
        if angle > tol:
            logger.info(f"{model.name}: witness θ={np.round(rec.theta, 4)} at angle {angle:.3e}")
            return SconWitness(True, rec.theta, xi, angle, reached)

    if not reached:
        raise ValueError("no caustic in range")
    return SconWitness(False, None, None, best, reached)
