"""
=============================================================================
KERNEL PROBE — Schwartz kernel of the normal operator near a fold caustic
=============================================================================

With Nf(p) = ∫ W(p, v) f(exp_p v) dv and W = |v|^(1-n)·κ♯·κ, the kernel at q
is the sum of W/|det d exp| over the preimages of q. Near a fold conjugate
vector v0 the two preimages v± merge on Σ(p), so the fold pair alone carries
the 1/√z' blow-up on the range side of Σ(p) and nothing on the other side.

kernel_slice samples that pair sum along a path crossing Σ(p):
- exact: the pair sum at each path point;
- probed: the pair sum averaged against Gaussian bumps of widths h and h/2
  (tensor Gauss–Hermite nodes in a frame aligned with Σ(p)), combined by
  Richardson extrapolation.

fit_sqrt_singularity fits log K = log C + e·log z' + c1·√z' + c2·z' on a
window and compares C with √2·W_Σ/√(A·D) from sing_fit_inputs.

diagonal_symbol_check measures the non-conjugate (pseudodifferential) part of
N on wavepackets for translation-invariant planar models.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from caustica_backend.field_core import (
    Grid2D,
    PhasePoint,
    WavepacketSpec,
    fft2,
    frequency_grid,
    make_wavepacket,
)
from caustica_backend.geodesic_engine import (
    Caustic,
    SingFitInputs,
    Weight,
    conjugate_near,
    conjugate_record,
    find_conjugate,
    orthonormal_complement,
    sing_fit_inputs,
    unit_weight,
)
from caustica_backend.models import GeodesicModel

logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Defaults
# -----------------------------------------------------------------------------
DEFAULT_Z_RANGE = (0.01, 0.5)
DEFAULT_SAMPLES = 40
DEFAULT_NEGATIVE_SAMPLES = 6
DEFAULT_WINDOW = (0.01, 0.25)
MIN_FIT_POINTS = 12
NORMAL_NODES = 12
TANGENT_NODES = 6
TRANSVERSAL_MIN = 1e-2
NEWTON_TOL = 1e-12
ODE_NEWTON_TOL = 1e-9
NEWTON_ITERATIONS = 40
DIAGONAL_KS = (32, 64)
T_NODES = 160
THETA_NODES = 512


# -----------------------------------------------------------------------------
# Local fold geometry
# -----------------------------------------------------------------------------
@dataclass
class FoldChart:
    """Quadratic model of exp_p near a fold vector v0."""

    model: GeodesicModel
    p: np.ndarray
    v0: np.ndarray
    q0: np.ndarray
    kernel: np.ndarray
    normal: np.ndarray
    curvature: float
    pinv: np.ndarray
    tangents: np.ndarray
    metric_scale: float
    kappa_sharp: Weight = unit_weight
    kappa: Weight = unit_weight

    def normal_offset(self, y: np.ndarray) -> np.ndarray:
        """First-order z' of points y (rows) relative to q0."""
        return (np.atleast_2d(y) - self.q0[None, :]) @ self.normal * self.metric_scale

    def seeds(self, y: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Quadratic-model preimages v0 ± τN + D⁺(tangential offset), τ = √(2|z|/κ).

        For z < 0 the quadratic model has no real pair; the seeds are still
        spread by τ so Newton can look for one.
        """
        y = np.atleast_2d(y)
        tau = np.sqrt(2.0 * np.abs(z) / (self.curvature * self.metric_scale))
        offset = y - self.q0[None, :]
        tangential = offset - np.outer(offset @ self.normal, self.normal)
        base = self.v0[None, :] + tangential @ self.pinv.T
        step = tau[:, None] * self.kernel[None, :]
        return base + step, base - step


def fold_chart(
    model: GeodesicModel,
    p,
    v0,
    kappa_sharp: Weight = unit_weight,
    kappa: Weight = unit_weight,
) -> FoldChart:
    rec = conjugate_record(model, p, v0)
    if rec.kernel_dim != 1 or rec.classification != Caustic.FOLD:
        raise ValueError("not a simple fold point")
    D = model.dexp(rec.p, rec.v)
    U, _, _ = np.linalg.svd(D)
    a = U[:, -1]
    tau = 1e-2 * rec.t_star
    q_plus, _ = model.exp(rec.p, rec.v + tau * rec.kernel)
    q_minus, _ = model.exp(rec.p, rec.v - tau * rec.kernel)
    c2 = (q_plus + q_minus - 2.0 * rec.q) / tau ** 2
    side = np.sign(a @ c2)
    normal = side * a
    Gq = model.metric(rec.q)
    return FoldChart(
        model=model,
        p=rec.p,
        v0=rec.v,
        q0=rec.q,
        kernel=rec.kernel,
        normal=normal,
        curvature=float(abs(a @ c2)),
        pinv=np.linalg.pinv(D, rcond=1e-8),
        tangents=U[:, :-1],
        metric_scale=float(np.sqrt(normal @ Gq @ normal)),
        kappa_sharp=kappa_sharp,
        kappa=kappa,
    )


def _newton(model: GeodesicModel, p: np.ndarray, Y: np.ndarray, V: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Damped Newton for exp_p(v) = y, row by row; returns (roots, converged)."""
    V = V.copy()
    tol = NEWTON_TOL if model.closed_form else ODE_NEWTON_TOL
    scale = tol * (1.0 + np.linalg.norm(Y, axis=1))
    err = np.linalg.norm(model.exp_batch(p, V) - Y, axis=1)
    for _ in range(NEWTON_ITERATIONS):
        active = err > scale
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        R = model.exp_batch(p, V[idx]) - Y[idx]
        D = model.dexp_batch(p, V[idx])
        try:
            step = np.linalg.solve(D, R[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.einsum("mij,mj->mi", np.linalg.pinv(D), R)
        lam = np.ones(len(idx))
        for _ in range(10):
            trial = V[idx] - lam[:, None] * step
            new_err = np.linalg.norm(model.exp_batch(p, trial) - Y[idx], axis=1)
            worse = new_err > err[idx]
            if not worse.any():
                break
            lam[worse] *= 0.5
        V[idx] = trial
        err[idx] = new_err
    return V, err <= scale


def _pair_weight(chart: FoldChart, V: np.ndarray) -> np.ndarray:
    """W(p, v)/|invariant det d exp| per row."""
    model = chart.model
    n = model.dim
    out = np.empty(len(V))
    Gp_det = np.linalg.det(model.metric(chart.p))
    dets = np.linalg.det(model.dexp_batch(chart.p, V))
    Q = model.exp_batch(chart.p, V)
    for i, v in enumerate(V):
        size = model.norm(chart.p, v)
        q = Q[i]
        inv_det = dets[i] * np.sqrt(np.linalg.det(model.metric(q)) / Gp_det)
        w_back = chart.model.exp(chart.p, v)[1]
        W = size ** (1 - n) * chart.kappa_sharp(chart.p, v / size) * chart.kappa(q, -w_back / size)
        out[i] = W / abs(inv_det)
    return out


def _pair_sum(chart: FoldChart, Y: np.ndarray, plus: np.ndarray, minus: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kernel values at Y from the fold pair; zero where the pair does not exist."""
    roots_p, ok_p = _newton(chart.model, chart.p, Y, plus)
    roots_m, ok_m = _newton(chart.model, chart.p, Y, minus)
    t0 = chart.model.norm(chart.p, chart.v0)
    distinct = np.linalg.norm(roots_p - roots_m, axis=1) > 1e-7 * t0
    ok = ok_p & ok_m & distinct
    values = np.zeros(len(Y))
    if ok.any():
        values[ok] = _pair_weight(chart, roots_p[ok]) + _pair_weight(chart, roots_m[ok])
    return values, roots_p, roots_m


def _continued_roots(chart: FoldChart, Y: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pair sums at path points; z > 0 points are continued in order of z from the previous roots."""
    values = np.zeros(len(Y))
    roots_p = np.zeros((len(Y), chart.model.dim))
    roots_m = np.zeros_like(roots_p)
    prev: Optional[Tuple[np.ndarray, np.ndarray, float]] = None
    for i in np.argsort(z):
        y = Y[i:i + 1]
        if z[i] <= 0:
            plus, minus = chart.seeds(y, z[i:i + 1])
            val, rp, rm = _pair_sum(chart, y, plus, minus)
            values[i] = val[0]
            roots_p[i] = rp[0]
            roots_m[i] = rm[0]
            continue
        if prev is None:
            plus, minus = chart.seeds(y, z[i:i + 1])
        else:
            rp, rm, zp = prev
            s = np.sqrt(z[i] / zp)
            plus = (chart.v0 + (rp - chart.v0) * s)[None, :]
            minus = (chart.v0 + (rm - chart.v0) * s)[None, :]
        val, rp, rm = _pair_sum(chart, y, plus, minus)
        if val[0] == 0.0:
            raise RuntimeError(f"fold pair lost at z'={z[i]:.4g}; shorten the path")
        values[i] = val[0]
        roots_p[i] = rp[0]
        roots_m[i] = rm[0]
        prev = (rp[0], rm[0], z[i])
    return values, roots_p, roots_m


def kernel_at(
    model: GeodesicModel,
    p,
    q,
    v0,
    kappa_sharp: Weight = unit_weight,
    kappa: Weight = unit_weight,
    steps: int = 12,
) -> float:
    """Fold-pair kernel K(p, q) for q near Σ(p) around exp_p(v0)."""
    chart = fold_chart(model, p, v0, kappa_sharp, kappa)
    q = np.asarray(q, float)
    z_end = float(chart.normal_offset(q)[0])
    if z_end <= 0:
        plus, minus = chart.seeds(q[None, :], np.array([z_end]))
        return float(_pair_sum(chart, q[None, :], plus, minus)[0][0])
    lam = np.geomspace(1e-3, 1.0, steps)
    Y = chart.q0[None, :] + lam[:, None] * (q - chart.q0)[None, :]
    values, _, _ = _continued_roots(chart, Y, lam * z_end)
    return float(values[-1])


# -----------------------------------------------------------------------------
# Slices across Σ(p)
# -----------------------------------------------------------------------------
@dataclass
class KernelSlice:
    model_name: str
    p: np.ndarray
    v0: np.ndarray
    q0: np.ndarray
    normal: np.ndarray
    path_direction: np.ndarray
    points: np.ndarray
    z_prime: np.ndarray
    exact: np.ndarray
    coarse: np.ndarray
    fine: np.ndarray
    kernel: np.ndarray
    bump_width: float
    inputs: Optional[SingFitInputs] = None

    @property
    def positive(self) -> np.ndarray:
        return self.z_prime > 0

    def rows(self) -> List[Dict[str, float]]:
        return [
            {
                "z_prime": float(z),
                "kernel": float(k),
                "exact": float(e),
                "coarse": float(c),
                "fine": float(f),
            }
            for z, k, e, c, f in zip(self.z_prime, self.kernel, self.exact, self.coarse, self.fine)
        ]


def signed_distance(chart: FoldChart, y: np.ndarray, t_guess: Optional[float] = None) -> float:
    """Signed metric distance from y to Σ(p), positive on the range side."""
    model = chart.model
    theta0 = model.unit(chart.p, chart.v0)
    t0 = t_guess or model.norm(chart.p, chart.v0)
    E = orthonormal_complement(model, chart.p, theta0)

    def foot(c: np.ndarray) -> np.ndarray:
        rec = conjugate_near(model, chart.p, model.unit(chart.p, theta0 + E @ c), t0, spread=0.3)
        if rec is None:
            raise ValueError("transversality violated")
        return rec.q

    fit = optimize.least_squares(lambda c: foot(c) - y, np.zeros(model.dim - 1), xtol=1e-14, ftol=1e-14, gtol=1e-14)
    gap = y - foot(fit.x)
    dist = float(np.linalg.norm(gap)) * chart.metric_scale
    return dist if gap @ chart.normal >= 0 else -dist


def _bump_frame(chart: FoldChart) -> np.ndarray:
    return np.column_stack([chart.normal, chart.tangents])


def _gauss_hermite_nodes(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes (m, dim) and weights (m) of a unit-variance Gaussian in the frame (normal, tangents...)."""
    xn, wn = np.polynomial.hermite.hermgauss(NORMAL_NODES)
    xt, wt = np.polynomial.hermite.hermgauss(TANGENT_NODES)
    axes = [(xn, wn)] + [(xt, wt)] * (dim - 1)
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1) * np.sqrt(2.0)
    weights = np.prod(np.stack([w.ravel() for w in wgrids], axis=1), axis=1) / np.pi ** (dim / 2.0)
    return nodes, weights


def _bump_average(
    chart: FoldChart, center: np.ndarray, z_center: float, roots: Tuple[np.ndarray, np.ndarray], width: float
) -> float:
    """∫ K(y) b_width(y - center) dVol(y) by Gauss–Hermite quadrature."""
    nodes, weights = _gauss_hermite_nodes(chart.model.dim)
    Y = center[None, :] + width * nodes @ _bump_frame(chart).T
    z_nodes = z_center + width * nodes[:, 0] * chart.metric_scale
    plus, minus = chart.seeds(Y, z_nodes)
    if roots[0] is not None:
        up = z_nodes > 0
        s = np.sqrt(z_nodes[up] / z_center)[:, None]
        offset = Y[up] - center[None, :]
        tangential = offset - np.outer(offset @ chart.normal, chart.normal)
        shift = tangential @ chart.pinv.T
        plus[up] = chart.v0 + (roots[0] - chart.v0)[None, :] * s + shift
        minus[up] = chart.v0 + (roots[1] - chart.v0)[None, :] * s + shift
    values, _, _ = _pair_sum(chart, Y, plus, minus)
    G = chart.model.metric
    vol = np.array([np.sqrt(np.linalg.det(G(y))) for y in Y]) / np.sqrt(np.linalg.det(G(center)))
    return float(np.sum(weights * values * vol))


def kernel_slice(
    model: GeodesicModel,
    p,
    v0,
    path_direction: Optional[Sequence[float]] = None,
    z_range: Tuple[float, float] = DEFAULT_Z_RANGE,
    samples: int = DEFAULT_SAMPLES,
    negative_samples: int = DEFAULT_NEGATIVE_SAMPLES,
    bump_width: Optional[float] = None,
    kappa_sharp: Weight = unit_weight,
    kappa: Weight = unit_weight,
) -> KernelSlice:
    """Kernel of N along q0 + s·d crossing Σ(p) at q0 = exp_p(v0)."""
    z_lo, z_hi = z_range
    if not 0 < z_lo < z_hi:
        raise ValueError(f"z' range must satisfy 0 < low < high, got {z_range}")
    chart = fold_chart(model, p, v0, kappa_sharp, kappa)
    d = chart.normal if path_direction is None else np.asarray(path_direction, float)
    d = d / np.linalg.norm(d)
    if np.arcsin(min(1.0, abs(d @ chart.normal))) < TRANSVERSAL_MIN:
        raise ValueError("transversality violated")
    rate = (d @ chart.normal) * chart.metric_scale

    targets = np.concatenate([
        np.geomspace(z_lo, z_hi, samples),
        -np.geomspace(max(z_lo, 8.0 * (bump_width or z_lo / 4.0)), z_hi, negative_samples),
    ])
    points = chart.q0[None, :] + np.outer(targets / rate, d)
    z = np.array([signed_distance(chart, y) for y in points])

    h = bump_width or float(z[z > 0].min()) / 4.0
    exact, roots_p, roots_m = _continued_roots(chart, points, z)
    coarse = np.zeros(len(points))
    fine = np.zeros(len(points))
    for i, (y, zi) in enumerate(zip(points, z)):
        roots = (roots_p[i], roots_m[i]) if zi > 0 else (None, None)
        coarse[i] = _bump_average(chart, y, zi, roots, h)
        fine[i] = _bump_average(chart, y, zi, roots, h / 2.0)
    kernel = (4.0 * fine - coarse) / 3.0

    inputs = sing_fit_inputs(model, chart.p, chart.v0, kappa_sharp, kappa)
    return KernelSlice(
        model_name=model.name,
        p=chart.p,
        v0=chart.v0,
        q0=chart.q0,
        normal=chart.normal,
        path_direction=d,
        points=points,
        z_prime=z,
        exact=exact,
        coarse=coarse,
        fine=fine,
        kernel=kernel,
        bump_width=h,
        inputs=inputs,
    )


# -----------------------------------------------------------------------------
# √z' fit
# -----------------------------------------------------------------------------
@dataclass
class SingularityFit:
    exponent: float
    coeff: float
    predicted: Optional[float]
    residual: float
    window: Tuple[float, float]
    points: int

    @property
    def coeff_ratio(self) -> Optional[float]:
        return None if not self.predicted else self.coeff / self.predicted

    def as_dict(self) -> Dict[str, object]:
        return {
            "exponent": self.exponent,
            "coeff": self.coeff,
            "predicted": self.predicted,
            "coeff_ratio": self.coeff_ratio,
            "residual": self.residual,
            "window": list(self.window),
            "points": self.points,
        }


def fit_power_law(
    z_prime: np.ndarray,
    kernel: np.ndarray,
    window: Tuple[float, float] = DEFAULT_WINDOW,
    predicted: Optional[float] = None,
    min_points: int = MIN_FIT_POINTS,
) -> SingularityFit:
    """Least squares for log K = log C + e·log z' + c1·√z' + c2·z' on the window."""
    lo, hi = window
    if not 0 < lo < hi:
        raise ValueError(f"fit window must satisfy 0 < low < high, got {window}")
    z = np.asarray(z_prime, float)
    K = np.asarray(kernel, float)
    sel = (z >= lo) & (z <= hi) & (K > 0)
    if sel.sum() < min_points:
        raise ValueError(f"fit window {window} outside sampled range ({int(sel.sum())} points, need {min_points})")
    zs = z[sel]
    design = np.column_stack([np.ones_like(zs), np.log(zs), np.sqrt(zs), zs])
    coef, *_ = np.linalg.lstsq(design, np.log(K[sel]), rcond=None)
    model_K = np.exp(design @ coef)
    residual = float(np.sqrt(np.mean((model_K / K[sel] - 1.0) ** 2)))
    return SingularityFit(
        exponent=float(coef[1]),
        coeff=float(np.exp(coef[0])),
        predicted=predicted,
        residual=residual,
        window=(float(lo), float(hi)),
        points=int(sel.sum()),
    )


def fit_sqrt_singularity(slice_: KernelSlice, window: Tuple[float, float] = DEFAULT_WINDOW) -> SingularityFit:
    """Fit the probed kernel of a slice; the prediction comes from the slice's fold inputs."""
    predicted = slice_.inputs.predicted_coeff if slice_.inputs else None
    return fit_power_law(slice_.z_prime, slice_.kernel, window, predicted)


# -----------------------------------------------------------------------------
# Pseudodifferential part
# -----------------------------------------------------------------------------
@dataclass
class DiagonalSymbolReport:
    max_relative_error: float
    rows: List[Dict[str, float]] = field(default_factory=list)


def smooth_cutoff(t: np.ndarray, t_cut: float) -> np.ndarray:
    """1 on [0, t_cut/2], C∞ descent to 0 at t_cut."""
    x = np.clip((np.asarray(t, float) - 0.5 * t_cut) / (0.5 * t_cut), 0.0, 1.0)

    def psi(s):
        return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)

    return psi(1.0 - x) / (psi(1.0 - x) + psi(x))


def _symbol_values(
    model: GeodesicModel,
    p: np.ndarray,
    xis: np.ndarray,
    weight: Callable[[np.ndarray], float],
    t_cut: float,
    chunk: int = 8,
) -> np.ndarray:
    """Σ_{s=±1} ∫∫ χ(t) w(θ) exp(i ξ·(γ_θ(s t) - p)) dt dθ for each row of xis."""
    tn, tw = np.polynomial.legendre.leggauss(T_NODES)
    t = 0.5 * t_cut * (tn + 1.0)
    tw = 0.5 * t_cut * tw * smooth_cutoff(t, t_cut)
    ang = 2.0 * np.pi * np.arange(THETA_NODES) / THETA_NODES
    thetas = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    wtheta = np.array([weight(th) for th in thetas]) * (2.0 * np.pi / THETA_NODES)

    displacements = []
    weights = []
    for m, sign in ((model, 1.0), (model.reversed(), -1.0)):
        V = (sign * t[:, None, None] * thetas[None, :, :]).reshape(-1, 2)
        displacements.append(m.exp_batch(p, V) - p[None, :])
        weights.append((tw[:, None] * wtheta[None, :]).ravel())
    Dxy = np.concatenate(displacements)
    wts = np.concatenate(weights)
    keep = wts != 0
    Dxy = Dxy[keep]
    wts = wts[keep]

    out = np.empty(len(xis), dtype=complex)
    for start in range(0, len(xis), chunk):
        block = xis[start:start + chunk]
        phase = block @ Dxy.T
        out[start:start + chunk] = np.exp(1j * phase) @ wts
    return out


def diagonal_symbol_check(
    model: GeodesicModel,
    p=(0.0, 0.0),
    xi_samples: Sequence[float] = (0.0, 0.7, 2.1),
    ks: Sequence[float] = DIAGONAL_KS,
    weight: Optional[Callable[[np.ndarray], float]] = None,
    t_cut: Optional[float] = None,
    grid: Optional[Grid2D] = None,
    sigma: float = 1.0,
) -> DiagonalSymbolReport:
    """‖N_d g‖/‖g‖ for packets g at (p, k·ξ̂) against the principal symbol (2π/k)·(w(ξ⊥) + w(-ξ⊥))."""
    if model.dim != 2 or not model.translation_invariant:
        raise ValueError("diagonal symbol check needs a translation-invariant planar model")
    p = np.asarray(p, float)
    weight = weight or (lambda theta: 1.0)
    probe_dirs = [np.array([np.cos(a), np.sin(a)]) for a in np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)]
    first = [rec.t_star for rec in (find_conjugate(model, p, d, classify=False) for d in probe_dirs) if rec]
    if t_cut is None:
        t_cut = 0.6 * min(first) if first else 0.6 * model.default_t_max()
    if first and min(first) <= t_cut:
        raise ValueError("conjugate point inside the truncated t-range")

    grid = grid or Grid2D(512, 16.0)
    kx, ky, _ = frequency_grid(grid)
    rows = []
    worst = 0.0
    for angle in xi_samples:
        xi_hat = np.array([np.cos(angle), np.sin(angle)])
        for k in ks:
            g = make_wavepacket(WavepacketSpec(PhasePoint(tuple(p), tuple(xi_hat), k), sigma), grid)
            F = fft2(g).values
            power = np.abs(F) ** 2
            significant = power > 1e-10 * power.max()
            half = significant & (kx * xi_hat[0] + ky * xi_hat[1] > 0)
            xis = np.stack([kx[half], ky[half]], axis=1)
            m = _symbol_values(model, p, xis, weight, t_cut)
            # real packet: the opposite lobe carries conj(m(-ξ))
            response = np.sqrt(2.0 * np.sum(np.abs(m) ** 2 * power[half]) / np.sum(power[significant]))
            perp = np.array([-xi_hat[1], xi_hat[0]])
            expected = 2.0 * np.pi / k * (weight(perp) + weight(-perp))
            rel = abs(response / expected - 1.0) if expected > 0 else float("nan")
            if expected > 0:
                worst = max(worst, rel)
            rows.append({"angle": float(angle), "k": float(k), "response": float(response), "expected": float(expected), "relative_error": rel})
    return DiagonalSymbolReport(max_relative_error=worst, rows=rows)
