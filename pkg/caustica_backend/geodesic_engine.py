"""
=============================================================================
GEODESIC ENGINE — Conjugate points, caustic types, conormals, canonical graphs
=============================================================================

Works on any GeodesicModel from caustica_backend.models. Determinants are the
invariant ones (metric-weighted), so sign changes and the fold quantities A,
D, B do not depend on the chart.

Pipeline
--------
1. find_conjugate: scan det d exp along a ray, bracket the first sign change,
   refine with Brent's method.
2. classify_caustic: SVD of d exp gives the kernel N_p(v); the gradient of the
   determinant gives the normal of S(p). Fold if N is one-dimensional and
   transversal, Blowdown1 if N stays tangent at nearby conjugate vectors,
   BlowdownK if the kernel is larger.
3. conjugate_locus / conormal_bundle: sampled S(p), Σ(p) and the covectors
   (ξ, η) with η = -a, ξ = a·∂exp/∂p for a the left null vector of d exp.
4. graph_test / canonical_map: the relation (p, ξ) ↦ (q, η) and the rank of
   its projection on (p, ξ).

Usage
-----
  model = parse_model("magnetic3d:2")
  rec = find_conjugate(model, np.zeros(3), np.array([1.0, 0.0, 0.0]))
  sample = conormal_bundle(model, rec.p, rec.v)
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from caustica_backend.models import GeodesicModel

logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Tolerances
# -----------------------------------------------------------------------------
RAY_SAMPLES = 512
T_TOLERANCE = 1e-12
KERNEL_THRESHOLD = 1e-6
TRANSVERSALITY_TOL = 1e-3
DDET_TOL = 1e-8
NEAR_ZERO = 1e-6
TANGENCY_SAMPLES = 8
TANGENCY_STEP = 0.02
LOCUS_STEP = 1e-4
GRAPH_SCALE = 1e-3
RANK_THRESHOLD = 1e-6

Weight = Callable[[np.ndarray, np.ndarray], float]


class Caustic(str, Enum):
    FOLD = "Fold"
    BLOWDOWN1 = "Blowdown1"
    BLOWDOWN_K = "BlowdownK"
    UNRESOLVED = "Unresolved"


@dataclass
class ExpResult:
    q: np.ndarray
    w: np.ndarray
    dexp: np.ndarray


@dataclass
class ConjugateRecord:
    """Conjugate vector v = t_star·theta (so exp_p(v) is reached at time 1)."""

    p: np.ndarray
    v: np.ndarray
    t_star: float
    theta: np.ndarray
    kernel_dim: int
    classification: Caustic
    transversality: float
    ddet: float
    A: float
    kernel: np.ndarray
    gradient: np.ndarray
    singular_values: np.ndarray
    q: np.ndarray
    w: np.ndarray


@dataclass
class ConormalSample:
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    w: np.ndarray
    xi: np.ndarray
    eta: np.ndarray


@dataclass
class JacobiCheck:
    xi_error: float
    eta_error: float
    sign_consistent: bool


@dataclass
class ConjugateLocus:
    directions: np.ndarray
    v: np.ndarray
    t_star: np.ndarray
    q: np.ndarray
    w: np.ndarray
    classes: List[Caustic]
    kernel_dims: np.ndarray
    A: np.ndarray
    D: np.ndarray
    tangency: np.ndarray
    missed: int = 0
    warning: bool = False

    @property
    def fold_fraction(self) -> float:
        if not self.classes:
            return 0.0
        return sum(c == Caustic.FOLD for c in self.classes) / len(self.classes)


@dataclass
class GraphTest:
    rank: int
    is_graph: bool
    dim: int
    singular_values: np.ndarray


@dataclass
class CanonicalImage:
    q: np.ndarray
    eta: np.ndarray
    v: np.ndarray
    xi: np.ndarray


@dataclass
class SingFitInputs:
    A: float
    D: float
    W_sigma: float
    phi: Optional[float]
    B: float
    b_equals_ad_error: Optional[float]
    predicted_coeff: float
    t_star: float
    dim: int


@dataclass
class FoldSymmetry:
    p_class: Caustic
    q_class: Caustic
    p_kernel_dim: int
    q_kernel_dim: int
    image_norm: float
    return_error: float

    @property
    def holds(self) -> bool:
        return (
            self.p_class == Caustic.FOLD
            and self.q_class == Caustic.FOLD
            and self.p_kernel_dim == 1
            and self.q_kernel_dim == 1
            and self.image_norm > DDET_TOL
        )


@dataclass
class JacobiReport:
    initial: float
    final: float

    @property
    def ratio(self) -> float:
        return self.final / self.initial


def unit_weight(point: np.ndarray, direction: np.ndarray) -> float:
    return 1.0


# -----------------------------------------------------------------------------
# Linear algebra in the metric
# -----------------------------------------------------------------------------
def _metric_factor(G: np.ndarray) -> np.ndarray:
    """L with G = L Lᵀ."""
    return np.linalg.cholesky(G)


def orthonormal_complement(model: GeodesicModel, p: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Columns spanning the g(p)-orthogonal complement of theta, g(p)-orthonormal."""
    G = model.metric(p)
    n = model.dim
    basis = [theta / np.sqrt(theta @ G @ theta)]
    for e in np.eye(n):
        c = e - sum((b @ G @ e) * b for b in basis)
        norm = np.sqrt(c @ G @ c)
        if norm > 1e-8:
            basis.append(c / norm)
        if len(basis) == n:
            break
    return np.stack(basis[1:], axis=1)


def _g_orthonormalize(T: np.ndarray, G: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(T.T @ G @ T)
    return T @ np.linalg.inv(L).T


def _chart_direction(model: GeodesicModel, p: np.ndarray, theta0: np.ndarray, E: np.ndarray, c: np.ndarray):
    return model.unit(p, theta0 + E @ c)


# -----------------------------------------------------------------------------
# exp and the regularity checks
# -----------------------------------------------------------------------------
def exp_map(model: GeodesicModel, p, v) -> ExpResult:
    q, w, D = model.exp_dexp(np.asarray(p, float), np.asarray(v, float))
    return ExpResult(q, w, D)


def jacobian_agreement(model: GeodesicModel, p, v) -> float:
    """max |d exp (closed form) - d exp (variational ODE)|."""
    if not (model.closed_form and model.has_ode):
        raise ValueError(f"{model.name} has no second realization of d exp to compare")
    return float(np.max(np.abs(model.dexp(p, v) - model.ode_dexp(p, v))))


def flow_start_error(model: GeodesicModel, p, u, h: float = 1e-5) -> Tuple[float, float]:
    """(|flow(p,u,0) - p|, |d/dt flow at 0 - u|), the latter by a one-sided second-order difference."""
    p = np.asarray(p, float)
    u = np.asarray(u, float)
    x0, _ = model.flow(p, u, 0.0)
    x1, _ = model.flow(p, u, h)
    x2, _ = model.flow(p, u, 2 * h)
    velocity = (-3.0 * x0 + 4.0 * x1 - x2) / (2 * h)
    return float(np.linalg.norm(x0 - p)), float(np.linalg.norm(velocity - u))


def return_identity_error(model: GeodesicModel, p, v) -> float:
    """|exp_q(w) - p| for the reversed model, (q, w) = exp_p(v)."""
    p = np.asarray(p, float)
    q, w = model.exp(p, np.asarray(v, float))
    back, _ = model.reversed().exp(q, w)
    return float(np.linalg.norm(back - p))


# -----------------------------------------------------------------------------
# Conjugate points
# -----------------------------------------------------------------------------
def _det_along(model: GeodesicModel, p: np.ndarray, theta: np.ndarray) -> Callable[[float], float]:
    def det(t: float) -> float:
        return float(np.linalg.det(model.dexp(p, t * theta)))

    return det


def _refine(det, a: float, b: float) -> float:
    return float(optimize.brentq(det, a, b, xtol=T_TOLERANCE, maxiter=200))


def find_conjugate(
    model: GeodesicModel,
    p,
    theta,
    t_max: Optional[float] = None,
    samples: int = RAY_SAMPLES,
    classify: bool = True,
) -> Optional[ConjugateRecord]:
    """First conjugate vector along the ray t·theta, t ∈ (0, t_max]."""
    p = np.asarray(p, float)
    theta = model.unit(p, np.asarray(theta, float))
    t_max = float(t_max or model.default_t_max())
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max}")

    ts = t_max * np.arange(1, samples + 1) / samples
    dets = np.linalg.det(model.ray_dexp(p, theta, ts))
    det = _det_along(model, p, theta)

    crossing = np.nonzero(np.sign(dets[:-1]) * np.sign(dets[1:]) <= 0)[0]
    if dets[0] <= 0:
        t_star = _refine(det, 1e-9 * t_max, ts[0]) if dets[0] < 0 else ts[0]
        return _finish(model, p, theta, t_star, classify, resolved=True)
    if crossing.size:
        i = int(crossing[0])
        t_star = ts[i + 1] if dets[i + 1] == 0 else _refine(det, ts[i], ts[i + 1])
        return _finish(model, p, theta, t_star, classify, resolved=True)

    scale = float(np.max(np.abs(dets)))
    i = int(np.argmin(np.abs(dets)))
    if abs(dets[i]) >= NEAR_ZERO * scale:
        return None
    lo = ts[max(i - 1, 0)]
    hi = ts[min(i + 1, samples - 1)]
    res = optimize.minimize_scalar(lambda t: abs(det(t)), bounds=(lo, hi), method="bounded", options={"xatol": T_TOLERANCE})
    logger.warning(f"{model.name}: det d exp touches zero without changing sign near t={res.x:.6f}")
    return _finish(model, p, theta, float(res.x), classify, resolved=False)


def _finish(model, p, theta, t_star, classify, resolved) -> ConjugateRecord:
    rec = conjugate_record(model, p, t_star * theta, classify=classify and resolved)
    if not resolved:
        rec.classification = Caustic.UNRESOLVED
    return rec


def conjugate_near(
    model: GeodesicModel, p, theta, t_guess: float, spread: float = 0.2, classify: bool = False
) -> Optional[ConjugateRecord]:
    """Conjugate vector along theta within t_guess·(1 ± spread), nearest sign change to t_guess."""
    p = np.asarray(p, float)
    theta = model.unit(p, np.asarray(theta, float))
    det = _det_along(model, p, theta)
    ts = t_guess * (1.0 + spread * np.linspace(-1.0, 1.0, 41))
    ts = ts[ts > 0]
    dets = np.linalg.det(model.dexp_batch(p, ts[:, None] * theta[None, :]))
    crossing = np.nonzero(np.sign(dets[:-1]) * np.sign(dets[1:]) <= 0)[0]
    if not crossing.size:
        return None
    mids = 0.5 * (ts[crossing] + ts[crossing + 1])
    i = int(crossing[np.argmin(np.abs(mids - t_guess))])
    t_star = ts[i + 1] if dets[i + 1] == 0 else _refine(det, ts[i], ts[i + 1])
    return conjugate_record(model, p, t_star * theta, classify=classify)


def _det_gradient(model: GeodesicModel, p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """∇_v of the invariant det d exp by fourth-order central differences."""
    h = 2e-3 * max(model.norm(p, v), 1.0)
    grad = np.zeros(model.dim)
    for j in range(model.dim):
        e = np.zeros(model.dim)
        e[j] = h
        f2 = model.invariant_det(p, v + 2 * e)
        f1 = model.invariant_det(p, v + e)
        b1 = model.invariant_det(p, v - e)
        b2 = model.invariant_det(p, v - 2 * e)
        grad[j] = (-f2 + 8 * f1 - 8 * b1 + b2) / (12 * h)
    return grad


def conjugate_record(model: GeodesicModel, p, v, classify: bool = True) -> ConjugateRecord:
    """Kernel, determinant gradient and fold quantities at a (candidate) conjugate vector."""
    p = np.asarray(p, float)
    v = np.asarray(v, float)
    q, w, D = model.exp_dexp(p, v)
    Lp = _metric_factor(model.metric(p))
    Lq = _metric_factor(model.metric(q))
    _, s, Vt = np.linalg.svd(Lq.T @ D @ np.linalg.inv(Lp).T)
    kernel_dim = int(np.sum(s < KERNEL_THRESHOLD * s[0]))
    N = np.linalg.solve(Lp.T, Vt[-1])

    grad = _det_gradient(model, p, v)
    A = float(np.sqrt(grad @ np.linalg.solve(model.metric(p), grad)))
    ddet = float(abs(grad @ N))
    if A > 0 and ddet > 0:
        # positive side of S(p): det increases along N
        N = N * np.sign(grad @ N)
    transversality = float(np.arcsin(min(1.0, ddet / A))) if A > 0 else 0.0

    t_star = model.norm(p, v)
    rec = ConjugateRecord(
        p=p,
        v=v,
        t_star=t_star,
        theta=v / t_star,
        kernel_dim=kernel_dim,
        classification=Caustic.UNRESOLVED,
        transversality=transversality,
        ddet=ddet,
        A=A,
        kernel=N,
        gradient=grad,
        singular_values=s,
        q=q,
        w=w,
    )
    if classify:
        rec.classification = classify_caustic(model, rec)
    return rec


def _nearby_directions(model: GeodesicModel, p: np.ndarray, theta: np.ndarray) -> List[np.ndarray]:
    E = orthonormal_complement(model, p, theta)
    out = []
    if E.shape[1] == 1:
        for k in range(1, TANGENCY_SAMPLES // 2 + 1):
            for sign in (1.0, -1.0):
                out.append(model.unit(p, theta + sign * k * TANGENCY_STEP * E[:, 0]))
    else:
        for k in range(TANGENCY_SAMPLES):
            phi = 2.0 * np.pi * k / TANGENCY_SAMPLES
            out.append(model.unit(p, theta + TANGENCY_STEP * (np.cos(phi) * E[:, 0] + np.sin(phi) * E[:, 1])))
    return out


def classify_caustic(model: GeodesicModel, record: ConjugateRecord) -> Caustic:
    if record.kernel_dim >= 2:
        return Caustic.BLOWDOWN_K
    if record.kernel_dim == 0 or record.A < DDET_TOL:
        return Caustic.UNRESOLVED
    if record.transversality > TRANSVERSALITY_TOL and record.ddet > DDET_TOL:
        return Caustic.FOLD
    if record.transversality >= TRANSVERSALITY_TOL:
        return Caustic.UNRESOLVED
    for theta in _nearby_directions(model, record.p, record.theta):
        near = conjugate_near(model, record.p, theta, record.t_star)
        if near is None or near.kernel_dim != 1 or near.transversality >= TRANSVERSALITY_TOL:
            return Caustic.UNRESOLVED
    return Caustic.BLOWDOWN1


# -----------------------------------------------------------------------------
# Conjugate loci S(p), Σ(p)
# -----------------------------------------------------------------------------
def ring_directions(count: int, dim: int = 3, z: float = 0.0) -> np.ndarray:
    """count directions (√(1-z²) cos φ, √(1-z²) sin φ[, z]) evenly in φ."""
    phi = 2.0 * np.pi * np.arange(count) / count
    r = np.sqrt(1.0 - z * z)
    cols = [r * np.cos(phi), r * np.sin(phi)]
    if dim == 3:
        cols.append(np.full(count, z))
    return np.stack(cols, axis=1)


def find_fold(model: GeodesicModel, p, directions, t_max: Optional[float] = None) -> ConjugateRecord:
    """First Fold conjugate vector over the given directions, in order."""
    for theta in np.atleast_2d(directions):
        rec = find_conjugate(model, p, theta, t_max)
        if rec is not None and rec.classification == Caustic.FOLD:
            return rec
    raise ValueError("no caustic in range")


def direction_patch(center: Sequence[float], half_angle: float, samples: int) -> np.ndarray:
    """Unit directions within half_angle of center: an arc in 2D, a square grid in 3D."""
    c = np.asarray(center, float)
    c = c / np.linalg.norm(c)
    if len(c) == 2:
        a = np.arctan2(c[1], c[0]) + np.linspace(-half_angle, half_angle, samples)
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    e1 = np.cross(c, [0.0, 0.0, 1.0] if abs(c[2]) < 0.9 else [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    side = max(2, int(round(np.sqrt(samples))))
    s = np.tan(half_angle) * np.linspace(-1.0, 1.0, side)
    a, b = np.meshgrid(s, s, indexing="ij")
    d = c[None, :] + a.reshape(-1, 1) * e1[None, :] + b.reshape(-1, 1) * e2[None, :]
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _locus_tangent_normal(model: GeodesicModel, rec: ConjugateRecord, step: float = LOCUS_STEP) -> Optional[np.ndarray]:
    """Unit normal of Σ(p) at rec.q from central differences over nearby directions."""
    E = orthonormal_complement(model, rec.p, rec.theta)
    tangents = []
    for j in range(E.shape[1]):
        ends = []
        for sign in (1.0, -1.0):
            near = conjugate_near(model, rec.p, rec.theta + sign * step * E[:, j], rec.t_star, spread=0.05)
            if near is None:
                return None
            ends.append(near.q)
        tangents.append((ends[0] - ends[1]) / (2 * step))
    U, _, _ = np.linalg.svd(np.stack(tangents, axis=1))
    return U[:, -1]


def conjugate_locus(
    model: GeodesicModel, p, directions: np.ndarray, t_max: Optional[float] = None
) -> ConjugateLocus:
    """Sample S(p) and Σ(p) over a patch of directions, with the tangency of w to Σ(p)."""
    p = np.asarray(p, float)
    rows = []
    missed = 0
    for theta in np.atleast_2d(directions):
        rec = find_conjugate(model, p, theta, t_max)
        if rec is None:
            missed += 1
            continue
        normal = _locus_tangent_normal(model, rec)
        if normal is None:
            missed += 1
            continue
        w_hat = rec.w / np.linalg.norm(rec.w)
        tangency = float(np.arcsin(min(1.0, abs(normal @ w_hat))))
        rows.append((rec, tangency, fold_volume_factor(model, rec)))
    if missed:
        logger.warning(f"{model.name}: {missed} direction(s) without a resolvable conjugate point")
    if not rows:
        raise ValueError("no caustic in range")

    classes = [r.classification for r, _, _ in rows]
    warning = any(c != Caustic.FOLD for c in classes)
    if warning:
        logger.warning(f"{model.name}: {sum(c != Caustic.FOLD for c in classes)} non-fold sample(s) on the patch")
    return ConjugateLocus(
        directions=np.array([r.theta for r, _, _ in rows]),
        v=np.array([r.v for r, _, _ in rows]),
        t_star=np.array([r.t_star for r, _, _ in rows]),
        q=np.array([r.q for r, _, _ in rows]),
        w=np.array([r.w for r, _, _ in rows]),
        classes=classes,
        kernel_dims=np.array([r.kernel_dim for r, _, _ in rows]),
        A=np.array([r.A for r, _, _ in rows]),
        D=np.array([d for _, _, d in rows]),
        tangency=np.array([t for _, t, _ in rows]),
        missed=missed,
        warning=warning,
    )


def fold_volume_factor(model: GeodesicModel, rec: ConjugateRecord) -> float:
    """Induced-volume determinant of d exp restricted to T_vS(p) = ker ∇det."""
    if rec.A <= 0:
        return float("nan")
    Gp = model.metric(rec.p)
    Gq = model.metric(rec.q)
    _, _, Vt = np.linalg.svd(rec.gradient[None, :])
    T = _g_orthonormalize(Vt[1:].T, Gp)
    B = model.dexp(rec.p, rec.v) @ T
    return float(np.sqrt(max(np.linalg.det(B.T @ Gq @ B), 0.0)))


# -----------------------------------------------------------------------------
# Conormal bundle
# -----------------------------------------------------------------------------
def _require_fold(model: GeodesicModel, p, v) -> ConjugateRecord:
    rec = conjugate_record(model, p, v)
    if rec.kernel_dim != 1 or rec.classification != Caustic.FOLD:
        raise ValueError("not a simple fold point")
    return rec


def conormal_bundle(model: GeodesicModel, p, v, record: Optional[ConjugateRecord] = None) -> ConormalSample:
    """(ξ, η) ∈ N*Σ at (p, q): η = -a, ξ = a·∂exp_p(v)/∂p, |η| = 1, ξ·(p - q) ≥ 0."""
    rec = record or _require_fold(model, p, v)
    D = model.dexp(rec.p, rec.v)
    U, _, _ = np.linalg.svd(D)
    a = U[:, -1]
    xi = a @ model.dexp_dp(rec.p, rec.v)
    if xi @ (rec.p - rec.q) < 0:
        a = -a
        xi = -xi
    return ConormalSample(p=rec.p, q=rec.q, v=rec.v, w=rec.w, xi=xi, eta=-a)


def _sin_angle(a: np.ndarray, b: np.ndarray) -> float:
    c = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.sqrt(max(0.0, 1.0 - c * c)))


def jacobi_conormal_check(model: GeodesicModel, p, v) -> JacobiCheck:
    """Riemannian cross-check: ξ ∥ g(p)J'(0), η ∥ -g(q)J'(1) for the kernel Jacobi field."""
    if not (model.riemannian and model.has_ode):
        raise ValueError(f"{model.name}: Jacobi cross-check needs a Riemannian ODE model")
    rec = _require_fold(model, p, v)
    sample = conormal_bundle(model, p, v, rec)
    _, J1d = model.jacobi_flow(rec.p, rec.v, 1.0, rec.kernel)
    xi_j = model.metric(rec.p) @ rec.kernel
    eta_j = -(model.metric(rec.q) @ J1d)
    same = np.sign(sample.xi @ xi_j) == np.sign(sample.eta @ eta_j)
    return JacobiCheck(_sin_angle(sample.xi, xi_j), _sin_angle(sample.eta, eta_j), bool(same))


def jacobi_report(model: GeodesicModel, p, v) -> JacobiReport:
    """|J'(0)| and |J'(1)| of the kernel Jacobi field (time-one parametrization)."""
    if not (model.riemannian and model.has_ode):
        raise ValueError(f"{model.name}: Jacobi report needs a Riemannian ODE model")
    rec = conjugate_record(model, p, v, classify=False)
    if rec.kernel_dim != 1:
        raise ValueError("not a simple fold point")
    _, J1d = model.jacobi_flow(rec.p, rec.v, 1.0, rec.kernel)
    return JacobiReport(model.norm(rec.p, rec.kernel), model.norm(rec.q, J1d))


def fold_symmetry(model: GeodesicModel, p, v) -> FoldSymmetry:
    """Fold at (p, v) against fold at (q, w) for the reversed model."""
    p = np.asarray(p, float)
    rec_p = conjugate_record(model, p, v)
    reverse = model.reversed()
    rec_q = conjugate_record(reverse, rec_p.q, rec_p.w)
    h = 1e-5 * max(1.0, rec_p.t_star)
    _, w_plus = model.exp(p, rec_p.v + h * rec_p.kernel)
    _, w_minus = model.exp(p, rec_p.v - h * rec_p.kernel)
    image = (w_plus - w_minus) / (2 * h)
    return FoldSymmetry(
        p_class=rec_p.classification,
        q_class=rec_q.classification,
        p_kernel_dim=rec_p.kernel_dim,
        q_kernel_dim=rec_q.kernel_dim,
        image_norm=float(np.linalg.norm(image)),
        return_error=return_identity_error(model, p, rec_p.v),
    )


# -----------------------------------------------------------------------------
# Canonical relation (p, ξ) ↦ (q, η)
# -----------------------------------------------------------------------------
def _conormal_at(model, p, theta, t_guess, require_fold: bool) -> Tuple[ConjugateRecord, ConormalSample]:
    rec = conjugate_near(model, p, theta, t_guess, spread=0.1, classify=require_fold)
    if rec is None or (require_fold and rec.classification != Caustic.FOLD) or rec.kernel_dim != 1:
        raise ValueError("stratum exited; reduce scale")
    return rec, conormal_bundle(model, p, rec.v, rec)


def graph_test(model: GeodesicModel, p, v, scale: float = GRAPH_SCALE) -> GraphTest:
    """Rank of (p, c) ↦ (p, ξ/|ξ|) on the fold stratum; graph iff rank = 2n - 1."""
    p = np.asarray(p, float)
    base = _require_fold(model, p, v)
    n = model.dim
    E = orthonormal_complement(model, p, base.theta)
    xi0 = conormal_bundle(model, p, base.v, base).xi
    xi0 = xi0 / np.linalg.norm(xi0)
    Bxi = np.linalg.svd(xi0[:, None])[0][:, 1:]

    def chart(x: np.ndarray) -> np.ndarray:
        pp = p + x[:n]
        theta = _chart_direction(model, pp, base.theta, E, x[n:])
        _, sample = _conormal_at(model, pp, theta, base.t_star, require_fold=True)
        xi = sample.xi / np.linalg.norm(sample.xi)
        if xi @ xi0 < 0:
            xi = -xi
        return np.concatenate([pp, Bxi.T @ xi])

    m = 2 * n - 1
    J = np.zeros((m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = scale
        J[:, j] = (chart(e) - chart(-e)) / (2 * scale)
    s = np.linalg.svd(J, compute_uv=False)
    rank = int(np.sum(s > RANK_THRESHOLD * s[0]))
    return GraphTest(rank=rank, is_graph=rank == m, dim=n, singular_values=s)


def canonical_map(model: GeodesicModel, p, xi, v0, tol: float = 1e-10) -> CanonicalImage:
    """(q, η) with (p, q, ξ, η) ∈ N*Σ, found from the seed conjugate vector v0."""
    p = np.asarray(p, float)
    xi = np.asarray(xi, float)
    size = float(np.linalg.norm(xi))
    if size == 0.0:
        raise ValueError("covector must be nonzero")
    target = xi / size
    base = _require_fold(model, p, v0)
    E = orthonormal_complement(model, p, base.theta)
    P = np.linalg.svd(target[:, None])[0][:, 1:]

    def solve(c: np.ndarray):
        theta = _chart_direction(model, p, base.theta, E, c)
        return _conormal_at(model, p, theta, base.t_star, require_fold=False)

    def residual(c: np.ndarray) -> np.ndarray:
        sample = solve(c)[1]
        return P.T @ (sample.xi / np.linalg.norm(sample.xi))

    fit = optimize.least_squares(residual, np.zeros(model.dim - 1), xtol=1e-15, ftol=1e-15, gtol=1e-15, diff_step=1e-7)
    if np.max(np.abs(fit.fun)) > tol:
        raise ValueError("canonical map did not converge from the seed conjugate vector")
    rec, sample = solve(fit.x)
    lam = size * (target @ sample.xi) / (sample.xi @ sample.xi)
    return CanonicalImage(q=sample.q, eta=lam * sample.eta, v=rec.v, xi=lam * sample.xi)


# -----------------------------------------------------------------------------
# Inputs of the √z' law
# -----------------------------------------------------------------------------
def sing_fit_inputs(
    model: GeodesicModel,
    p,
    v,
    kappa_sharp: Weight = unit_weight,
    kappa: Weight = unit_weight,
) -> SingFitInputs:
    """A, D, W_Σ and the predicted coefficient √2·W_Σ/√(A·D) at a fold."""
    rec = conjugate_record(model, p, v)
    if rec.kernel_dim == 0:
        raise ValueError("no conjugate point at v")
    if rec.classification != Caustic.FOLD:
        raise ValueError("not a simple fold point")
    n = model.dim
    D = fold_volume_factor(model, rec)
    size = rec.t_star
    W = size ** (1 - n) * kappa_sharp(rec.p, rec.v / size) * kappa(rec.q, -rec.w / size)
    phi = rec.transversality if n == 2 else None
    b_err = None
    if n == 2 and model.riemannian:
        b_err = abs(rec.ddet - rec.A * D) / (rec.A * D)
    return SingFitInputs(
        A=rec.A,
        D=D,
        W_sigma=float(W),
        phi=phi,
        B=rec.ddet,
        b_equals_ad_error=b_err,
        predicted_coeff=float(np.sqrt(2.0) * W / np.sqrt(rec.A * D)),
        t_star=rec.t_star,
        dim=n,
    )
