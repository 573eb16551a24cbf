"""
=============================================================================
MODELS — Regular exponential maps: the geodesic model zoo
=============================================================================

Every model is an immutable dynamical system with a unit-speed flow and an
exponential map exp_p(v) = flow(p, v/|v|_g, |v|_g). The ODE path integrates
the flow together with its first variational equations (all 2n columns in
one system), so d_v exp comes from Jacobi fields rather than finite
differences:

  d_v exp_p(tθ) = u(t)·θᵀg(p) + Y(t)·(I - θθᵀg(p))/t,   Y = ∂x(t)/∂u(0).

Closed-form models override exp/dexp and keep the ODE path for cross-checks.

Models
------
- EuclideanModel(dim)                flat, no conjugate points
- MagneticFlow(dim, alpha)           ẍ = α·J ẋ; dim 2 is the unit-circle flow
                                      of the circular transform, dim 3 has the
                                      field along x3
- ConformalModel(speed)              metric c(x)^-2 (dx² + dy²), ODE only
- SphereModel()                      unit S² in the stereographic chart
- ProductModel(factor)               2D factor × line, exp = (exp'(v'), p'' + v'')

Usage
-----
  model = parse_model("magnetic3d:2")
  q, w = model.exp(np.zeros(3), np.array([np.pi / 2, 0.0, 0.0]))
"""

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Integrator settings
# -----------------------------------------------------------------------------
ODE_METHOD = "DOP853"
ODE_RTOL = 1e-11
ODE_ATOL = 1e-13
SMALL_T = 1e-12


def rotation_generator(dim: int) -> np.ndarray:
    """J with J e1 = e2, J e2 = -e1 (and J e3 = 0 in 3D)."""
    J = np.zeros((dim, dim))
    J[0, 1] = -1.0
    J[1, 0] = 1.0
    return J


class GeodesicModel(ABC):
    """Unit-speed flow on a chart of ℝ^n with metric g(p)."""

    name = "model"
    dim = 2
    closed_form = False
    has_ode = True
    translation_invariant = False
    riemannian = True

    # --- geometry --------------------------------------------------------
    def metric(self, p: np.ndarray) -> np.ndarray:
        return np.eye(self.dim)

    def norm(self, p: np.ndarray, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(v @ self.metric(p) @ v))

    def unit(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        n = self.norm(p, v)
        if n == 0.0:
            raise ValueError("direction must be nonzero")
        return np.asarray(v, dtype=float) / n

    def reversed(self) -> "GeodesicModel":
        """Model whose curves are this model's curves run backwards."""
        return self

    def default_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def default_t_max(self) -> float:
        return 2.0 * np.pi

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "closed_form": self.closed_form}

    # --- dynamics ----------------------------------------------------------
    @abstractmethod
    def acceleration(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def acceleration_jacobian(self, x: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(∂a/∂x, ∂a/∂u)."""

    def _rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        n = self.dim
        x = y[:n]
        u = y[n:2 * n]
        phi = y[2 * n:].reshape(2 * n, 2 * n)
        ax, au = self.acceleration_jacobian(x, u)
        A = np.zeros((2 * n, 2 * n))
        A[:n, n:] = np.eye(n)
        A[n:, :n] = ax
        A[n:, n:] = au
        return np.concatenate([u, self.acceleration(x, u), (A @ phi).ravel()])

    def integrate(self, p: np.ndarray, u: np.ndarray, t_end: float, dense: bool = False):
        """Flow plus variational matrix Φ (∂(x,u)(t)/∂(x,u)(0)) from 0 to t_end."""
        if not self.has_ode:
            raise NotImplementedError(f"{self.name} has no ODE realization")
        n = self.dim
        y0 = np.concatenate([np.asarray(p, float), np.asarray(u, float), np.eye(2 * n).ravel()])
        sol = solve_ivp(
            self._rhs,
            (0.0, float(t_end)),
            y0,
            method=ODE_METHOD,
            rtol=ODE_RTOL,
            atol=ODE_ATOL,
            dense_output=dense,
        )
        if not sol.success:
            raise RuntimeError(
                f"{self.name}: integrator failed ({sol.message}); requested rtol={ODE_RTOL:g}, atol={ODE_ATOL:g}"
            )
        return sol

    def _split_state(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.dim
        return y[:n], y[n:2 * n], y[2 * n:].reshape(2 * n, 2 * n)

    def flow(self, p: np.ndarray, u: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """(position, velocity) at time t from initial velocity u."""
        if t == 0.0:
            return np.array(p, dtype=float), np.array(u, dtype=float)
        sol = self.integrate(p, u, t)
        x, xd, _ = self._split_state(sol.y[:, -1])
        return x, xd

    def jacobi_flow(
        self, p: np.ndarray, u: np.ndarray, t: float, dv: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """(J(t), J'(t)) for J(0) = 0, J'(0) = dv along the flow from (p, u)."""
        n = self.dim
        if t == 0.0:
            return np.zeros(n), np.array(dv, dtype=float)
        sol = self.integrate(p, u, t)
        _, _, phi = self._split_state(sol.y[:, -1])
        dv = np.asarray(dv, dtype=float)
        return phi[:n, n:] @ dv, phi[n:, n:] @ dv

    def _dexp_from_state(self, p, theta, t, u_t, Y) -> np.ndarray:
        g = self.metric(p)
        radial = np.outer(u_t, theta @ g)
        angular = Y @ (np.eye(self.dim) - np.outer(theta, theta @ g)) / t
        return radial + angular

    def ode_exp_dexp(self, p: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(q, w, d_v exp) from one integration of flow + variational equations."""
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        t = self.norm(p, v)
        if t < SMALL_T:
            return p + v, -v, np.eye(self.dim)
        theta = v / t
        sol = self.integrate(p, theta, t)
        x, u_t, phi = self._split_state(sol.y[:, -1])
        Y = phi[:self.dim, self.dim:]
        return x, -t * u_t, self._dexp_from_state(p, theta, t, u_t, Y)

    def ode_dexp(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.ode_exp_dexp(p, v)[2]

    def exp(self, p: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(q, w) with q = exp_p(v) and w = -d/ds exp_p(sv) at s = 1."""
        q, w, _ = self.ode_exp_dexp(p, v)
        return q, w

    def dexp(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.ode_exp_dexp(p, v)[2]

    def exp_dexp(self, p: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.closed_form:
            q, w = self.exp(p, v)
            return q, w, self.dexp(p, v)
        return self.ode_exp_dexp(p, v)

    def exp_batch(self, p: np.ndarray, V: np.ndarray) -> np.ndarray:
        return np.array([self.exp(p, v)[0] for v in np.atleast_2d(V)])

    def dexp_batch(self, p: np.ndarray, V: np.ndarray) -> np.ndarray:
        return np.array([self.dexp(p, v) for v in np.atleast_2d(V)])

    def ray_dexp(self, p: np.ndarray, theta: np.ndarray, ts: np.ndarray) -> np.ndarray:
        """d_v exp at v = t·θ for every t in ts (θ unit in g(p))."""
        ts = np.asarray(ts, dtype=float)
        if self.closed_form:
            return self.dexp_batch(p, ts[:, None] * theta[None, :])
        sol = self.integrate(p, theta, float(ts.max()), dense=True)
        out = np.empty((len(ts), self.dim, self.dim))
        for i, t in enumerate(ts):
            if t < SMALL_T:
                out[i] = np.eye(self.dim)
                continue
            _, u_t, phi = self._split_state(sol.sol(t))
            out[i] = self._dexp_from_state(p, theta, t, u_t, phi[:self.dim, self.dim:])
        return out

    def invariant_det(self, p: np.ndarray, v: np.ndarray) -> float:
        """det d_v exp as a map between (T_pM, g(p)) and (T_qM, g(q))."""
        q, _, D = self.exp_dexp(p, v)
        scale = np.sqrt(np.linalg.det(self.metric(q)) / np.linalg.det(self.metric(p)))
        return float(np.linalg.det(D) * scale)

    def dexp_dp(self, p: np.ndarray, v: np.ndarray, step: float = 1e-4) -> np.ndarray:
        """∂ exp_p(v)/∂p at fixed v by fourth-order central differences."""
        p = np.asarray(p, dtype=float)
        h = step * max(1.0, float(np.linalg.norm(p)))
        cols = []
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            f2 = self.exp(p + 2 * e, v)[0]
            f1 = self.exp(p + e, v)[0]
            b1 = self.exp(p - e, v)[0]
            b2 = self.exp(p - 2 * e, v)[0]
            cols.append((-f2 + 8 * f1 - 8 * b1 + b2) / (12 * h))
        return np.stack(cols, axis=1)


# -----------------------------------------------------------------------------
# Flat space
# -----------------------------------------------------------------------------
class EuclideanModel(GeodesicModel):
    closed_form = True
    translation_invariant = True

    def __init__(self, dim: int = 2):
        self.dim = dim
        self.name = f"euclidean{dim}d"

    def acceleration(self, x, u):
        return np.zeros(self.dim)

    def acceleration_jacobian(self, x, u):
        z = np.zeros((self.dim, self.dim))
        return z, z

    def flow(self, p, u, t):
        return np.asarray(p, float) + t * np.asarray(u, float), np.array(u, dtype=float)

    def exp(self, p, v):
        v = np.asarray(v, dtype=float)
        return np.asarray(p, float) + v, -v

    def dexp(self, p, v):
        return np.eye(self.dim)

    def exp_batch(self, p, V):
        return np.asarray(p, float)[None, :] + np.atleast_2d(V)

    def dexp_batch(self, p, V):
        return np.broadcast_to(np.eye(self.dim), (len(np.atleast_2d(V)), self.dim, self.dim)).copy()


# -----------------------------------------------------------------------------
# Magnetic flows: ẍ = α J ẋ
# -----------------------------------------------------------------------------
class MagneticFlow(GeodesicModel):
    """Constant magnetic field; closed form x(t) = p + M(t) u.

    M(t) = sin(αt)/α·P_h + (1 - cos αt)/α·J + t·P_z, with P_h the projection
    on the (x1, x2) plane and P_z on x3 (absent in 2D).
    """

    closed_form = True
    translation_invariant = True
    riemannian = False

    def __init__(self, dim: int = 2, alpha: float = 1.0):
        if dim not in (2, 3):
            raise ValueError(f"magnetic flow lives in 2 or 3 dimensions, got {dim}")
        if alpha == 0:
            raise ValueError("field strength must be nonzero; use EuclideanModel")
        self.dim = dim
        self.alpha = float(alpha)
        self.J = rotation_generator(dim)
        self.P_h = np.diag([1.0, 1.0] + [0.0] * (dim - 2))
        self.P_z = np.eye(dim) - self.P_h
        if dim == 2 and self.alpha == 1.0:
            self.name = "circle2d"
        elif dim == 2:
            self.name = f"circle2d:{self.alpha:g}"
        else:
            self.name = f"magnetic3d:{self.alpha:g}"

    def reversed(self) -> "MagneticFlow":
        return MagneticFlow(self.dim, -self.alpha)

    def default_t_max(self) -> float:
        return 1.9 * np.pi / abs(self.alpha)

    def conjugate_time(self, theta) -> Optional[float]:
        """First conjugate time along the unit direction theta, in closed form.

        With τ = |α|t and ρ² = 1 - θ₃², det d exp vanishes where
        τρ²·cos(τ/2) + 2θ₃²·sin(τ/2) = 0. The left side falls monotonically
        on [π, 2π], so the root is π/|α| on the equator and grows with |θ₃|.
        Vertical directions (ρ = 0) have no conjugate point.
        """
        theta = np.asarray(theta, dtype=float)
        theta = theta / np.linalg.norm(theta)
        a = abs(self.alpha)
        z2 = float(theta[2] ** 2) if self.dim == 3 else 0.0
        rho2 = 1.0 - z2
        if rho2 <= SMALL_T:
            return None
        if z2 == 0.0:
            return np.pi / a
        tau = brentq(lambda s: s * rho2 * np.cos(0.5 * s) + 2.0 * z2 * np.sin(0.5 * s), np.pi, 2.0 * np.pi, xtol=1e-14)
        return float(tau) / a

    def describe(self) -> dict:
        d = super().describe()
        d["alpha"] = self.alpha
        return d

    def acceleration(self, x, u):
        return self.alpha * (self.J @ u)

    def acceleration_jacobian(self, x, u):
        return np.zeros((self.dim, self.dim)), self.alpha * self.J

    def _M(self, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """M(t), M'(t) stacked over t (shape (m, n, n))."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        a = self.alpha
        s = np.sin(a * t)[:, None, None]
        c = np.cos(a * t)[:, None, None]
        M = s / a * self.P_h + (1.0 - c) / a * self.J + t[:, None, None] * self.P_z
        Md = c * self.P_h + s * self.J + self.P_z
        return M, Md

    def flow(self, p, u, t):
        M, Md = self._M(t)
        u = np.asarray(u, dtype=float)
        return np.asarray(p, float) + M[0] @ u, Md[0] @ u

    def jacobi_flow(self, p, u, t, dv):
        M, Md = self._M(t)
        dv = np.asarray(dv, dtype=float)
        return M[0] @ dv, Md[0] @ dv

    def exp(self, p, v):
        q, w = self._exp_rows(np.asarray(p, float), np.atleast_2d(np.asarray(v, float)))
        return q[0], w[0]

    def _exp_rows(self, p, V):
        t = np.linalg.norm(V, axis=1)
        safe = np.where(t < SMALL_T, 1.0, t)
        theta = V / safe[:, None]
        M, Md = self._M(t)
        q = p[None, :] + np.einsum("mij,mj->mi", M, theta)
        w = -t[:, None] * np.einsum("mij,mj->mi", Md, theta)
        small = t < SMALL_T
        if np.any(small):
            q[small] = p[None, :] + V[small]
            w[small] = -V[small]
        return q, w

    def exp_batch(self, p, V):
        return self._exp_rows(np.asarray(p, float), np.atleast_2d(np.asarray(V, float)))[0]

    def dexp(self, p, v):
        return self.dexp_batch(p, np.atleast_2d(v))[0]

    def dexp_batch(self, p, V):
        V = np.atleast_2d(np.asarray(V, dtype=float))
        t = np.linalg.norm(V, axis=1)
        safe = np.where(t < SMALL_T, 1.0, t)
        theta = V / safe[:, None]
        M, Md = self._M(t)
        base = M / safe[:, None, None]
        col = np.einsum("mij,mj->mi", Md, theta) - np.einsum("mij,mj->mi", M, theta) / safe[:, None]
        D = base + np.einsum("mi,mj->mij", col, theta)
        D[t < SMALL_T] = np.eye(self.dim)
        return D


# -----------------------------------------------------------------------------
# Conformal metrics c(x)^-2 δ
# -----------------------------------------------------------------------------
class ConformalSpeed(ABC):
    @abstractmethod
    def value(self, x: np.ndarray) -> float:
        ...

    @abstractmethod
    def gradient(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def hessian(self, x: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True)
class GaussianLens:
    amplitude: float = 0.5
    width: float = 1.0
    center: Tuple[float, float] = (0.0, 0.0)

    def bump(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        d = np.asarray(x, float) - np.asarray(self.center, float)
        return float(np.exp(-(d @ d) / (2.0 * self.width ** 2))), d


@dataclass(frozen=True)
class LensSpeed(ConformalSpeed):
    """c(x) = background - Σ a_i exp(-|x - c_i|²/(2 s_i²)); slow inside each lens."""

    lenses: Tuple[GaussianLens, ...] = (GaussianLens(),)
    background: float = 1.0

    def __post_init__(self):
        if self.background - sum(max(l.amplitude, 0.0) for l in self.lenses) <= 0.0:
            raise ValueError("lens amplitudes would make the wave speed non-positive")
        if any(l.width <= 0 for l in self.lenses):
            raise ValueError("lens widths must be positive")

    def value(self, x):
        return self.background - sum(l.amplitude * l.bump(x)[0] for l in self.lenses)

    def gradient(self, x):
        g = np.zeros(len(x))
        for l in self.lenses:
            e, d = l.bump(x)
            g += l.amplitude * e * d / l.width ** 2
        return g

    def hessian(self, x):
        n = len(x)
        H = np.zeros((n, n))
        for l in self.lenses:
            e, d = l.bump(x)
            s2 = l.width ** 2
            H += l.amplitude * e * (np.eye(n) / s2 - np.outer(d, d) / s2 ** 2)
        return H

    @classmethod
    def from_json(cls, path: str) -> "LensSpeed":
        """{"background": 1.0, "lenses": [{"amplitude", "width", "center"}, ...]} or a bare list."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, list):
            data = {"lenses": data}
        lenses = tuple(
            GaussianLens(float(d.get("amplitude", 0.5)), float(d.get("width", 1.0)), tuple(d.get("center", (0.0, 0.0))))
            for d in data.get("lenses", [])
        )
        return cls(lenses or (GaussianLens(),), float(data.get("background", 1.0)))


class StereographicSpeed(ConformalSpeed):
    """c(x) = (1 + |x|²)/2: the unit sphere seen through stereographic projection."""

    def value(self, x):
        return 0.5 * (1.0 + float(np.dot(x, x)))

    def gradient(self, x):
        return np.array(x, dtype=float)

    def hessian(self, x):
        return np.eye(len(x))


class ConformalModel(GeodesicModel):
    """Geodesics of c(x)^-2 (dx² + dy²): ẍ = 2(∇c·ẋ/c) ẋ - |ẋ|² ∇c/c."""

    def __init__(self, speed: Optional[ConformalSpeed] = None, name: str = "conformal"):
        self.dim = 2
        self.speed = speed or LensSpeed()
        self.name = name

    def metric(self, p):
        return np.eye(self.dim) / self.speed.value(p) ** 2

    def default_point(self) -> np.ndarray:
        return np.array([-3.0, 0.0])

    def default_t_max(self) -> float:
        return 15.0

    def acceleration(self, x, u):
        c = self.speed.value(x)
        gc = self.speed.gradient(x)
        return 2.0 * (gc @ u) / c * u - (u @ u) * gc / c

    def acceleration_jacobian(self, x, u):
        n = self.dim
        c = self.speed.value(x)
        gc = self.speed.gradient(x)
        H = self.speed.hessian(x)
        gu = gc @ u
        du = 2.0 / c * (np.outer(u, gc) + gu * np.eye(n)) - 2.0 * np.outer(gc, u) / c
        dx = 2.0 * np.outer(u, (H @ u) / c - gu * gc / c ** 2) - (u @ u) * (H / c - np.outer(gc, gc) / c ** 2)
        return dx, du


# -----------------------------------------------------------------------------
# Round sphere, stereographic chart, closed form through the embedding
# -----------------------------------------------------------------------------
def stereo_inverse(x: np.ndarray) -> np.ndarray:
    d = 1.0 + x @ x
    return np.array([2.0 * x[0], 2.0 * x[1], x @ x - 1.0]) / d


def stereo_inverse_jacobian(x: np.ndarray) -> np.ndarray:
    d = 1.0 + x @ x
    P = np.array([2.0 * x[0], 2.0 * x[1], x @ x - 1.0])
    dP = np.array([[2.0, 0.0], [0.0, 2.0], [2.0 * x[0], 2.0 * x[1]]])
    return dP / d - np.outer(P, 2.0 * x) / d ** 2


def stereo(X: np.ndarray) -> np.ndarray:
    return X[:2] / (1.0 - X[2])


def stereo_jacobian(X: np.ndarray) -> np.ndarray:
    s = 1.0 - X[2]
    return np.array([[1.0 / s, 0.0, X[0] / s ** 2], [0.0, 1.0 / s, X[1] / s ** 2]])


class SphereModel(ConformalModel):
    """Unit S² through stereographic projection from the north pole.

    Base points stay in the chart; rays from the default point (1, 0) whose
    direction has a negative first component stay in the southern hemisphere
    up to the antipode at t = π.
    """

    closed_form = True

    def __init__(self):
        super().__init__(StereographicSpeed(), name="sphere")

    def default_point(self) -> np.ndarray:
        return np.array([1.0, 0.0])

    def default_t_max(self) -> float:
        return 3.5

    def _embed(self, p, v):
        P = stereo_inverse(p)
        V = stereo_inverse_jacobian(p) @ v
        return P, V

    def exp(self, p, v):
        p = np.asarray(p, float)
        v = np.asarray(v, float)
        P, V = self._embed(p, v)
        s = float(np.linalg.norm(V))
        if s < SMALL_T:
            return p + v, -v
        Vh = V / s
        E = np.cos(s) * P + np.sin(s) * Vh
        Ed = -s * np.sin(s) * P + s * np.cos(s) * Vh
        return stereo(E), -(stereo_jacobian(E) @ Ed)

    def flow(self, p, u, t):
        if t == 0.0:
            return np.array(p, dtype=float), np.array(u, dtype=float)
        q, w = self.exp(p, t * np.asarray(u, float))
        return q, -w / t

    def dexp(self, p, v):
        p = np.asarray(p, float)
        v = np.asarray(v, float)
        P, V = self._embed(p, v)
        s = float(np.linalg.norm(V))
        if s < SMALL_T:
            return np.eye(2)
        Vh = V / s
        E = np.cos(s) * P + np.sin(s) * Vh
        radial = np.outer(-np.sin(s) * P + np.cos(s) * Vh, Vh)
        tangential = np.sin(s) / s * (np.eye(3) - np.outer(Vh, Vh) - np.outer(P, P))
        dE = radial + tangential
        return stereo_jacobian(E) @ dE @ stereo_inverse_jacobian(p)


# -----------------------------------------------------------------------------
# Products
# -----------------------------------------------------------------------------
class ProductModel(GeodesicModel):
    """factor × ℝ^extra with exp_p(v) = (exp'_{p'}(v'), p'' + v'')."""

    has_ode = False
    closed_form = True

    def __init__(self, factor: Optional[GeodesicModel] = None, extra: int = 1):
        self.factor = factor or MagneticFlow(2, 1.0)
        if not self.factor.closed_form:
            raise ValueError("product factor must have a closed-form exponential map")
        self.extra = extra
        self.dim = self.factor.dim + extra
        self.translation_invariant = self.factor.translation_invariant
        self.riemannian = self.factor.riemannian
        self.name = "product" if self.factor.name == "circle2d" else f"product:{self.factor.name}"

    def reversed(self) -> "ProductModel":
        return ProductModel(self.factor.reversed(), self.extra)

    def default_t_max(self) -> float:
        return 3.0 * self.factor.default_t_max()

    def metric(self, p):
        m = np.eye(self.dim)
        k = self.factor.dim
        m[:k, :k] = self.factor.metric(np.asarray(p, float)[:k])
        return m

    def acceleration(self, x, u):
        raise NotImplementedError("product models are defined through their exponential map")

    def acceleration_jacobian(self, x, u):
        raise NotImplementedError("product models are defined through their exponential map")

    def flow(self, p, u, t):
        if t == 0.0:
            return np.array(p, dtype=float), np.array(u, dtype=float)
        q, w = self.exp(p, t * np.asarray(u, float))
        return q, -w / t

    def jacobi_flow(self, p, u, t, dv):
        D = self.dexp(p, t * np.asarray(u, float))
        h = 1e-6 * max(1.0, t)
        Dp = self.dexp(p, (t + h) * np.asarray(u, float))
        Dm = self.dexp(p, (t - h) * np.asarray(u, float))
        dv = np.asarray(dv, float)
        J = t * (D @ dv)
        Jd = D @ dv + t * ((Dp - Dm) / (2 * h)) @ dv
        return J, Jd

    def exp(self, p, v):
        p = np.asarray(p, float)
        v = np.asarray(v, float)
        k = self.factor.dim
        q1, w1 = self.factor.exp(p[:k], v[:k])
        return np.concatenate([q1, p[k:] + v[k:]]), np.concatenate([w1, -v[k:]])

    def dexp(self, p, v):
        k = self.factor.dim
        D = np.eye(self.dim)
        D[:k, :k] = self.factor.dexp(np.asarray(p, float)[:k], np.asarray(v, float)[:k])
        return D

    def exp_batch(self, p, V):
        V = np.atleast_2d(np.asarray(V, float))
        k = self.factor.dim
        q1 = self.factor.exp_batch(np.asarray(p, float)[:k], V[:, :k])
        return np.concatenate([q1, np.asarray(p, float)[None, k:] + V[:, k:]], axis=1)

    def dexp_batch(self, p, V):
        V = np.atleast_2d(np.asarray(V, float))
        k = self.factor.dim
        D = np.broadcast_to(np.eye(self.dim), (len(V), self.dim, self.dim)).copy()
        D[:, :k, :k] = self.factor.dexp_batch(np.asarray(p, float)[:k], V[:, :k])
        return D


# -----------------------------------------------------------------------------
# Model specs
# -----------------------------------------------------------------------------
MODEL_CHOICES = ["circle2d", "magnetic3d:α", "sphere", "product", "conformal[:file]", "euclidean2d", "euclidean3d"]


def parse_model(spec: str) -> GeodesicModel:
    """circle2d[:α] | magnetic3d[:α] | sphere | product | conformal[:file.json] | euclidean{2,3}d."""
    head, _, arg = spec.strip().partition(":")
    head = head.lower()
    if head == "circle2d":
        return MagneticFlow(2, float(arg) if arg else 1.0)
    if head == "magnetic3d":
        return MagneticFlow(3, float(arg) if arg else 1.0)
    if head == "sphere":
        return SphereModel()
    if head == "product":
        return ProductModel()
    if head == "conformal":
        if arg:
            return ConformalModel(LensSpeed.from_json(arg), name=f"conformal:{arg}")
        return ConformalModel()
    if head in ("euclidean2d", "euclidean3d"):
        return EuclideanModel(int(head[9]))
    raise ValueError(f"unknown model {spec!r}; choose from {', '.join(MODEL_CHOICES)}")
