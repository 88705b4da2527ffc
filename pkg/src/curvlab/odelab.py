"""Finite-dimensional bench for flows, their linearizations and transport costs.

A :class:`FlowSystem` is an ODE ``x' = f(x)`` on ``R^d`` together with a
Riemannian metric ``G(x)``.  The cost between two points is

    C(x0, x1) = inf { 1/2 int_0^1 <G(x) x', x'> dt : x(0) = x0, x(1) = x1 },

and the Hamiltonian is ``H(x, phi) = 1/2 <phi, G(x)^{-1} phi>``.  Along the
flow, tangent vectors ``w`` are pushed forward by the linearization and
covectors ``phi`` are pulled back by its transpose, so ``<w, phi>`` is
constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, optimize

from .reports import CheckReport

BLOWUP = 1e12
COLLOCATION_SEGMENTS = 64


@dataclass(frozen=True)
class FlowSystem:
    """Vector field, its Jacobian and a metric tensor field.

    Parameters
    ----------
    dim : int
    field, jacobian : callable
        ``x -> f(x)`` and ``x -> Df(x)``.
    metric : callable
        ``x -> G(x)``, symmetric positive definite.
    metric_derivative : callable, optional
        ``x -> dG`` with ``dG[k] = dG/dx_k``; finite differences otherwise.
    potential, gradient : callable, optional
        ``U`` and its gradient when ``f = -G^{-1} grad U``.
    """

    dim: int
    field: Callable
    jacobian: Callable
    metric: Callable
    metric_derivative: Callable | None = None
    potential: Callable | None = None
    gradient: Callable | None = None
    name: str = "system"

    def f(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.field(np.asarray(x, dtype=float)), dtype=float))

    def Df(self, x) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.jacobian(np.asarray(x, dtype=float)), dtype=float))

    def G(self, x) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.metric(np.asarray(x, dtype=float)), dtype=float))

    def dG(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.metric_derivative is not None:
            return np.asarray(self.metric_derivative(x), dtype=float).reshape(self.dim, self.dim, self.dim)
        return _fd_metric_derivative(self.G, x)

    @property
    def potential_mode(self) -> bool:
        return self.potential is not None

    def potential_defect(self, x) -> float:
        """``|f(x) + G(x)^{-1} grad U(x)|``."""
        x = np.asarray(x, dtype=float)
        g = np.atleast_1d(np.asarray(self.gradient(x), dtype=float))
        return float(np.linalg.norm(self.f(x) + linalg.solve(self.G(x), g)))


def _fd_metric_derivative(G, x, h=1e-6):
    d = len(x)
    out = np.empty((d, d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        out[k] = (np.atleast_2d(G(x + e)) - np.atleast_2d(G(x - e))) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# Integration


@dataclass
class SystemTrajectory:
    times: np.ndarray
    x: np.ndarray
    w: np.ndarray
    phi: np.ndarray
    transitions: np.ndarray

    def pairings(self) -> np.ndarray:
        return np.einsum("ki,ki->k", self.w, self.phi)


def _rk4_step(sys: FlowSystem, x, h):
    """RK4 step for the augmented system ``(x, Phi)`` with ``Phi(0) = I``."""
    d = sys.dim

    def rhs(y, P):
        return sys.f(y), sys.Df(y) @ P

    P0 = np.eye(d)
    k1x, k1P = rhs(x, P0)
    k2x, k2P = rhs(x + 0.5 * h * k1x, P0 + 0.5 * h * k1P)
    k3x, k3P = rhs(x + 0.5 * h * k2x, P0 + 0.5 * h * k2P)
    k4x, k4P = rhs(x + h * k3x, P0 + h * k3P)
    x_new = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    P_new = P0 + h / 6.0 * (k1P + 2 * k2P + 2 * k3P + k4P)
    return x_new, P_new


def flow(sys: FlowSystem, x0, T: float, n: int) -> np.ndarray:
    """RK4 approximation of ``S_T x0`` with ``n`` steps."""
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if T == 0:
        return x.copy()
    h = T / n
    for _ in range(n):
        x = _rk4_point(sys, x, h)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > BLOWUP:
            raise FloatingPointError("flow blew up")
    return x


def _rk4_point(sys, x, h):
    k1 = sys.f(x)
    k2 = sys.f(x + 0.5 * h * k1)
    k3 = sys.f(x + 0.5 * h * k2)
    k4 = sys.f(x + h * k3)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_system(sys: FlowSystem, x0, w0, phi_T, T: float, n: int) -> SystemTrajectory:
    """Integrate the state, push ``w`` forward and pull ``phi`` back.

    ``w_{k+1} = Phi_k w_k`` and ``phi_k = Phi_k^T phi_{k+1}`` with ``Phi_k``
    the RK4 transition matrix of step ``k``; the pairing is then constant up
    to round-off.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    d = sys.dim
    h = T / n
    xs = np.empty((n + 1, d))
    Ps = np.empty((n, d, d))
    xs[0] = np.atleast_1d(np.asarray(x0, dtype=float))
    for k in range(n):
        xs[k + 1], Ps[k] = _rk4_step(sys, xs[k], h)
        if not np.all(np.isfinite(xs[k + 1])) or np.linalg.norm(xs[k + 1]) > BLOWUP \
                or np.abs(Ps[k]).max() > BLOWUP:
            raise FloatingPointError(f"integration blew up at step {k + 1}")
    ws = np.empty((n + 1, d))
    ws[0] = np.atleast_1d(np.asarray(w0, dtype=float))
    for k in range(n):
        ws[k + 1] = Ps[k] @ ws[k]
    phis = np.empty((n + 1, d))
    phis[n] = np.atleast_1d(np.asarray(phi_T, dtype=float))
    for k in range(n - 1, -1, -1):
        phis[k] = Ps[k].T @ phis[k + 1]
    if np.abs(ws).max() > BLOWUP or np.abs(phis).max() > BLOWUP:
        raise FloatingPointError("linearized solutions blew up")
    return SystemTrajectory(np.linspace(0.0, T, n + 1), xs, ws, phis, Ps)


def pairing_deviation(traj: SystemTrajectory) -> float:
    p = traj.pairings()
    return float(np.abs(p - p[0]).max())


# ---------------------------------------------------------------------------
# Hamiltonian monotonicity


def hamiltonian(sys: FlowSystem, x, phi) -> float:
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    return 0.5 * float(phi @ linalg.solve(sys.G(x), phi))


def hamiltonian_gradients(sys: FlowSystem, x, phi):
    """Analytic ``(H_x, H_phi)`` of ``H(x, phi) = 1/2 <phi, G^{-1} phi>``."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    Hphi = linalg.solve(sys.G(x), phi)
    dG = sys.dG(x)
    Hx = -0.5 * np.einsum("i,kij,j->k", Hphi, dG, Hphi)
    return Hx, Hphi


def hamiltonian_derivative(sys: FlowSystem, x, phi) -> float:
    """``<H_x, f(x)> - <H_phi, Df(x)^T phi>``."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    Hx, Hphi = hamiltonian_gradients(sys, x, phi)
    return float(Hx @ sys.f(x) - Hphi @ (sys.Df(x).T @ phi))


def hamiltonian_monotonicity_check(sys: FlowSystem, samples, tol: float = 1e-10,
                                   fd_step: float = 1e-6) -> CheckReport:
    """Sign of the Hamiltonian derivative at sampled ``(x, phi)`` pairs.

    ``H_x`` is cross-checked against central finite differences; the largest
    relative mismatch is stored as ``fd_mismatch``.
    """
    margins, mismatch = [], 0.0
    samples = list(samples)
    for x, phi in samples:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        margins.append(hamiltonian_derivative(sys, x, phi))
        Hx, _ = hamiltonian_gradients(sys, x, phi)
        fd = np.empty_like(Hx)
        for k in range(sys.dim):
            e = np.zeros(sys.dim)
            e[k] = fd_step
            fd[k] = (hamiltonian(sys, x + e, phi) - hamiltonian(sys, x - e, phi)) / (2 * fd_step)
        scale = max(1.0, float(np.abs(Hx).max()))
        mismatch = max(mismatch, float(np.abs(fd - Hx).max()) / scale)
    margins = np.array(margins)
    k = int(np.argmin(margins))
    scale = max(1.0, float(np.abs(margins).max()))
    return CheckReport("hamiltonian_monotonicity", bool(margins[k] >= -tol * scale), float(margins[k]),
                       witness=[list(np.atleast_1d(samples[k][0])), list(np.atleast_1d(samples[k][1]))],
                       residuals=list(margins), details={"fd_mismatch": mismatch})


# ---------------------------------------------------------------------------
# Transport cost by collocation


def _action_and_grad(z_inner, sys: FlowSystem, x0, x1, M):
    d = sys.dim
    z = np.vstack([x0, z_inner.reshape(M - 1, d), x1])
    dz = np.diff(z, axis=0)  # (M, d)
    mids = 0.5 * (z[1:] + z[:-1])
    val = 0.0
    grad = np.zeros_like(z)
    for i in range(M):
        G = sys.G(mids[i])
        Gd = G @ dz[i]
        val += 0.5 * M * float(dz[i] @ Gd)
        # derivative w.r.t. the increment
        grad[i + 1] += M * Gd
        grad[i] -= M * Gd
        # derivative through the midpoint metric
        dG = sys.dG(mids[i])
        gm = 0.25 * M * np.einsum("i,kij,j->k", dz[i], dG, dz[i])
        grad[i] += gm
        grad[i + 1] += gm
    return val, grad[1:-1].ravel()


def collocation_objective(sys: FlowSystem, x0, x1, z_inner, M: int = COLLOCATION_SEGMENTS):
    """Discrete action of a piecewise-linear path and its gradient."""
    return _action_and_grad(np.asarray(z_inner, dtype=float).ravel(), sys,
                            np.atleast_1d(np.asarray(x0, dtype=float)),
                            np.atleast_1d(np.asarray(x1, dtype=float)), M)


def cost(sys: FlowSystem, x0, x1, M: int = COLLOCATION_SEGMENTS) -> float:
    """Collocation approximation of ``C(x0, x1)``.

    Minimizes the midpoint-rule action over piecewise-linear paths with
    ``M`` segments, starting from the straight segment (L-BFGS-B with the
    analytic gradient).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    if np.array_equal(x0, x1):
        return 0.0
    s = np.linspace(0.0, 1.0, M + 1)[1:-1, None]
    z0 = ((1 - s) * x0 + s * x1).ravel()
    res = optimize.minimize(_action_and_grad, z0, args=(sys, x0, x1, M), jac=True, method="L-BFGS-B",
                            options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-12})
    if not np.isfinite(res.fun):
        raise RuntimeError("collocation did not converge")
    return float(res.fun)


def cost_contraction_check(sys: FlowSystem, x0, x1, T: float, n: int, tol: float = 1e-6,
                           M: int = COLLOCATION_SEGMENTS) -> CheckReport:
    """``C(S_T x0, S_T x1) <= C(x0, x1) (1 + tol)``."""
    c0 = cost(sys, x0, x1, M)
    c1 = cost(sys, flow(sys, x0, T, n), flow(sys, x1, T, n), M)
    margin = c0 * (1 + tol) - c1
    return CheckReport("cost_contraction", bool(margin >= 0), float(margin),
                       residuals=[c0, c1],
                       details={"ratio": c1 / c0 if c0 > 0 else 0.0, "T": T, "tol": tol})


def convexity_contraction_check(sys: FlowSystem, x0, x1, t: float, n: int = 1000, tol: float = 1e-8,
                                M: int = COLLOCATION_SEGMENTS) -> CheckReport:
    """``C(x0, S_t x1) + t (U(S_t x1) - U(x0)) <= C(x0, x1)``."""
    if not sys.potential_mode:
        raise ValueError("system has no potential")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    xt = flow(sys, x1, t, n) if t > 0 else x1.copy()
    lhs = cost(sys, x0, xt, M) + t * (float(sys.potential(xt)) - float(sys.potential(x0)))
    rhs = cost(sys, x0, x1, M)
    margin = rhs - lhs
    return CheckReport("convexity_contraction", bool(margin >= -tol * max(1.0, abs(rhs))), float(margin),
                       residuals=[lhs, rhs], details={"t": t})


# ---------------------------------------------------------------------------
# Named examples


def linear_system(A) -> FlowSystem:
    """``f(x) = A x`` with the flat metric."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    I = np.eye(d)
    return FlowSystem(d, lambda x: A @ x, lambda x: A, lambda x: I,
                      metric_derivative=lambda x: np.zeros((d, d, d)), name="linear")


def quadratic_potential_system(A) -> FlowSystem:
    """Gradient flow of ``U = 1/2 x^T A x`` in the flat metric."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.allclose(A, A.T):
        raise ValueError("A must be symmetric")
    d = A.shape[0]
    I = np.eye(d)
    return FlowSystem(d, lambda x: -A @ x, lambda x: -A, lambda x: I,
                      metric_derivative=lambda x: np.zeros((d, d, d)),
                      potential=lambda x: 0.5 * float(x @ A @ x), gradient=lambda x: A @ x,
                      name="quadratic-potential")


def ou_system(dim: int = 2, theta: float = 1.0, diffusion: float = 1.0) -> FlowSystem:
    """Ornstein-Uhlenbeck drift ``-theta x`` as a gradient flow in the metric ``I / diffusion``."""
    I = np.eye(dim)
    return FlowSystem(dim, lambda x: -theta * x, lambda x: -theta * I, lambda x: I / diffusion,
                      metric_derivative=lambda x: np.zeros((dim, dim, dim)),
                      potential=lambda x: 0.5 * theta / diffusion * float(x @ x),
                      gradient=lambda x: theta / diffusion * x, name="ou")


def nonlinear_mobility_system(c: float = 1.0) -> FlowSystem:
    """Scalar flow ``x' = -c x`` with mobility ``h(x) = 1 + x^2`` and metric ``1 / h``.

    It is the gradient flow of ``U(x) = c/2 log(1 + x^2)``.
    """
    def h(x):
        return 1.0 + x[0] ** 2

    return FlowSystem(
        1,
        lambda x: -c * x,
        lambda x: np.array([[-c]]),
        lambda x: np.array([[1.0 / h(x)]]),
        metric_derivative=lambda x: np.array([[[-2.0 * x[0] / h(x) ** 2]]]),
        potential=lambda x: 0.5 * c * math.log(h(x)),
        gradient=lambda x: np.array([c * x[0] / h(x)]),
        name="nonlinear-mobility",
    )


REGISTRY = {
    "linear": linear_system,
    "quadratic-potential": quadratic_potential_system,
    "ou": ou_system,
    "nonlinear-mobility": nonlinear_mobility_system,
}


def make_system(name: str, **params) -> FlowSystem:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown flow system {name!r}") from None
    return factory(**params)


__all__ = [
    "FlowSystem", "SystemTrajectory", "flow", "integrate_system", "pairing_deviation",
    "hamiltonian", "hamiltonian_gradients", "hamiltonian_derivative",
    "hamiltonian_monotonicity_check", "collocation_objective", "cost", "cost_contraction_check",
    "convexity_contraction_check", "linear_system", "quadratic_potential_system", "ou_system",
    "nonlinear_mobility_system", "REGISTRY", "make_system",
]
