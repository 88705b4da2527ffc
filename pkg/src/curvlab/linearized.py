"""Linearizations of the nonlinear diffusion along a stored trajectory.

The backward equation ``d/dt phi + P'(rho) Delta phi = psi`` is discretized
by implicit steps with a frozen coefficient ``alpha_k`` on each interval,

    (I - tau diag(alpha_k) Delta) phi_k = phi_{k+1} - tau psi_k.

The forward equation ``d/dt w = Delta(P'(rho) w)`` uses the adjoint of that
step in ``L^2(m)``,

    (I - tau Delta diag(alpha_k)) w_{k+1} = w_k,

so the pairing ``sum_x w_k phi_k m`` is conserved up to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .diffusion import DiffusionTrajectory, evolve, trajectory_csv
from .reports import CheckReport
from .space import FiniteSpace

COEFFICIENT_RULES = ("average", "implicit", "explicit")


@dataclass
class LinearizedTrajectory:
    """Solution of a linearized equation on the grid of a diffusion trajectory.

    ``values[k]`` lives at ``times[k]``; ``alpha[k]`` is the coefficient
    frozen on the interval ``[times[k], times[k+1]]``.
    """

    space: FiniteSpace
    times: np.ndarray
    values: np.ndarray
    direction: str
    alpha: np.ndarray

    def to_csv(self) -> str:
        return trajectory_csv(self.times, self.values)


def frozen_coefficients(traj: DiffusionTrajectory, rule: str = "average") -> np.ndarray:
    """``P'(rho)`` frozen per interval.

    ``average`` uses the mean of the endpoint values; ``implicit`` the
    right endpoint, which makes the forward scheme the exact derivative of
    the resolvent iteration; ``explicit`` the left endpoint.
    """
    dP = traj.model.dP(traj.rho)
    if rule == "average":
        return 0.5 * (dP[:-1] + dP[1:])
    if rule == "implicit":
        return dP[1:].copy()
    if rule == "explicit":
        return dP[:-1].copy()
    raise ValueError(f"unknown coefficient rule {rule!r}")


def _tau(traj) -> np.ndarray:
    return np.diff(traj.times)


def backward_step_matrix(space: FiniteSpace, alpha, tau: float) -> np.ndarray:
    """``I - tau diag(alpha) Delta``."""
    return np.eye(space.n) - tau * alpha[:, None] * space.laplacian_matrix


def forward_step_matrix(space: FiniteSpace, alpha, tau: float) -> np.ndarray:
    """``I - tau Delta diag(alpha)``, the L^2(m) adjoint of the backward matrix."""
    return np.eye(space.n) - tau * space.laplacian_matrix * alpha[None, :]


def backward_solve(traj: DiffusionTrajectory, phi_T, psi=None, rule: str = "average") -> LinearizedTrajectory:
    """Solve ``d/dt phi + P'(rho) Delta phi = psi`` backward from ``phi_T``.

    Parameters
    ----------
    phi_T : (n,) array
        Final datum.
    psi : (K, n) array or callable, optional
        Source on each interval; ``psi(k)`` if callable.  Zero by default.
    """
    space = traj.space
    alpha = frozen_coefficients(traj, rule)
    if np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
        raise ValueError("frozen coefficients must be positive and finite")
    taus = _tau(traj)
    K = len(taus)
    out = np.empty((K + 1, space.n))
    out[K] = np.asarray(phi_T, dtype=float)
    for k in range(K - 1, -1, -1):
        rhs = out[k + 1].copy()
        if psi is not None:
            rhs -= taus[k] * np.asarray(psi(k) if callable(psi) else psi[k], dtype=float)
        out[k] = linalg.solve(backward_step_matrix(space, alpha[k], taus[k]), rhs)
    return LinearizedTrajectory(space, traj.times.copy(), out, "backward", alpha)


def forward_linearized_solve(traj: DiffusionTrajectory, w0, rule: str = "average") -> LinearizedTrajectory:
    """Solve ``d/dt w = Delta(P'(rho) w)`` forward from ``w0`` (adjoint scheme)."""
    space = traj.space
    alpha = frozen_coefficients(traj, rule)
    taus = _tau(traj)
    out = np.empty((len(taus) + 1, space.n))
    out[0] = np.asarray(w0, dtype=float)
    for k, tau in enumerate(taus):
        out[k + 1] = linalg.solve(forward_step_matrix(space, alpha[k], tau), out[k])
    return LinearizedTrajectory(space, traj.times.copy(), out, "forward", alpha)


def forward_adjoint_solve(traj: DiffusionTrajectory, zeta0, psi=None, rule: str = "average") -> LinearizedTrajectory:
    """Solve ``d/dt zeta - P'(rho) Delta zeta = psi`` forward from ``zeta0``.

    With ``psi = 0`` the fields ``Delta zeta_k`` coincide with the forward
    linearized solution started at ``Delta zeta0``.
    """
    space = traj.space
    alpha = frozen_coefficients(traj, rule)
    taus = _tau(traj)
    out = np.empty((len(taus) + 1, space.n))
    out[0] = np.asarray(zeta0, dtype=float)
    for k, tau in enumerate(taus):
        rhs = out[k].copy()
        if psi is not None:
            rhs += tau * np.asarray(psi(k) if callable(psi) else psi[k], dtype=float)
        out[k + 1] = linalg.solve(backward_step_matrix(space, alpha[k], tau), rhs)
    return LinearizedTrajectory(space, traj.times.copy(), out, "forward-adjoint", alpha)


def pairings(fwd: LinearizedTrajectory, bwd: LinearizedTrajectory) -> np.ndarray:
    if fwd.values.shape != bwd.values.shape or not np.array_equal(fwd.times, bwd.times):
        raise ValueError("trajectories live on different grids")
    if not np.array_equal(fwd.alpha, bwd.alpha):
        raise ValueError("trajectories use different coefficient fields")
    return np.einsum("kx,kx,x->k", fwd.values, bwd.values, fwd.space.m)


def pairing_check(fwd: LinearizedTrajectory, bwd: LinearizedTrajectory, tol: float = 1e-12) -> CheckReport:
    """Constancy of ``sum_x w_k(x) phi_k(x) m(x)`` over the grid."""
    p = pairings(fwd, bwd)
    dev = np.abs(p - p[0])
    scale = max(1.0, abs(float(p[0])))
    worst = int(np.argmax(dev))
    return CheckReport("pairing", bool(dev[worst] <= tol * scale), float(-dev[worst]),
                       witness=worst, residuals=list(p - p[0]),
                       details={"pairing": float(p[0]), "tol": tol})


def energy_identity_residual(bwd: LinearizedTrajectory) -> float:
    """Defect of the backward energy identity for ``psi = 0``.

    Equals ``-1/2 sum_k E(phi_{k+1} - phi_k)``, which is of order ``tau``.
    """
    space = bwd.space
    taus = np.diff(bwd.times)
    phi = bwd.values
    lhs = 0.0
    for k, tau in enumerate(taus):
        d = phi[k + 1] - phi[k]
        lhs += float(np.sum(d * d / bwd.alpha[k] * space.m)) / tau
    lhs += 0.5 * space.energy(phi[0])
    return lhs - 0.5 * space.energy(phi[-1])


def time_derivative_residual(traj: DiffusionTrajectory) -> float:
    """How far the discrete derivative ``(rho_{k+1} - rho_k)/tau`` is from a forward solution.

    For each interval the derivative on the next interval is compared with
    one forward linearized step applied to the current one.  Returns the
    largest relative sup-norm mismatch.
    """
    space = traj.space
    taus = np.diff(traj.times)
    w = np.diff(traj.rho, axis=0) / taus[:, None]
    alpha = frozen_coefficients(traj, "average")
    worst = 0.0
    for k in range(len(taus) - 1):
        pred = linalg.solve(forward_step_matrix(space, alpha[k + 1], taus[k + 1]), w[k])
        scale = max(float(np.abs(w[k + 1]).max()), 1e-300)
        worst = max(worst, float(np.abs(pred - w[k + 1]).max()) / scale)
    return worst


def perturbation_derivative_check(space: FiniteSpace, model, rho_bar, w_bar, eps_list, t: float,
                                  n: int = 4096, rule: str = "average") -> CheckReport:
    """First-order consistency of the flow with its linearization.

    For each ``eps`` the difference quotient ``(S_t(rho + eps w) - S_t rho)/eps``
    is compared in sup norm with the forward linearized solution ``w_t``.
    The check holds when the errors decrease as ``eps`` decreases.  The
    ``implicit`` coefficient rule is the exact tangent of the resolvent
    iteration, so the only remaining error is the ``O(eps)`` curvature of
    the flow.
    """
    rho_bar = np.asarray(rho_bar, dtype=float)
    w_bar = np.asarray(w_bar, dtype=float)
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    for e in eps_list:
        if np.any(rho_bar + e * w_bar < 0):
            raise ValueError(f"perturbed datum is negative for eps={e}")
    base = evolve(space, model, rho_bar, t, n)
    lin = forward_linearized_solve(base, w_bar, rule=rule).values[-1]
    errors = []
    for e in eps_list:
        pert = evolve(space, model, rho_bar + e * w_bar, t, n).final
        dq = (pert - base.final) / e
        errors.append(float(np.abs(dq - lin).max()))
    errs = np.array(errors)
    if np.all(errs == 0):
        holds, margin = True, 0.0
    else:
        steps = errs[:-1] - errs[1:]
        margin = float(steps.min()) if len(steps) else 0.0
        holds = bool(np.all(steps > 0) or errs.max() <= 1e-12 * max(1.0, np.abs(lin).max()))
    return CheckReport("perturbation_derivative", holds, margin, witness=eps_list,
                       residuals=errors, details={"t": t, "steps": n, "rule": rule})


__all__ = [
    "LinearizedTrajectory", "frozen_coefficients", "backward_step_matrix", "forward_step_matrix",
    "backward_solve", "forward_linearized_solve", "forward_adjoint_solve", "pairing_check",
    "pairings", "energy_identity_residual", "time_derivative_residual",
    "perturbation_derivative_check",
]
