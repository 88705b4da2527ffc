"""Quadratic optimal transport on finite spaces and along 1-D grids.

``w2_distance`` solves the Kantorovich linear program exactly.  On tagged
1-D grids (paths and circles) densities are read as histograms, constant on
the cell of each grid point, and geodesics are built by interpolating
quantile functions.  On the circle the quantile of the target is rotated by
the amount that minimizes the transport cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .diffusion import evolve, trajectory_csv
from .entropy import EntropyModel, green_weight
from .gamma2 import WeightedOperator
from .reports import CheckReport
from .space import FiniteSpace, as_density, gamma, hopf_lax

MASS_TOL = 1e-10
LP_TOL = 1e-9


# ---------------------------------------------------------------------------
# Linear programming


@dataclass(frozen=True)
class Coupling:
    """Transport plan between two probability fields.

    ``plan[x, y]`` is the mass moved from ``x`` to ``y``; marginals are
    ``rho0 * m`` and ``rho1 * m``.  ``u`` and ``v`` are optimal dual
    potentials with ``u[x] + v[y] <= d(x,y)^2``; ``slackness`` is the largest
    violation of complementary slackness.
    """

    plan: np.ndarray
    cost: float
    u: np.ndarray
    v: np.ndarray
    slackness: float
    dual_gap: float


def _check_probability(space: FiniteSpace, rho, name: str) -> np.ndarray:
    rho = as_density(space, rho)
    mass = float(np.dot(rho, space.m))
    if abs(mass - 1.0) > MASS_TOL:
        raise ValueError(f"{name} is not a probability field (mass {mass!r})")
    return rho


def w2_distance(space: FiniteSpace, rho0, rho1) -> tuple[float, Coupling]:
    """Exact quadratic Wasserstein distance by linear programming.

    Returns ``(W2, coupling)``.  The plan is restricted to the supports,
    solved with the HiGHS dual simplex, and certified with the equality
    duals: dual feasibility, complementary slackness and a zero duality gap
    are all recorded on the coupling.
    """
    rho0 = _check_probability(space, rho0, "rho0")
    rho1 = _check_probability(space, rho1, "rho1")
    a_full, b_full = rho0 * space.m, rho1 * space.m
    I = np.nonzero(a_full > 0)[0]
    J = np.nonzero(b_full > 0)[0]
    a, b = a_full[I], b_full[J]
    C = space.d[np.ix_(I, J)] ** 2
    p, q = len(I), len(J)
    # equalities: row sums (p of them) and column sums (q of them); one is redundant
    rows = np.zeros((p + q, p * q))
    for i in range(p):
        rows[i, i * q : (i + 1) * q] = 1.0
    for j in range(q):
        rows[p + j, j::q] = 1.0
    beq = np.concatenate([a, b])
    res = optimize.linprog(C.ravel(), A_eq=rows, b_eq=beq, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    x = np.maximum(res.x, 0.0).reshape(p, q)
    duals = res.eqlin.marginals
    u_s, v_s = duals[:p], duals[p:]
    reduced = C - u_s[:, None] - v_s[None, :]
    slack = float(np.max(np.abs(reduced * x))) if x.size else 0.0
    feas = float(max(0.0, -reduced.min())) if reduced.size else 0.0
    primal = float(np.sum(C * x))
    dual = float(u_s @ a + v_s @ b)
    plan = np.zeros((space.n, space.n))
    plan[np.ix_(I, J)] = x
    u = np.zeros(space.n)
    v = np.zeros(space.n)
    u[I], v[J] = u_s, v_s
    cpl = Coupling(plan, primal, u, v, max(slack, feas), abs(primal - dual))
    return math.sqrt(max(primal, 0.0)), cpl


def kantorovich_dual_bound(space: FiniteSpace, rho0, rho1, phi) -> float:
    """``int Q_1 phi d mu_1 - int phi d mu_0``; never exceeds ``W2^2 / 2``."""
    rho0 = _check_probability(space, rho0, "rho0")
    rho1 = _check_probability(space, rho1, "rho1")
    phi = np.asarray(phi, dtype=float)
    return float(np.dot(hopf_lax(space, phi, 1.0) * rho1, space.m) - np.dot(phi * rho0, space.m))


# ---------------------------------------------------------------------------
# Quantile calculus on 1-D grids


def _require_grid(space: FiniteSpace):
    if space.kind not in ("path", "circle"):
        raise ValueError("this operation needs a tagged 1-D grid (path or circle)")
    return space.spacing, space.length


class _Quantile:
    """Piecewise-linear quantile function of a histogram.

    Segment ``k`` maps ``[u0[k], u1[k]]`` affinely onto ``[y0[k], y1[k]]``
    in cell coordinates (cells are ``[i h, (i+1) h]``).
    """

    def __init__(self, u0, u1, y0, y1):
        self.u0, self.u1, self.y0, self.y1 = u0, u1, y0, y1

    @classmethod
    def from_histogram(cls, masses, h):
        masses = np.asarray(masses, dtype=float)
        masses = masses / masses.sum()
        cum = np.concatenate([[0.0], np.cumsum(masses)])
        cum[-1] = 1.0
        keep = masses > 0
        idx = np.nonzero(keep)[0]
        return cls(cum[:-1][keep], cum[1:][keep], idx * h, (idx + 1) * h)

    def shifted(self, theta: float, L: float) -> "_Quantile":
        """``u -> F^{-1}(u - theta)`` with the periodic lift ``F^{-1}(v+1) = F^{-1}(v) + L``."""
        parts = []
        for k in range(int(math.floor(-theta)) - 1, int(math.ceil(1 - theta)) + 1):
            parts.append((self.u0 + k + theta, self.u1 + k + theta, self.y0 + k * L, self.y1 + k * L))
        u0 = np.concatenate([p[0] for p in parts])
        u1 = np.concatenate([p[1] for p in parts])
        y0 = np.concatenate([p[2] for p in parts])
        y1 = np.concatenate([p[3] for p in parts])
        keep = (u1 > 0) & (u0 < 1)
        return _Quantile(u0[keep], u1[keep], y0[keep], y1[keep])

    def eval_on(self, a, b):
        """Values at the ends of sub-intervals ``[a, b]`` contained in one segment each."""
        mid = 0.5 * (a + b)
        k = np.searchsorted(self.u1, mid, side="left")
        k = np.clip(k, 0, len(self.u1) - 1)
        du = self.u1[k] - self.u0[k]
        slope = np.where(du > 0, (self.y1[k] - self.y0[k]) / np.where(du > 0, du, 1.0), 0.0)
        return self.y0[k] + slope * (a - self.u0[k]), self.y0[k] + slope * (b - self.u0[k])


def _pieces(q0: _Quantile, q1: _Quantile):
    """Common refinement of two quantile functions on ``[0, 1]``."""
    knots = np.unique(np.concatenate([[0.0, 1.0], q0.u0, q0.u1, q1.u0, q1.u1]))
    knots = knots[(knots >= 0) & (knots <= 1)]
    a, b = knots[:-1], knots[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    x0a, x0b = q0.eval_on(a, b)
    x1a, x1b = q1.eval_on(a, b)
    return a, b, x0a, x0b, x1a, x1b


def _quad_cost(a, b, x0a, x0b, x1a, x1b) -> float:
    da, db = x1a - x0a, x1b - x0b
    return float(np.sum((b - a) * (da * da + da * db + db * db) / 3.0))


def _masses(space, rho):
    return np.asarray(rho, dtype=float) * space.m


def _optimal_rotation(q0: _Quantile, q1: _Quantile, L: float) -> tuple[float, float]:
    def cost(theta):
        return _quad_cost(*_pieces(q0, q1.shifted(theta, L)))

    # the cost is convex in theta; bracket on a coarse scan, then refine
    grid = np.linspace(-1.0, 1.0, 41)
    vals = [cost(t) for t in grid]
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-13, "maxiter": 500})
    best = (float(res.fun), float(res.x))
    if vals[k] < best[0]:
        best = (float(vals[k]), float(grid[k]))
    return best[1], best[0]


def _quantile_pair(space: FiniteSpace, rho0, rho1):
    h, L = _require_grid(space)
    q0 = _Quantile.from_histogram(_masses(space, rho0), h)
    q1 = _Quantile.from_histogram(_masses(space, rho1), h)
    if space.kind == "circle":
        theta, _ = _optimal_rotation(q0, q1, L)
        q1 = q1.shifted(theta, L)
    return q0, q1


def w2_quantile(space: FiniteSpace, rho0, rho1) -> float:
    """W2 between the histogram measures of two densities on a 1-D grid."""
    rho0 = _check_probability(space, rho0, "rho0")
    rho1 = _check_probability(space, rho1, "rho1")
    q0, q1 = _quantile_pair(space, rho0, rho1)
    return math.sqrt(max(_quad_cost(*_pieces(q0, q1)), 0.0))


def _rebin(space: FiniteSpace, a, b, ya, yb) -> np.ndarray:
    """Histogram of the pushforward of Lebesgue on pieces ``[a, b]`` under affine maps."""
    h, L = space.spacing, space.length
    n = space.n
    periodic = space.kind == "circle"
    mass = np.zeros(n)
    lo = np.minimum(ya, yb)
    hi = np.maximum(ya, yb)
    w = b - a
    for l, r, wt in zip(lo, hi, w):
        if r - l <= 1e-15 * max(1.0, L):
            c = int(math.floor(l / h + 1e-12))
            mass[c % n if periodic else min(max(c, 0), n - 1)] += wt
            continue
        c0 = int(math.floor(l / h))
        c1 = int(math.ceil(r / h))
        for c in range(c0, c1):
            ov = min(r, (c + 1) * h) - max(l, c * h)
            if ov > 0:
                mass[c % n if periodic else min(max(c, 0), n - 1)] += wt * ov / (r - l)
    return mass


@dataclass
class MeasureCurve:
    """Time-gridded probability densities with optional velocities.

    ``phi[j]`` is the potential and ``v2[j]`` the squared velocity at
    ``times[j]``; both are filled by :func:`curve_velocity`.
    """

    space: FiniteSpace
    times: np.ndarray
    rho: np.ndarray
    phi: np.ndarray | None = None
    v2: np.ndarray | None = None
    mean_defects: np.ndarray | None = None
    details: dict = field(default_factory=dict)

    def reversed(self) -> "MeasureCurve":
        return MeasureCurve(self.space, 1.0 - self.times[::-1], self.rho[::-1].copy())

    def to_csv(self) -> str:
        return trajectory_csv(self.times, self.rho)


def geodesic_1d(space: FiniteSpace, rho0, rho1, J: int) -> MeasureCurve:
    """Displacement interpolation by quantile averaging, rebinned to the grid.

    ``J`` is the number of time steps; the curve has ``J + 1`` slices.
    """
    h, L = _require_grid(space)
    if J < 1:
        raise ValueError("J must be at least 1")
    rho0 = _check_probability(space, rho0, "rho0")
    rho1 = _check_probability(space, rho1, "rho1")
    q0, q1 = _quantile_pair(space, rho0, rho1)
    a, b, x0a, x0b, x1a, x1b = _pieces(q0, q1)
    times = np.linspace(0.0, 1.0, J + 1)
    out = np.empty((J + 1, space.n))
    for j, s in enumerate(times):
        ya = (1 - s) * x0a + s * x1a
        yb = (1 - s) * x0b + s * x1b
        out[j] = _rebin(space, a, b, ya, yb) / space.m
    w2 = math.sqrt(max(_quad_cost(a, b, x0a, x0b, x1a, x1b), 0.0))
    return MeasureCurve(space, times, out, details={"w2": w2})


# ---------------------------------------------------------------------------
# Velocities and actions


def curve_velocity(curve: MeasureCurve) -> MeasureCurve:
    """Fill potentials and squared velocities from the continuity equation.

    The time derivative is a centred difference inside and one-sided at the
    ends; its mean over each weighted component is removed and reported in
    ``mean_defects``.  The potential solves ``E_rho(phi, psi) = <d rho/ds, psi>``
    and ``v^2 = Gamma(phi)`` on the support of ``rho`` (zero elsewhere).
    """
    space = curve.space
    t = curve.times
    R = curve.rho
    J = len(t) - 1
    if J < 1:
        raise ValueError("curve needs at least two slices")
    ell = np.empty_like(R)
    ell[0] = (R[1] - R[0]) / (t[1] - t[0])
    ell[-1] = (R[-1] - R[-2]) / (t[-1] - t[-2])
    if J > 1:
        ell[1:-1] = (R[2:] - R[:-2]) / (t[2:] - t[:-2])[:, None]
    phis = np.zeros_like(R)
    v2 = np.zeros_like(R)
    defects = np.zeros(J + 1)
    for j in range(J + 1):
        op = WeightedOperator(space, R[j])
        lj, defects[j] = op.project_compatible(ell[j])
        phis[j] = op.solve(lj)
        v2[j] = np.where(R[j] > 0, gamma(space, phis[j]), 0.0)
    return replace(curve, phi=phis, v2=v2, mean_defects=defects)


def trapezoid_weights(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def _time_weight(kind, times, t=None):
    if kind in ("constant", None):
        return np.ones_like(times)
    if kind == "omega":
        return 1.0 - times
    if kind == "identity":
        return times.copy()
    if kind == "green":
        if t is None:
            raise ValueError("green weight needs t")
        return green_weight(t, times)
    if callable(kind):
        return np.asarray([kind(s) for s in times], dtype=float)
    raise ValueError(f"unknown weight {kind!r}")


def slice_integrands(curve: MeasureCurve, model: EntropyModel | None = None) -> np.ndarray:
    """``sum_x Q(rho) v^2 rho m`` per slice, using ``Q(rho) rho = P(rho)``."""
    if curve.v2 is None:
        raise ValueError("curve has no velocities; run curve_velocity first")
    if model is None or model.family == "linear":
        weight = curve.rho
    else:
        weight = model.P(curve.rho)
    return np.einsum("jx,jx,x->j", weight, curve.v2, curve.space.m)


def weighted_action(curve: MeasureCurve, model: EntropyModel | None = None, weight="constant",
                    t: float | None = None) -> float:
    """Weighted action ``int weight(s) int Q(rho) v^2 rho dm ds`` (trapezoid in s).

    ``weight`` is ``"constant"``, ``"omega"`` (``1 - s``), ``"identity"``
    (``s``), ``"green"`` (``g(t, s)``) or a callable.  ``model=None`` means
    ``Q = 1``.
    """
    I = slice_integrands(curve, model)
    return float(np.sum(trapezoid_weights(curve.times) * _time_weight(weight, curve.times, t) * I))


def kinetic_action(curve: MeasureCurve) -> float:
    return weighted_action(curve, None, "constant")


def _resolution(space: FiniteSpace, tau: float) -> float:
    h = space.spacing if space.kind in ("path", "circle") else float(
        np.max(np.where(space.w > 0, space.d, 0.0)))
    return 10.0 * (h + tau)


def _entropy(model: EntropyModel, space: FiniteSpace, rho) -> float:
    return model.entropy(space, rho)


def cdstar_convexity_check(curve: MeasureCurve, K: float, N: float, tol: float | None = None,
                           coupling_form: bool = False) -> CheckReport:
    """Distorted convexity of ``U_N`` along a curve.

    At every slice ``t``:
    ``U_N(mu_t) <= (1-t) U_N(mu_0) + t U_N(mu_1) - K A_t``, where ``A_t`` is
    the action with weight ``g(t, .)`` and ``Q_N(r) = r^(-1/N)``.  With
    ``coupling_form`` the distortion-coefficient version along an optimal
    plan of :func:`w2_distance` is also evaluated and stored per slice.
    """
    space = curve.space
    model = EntropyModel("power", N=N)
    times = curve.times
    if tol is None:
        tol = _resolution(space, float(times[1] - times[0]))
    U = np.array([_entropy(model, space, r) for r in curve.rho])
    need_action = K != 0
    if need_action and curve.v2 is None:
        curve = curve_velocity(curve)
    margins = []
    for j, t in enumerate(times):
        rhs = (1 - t) * U[0] + t * U[-1]
        if need_action:
            rhs -= K * weighted_action(curve, model, "green", t)
        margins.append(rhs - U[j])
    margins = np.array(margins)
    k = int(np.argmin(margins))
    details = {"tol": tol, "K": K, "N": N}
    if coupling_form:
        details["coupling_margins"] = _sigma_form_margins(curve, K, N)
    return CheckReport("cdstar_convexity", bool(margins[k] >= -tol), float(margins[k]),
                       witness=float(times[k]), residuals=list(margins), details=details)


def _sigma_form_margins(curve: MeasureCurve, K: float, N: float) -> list:
    from .entropy import _sigma_value

    space = curve.space
    r0, r1 = curve.rho[0], curve.rho[-1]
    _, cpl = w2_distance(space, r0, r1)
    I, J = np.nonzero(cpl.plan > 0)
    mass = cpl.plan[I, J]
    dist = space.d[I, J]
    kappa = K / N
    out = []
    for j, t in enumerate(curve.times):
        s0 = np.array([_sigma_value(kappa, 1 - t, d) for d in dist])
        s1 = np.array([_sigma_value(kappa, t, d) for d in dist])
        rhs = N - N * float(np.sum(mass * (s0 * r0[I] ** (-1 / N) + s1 * r1[J] ** (-1 / N))))
        lhs = N - N * float(np.dot(curve.rho[j] ** (1 - 1 / N), space.m))
        out.append(rhs - lhs)
    return out


def evi_check(space: FiniteSpace, model: EntropyModel, rho_bar, nu, K: float, T: float, n: int,
              tol: float | None = None, J: int = 16) -> CheckReport:
    """Evolution variational inequality along the diffusion, on a 1-D grid.

    At every grid time ``t_k`` (``k < n``) the margin is

        U(nu) - K A_omega(mu_k, nu) - U(mu_k)
        - (W2^2(mu_{k+1}, nu) - W2^2(mu_k, nu)) / (2 tau),

    with quantile W2 and ``A_omega`` the ``(1 - s) Q``-weighted action of the
    quantile geodesic from ``mu_k`` to ``nu`` (``J`` steps; skipped when
    ``K = 0``).  The check holds when every margin is at least ``-tol``.
    """
    _require_grid(space)
    nu = _check_probability(space, nu, "nu")
    traj = evolve(space, model, rho_bar, T, n)
    tau = traj.tau
    if tol is None:
        tol = _resolution(space, tau)
    w2sq = np.array([w2_quantile(space, r, nu) ** 2 for r in traj.rho])
    U_nu = _entropy(model, space, nu)
    margins = []
    for k in range(n):
        rhs = U_nu
        if K != 0:
            geo = curve_velocity(geodesic_1d(space, traj.rho[k], nu, J))
            rhs -= K * weighted_action(geo, model, "omega")
        lhs = 0.5 * (w2sq[k + 1] - w2sq[k]) / tau + _entropy(model, space, traj.rho[k])
        margins.append(rhs - lhs)
    margins = np.array(margins)
    k = int(np.argmin(margins))
    return CheckReport("evi", bool(margins[k] >= -tol), float(margins[k]), witness=float(traj.times[k]),
                       residuals=list(margins),
                       details={"tol": tol, "tau": tau, "h": space.spacing, "K": K,
                                "violation": float(max(0.0, -margins[k]))})


def contraction_rate(model: EntropyModel, K: float) -> float:
    """``Lambda = inf_{r > 0} K Q(r)``."""
    if K == 0:
        return 0.0
    qlo, qhi = model.Q_bounds()
    return K * qlo if K > 0 else K * qhi


def _w2(space, r0, r1):
    if space.kind in ("path", "circle"):
        return w2_quantile(space, r0, r1)
    return w2_distance(space, r0, r1)[0]


def contraction_check(space: FiniteSpace, model: EntropyModel, rho_bar, sigma_bar, K: float,
                      T: float, n: int, tol: float | None = None) -> CheckReport:
    """``W2(mu_t, nu_t) <= exp(-Lambda t) W2(mu_0, nu_0) (1 + tol)`` along both flows."""
    a = evolve(space, model, rho_bar, T, n)
    b = evolve(space, model, sigma_bar, T, n)
    Lam = contraction_rate(model, K)
    if tol is None:
        tol = _resolution(space, a.tau)
    dist = np.array([_w2(space, x, y) for x, y in zip(a.rho, b.rho)])
    if dist[0] == 0:
        excess = dist.copy()
    else:
        excess = dist / (np.exp(-Lam * a.times) * dist[0]) - 1.0
    k = int(np.argmax(excess))
    violation = float(max(0.0, excess[k]))
    return CheckReport("contraction", violation <= tol, -float(excess[k]), witness=float(a.times[k]),
                       residuals=list(dist),
                       details={"tol": tol, "Lambda": Lam, "tau": a.tau, "violation": violation,
                                "ratio_final": float(dist[-1] / dist[0]) if dist[0] > 0 else 0.0})


def curve_action_monotonicity_check(curve: MeasureCurve, model: EntropyModel, T: float, n: int,
                                    K: float = 0.0, variant: str = "flow",
                                    tol: float | None = None) -> CheckReport:
    """Action monotonicity when every slice of a curve is diffused.

    ``variant="flow"``: slice ``s`` is evolved to time ``t`` and
    ``1/2 A2(t) + K int_0^t A_Q <= 1/2 A2(0)`` is checked at every grid
    time.  ``variant="scaled"``: slice ``s`` is evolved to time ``s t`` and
    ``1/2 A2(t) + t U(mu_{1,t}) + K int_0^t A_{sQ} <= 1/2 A2(0) + t U(mu_0)``
    is checked.
    """
    space = curve.space
    if variant not in ("flow", "scaled"):
        raise ValueError("variant must be 'flow' or 'scaled'")
    S = curve.times
    trajs = []
    for s, r in zip(S, curve.rho):
        horizon = T if variant == "flow" else s * T
        if horizon <= 0:
            trajs.append(np.repeat(r[None, :], n + 1, axis=0))
        else:
            trajs.append(evolve(space, model, r, horizon, n).rho)
    trajs = np.array(trajs)  # (slices, n+1, points)
    tgrid = np.linspace(0.0, T, n + 1)
    tau = T / n
    if tol is None:
        tol = _resolution(space, tau)
    A2, AQ = [], []
    for k in range(n + 1):
        c = curve_velocity(MeasureCurve(space, S, trajs[:, k, :]))
        A2.append(kinetic_action(c))
        if K != 0:
            AQ.append(weighted_action(c, model, "constant" if variant == "flow" else "identity"))
    A2 = np.array(A2)
    AQ = np.array(AQ) if K != 0 else np.zeros(n + 1)
    integ = np.concatenate([[0.0], np.cumsum(0.5 * tau * (AQ[1:] + AQ[:-1]))])
    margins = 0.5 * A2[0] - 0.5 * A2 - K * integ
    if variant == "scaled":
        U_end = np.array([_entropy(model, space, trajs[-1, k]) for k in range(n + 1)])
        U_start = _entropy(model, space, curve.rho[0])
        margins += tgrid * U_start - tgrid * U_end
    k = int(np.argmin(margins))
    return CheckReport("curve_action_monotonicity", bool(margins[k] >= -tol), float(margins[k]),
                       witness=float(tgrid[k]), residuals=list(margins),
                       details={"tol": tol, "variant": variant, "K": K, "A2_initial": float(A2[0])})


__all__ = [
    "Coupling", "w2_distance", "kantorovich_dual_bound", "w2_quantile", "MeasureCurve",
    "geodesic_1d", "curve_velocity", "trapezoid_weights", "weighted_action", "kinetic_action",
    "slice_integrands", "cdstar_convexity_check", "evi_check", "contraction_rate",
    "contraction_check", "curve_action_monotonicity_check",
]
