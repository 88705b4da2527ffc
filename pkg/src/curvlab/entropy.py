"""Entropy and pressure calculus.

An :class:`EntropyModel` is determined by its pressure ``P``; the entropy
is the normalized antiderivative

    U(r) = r * int_1^r P(s) / s^2 ds,

and the derived weights are ``Q = P / r``, ``R = r P' - P`` and
``Z(r) = int_0^r P'(s) / sqrt(s) ds``.  This module also hosts the scalar
convexity tools (Green function of ``-d^2/ds^2``, distortion coefficients)
used by the transport checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .reports import CheckReport

QUAD_TOL = 1e-12
SIGMA_THRESHOLD_TOL = 1e-12

FAMILIES = ("linear", "power", "regularized", "custom")


@dataclass(frozen=True)
class EntropyModel:
    """Pressure-based entropy model.

    Parameters
    ----------
    family : {"linear", "power", "regularized", "custom"}
        ``linear`` is ``P(r) = r`` (logarithmic entropy); ``power`` is
        ``P(r) = r^(1 - 1/N)``; ``regularized`` is the shifted and
        linearly extended power pressure; ``custom`` wraps user callables.
    N : float
        Dimension parameter, ``inf`` for the linear family.
    eps, M : float
        Shift and cut-off of the regularized family (``M`` may be ``inf``).
    pressure, dpressure : callable, optional
        ``P`` and ``P'`` for the custom family; vectorized over arrays.
    base : EntropyModel, optional
        Unregularized model wrapped by a regularized custom pressure.
    """

    family: str
    N: float = math.inf
    eps: float = 0.0
    M: float = math.inf
    pressure: Callable | None = field(default=None, compare=False)
    dpressure: Callable | None = field(default=None, compare=False)
    base: "EntropyModel | None" = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown entropy family {self.family!r}")
        if self.family in ("power", "regularized") and not self.N > 1:
            raise ValueError("power families need N > 1")
        if self.family == "regularized" or (self.family == "custom" and self.base is not None):
            if not 0 < self.eps < self.M:
                raise ValueError("regularization needs 0 < eps < M")
        if self.family == "custom" and (self.pressure is None or self.dpressure is None):
            raise ValueError("custom family needs pressure and dpressure callables")

    # -- pressure ---------------------------------------------------------

    @property
    def beta(self) -> float:
        return 1.0 - 1.0 / self.N

    def _shifted(self, r):
        """``P_eps`` and ``P'_eps`` of the base pressure (no cut-off)."""
        if self.family == "regularized":
            b, e = self.beta, self.eps
            return (r + e) ** b - e**b, b * (r + e) ** (b - 1.0)
        base = self.base
        return base.P(r + self.eps) - base.P(self.eps), base.dP(r + self.eps)

    def P(self, r):
        """Pressure, vectorized over ``r >= 0``."""
        r = np.asarray(r, dtype=float)
        if self.family == "linear":
            return r.copy()
        if self.family == "power":
            return r**self.beta
        if self.family == "custom" and self.base is None:
            return np.asarray(self.pressure(r), dtype=float)
        inner = np.minimum(r, self.M)
        p, _ = self._shifted(inner)
        if math.isfinite(self.M):
            pM, dM = self._shifted(np.float64(self.M))
            p = np.where(r > self.M, pM + (r - self.M) * dM, p)
        return p

    def dP(self, r):
        """Derivative ``P'``; for the power family it is infinite at 0."""
        r = np.asarray(r, dtype=float)
        if self.family == "linear":
            return np.ones_like(r)
        if self.family == "power":
            with np.errstate(divide="ignore"):
                return self.beta * r ** (-1.0 / self.N)
        if self.family == "custom" and self.base is None:
            return np.asarray(self.dpressure(r), dtype=float)
        _, d = self._shifted(np.minimum(r, self.M))
        return d

    def P_inv(self, z):
        """Inverse of ``P`` on ``[0, inf)``."""
        z = np.asarray(z, dtype=float)
        if self.family == "linear":
            return z.copy()
        if self.family == "power":
            return z ** (1.0 / self.beta)
        if self.family == "regularized":
            b, e = self.beta, self.eps
            r = (z + e**b) ** (1.0 / b) - e
            if math.isfinite(self.M):
                pM, dM = self._shifted(np.float64(self.M))
                r = np.where(z > pM, self.M + (z - pM) / dM, r)
            return np.maximum(r, 0.0)
        return _invert_monotone(self.P, self.dP, z)

    def Q(self, r):
        """``Q(r) = P(r) / r`` with the limit ``P'(0)`` at ``r = 0``."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = self.P(r) / r
        return np.where(r > 0, q, self.dP(np.zeros_like(r)))

    def R(self, r):
        """``R(r) = r P'(r) - P(r)``."""
        r = np.asarray(r, dtype=float)
        if self.family == "linear":
            return np.zeros_like(r)
        if self.family == "power":
            return -self.P(r) / self.N
        return r * self.dP(r) - self.P(r)

    # -- entropy ----------------------------------------------------------

    def U(self, r):
        """Normalized entropy ``U`` with ``U(1) = 0`` and ``U(0) = 0``."""
        r = np.asarray(r, dtype=float)
        if self.family == "linear":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(r > 0, r * np.log(np.where(r > 0, r, 1.0)), 0.0)
        if self.family == "power":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(r > 0, self.N * r * (1.0 - np.where(r > 0, r, 1.0) ** (-1.0 / self.N)), 0.0)
        return np.vectorize(self._U_scalar, otypes=[float])(r)

    def _U_scalar(self, r: float) -> float:
        if r <= 0:
            return 0.0
        if r == 1:
            return 0.0
        # substitution s = e^u removes the 1/s^2 singularity at 0
        lo, hi = sorted((0.0, math.log(r)))
        pts = None
        if math.isfinite(self.M) and lo < math.log(self.M) < hi:
            pts = [math.log(self.M)]
        val, _ = integrate.quad(lambda u: float(self.P(math.exp(u))) * math.exp(-u), lo, hi,
                                epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200, points=pts)
        return r * (val if r > 1 else -val)

    def Z(self, r):
        """``Z(r) = int_0^r P'(s) / sqrt(s) ds`` via ``s = v^2``."""
        r = np.asarray(r, dtype=float)
        if self.family == "linear":
            return 2.0 * np.sqrt(r)

        def one(x):
            if x <= 0:
                return 0.0
            val, _ = integrate.quad(lambda v: 2.0 * float(self.dP(v * v)), 0.0, math.sqrt(x),
                                    epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
            return val

        return np.vectorize(one, otypes=[float])(r)

    def U_eps(self, r, eps: float):
        """Convex regularization ``U_eps`` with ``U_eps'' = P' / (r + eps)``."""
        if eps <= 0:
            raise ValueError("eps must be positive")

        def integral(b):
            val, _ = integrate.quad(lambda s: float(self.P(s)) / (s + eps) ** 2, 0.0, b,
                                    epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
            return val

        c1 = integral(1.0)
        return np.vectorize(lambda x: (x + eps) * integral(x) - x * c1, otypes=[float])(
            np.asarray(r, dtype=float))

    def entropy(self, space, rho) -> float:
        """``sum_x U(rho(x)) m(x)``; finite spaces carry no singular part."""
        return float(np.dot(self.U(rho), space.m))

    # -- regularity -------------------------------------------------------

    def derivative_range(self) -> tuple[float, float]:
        """Infimum and supremum of ``P'`` on ``[0, inf)``."""
        if self.family == "linear":
            return 1.0, 1.0
        if self.family == "power":
            return 0.0, math.inf
        if self.family == "regularized":
            lo = float(self.dP(self.M)) if math.isfinite(self.M) else 0.0
            return lo, float(self.dP(0.0))
        top = self.M if math.isfinite(self.M) else 1e6
        grid = np.concatenate([[0.0], np.geomspace(1e-9, top, 4001)])
        d = self.dP(grid)
        return float(d.min()), float(d.max())

    @property
    def a(self) -> float:
        """Regularity constant: ``a <= P' <= 1/a``; zero when not regular."""
        lo, hi = self.derivative_range()
        if hi == math.inf or lo <= 0:
            return 0.0
        return min(lo, 1.0 / hi, 1.0)

    @property
    def regular(self) -> bool:
        return self.a > 0

    def Q_bounds(self) -> tuple[float, float]:
        """``inf`` and ``sup`` of ``Q`` over ``r > 0``."""
        if self.family == "linear":
            return 1.0, 1.0
        if self.family == "power":
            return 0.0, math.inf
        if self.family == "regularized":
            # P concave with P(0) = 0, so Q decreases from P'(0) to the final slope
            tail = float(self.dP(self.M)) if math.isfinite(self.M) else 0.0
            return tail, float(self.dP(0.0))
        top = self.M if math.isfinite(self.M) else 1e6
        q = self.Q(np.concatenate([[0.0], np.geomspace(1e-9, 4 * top, 4001)]))
        return float(q.min()), float(q.max())

    def record(self) -> dict:
        """Key-value record for scenario files."""
        return {"family": self.family, "N": self.N, "eps": self.eps, "M": self.M, "a": self.a}


def _invert_monotone(P, dP, z, tol=1e-14, maxiter=200):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    for idx, val in np.ndenumerate(z):
        if val <= 0:
            out[idx] = 0.0
            continue
        hi = 1.0
        while float(P(hi)) < val:
            hi *= 2.0
        out[idx] = optimize.brentq(lambda r: float(P(r)) - val, 0.0, hi, xtol=tol, maxiter=maxiter)
    return out


def make_entropy(family: str, **params) -> EntropyModel:
    """Build an entropy model from a family tag and parameters.

    Examples
    --------
    >>> float(make_entropy("power", N=2).U(4.0))
    4.0
    """
    family = family.lower()
    if family in ("linear", "log", "boltzmann"):
        return EntropyModel("linear")
    if family == "power":
        return EntropyModel("power", N=float(params["N"]))
    if family == "regularized":
        return EntropyModel("regularized", N=float(params["N"]), eps=float(params["eps"]),
                            M=float(params.get("M", math.inf)))
    if family == "custom":
        return EntropyModel("custom", pressure=params["P"], dpressure=params["dP"])
    raise ValueError(f"unknown entropy family {family!r}")


def regularize_pressure(model: EntropyModel, eps: float, M: float = math.inf) -> EntropyModel:
    """Shifted and linearly extended pressure ``P_{eps, M}``.

    ``P_eps(r) = P(r + eps) - P(eps)`` on ``[0, M]`` and affine with slope
    ``P_eps'(M)`` beyond ``M``.
    """
    if not 0 < eps < M:
        raise ValueError("regularization needs 0 < eps < M")
    if model.family == "linear":
        return model
    if model.family == "power":
        return EntropyModel("regularized", N=model.N, eps=eps, M=M)
    if model.family == "regularized":
        raise ValueError("model is already regularized")
    return EntropyModel("custom", N=model.N, eps=eps, M=M, pressure=model.P,
                        dpressure=model.dP, base=model)


# ---------------------------------------------------------------------------
# Scalar checks


def mccann_check(model: EntropyModel, N: float, r_grid) -> CheckReport:
    """Check ``R(r) >= -P(r)/N`` on the grid."""
    r = np.asarray(r_grid, dtype=float)
    if np.any(r <= 0):
        raise ValueError("r_grid must be positive")
    margins = model.R(r) + model.P(r) / N
    k = int(np.argmin(margins))
    return CheckReport("mccann", bool(margins[k] >= -1e-14 * max(1.0, abs(float(model.P(r[k]))))),
                       float(margins[k]), witness=float(r[k]), residuals=list(margins),
                       details={"N": N})


@dataclass(frozen=True)
class SigmaCoefficient:
    """Value of the distortion coefficient; ``infinite`` flags ``+inf``."""

    kappa: float
    t: float
    delta: float
    value: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)

    def __float__(self) -> float:
        return self.value


def _sigma_value(kappa: float, t: float, delta: float) -> float:
    kd = kappa * delta * delta
    if kd >= math.pi**2 - SIGMA_THRESHOLD_TOL:
        return math.inf
    if kd == 0.0:
        return t
    if kd > 0:
        om = math.sqrt(kd)
        return math.sin(om * t) / math.sin(om)
    om = math.sqrt(-kd)
    if om > 700:
        # sinh overflows; use the exponential asymptotics
        return math.exp(om * (t - 1.0)) * (1.0 - math.exp(-2 * om * t)) / (1.0 - math.exp(-2 * om))
    return math.sinh(om * t) / math.sinh(om)


def sigma_coeff(kappa: float, t: float, delta: float) -> SigmaCoefficient:
    """Distortion coefficient solving ``v'' + kappa delta^2 v = 0``, ``v(0)=0, v(1)=1``.

    Returns an infinite value (not an exception) when ``kappa delta^2``
    reaches ``pi^2``.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return SigmaCoefficient(kappa, t, delta, _sigma_value(float(kappa), float(t), float(delta)))


def green_weight(t, s):
    """Green function of ``-d^2/ds^2`` on ``(0, 1)`` with pole at ``t``.

    ``g(t, s) = (1 - t) s`` for ``s <= t`` and ``t (1 - s)`` for ``s >= t``.
    Vectorized; symmetric in its two arguments.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any((t < 0) | (t > 1) | (s < 0) | (s > 1)):
        raise ValueError("green_weight arguments must lie in [0, 1]")
    out = np.where(s <= t, (1.0 - t) * s, t * (1.0 - s))
    return float(out) if out.ndim == 0 else out


def _uniform_grid(grid, n_samples) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 3:
        raise ValueError("need at least 3 grid points")
    if len(grid) != n_samples:
        raise ValueError("samples and grid differ in length")
    step = np.diff(grid)
    if np.any(step <= 0) or np.ptp(step) > 1e-9 * step.mean():
        raise ValueError("grid must be uniform and increasing")
    return grid


def weighted_convexity_check(u_samples, f_samples, grid, tol: float = 1e-8) -> CheckReport:
    """Integral form of ``u'' >= f`` on grid triples ``(r0, r1, t)``.

    For grid indices ``i < k < j`` with ``t = (k - i) / (j - i)`` the check is

        u(r_k) <= (1 - t) u(r_i) + t u(r_j)
                  - (r_j - r_i)^2 int_0^1 f((1 - s) r_i + s r_j) g(t, s) ds,

    with the integral computed by the trapezoid rule on the grid nodes
    between ``r_i`` and ``r_j``.  The kink of ``g(t, .)`` sits on a node, so
    the rule is exact for constant ``f``.
    """
    u = np.asarray(u_samples, dtype=float)
    f = np.asarray(f_samples, dtype=float)
    r = _uniform_grid(grid, len(u))
    if len(f) != len(u):
        raise ValueError("u and f samples differ in length")
    n = len(r)
    worst, witness = math.inf, None
    for span in range(2, n):
        s = np.arange(span + 1) / span
        G = green_weight(s[1:-1, None], s[None, :])  # (span-1, span+1)
        wts = np.full(span + 1, 1.0 / span)
        wts[[0, -1]] *= 0.5
        for i in range(n - span):
            j = i + span
            t = s[1:-1]
            integral = G @ (f[i : j + 1] * wts)
            rhs = (1 - t) * u[i] + t * u[j] - (r[j] - r[i]) ** 2 * integral
            margin = rhs - u[i + 1 : j]
            k = int(np.argmin(margin))
            if margin[k] < worst:
                worst = float(margin[k])
                witness = (float(r[i]), float(r[j]), float(t[k]))
    return CheckReport("weighted_convexity", worst >= -tol, worst, witness=witness,
                       details={"tol": tol, "points": n})


def sigma_concavity_check(u_samples, kappa: float, grid, tol: float = 1e-10) -> CheckReport:
    """Distortion form of ``u'' + kappa u <= 0`` on grid triples.

    Checks ``u(r_t) >= sigma^(1-t)(r1 - r0) u(r0) + sigma^(t)(r1 - r0) u(r1)``
    for all grid triples with ``kappa (r1 - r0)^2 < pi^2``.
    """
    u = np.asarray(u_samples, dtype=float)
    r = _uniform_grid(grid, len(u))
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    n = len(r)
    worst, witness, count = math.inf, None, 0
    for span in range(2, n):
        for i in range(n - span):
            j = i + span
            delta = r[j] - r[i]
            if kappa * delta * delta >= math.pi**2 - SIGMA_THRESHOLD_TOL:
                continue
            for k in range(i + 1, j):
                t = (k - i) / span
                rhs = _sigma_value(kappa, 1 - t, delta) * u[i] + _sigma_value(kappa, t, delta) * u[j]
                margin = u[k] - rhs
                count += 1
                if margin < worst:
                    worst, witness = float(margin), (float(r[i]), float(r[j]), float(t))
    if count == 0:
        worst = 0.0
    return CheckReport("sigma_concavity", worst >= -tol, worst, witness=witness,
                       details={"tol": tol, "triples": count, "kappa": kappa})


def sigma_fd_residual(kappa: float, delta: float, h: float, t_grid=None) -> float:
    """Max of ``|s(t+h) - 2 s(t) + s(t-h) + kappa delta^2 h^2 s(t)|`` over interior t."""
    if t_grid is None:
        t_grid = np.linspace(0.1, 0.9, 17)
    kd = kappa * delta * delta
    vals = []
    for t in t_grid:
        s0 = _sigma_value(kappa, t, delta)
        vals.append(abs(_sigma_value(kappa, t + h, delta) - 2 * s0
                        + _sigma_value(kappa, t - h, delta) + kd * h * h * s0))
    return max(vals)


__all__ = [
    "EntropyModel", "make_entropy", "regularize_pressure", "mccann_check",
    "SigmaCoefficient", "sigma_coeff", "green_weight", "weighted_convexity_check",
    "sigma_concavity_check", "sigma_fd_residual",
]
