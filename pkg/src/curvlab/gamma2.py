"""Gamma_2 calculus, Bakry-Emery checks and weighted energies.

The iterated form is evaluated literally as

    Gamma_2(f, g; phi) = 1/2 sum_x [Gamma(f,g) Delta phi
                                    - Gamma(f, Delta g) phi
                                    - Gamma(g, Delta f) phi] m.

The Leibniz-rule rewriting of this form survives on graphs even though the
Leibniz rule for ``Gamma`` itself does not: the correction term is a sum of
``w (df)(dphi)(d Delta f)`` over ordered pairs, antisymmetric under swapping
the pair, and it cancels.  :func:`gamma2_forms` evaluates both expressions.

The Bakry-Emery condition ``BE(K, N)`` is tested pointwise.  Testing with
``phi = 1_x / m(x)`` turns the inequality into positive semidefiniteness at
every point ``x`` of the quadratic form

    f -> gamma2(f)(x) - K Gamma(f)(x) - (1/N) (Delta f(x))^2,

where ``gamma2(f)(x) = 1/2 Delta Gamma(f)(x) - Gamma(f, Delta f)(x)``.  The
form only sees ``f`` on the two-step neighbourhood of ``x`` and vanishes on
constants, so its smallest eigenvalue on mean-zero vectors of that
neighbourhood is the margin at ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from .reports import CheckReport, Gamma2Report
from .space import FiniteSpace, gamma, laplacian

BE_TOL = 1e-12
BISECT_TOL = 1e-9
CG_RTOL = 1e-12


# ---------------------------------------------------------------------------
# The iterated form


def gamma2_form(space: FiniteSpace, f, g=None, phi=None) -> float:
    """Literal ``Gamma_2(f, g; phi)``; ``g`` defaults to ``f``, ``phi`` to 1."""
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    phi = np.ones(space.n) if phi is None else np.asarray(phi, dtype=float)
    Df, Dg, Dphi = laplacian(space, f), laplacian(space, g), laplacian(space, phi)
    integrand = gamma(space, f, g) * Dphi - gamma(space, f, Dg) * phi - gamma(space, g, Df) * phi
    return 0.5 * float(np.dot(integrand, space.m))


@dataclass(frozen=True)
class Gamma2Forms:
    """Literal and Leibniz-rule evaluations of the iterated form."""

    literal: float
    leibniz: float

    @property
    def gap(self) -> float:
        return self.leibniz - self.literal


def gamma2_forms(space: FiniteSpace, f, g=None, phi=None) -> Gamma2Forms:
    """Evaluate the literal form and its Leibniz rewriting.

    The rewriting is
    ``1/2 sum [Gamma(f,g) Delta phi + Delta f Gamma(g,phi) + Delta g Gamma(f,phi)
    + 2 phi Delta f Delta g] m``; the two agree up to round-off.
    """
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    phi = np.ones(space.n) if phi is None else np.asarray(phi, dtype=float)
    Df, Dg, Dphi = laplacian(space, f), laplacian(space, g), laplacian(space, phi)
    leib = (gamma(space, f, g) * Dphi + Df * gamma(space, g, phi) + Dg * gamma(space, f, phi)
            + 2.0 * phi * Df * Dg)
    return Gamma2Forms(gamma2_form(space, f, g, phi), 0.5 * float(np.dot(leib, space.m)))


def gamma2_pointwise(space: FiniteSpace, f, g=None) -> np.ndarray:
    """Density ``gamma2(f, g)`` with ``Gamma_2(f, g; phi) = sum gamma2 phi m``."""
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    Df, Dg = laplacian(space, f), laplacian(space, g)
    return (0.5 * laplacian(space, gamma(space, f, g))
            - 0.5 * gamma(space, f, Dg) - 0.5 * gamma(space, g, Df))


def be_rhs(space: FiniteSpace, f, phi, K: float, N: float) -> float:
    """``K int Gamma(f) phi + (1/N) int (Delta f)^2 phi``."""
    Df = laplacian(space, f)
    val = K * float(np.dot(gamma(space, f) * phi, space.m))
    if not math.isinf(N):
        val += float(np.dot(Df * Df * phi, space.m)) / N
    return val


def be_inequality_margin(space: FiniteSpace, f, phi, K: float, N: float) -> float:
    """``Gamma_2(f; phi) - K int Gamma(f) phi - (1/N) int (Delta f)^2 phi``."""
    return gamma2_form(space, f, f, phi) - be_rhs(space, f, phi, K, N)


# ---------------------------------------------------------------------------
# Pointwise Bakry-Emery forms


def _carre_matrices(space: FiniteSpace) -> np.ndarray:
    """``C[y]`` with ``Gamma(f)(y) = f @ C[y] @ f``."""
    n = space.n
    C = np.zeros((n, n, n))
    for y in range(n):
        nb = np.nonzero(space.w[y])[0]
        wy = space.w[y, nb] / (2.0 * space.m[y])
        C[y, nb, nb] += wy
        C[y, y, y] += wy.sum()
        C[y, y, nb] -= wy
        C[y, nb, y] -= wy
    return C


class PointwiseForms:
    """Matrices of the pointwise Bakry-Emery forms of a space.

    ``A[x]`` represents ``gamma2(f)(x)``, ``B[x]`` represents ``Gamma(f)(x)``
    and ``a[x]`` is row ``x`` of the Laplacian.  Each is supported on the
    two-step neighbourhood ``balls[x]``.
    """

    def __init__(self, space: FiniteSpace):
        self.space = space
        D = space.laplacian_matrix
        C = _carre_matrices(space)
        A = 0.5 * np.einsum("xy,yij->xij", D, C)
        CD = np.einsum("xij,jk->xik", C, D)
        A -= 0.5 * (CD + CD.transpose(0, 2, 1))
        self.A, self.B, self.a = A, C, D
        adj = space.w > 0
        reach = adj | adj @ adj | np.eye(space.n, dtype=bool)
        self.balls = [np.nonzero(reach[x])[0] for x in range(space.n)]

    @cached_property
    def _bases(self):
        out = []
        for ball in self.balls:
            k = len(ball)
            if k < 2:
                out.append(np.zeros((k, 0)))
                continue
            # orthonormal basis of the mean-zero vectors on the ball
            out.append(linalg.null_space(np.ones((1, k))))
        return out

    def local_matrix(self, x: int, K: float, N: float) -> np.ndarray:
        ball = self.balls[x]
        G = self.A[x][np.ix_(ball, ball)] - K * self.B[x][np.ix_(ball, ball)]
        if not math.isinf(N):
            ax = self.a[x, ball]
            G = G - np.outer(ax, ax) / N
        V = self._bases[x]
        return V.T @ G @ V

    def point_margin(self, x: int, K: float, N: float):
        V = self._bases[x]
        if V.shape[1] == 0:
            return math.inf, np.zeros(self.space.n)
        lam, vec = linalg.eigh(self.local_matrix(x, K, N))
        f = np.zeros(self.space.n)
        f[self.balls[x]] = V @ vec[:, 0]
        return float(lam[0]), f


def _forms(space: FiniteSpace) -> PointwiseForms:
    cache = space.__dict__.setdefault("_curvlab_cache", {})
    if "pointwise" not in cache:
        cache["pointwise"] = PointwiseForms(space)
    return cache["pointwise"]


def be_check(space: FiniteSpace, K: float, N: float = math.inf, tol: float = BE_TOL) -> Gamma2Report:
    """Pointwise verification of ``BE(K, N)``.

    Returns a report whose margin is the smallest eigenvalue of the
    pointwise forms (on mean-zero vectors).  On failure the witness is the
    offending eigenvector, to be paired with ``phi = 1_x``.
    """
    if not (N > 0):
        raise ValueError("N must be positive")
    forms = _forms(space)
    margins, witnesses = [], []
    for x in range(space.n):
        lam, f = forms.point_margin(x, K, N)
        margins.append(lam)
        witnesses.append(f)
    worst = int(np.argmin(margins))
    margin = float(margins[worst])
    scale = max(1.0, float(np.abs(forms.A).max()), abs(K) * float(np.abs(forms.B).max()))
    holds = margin >= -tol * scale
    return Gamma2Report("be_check", bool(holds), margin, witness=witnesses[worst],
                        residuals=[], details={"K": K, "N": N, "tol": tol},
                        pointwise_margins=margins, worst_point=worst)


def _bracket_and_bisect(passes, lo_guess: float, hi_guess: float, tol: float, limit: float = 1e12):
    """Largest value where the monotone predicate ``passes`` is true."""
    lo, hi = lo_guess, hi_guess
    while not passes(lo):
        lo = lo * 2 if lo < 0 else lo - 1.0
        if lo < -limit:
            return -math.inf
    while passes(hi):
        hi = hi * 2 if hi > 0 else hi + 1.0
        if hi > limit:
            return math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def optimal_curvature(space: FiniteSpace, N: float = math.inf, tol: float = BISECT_TOL) -> float:
    """Largest ``K`` such that ``BE(K, N)`` holds, by bisection.

    Returns ``-inf`` when no curvature bound is feasible.
    """
    return _bracket_and_bisect(lambda K: be_check(space, K, N).holds, -1.0, 1.0, tol)


def optimal_dimension(space: FiniteSpace, K: float, tol: float = BISECT_TOL) -> float:
    """Smallest ``N`` such that ``BE(K, N)`` holds.

    Bisection runs on ``s = 1/N``.  Returns ``nan`` when even ``N = inf``
    fails and ``inf`` when only ``N = inf`` works.
    """
    if not be_check(space, K, math.inf).holds:
        return math.nan

    def passes(s):
        return s <= 0 or be_check(space, K, 1.0 / s).holds

    s = _bracket_and_bisect(passes, 0.0, 1.0, tol)
    if s <= tol:
        if passes(tol):
            return 1.0 / tol
        return math.inf
    return 1.0 / s


def _batch_gamma(space: FiniteSpace, F, G):
    """Row-wise carre du champ of the fields stacked in ``F`` and ``G``."""
    w, deg = space.w, space.w.sum(axis=1)
    raw = (F * G) @ w.T - G * (F @ w.T) - F * (G @ w.T) + F * G * deg
    return raw / (2.0 * space.m)


def monte_carlo_be(space: FiniteSpace, K: float, N: float, samples: int, seed: int = 0,
                   batch: int = 2048) -> float:
    """Smallest sampled value of the ``BE(K, N)`` slack over random ``(f, phi >= 0)``.

    Evaluates the literal form in batches, so it is an independent oracle
    for :func:`be_check`.  Test fields are normalized to ``|f| = 1`` and
    ``phi`` to unit mass.  The ``phi`` samples cycle through point masses,
    sparse exponential weights and uniform weights.
    """
    rng = np.random.default_rng(seed)
    n, m = space.n, space.m
    D = space.laplacian_matrix
    worst = math.inf
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        F = rng.standard_normal((b, n))
        F /= np.linalg.norm(F, axis=1, keepdims=True)
        kind = (done + np.arange(b)) % 3
        Phi = rng.random((b, n))
        sparse = rng.exponential(size=(b, n)) * (rng.random((b, n)) < 0.5)
        points = np.zeros((b, n))
        points[np.arange(b), rng.integers(n, size=b)] = 1.0
        Phi[kind == 1] = sparse[kind == 1]
        Phi[kind == 0] = points[kind == 0]
        empty = Phi.sum(axis=1) == 0
        Phi[empty] = points[empty]
        Phi /= (Phi @ m)[:, None]
        LF = F @ D.T
        GF = _batch_gamma(space, F, F)
        g2 = 0.5 * ((GF * (Phi @ D.T)) @ m) - ((_batch_gamma(space, F, LF) * Phi) @ m)
        rhs = K * ((GF * Phi) @ m)
        if not math.isinf(N):
            rhs = rhs + ((LF * LF * Phi) @ m) / N
        worst = min(worst, float(np.min(g2 - rhs)))
        done += b
    return worst


def nonlinear_be_check(space: FiniteSpace, model, K: float, N: float, f, phi,
                       tol: float = 1e-10) -> CheckReport:
    """Nonlinear Bakry-Emery inequality for one pair ``(f, phi)``.

    Margin ``Gamma_2(f; P(phi)) + int R(phi) (Delta f)^2 - K int Gamma(f) P(phi)``.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise ValueError("phi must be nonnegative")
    f = np.asarray(f, dtype=float)
    Pphi = model.P(phi)
    Df = laplacian(space, f)
    g2 = gamma2_form(space, f, f, Pphi)
    rterm = float(np.dot(model.R(phi) * Df * Df, space.m))
    kterm = K * float(np.dot(gamma(space, f) * Pphi, space.m))
    margin = g2 + rterm - kterm
    scale = max(1.0, abs(g2), abs(rterm), abs(kterm))
    return CheckReport("nonlinear_be", margin >= -tol * scale, margin,
                       details={"K": K, "N": N, "gamma2": g2, "R_term": rterm, "K_term": kterm})


# ---------------------------------------------------------------------------
# Weighted energies


class FinitenessError(ValueError):
    """The functional does not annihilate the kernel of the weighted form."""


class WeightedOperator:
    """Weighted energy ``E_rho(f, g) = sum_x rho Gamma(f, g) m``.

    The form has edge weights ``w(x,y) (rho(x) + rho(y)) / 2``; its kernel
    consists of functions constant on each component of the graph of edges
    carrying positive weight.
    """

    def __init__(self, space: FiniteSpace, rho):
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (space.n,) or np.any(rho < 0):
            raise ValueError("weight must be a nonnegative field")
        self.space = space
        self.rho = rho
        W = space.w * 0.5 * (rho[:, None] + rho[None, :])
        self.edge_weights = W
        A = np.diag(W.sum(axis=1)) - W
        self.stiffness = A
        ncomp, labels = csgraph.connected_components(sparse.csr_matrix(W > 0), directed=False)
        self.n_components = ncomp
        self.labels = labels

    def energy(self, f, g=None) -> float:
        f = np.asarray(f, dtype=float)
        g = f if g is None else np.asarray(g, dtype=float)
        return float(f @ self.stiffness @ g)

    def carre(self, f, g=None) -> np.ndarray:
        """Pointwise density ``rho Gamma(f, g)``."""
        return self.rho * gamma(self.space, f, g)

    def kernel_defect(self, ell) -> np.ndarray:
        """``sum_{x in C} ell(x) m(x)`` for every component ``C``."""
        ell = np.asarray(ell, dtype=float)
        return np.bincount(self.labels, weights=ell * self.space.m, minlength=self.n_components)

    def is_compatible(self, ell, tol: float = 1e-10) -> bool:
        ell = np.asarray(ell, dtype=float)
        scale = max(1e-300, float(np.abs(ell * self.space.m).sum()))
        return bool(np.all(np.abs(self.kernel_defect(ell)) <= tol * max(1.0, scale)))

    def project_compatible(self, ell) -> tuple[np.ndarray, float]:
        """Subtract per-component means from ``ell``; returns the field and the removed defect."""
        ell = np.asarray(ell, dtype=float)
        defect = self.kernel_defect(ell)
        comp_m = np.bincount(self.labels, weights=self.space.m, minlength=self.n_components)
        out = ell - (defect / comp_m)[self.labels]
        return out, float(np.abs(defect).max())

    def normalize(self, phi) -> np.ndarray:
        """Shift ``phi`` to zero ``rho m``-mean on each component."""
        phi = np.asarray(phi, dtype=float).copy()
        wts = self.rho * self.space.m
        num = np.bincount(self.labels, weights=phi * wts, minlength=self.n_components)
        den = np.bincount(self.labels, weights=wts, minlength=self.n_components)
        for c in range(self.n_components):
            idx = self.labels == c
            if den[c] > 0:
                phi[idx] -= num[c] / den[c]
            else:
                phi[idx] = 0.0
        return phi

    def solve(self, ell, tol: float = 1e-10) -> np.ndarray:
        """Potential ``phi`` with ``E_rho(phi, psi) = <ell, psi>_m`` for all ``psi``."""
        ell = np.asarray(ell, dtype=float)
        if not self.is_compatible(ell, tol):
            raise FinitenessError("functional is not in the finiteness domain of the weighted form")
        b = ell * self.space.m
        # remove the compatible round-off so the singular system is consistent
        b = b - (self.kernel_defect(ell) / np.bincount(self.labels, minlength=self.n_components))[self.labels]
        if not np.any(b):
            return np.zeros(self.space.n)
        A = self.stiffness
        diag = np.diag(A).copy()
        diag[diag == 0] = 1.0
        Minv = splinalg.LinearOperator(A.shape, matvec=lambda v: v / diag, dtype=float)
        phi, info = splinalg.cg(sparse.csr_matrix(A), b, rtol=CG_RTOL, atol=0.0,
                                maxiter=20 * self.space.n, M=Minv)
        if info != 0 or np.linalg.norm(A @ phi - b) > 1e-10 * np.linalg.norm(b):
            phi = linalg.lstsq(A, b, lapack_driver="gelsd")[0]
        return self.normalize(phi)

    def dual_energy(self, ell) -> float:
        """``E*_rho(ell, ell) = E_rho(phi, phi)`` for the potential of ``ell``."""
        phi = self.solve(ell)
        return self.energy(phi)


def weighted_poisson(space: FiniteSpace, rho, ell) -> np.ndarray:
    """Potential of ``ell`` for the weighted form; see :class:`WeightedOperator`."""
    return WeightedOperator(space, rho).solve(ell)


def dual_energy(space: FiniteSpace, rho, ell) -> float:
    return WeightedOperator(space, rho).dual_energy(ell)


# ---------------------------------------------------------------------------
# Hamiltonian identities


def hamiltonian_sides(space: FiniteSpace, model, rho, phi) -> tuple[float, float]:
    """Both sides of the derivative identity for ``1/2 int rho Gamma(phi)``.

    The left side is the derivative computed from the two evolution
    equations; the right side is ``Gamma_2(phi; P(rho)) + int R(rho) (Delta phi)^2``.
    """
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    m = space.m
    Pr = model.P(rho)
    Dphi = laplacian(space, phi)
    lhs = (0.5 * float(np.dot(laplacian(space, Pr) * gamma(space, phi), m))
           - float(np.dot(rho * gamma(space, phi, model.dP(rho) * Dphi), m)))
    rhs = gamma2_form(space, phi, phi, Pr) + float(np.dot(model.R(rho) * Dphi * Dphi, m))
    return lhs, rhs


def hamiltonian_residual(space: FiniteSpace, model, rho, phi, tol: float = 1e-12) -> CheckReport:
    """Residual ``LHS - RHS`` of the Hamiltonian derivative identity.

    For linear pressure the two sides agree algebraically; for nonlinear
    pressures the residual measures the failure of the chain rule on the
    graph and is reported, not asserted.
    """
    lhs, rhs = hamiltonian_sides(space, model, rho, phi)
    res = lhs - rhs
    scale = max(1.0, abs(lhs), abs(rhs))
    return CheckReport("hamiltonian_residual", abs(res) <= tol * scale, -abs(res),
                       residuals=[res], details={"lhs": lhs, "rhs": rhs, "residual": res})


def dual_action_decay_check(diff, w0, Lam: float, tol: float | None = None,
                            rule: str = "average") -> CheckReport:
    """Exponential decay of ``E*_{rho_t}(w_t)`` along the forward linearization.

    Checks ``exp(2 Lam (s - t)) E*_{rho_s}(w_s) <= E*_{rho_t}(w_t) (1 + tol)``
    for all grid pairs ``t < s``.  The default ``tol`` is ``10 (h + tau)``
    with ``h`` the largest distance to a neighbour.  Also records the bound
    on the dual energy of the time derivative of the diffusion.
    """
    from .linearized import forward_linearized_solve

    space = diff.space
    tau = diff.tau
    if tol is None:
        h = float(np.max(np.where(space.w > 0, space.d, 0.0)))
        tol = 10.0 * (h + tau)
    w0 = np.asarray(w0, dtype=float)
    op0 = WeightedOperator(space, diff.rho[0])
    if not op0.is_compatible(w0):
        raise FinitenessError("initial perturbation is not in the finiteness domain at t=0")
    lin = forward_linearized_solve(diff, w0, rule=rule)
    dual = np.empty(len(diff.times))
    for k, (r, w) in enumerate(zip(diff.rho, lin.values)):
        op = WeightedOperator(space, r)
        w_c, _ = op.project_compatible(w)
        dual[k] = op.dual_energy(w_c)
    times = diff.times
    worst, witness = -math.inf, (0, 0)
    for i in range(len(times)):
        if dual[i] == 0:
            continue
        ratios = np.exp(2 * Lam * (times[i + 1 :] - times[i])) * dual[i + 1 :] / dual[i] - 1.0
        if len(ratios):
            j = int(np.argmax(ratios))
            if ratios[j] > worst:
                worst, witness = float(ratios[j]), (i, i + 1 + j)
    violation = max(worst, 0.0) if worst > -math.inf else 0.0
    details = {"tol": tol, "tau": tau, "Lambda": Lam, "worst_ratio_excess": worst if worst > -math.inf else 0.0,
               "violation": violation}
    model = diff.model
    if model.regular and diff.steps > 0:
        a = model.a
        lam_minus = max(-Lam, 0.0)
        bound = 4.0 / a**2 * math.exp(2 * lam_minus * times[-1]) * space.energy(np.sqrt(diff.rho[0]))
        speeds = []
        for k in range(diff.steps):
            op = WeightedOperator(space, diff.rho[k + 1])
            dr, _ = op.project_compatible((diff.rho[k + 1] - diff.rho[k]) / tau)
            speeds.append(op.dual_energy(dr))
        details["speed_dual_max"] = float(max(speeds))
        details["speed_dual_bound"] = float(bound)
    return CheckReport("dual_action_decay", violation <= tol, -violation, witness=witness,
                       residuals=list(dual), details=details)


__all__ = [
    "gamma2_form", "Gamma2Forms", "gamma2_forms", "gamma2_pointwise",
    "be_rhs", "be_inequality_margin", "PointwiseForms", "be_check", "optimal_curvature",
    "optimal_dimension", "monte_carlo_be", "nonlinear_be_check", "FinitenessError",
    "WeightedOperator", "weighted_poisson", "dual_energy", "hamiltonian_sides",
    "hamiltonian_residual", "dual_action_decay_check",
]
