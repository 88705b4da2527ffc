"""Finite metric measure spaces with a Dirichlet form.

A :class:`FiniteSpace` carries a reference measure ``m``, a metric ``d`` and
symmetric edge conductances ``w``.  The conductances define the graph energy

    E(f, g) = 1/2 sum_{x,y} w(x,y) (f(y) - f(x)) (g(y) - g(x)),

its carré du champ ``gamma`` and the m-symmetric Laplacian ``laplacian``.
Fields are plain ``numpy`` vectors of length ``n``.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

logger = logging.getLogger(__name__)

#: Largest space accepted by :func:`heat_flow`.
MAX_POINTS = 8192
#: Dense matrix exponential is used up to this size, Crank-Nicolson beyond.
DENSE_EXP_LIMIT = 512
#: Crank-Nicolson substeps per unit call for large spaces.
CN_STEPS = 1024

PROBABILITY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FiniteSpace:
    """Points with positive measure, a metric and edge conductances.

    Parameters
    ----------
    m : (n,) array
        Positive reference measure.
    d : (n, n) array
        Symmetric metric with zero diagonal.
    w : (n, n) array
        Symmetric nonnegative conductances with zero diagonal.
    kind : str, optional
        Tag for 1-D grids (``"path"`` or ``"circle"``); geodesic tools
        require it.
    coords : (n,) array, optional
        Grid coordinates of 1-D spaces.
    length : float, optional
        Total length of a 1-D grid.
    metric_filled : bool
        True when some metric entries were filled by shortest paths.
    """

    m: np.ndarray
    d: np.ndarray
    w: np.ndarray
    kind: str | None = None
    coords: np.ndarray | None = None
    length: float | None = None
    metric_filled: bool = False
    name: str = field(default="space")

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        d = np.array(self.d, dtype=float)
        w = np.array(self.w, dtype=float)
        n = m.shape[0]
        if m.ndim != 1 or n < 1:
            raise ValueError("m must be a nonempty vector")
        if d.shape != (n, n) or w.shape != (n, n):
            raise ValueError(f"d and w must be {n}x{n}")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ValueError("reference measure must be positive and finite")
        if np.any(w < 0) or not np.allclose(w, w.T, rtol=0, atol=0):
            raise ValueError("conductances must be symmetric and nonnegative")
        if np.any(np.diag(w) != 0):
            raise ValueError("conductances must vanish on the diagonal")
        _check_metric(d)
        for arr in (m, d, w):
            arr.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "w", w)
        if self.coords is not None:
            c = np.array(self.coords, dtype=float)
            c.setflags(write=False)
            object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.m.shape[0]

    @cached_property
    def components(self) -> np.ndarray:
        """Connected-component label of every point of the w-graph."""
        _, labels = csgraph.connected_components(sparse.csr_matrix(self.w > 0), directed=False)
        labels.setflags(write=False)
        return labels

    @property
    def connected(self) -> bool:
        return bool(np.all(self.components == 0))

    @cached_property
    def stiffness(self) -> np.ndarray:
        """Symmetric matrix ``L`` with ``E(f, g) = f @ L @ g``."""
        L = np.diag(self.w.sum(axis=1)) - self.w
        L.setflags(write=False)
        return L

    @cached_property
    def laplacian_matrix(self) -> np.ndarray:
        """Matrix of Delta, ``-M^{-1} L``; m-symmetric, rows sum to zero."""
        D = -self.stiffness / self.m[:, None]
        D.setflags(write=False)
        return D

    @cached_property
    def _sym_eig(self):
        # M^{-1/2} L M^{-1/2} is symmetric; its spectrum gives exp(t Delta).
        s = 1.0 / np.sqrt(self.m)
        lam, V = linalg.eigh(s[:, None] * self.stiffness * s[None, :])
        return lam, V

    @property
    def spacing(self) -> float:
        """Grid spacing of a tagged 1-D grid."""
        if self.kind not in ("path", "circle"):
            raise ValueError("spacing is only defined for 1-D grids")
        return self.length / self.n

    def energy(self, f, g=None) -> float:
        """Dirichlet form ``E(f, g)``."""
        f = np.asarray(f, dtype=float)
        g = f if g is None else np.asarray(g, dtype=float)
        return float(f @ self.stiffness @ g)

    def integrate(self, f) -> float:
        """``sum_x f(x) m(x)``."""
        return float(np.dot(np.asarray(f, dtype=float), self.m))

    def inner(self, f, g) -> float:
        """L^2(m) pairing."""
        return float(np.sum(np.asarray(f, dtype=float) * np.asarray(g, dtype=float) * self.m))


def _check_metric(d: np.ndarray, rtol: float = 1e-12) -> None:
    n = d.shape[0]
    if not np.all(np.isfinite(d)):
        raise ValueError("metric must be finite")
    if np.any(np.diag(d) != 0):
        raise ValueError("metric must vanish on the diagonal")
    if not np.allclose(d, d.T, rtol=0, atol=0):
        raise ValueError("metric must be symmetric")
    off = d[~np.eye(n, dtype=bool)]
    if np.any(off <= 0):
        raise ValueError("metric must separate points")
    scale = d.max() if n > 1 else 1.0
    for k in range(n):
        if np.any(d > d[:, k : k + 1] + d[k : k + 1, :] + rtol * scale):
            raise ValueError("metric violates the triangle inequality")


# ---------------------------------------------------------------------------
# Fields


def as_field(space: FiniteSpace, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (space.n,):
        raise ValueError(f"field must have shape ({space.n},), got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("field has non-finite entries")
    return f


def as_density(space: FiniteSpace, rho) -> np.ndarray:
    rho = as_field(space, rho)
    if np.any(rho < 0):
        raise ValueError("density must be nonnegative")
    return rho


def mass(space: FiniteSpace, rho) -> float:
    return space.integrate(rho)


def is_probability(space: FiniteSpace, rho, tol: float = PROBABILITY_TOL) -> bool:
    return abs(mass(space, rho) - 1.0) <= tol


def normalize(space: FiniteSpace, rho) -> np.ndarray:
    rho = as_density(space, rho)
    total = mass(space, rho)
    if total <= 0:
        raise ValueError("cannot normalize a density of zero mass")
    return rho / total


# ---------------------------------------------------------------------------
# Calculus


def gamma(space: FiniteSpace, f, g=None) -> np.ndarray:
    """Carré du champ ``Gamma(f, g)(x) = 1/(2 m(x)) sum_y w(x,y) df dg``."""
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    df = f[None, :] - f[:, None]
    dg = g[None, :] - g[:, None]
    return np.einsum("xy,xy,xy->x", space.w, df, dg) / (2.0 * space.m)


def laplacian(space: FiniteSpace, f) -> np.ndarray:
    """``(Delta f)(x) = 1/m(x) sum_y w(x,y) (f(y) - f(x))``."""
    return space.laplacian_matrix @ np.asarray(f, dtype=float)


def energy(space: FiniteSpace, f, g=None) -> float:
    return space.energy(f, g)


def heat_flow(space: FiniteSpace, f, t: float) -> np.ndarray:
    """Heat semigroup ``P_t f`` solving ``f' = Delta f``.

    Dense spectral exponential up to :data:`DENSE_EXP_LIMIT` points,
    Crank-Nicolson with ``t / CN_STEPS`` steps above.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if space.n > MAX_POINTS:
        raise ValueError(f"space with {space.n} points exceeds MAX_POINTS={MAX_POINTS}")
    f = np.asarray(f, dtype=float)
    if t == 0:
        return f.copy()
    if space.n <= DENSE_EXP_LIMIT:
        lam, V = space._sym_eig
        s = np.sqrt(space.m)
        g = V @ (np.exp(-t * lam) * (V.T @ (s * f)))
        return g / s
    return _crank_nicolson(space, f, t, CN_STEPS)


def _crank_nicolson(space: FiniteSpace, f, t, steps) -> np.ndarray:
    h = t / steps
    W = sparse.csr_matrix(space.w)
    L = sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W
    M = sparse.diags(space.m)
    lhs = splinalg.splu((M + 0.5 * h * L).tocsc())
    rhs = (M - 0.5 * h * L).tocsr()
    u = f.copy()
    for _ in range(steps):
        u = lhs.solve(rhs @ u)
    return u


def hopf_lax(space: FiniteSpace, f, t: float) -> np.ndarray:
    """``Q_t f(x) = min_y f(y) + d(x,y)^2 / (2t)``."""
    if t <= 0:
        raise ValueError("Hopf-Lax requires t > 0")
    f = np.asarray(f, dtype=float)
    return np.min(f[None, :] + space.d**2 / (2.0 * t), axis=1)


def slope(space: FiniteSpace, f, kind: str = "full") -> np.ndarray:
    """Max-over-other-points surrogate of the local slope.

    ``full`` uses ``|f(y) - f(x)| / d(x,y)``, ``descending`` uses
    ``(f(x) - f(y))_+ / d(x,y)``.
    """
    if space.n < 2:
        raise ValueError("slope needs at least two points")
    f = np.asarray(f, dtype=float)
    diff = f[:, None] - f[None, :]
    if kind == "full":
        num = np.abs(diff)
    elif kind == "descending":
        num = np.maximum(diff, 0.0)
    else:
        raise ValueError(f"unknown slope kind {kind!r}")
    d = space.d.copy()
    np.fill_diagonal(d, np.inf)
    return np.max(num / d, axis=1)


# ---------------------------------------------------------------------------
# Generators


def grid_conductances(m: np.ndarray, d: np.ndarray, pairs) -> np.ndarray:
    """Nearest-neighbour conductances making Delta the second difference.

    ``w(x,y) = sqrt(m(x) m(y)) / d(x,y)^2``; for unit measure this is the
    familiar ``1 / d^2``.
    """
    n = len(m)
    w = np.zeros((n, n))
    for i, j in pairs:
        w[i, j] = w[j, i] = math.sqrt(m[i] * m[j]) / d[i, j] ** 2
    return w


def path_space(n: int, length: float = 1.0) -> FiniteSpace:
    """Cell-centred grid on ``[0, length]`` with Neumann second differences."""
    if n < 2:
        raise ValueError("path needs n >= 2")
    h = length / n
    x = (np.arange(n) + 0.5) * h
    m = np.full(n, h)
    d = np.abs(x[:, None] - x[None, :])
    w = grid_conductances(m, d, [(i, i + 1) for i in range(n - 1)])
    return FiniteSpace(m, d, w, kind="path", coords=x, length=length, name=f"path-{n}")


def circle_space(n: int, length: float = 1.0) -> FiniteSpace:
    """Periodic grid of ``n`` points on a circle of the given length."""
    if n < 3:
        raise ValueError("circle needs n >= 3")
    h = length / n
    x = np.arange(n) * h
    m = np.full(n, h)
    diff = np.abs(x[:, None] - x[None, :])
    d = np.minimum(diff, length - diff)
    w = grid_conductances(m, d, [(i, (i + 1) % n) for i in range(n)])
    return FiniteSpace(m, d, w, kind="circle", coords=x, length=length, name=f"circle-{n}")


def two_point_space() -> FiniteSpace:
    """The space S2: unit masses, unit distance, unit conductance."""
    return FiniteSpace(np.ones(2), 1.0 - np.eye(2), 1.0 - np.eye(2), name="two-point")


def complete_space(n: int, weight: float = 1.0) -> FiniteSpace:
    w = weight * (1.0 - np.eye(n))
    return FiniteSpace(np.ones(n), 1.0 - np.eye(n), w, name=f"complete-{n}")


def from_weights(w, m=None, d=None, name: str = "graph") -> FiniteSpace:
    """Build a space from conductances; missing metric from shortest paths.

    Edge lengths for the fill-in are ``1 / sqrt(w)``.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    m = np.ones(n) if m is None else np.asarray(m, dtype=float)
    filled = False
    if d is None:
        d = np.full((n, n), np.nan)
        np.fill_diagonal(d, 0.0)
    d = np.array(d, dtype=float)
    missing = np.isnan(d)
    if missing.any():
        filled = True
        lengths = np.zeros_like(w)
        pos = w > 0
        lengths[pos] = 1.0 / np.sqrt(w[pos])
        sp = csgraph.shortest_path(sparse.csr_matrix(lengths), directed=False)
        sp = np.minimum(sp, sp.T)  # summation order can break symmetry in the last bit
        if np.any(np.isinf(sp[missing])):
            raise ValueError("cannot fill metric: the graph is disconnected")
        d[missing] = sp[missing]
    return FiniteSpace(m, d, w, metric_filled=filled, name=name)


def erdos_renyi_space(n: int, p: float, seed: int, *, connected: bool = True,
                      weight_range=(0.5, 2.0), measure_range=(0.5, 2.0)) -> FiniteSpace:
    """Random graph with random conductances and measure.

    With ``connected=True`` a random spanning path is added first.  The
    metric is the shortest-path metric with edge lengths ``1/sqrt(w)``.
    """
    rng = np.random.default_rng(seed)
    w = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    mask = rng.random(len(iu[0])) < p
    vals = rng.uniform(*weight_range, size=len(iu[0]))
    w[iu[0][mask], iu[1][mask]] = vals[mask]
    if connected:
        order = rng.permutation(n)
        for a, b in zip(order[:-1], order[1:]):
            i, j = min(a, b), max(a, b)
            if w[i, j] == 0:
                w[i, j] = rng.uniform(*weight_range)
    w = w + w.T
    m = rng.uniform(*measure_range, size=n)
    dis = csgraph.connected_components(sparse.csr_matrix(w > 0), directed=False)[0] > 1
    if dis:
        # disconnected pieces get a large but finite metric between them
        lengths = np.where(w > 0, 1.0 / np.sqrt(np.where(w > 0, w, 1.0)), 0.0)
        sp = csgraph.shortest_path(sparse.csr_matrix(lengths), directed=False)
        sp = np.minimum(sp, sp.T)
        finite = sp[np.isfinite(sp)]
        big = 2.0 * finite.max() + 1.0
        sp[np.isinf(sp)] = big
        return FiniteSpace(m, sp, w, name=f"er-{n}-{seed}")
    return from_weights(w, m, name=f"er-{n}-{seed}")


def disjoint_union(a: FiniteSpace, b: FiniteSpace, gap: float | None = None) -> FiniteSpace:
    """Disjoint union; the two parts sit at distance ``gap`` (no edges)."""
    n1, n2 = a.n, b.n
    gap = gap if gap is not None else a.d.max() + b.d.max() + 1.0
    d = np.full((n1 + n2, n1 + n2), gap)
    d[:n1, :n1] = a.d
    d[n1:, n1:] = b.d
    w = np.zeros_like(d)
    w[:n1, :n1] = a.w
    w[n1:, n1:] = b.w
    return FiniteSpace(np.concatenate([a.m, b.m]), d, w, name=f"{a.name}+{b.name}")


def make_space(kind: str, **params) -> FiniteSpace:
    """Generator registry used by the scenario runner."""
    kind = kind.lower()
    if kind == "path":
        return path_space(int(params.get("n", 32)), float(params.get("length", 1.0)))
    if kind == "circle":
        return circle_space(int(params.get("n", 32)), float(params.get("length", 1.0)))
    if kind in ("two-point", "s2"):
        return two_point_space()
    if kind == "complete":
        return complete_space(int(params.get("n", 4)), float(params.get("weight", 1.0)))
    if kind in ("erdos", "random", "erdos-renyi"):
        return erdos_renyi_space(int(params.get("n", 8)), float(params.get("p", 0.4)),
                                 int(params.get("seed", 0)))
    raise ValueError(f"unknown space generator {kind!r}")


# ---------------------------------------------------------------------------
# Graph text format
#
#   node i m_i [coord ...]
#   i j w_ij
#   dist i j d_ij


def parse_graph(text: str) -> FiniteSpace:
    nodes: dict[int, tuple[float, list[float]]] = {}
    edges: list[tuple[int, int, float]] = []
    dists: list[tuple[int, int, float]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "node":
                nodes[int(tok[1])] = (float(tok[2]), [float(c) for c in tok[3:]])
            elif tok[0] == "dist":
                dists.append((int(tok[1]), int(tok[2]), float(tok[3])))
            elif len(tok) == 3:
                edges.append((int(tok[0]), int(tok[1]), float(tok[2])))
            else:
                raise ValueError("unrecognised line")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"graph line {lineno}: {raw!r}: {exc}") from None
    n = len(nodes)
    if sorted(nodes) != list(range(n)):
        raise ValueError("nodes must be numbered 0..n-1")
    m = np.array([nodes[i][0] for i in range(n)])
    w = np.zeros((n, n))
    for i, j, v in edges:
        if i == j:
            raise ValueError(f"self loop at node {i}")
        w[i, j] = w[j, i] = v
    d = np.full((n, n), np.nan)
    np.fill_diagonal(d, 0.0)
    for i, j, v in dists:
        d[i, j] = d[j, i] = v
    space = from_weights(w, m, d, name="file")
    if space.metric_filled:
        logger.info("metric entries filled by shortest paths over 1/sqrt(w) edges")
    return space


def read_graph(path) -> FiniteSpace:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def format_graph(space: FiniteSpace, with_metric: bool = True) -> str:
    out = io.StringIO()
    for i in range(space.n):
        coord = "" if space.coords is None else " " + repr(float(space.coords[i]))
        out.write(f"node {i} {float(space.m[i])!r}{coord}\n")
    for i in range(space.n):
        for j in range(i + 1, space.n):
            if space.w[i, j] > 0:
                out.write(f"{i} {j} {float(space.w[i, j])!r}\n")
    if with_metric:
        for i in range(space.n):
            for j in range(i + 1, space.n):
                out.write(f"dist {i} {j} {float(space.d[i, j])!r}\n")
    return out.getvalue()
