"""Discretized symmetry-reduced model geometries.

Two backends are provided.  The radial model is the sphere with cone points
at 0 and infinity written in the logarithmic coordinate t = log|z|^2, where
torus-invariant potentials are convex functions of one variable.  The
product model is the torus-invariant surface P^1 x P^1 in coordinates
(x, y), where invariant potentials are convex functions of two variables.

Everything downstream works with plain node arrays; the backends supply the
discrete Monge-Ampere operator, its polarization and the energy.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import integrate
from scipy.special import betainc, betaincc, betaln, expit

from .errors import AdmissibilityError, KltError, ModelError, ResourceError

EPS_CONV = 1e-12
MAX_PRODUCT_NODES = 600_000
MAX_RADIAL_NODES = 1 << 22


@dataclass(frozen=True)
class Grid:
    n: int
    T: float
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ModelError("grid dimension must be 1 or 2")
        if not self.T > 0:
            raise ModelError("half-width T must be positive")
        if self.N < 2:
            raise ModelError("need at least two cells per axis")

    @property
    def h(self) -> float:
        return 2.0 * self.T / self.N

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.T, self.T, self.N + 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N + 1,) * self.n

    @property
    def size(self) -> int:
        return (self.N + 1) ** self.n


# ---------------------------------------------------------------------------
# backends


def _axis_ma(v: np.ndarray, h: float, budget: float) -> np.ndarray:
    """Discrete MA of a convex function of one variable, atoms at the ends."""
    s = np.diff(v) / h
    m = np.empty_like(v)
    m[0] = s[0]
    m[1:-1] = np.diff(s)
    m[-1] = budget - s[-1]
    return m / budget


class RadialBackend:
    n = 1

    def __init__(self, t: np.ndarray, V: float, u0: np.ndarray):
        self.t = t
        self.h = float(t[1] - t[0])
        self.V = V
        self.u0 = u0
        self.ma0 = _axis_ma(u0, self.h, V)
        self.scale = 1.0 / (V * self.h)

    def lap(self, phi: np.ndarray) -> np.ndarray:
        # Neumann Laplacian: MA is affine in phi, MA(phi) = MA(0) + lap(phi)
        d = np.diff(phi)
        out = np.zeros_like(phi)
        out[:-1] += d
        out[1:] -= d
        return out * self.scale

    def banded(self) -> np.ndarray:
        m = self.t.size
        ab = np.zeros((3, m))
        ab[0, 1:] = self.scale
        ab[2, :-1] = self.scale
        ab[1] = -2.0 * self.scale
        ab[1, 0] = ab[1, -1] = -self.scale
        return ab

    def ma(self, phi):
        return self.ma0 + self.lap(phi)

    def mixed(self, phi, psi):
        # n = 1: the single mixed term is linear, take the average
        return self.ma0 + 0.5 * (self.lap(phi) + self.lap(psi))

    def energy(self, phi):
        return float(phi @ self.ma0 + 0.5 * (phi @ self.lap(phi)))

    def grad_norm(self, psi, w):
        return float(-(w @ self.lap(w)))

    def admissibility_defect(self, phi) -> float:
        u = self.u0 + phi
        d2 = np.diff(u, 2)
        # slope violations measured in value units, like the second differences
        du = np.diff(u)
        return float(max(0.0, -d2.min(), -du.min(), du.max() - self.V * self.h))

    def reflect(self, values):
        return values[::-1]


class ProductBackend:
    """Discrete MA of u0 + phi on the square, phi pinned on two outer layers.

    The Hessian-determinant is written as a symmetric trilinear form so that
    the energy is an exact cubic primitive of MA.
    """

    n = 2

    def __init__(self, t: np.ndarray, axis_budget: float):
        N = t.size - 1
        h = float(t[1] - t[0])
        n1 = N + 1
        self.N, self.h, self.n1 = N, h, n1
        self.V = 2.0 * axis_budget ** 2
        self.c = 2.0 * h * h / self.V
        v = axis_budget * np.logaddexp(0.0, t)
        self.u0 = (v[:, None] + v[None, :]).ravel()
        m1 = _axis_ma(v, h, axis_budget)
        self.ma0 = np.outer(m1, m1).ravel()

        ii, jj = np.meshgrid(np.arange(1, N), np.arange(1, N), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        nI = ii.size
        self.interior = ii * n1 + jj
        rows = np.arange(nI)
        inv = 1.0 / h ** 2
        shape = (nI, n1 * n1)

        def stencil(offsets):
            r = np.concatenate([rows] * len(offsets))
            cidx = np.concatenate([(ii + di) * n1 + (jj + dj) for di, dj, _ in offsets])
            val = np.concatenate([np.full(nI, w * inv) for _, _, w in offsets])
            return sp.csr_matrix((val, (r, cidx)), shape=shape)

        self.D11 = stencil([(1, 0, 1.0), (0, 0, -2.0), (-1, 0, 1.0)])
        self.D22 = stencil([(0, 1, 1.0), (0, 0, -2.0), (0, -1, 1.0)])
        ci, cj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        ci, cj = ci.ravel(), cj.ravel()
        cr = np.arange(ci.size)
        cols = [(ci + 1) * n1 + cj + 1, (ci + 1) * n1 + cj, ci * n1 + cj + 1, ci * n1 + cj]
        self.D12 = sp.csr_matrix(
            (np.concatenate([np.full(ci.size, s * inv) for s in (1.0, -1.0, -1.0, 1.0)]),
             (np.concatenate([cr] * 4), np.concatenate(cols))),
            shape=(ci.size, n1 * n1))
        acols = [(ii - 1) * N + jj - 1, (ii - 1) * N + jj, ii * N + jj - 1, ii * N + jj]
        self.Avg = sp.csr_matrix(
            (np.full(4 * nI, 0.25), (np.concatenate([rows] * 4), np.concatenate(acols))),
            shape=(nI, ci.size))
        self.P = sp.csr_matrix((np.ones(nI), (rows, self.interior)), shape=shape)

        mask = np.zeros((n1, n1), dtype=bool)
        mask[2:-2, 2:-2] = True
        self.free = np.flatnonzero(mask.ravel())
        self.pinned = np.flatnonzero(~mask.ravel())
        self._S = 0.5 * (self._ma_mat(self.u0) + self._kc_mat(self.u0))

    # trilinear pieces ------------------------------------------------------
    def _ma_form(self, b, cv):
        out = np.zeros(self.n1 * self.n1)
        out[self.interior] = (0.5 * ((self.D11 @ b) * (self.D22 @ cv) + (self.D22 @ b) * (self.D11 @ cv))
                              - self.Avg @ ((self.D12 @ b) * (self.D12 @ cv)))
        return out

    def _kt(self, cv, b):
        bI = b[self.interior]
        return (0.5 * (self.D11.T @ (bI * (self.D22 @ cv)))
                + 0.5 * (self.D22.T @ (bI * (self.D11 @ cv)))
                - self.D12.T @ ((self.Avg.T @ bI) * (self.D12 @ cv)))

    def _ma_mat(self, cv):
        d = sp.diags
        m = (0.5 * (d(self.D22 @ cv) @ self.D11 + d(self.D11 @ cv) @ self.D22)
             - self.Avg @ d(self.D12 @ cv) @ self.D12)
        return (self.P.T @ m).tocsr()

    def _kc_mat(self, cv):
        # b -> K_c^T b
        d = sp.diags
        return (0.5 * (self.D11.T @ d(self.D22 @ cv) @ self.P)
                + 0.5 * (self.D22.T @ d(self.D11 @ cv) @ self.P)
                - self.D12.T @ d(self.D12 @ cv) @ self.Avg.T @ self.P).tocsr()

    def _kb_mat(self, cv):
        # b -> K_b^T c
        d = sp.diags
        cI = cv[self.interior]
        return (0.5 * (self.D11.T @ d(cI) @ self.D22)
                + 0.5 * (self.D22.T @ d(cI) @ self.D11)
                - self.D12.T @ d(self.Avg.T @ cI) @ self.D12).tocsr()

    def S(self, phi):
        return self._S @ phi

    def Q2(self, b, cv):
        return (self._ma_form(b, cv) + self._kt(cv, b) + self._kt(b, cv)) / 3.0

    # public backend interface ---------------------------------------------
    def ma(self, phi):
        return self.ma0 + self.c * (2.0 * self.S(phi) + self.Q2(phi, phi))

    def mixed(self, phi, psi):
        return self.ma0 + self.c * (self.S(phi) + self.S(psi) + self.Q2(phi, psi))

    def energy(self, phi):
        return float(phi @ self.ma0 + self.c * (phi @ self.S(phi) + phi @ self.Q2(phi, phi) / 3.0))

    def grad_norm(self, psi, w):
        return float(-self.c * (w @ (self.S(w) + self.Q2(psi, w))))

    def jacobian(self, phi):
        q = (self._ma_mat(phi) + self._kc_mat(phi) + self._kb_mat(phi)) / 3.0
        return (2.0 * self.c * (self._S + q)).tocsr()

    def admissibility_defect(self, phi) -> float:
        u = self.u0 + phi
        bad = [0.0, float(np.abs(phi[self.pinned]).max())]
        bad.append(-float((self.D11 @ u).min()) * self.h ** 2)
        bad.append(-float((self.D22 @ u).min()) * self.h ** 2)
        bad.append(-float(self.ma(phi).min()))
        return max(bad)

    def reflect(self, values):
        return values[::-1]


# ---------------------------------------------------------------------------
# measures and potentials


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Node weights of a measure on the grid; the outer nodes carry the
    lumped tail mass (boundary atoms)."""

    model: "ModelSpace"
    weights: np.ndarray
    defect: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != self.model.grid.size:
            raise ModelError("weights do not match the grid")
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def atoms(self) -> np.ndarray:
        w = self.weights
        if self.model.n == 1:
            return np.array([w[0], w[-1]])
        a = w.reshape(self.model.grid.shape)
        return np.array([a[0, :].sum(), a[-1, :].sum(), a[1:-1, 0].sum(), a[1:-1, -1].sum()])

    @property
    def node_weights(self) -> np.ndarray:
        if self.model.n == 1:
            return self.weights[1:-1]
        return self.weights.reshape(self.model.grid.shape)[1:-1, 1:-1].ravel()

    def pair(self, f) -> float:
        return float(np.asarray(f, dtype=float).ravel() @ self.weights)

    def is_probability(self, tol: float = 1e-10) -> bool:
        return abs(self.total - 1.0) <= tol and self.weights.min() >= -tol


@dataclass(frozen=True, eq=False)
class Potential:
    """Relative potential phi with u = u0 + phi convex."""

    model: "ModelSpace"
    values: np.ndarray
    normalization: str = "none"
    even: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != self.model.grid.size:
            raise ModelError("potential does not match the grid")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def u(self) -> np.ndarray:
        return self.model.u0 + self.values

    def defect(self) -> float:
        return self.model.admissibility_defect(self.values)

    def is_admissible(self, eps: float = EPS_CONV) -> bool:
        return self.defect() <= eps

    def require_admissible(self, eps: float = EPS_CONV) -> "Potential":
        d = self.defect()
        if d > eps:
            raise AdmissibilityError(f"potential is not admissible (defect {d:.3e})")
        return self

    def sup_normalized(self) -> "Potential":
        return Potential(self.model, self.values - self.values.max(), "sup", self.even)

    def symmetrized(self) -> "Potential":
        v = 0.5 * (self.values + self.model.backend.reflect(self.values))
        return Potential(self.model, v, self.normalization, True)

    def shifted(self, c: float) -> "Potential":
        return Potential(self.model, self.values + c, "none", self.even)


# ---------------------------------------------------------------------------
# model space


@dataclass(frozen=True, eq=False)
class ModelSpace:
    kind: str
    grid: Grid
    V: float
    beta0: float
    beta_inf: float
    u0: np.ndarray = field(repr=False)
    mu0_weights: np.ndarray = field(repr=False)
    backend: object = field(repr=False)
    diagnostics: bool = False
    eps_conv: float = EPS_CONV

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def axis(self) -> np.ndarray:
        return self.grid.axis

    @property
    def klt(self) -> bool:
        return min(self.beta0, self.beta_inf) > 0

    @property
    def mu0(self) -> GridMeasure:
        return GridMeasure(self, self.mu0_weights)

    @property
    def ma0(self) -> np.ndarray:
        """Weights of V^{-1} omega_0^n."""
        return self.backend.ma0

    @property
    def normalization(self) -> str:
        return "sup" if self.n == 1 else "pinned"

    @property
    def free(self) -> np.ndarray:
        if self.n == 1:
            return np.arange(self.grid.size)
        return self.backend.free

    def f0(self, t) -> np.ndarray:
        """Continuum reference density at log-coordinate points (radial)."""
        if self.n != 1:
            raise ModelError("f0 is defined per axis for the radial model")
        t = np.asarray(t, dtype=float)
        b0, b1 = self.beta0, self.beta_inf
        return np.exp(-betaln(b0, b1) + b0 * t - (b0 + b1) * np.logaddexp(0.0, t))

    # backend passthroughs
    def ma_weights(self, phi: np.ndarray) -> np.ndarray:
        return self.backend.ma(phi)

    def mixed_weights(self, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
        return self.backend.mixed(phi, psi)

    def energy_value(self, phi: np.ndarray) -> float:
        return self.backend.energy(phi)

    def grad_norm(self, psi: np.ndarray, w: np.ndarray) -> float:
        return self.backend.grad_norm(psi, w)

    def admissibility_defect(self, phi: np.ndarray) -> float:
        return self.backend.admissibility_defect(phi)

    def potential(self, values, normalization: str | None = None, even: bool = False) -> Potential:
        return Potential(self, values, normalization or "none", even)

    def zero(self) -> Potential:
        return Potential(self, np.zeros(self.grid.size), self.normalization,
                         self.beta0 == self.beta_inf)

    def measure(self, weights) -> GridMeasure:
        return GridMeasure(self, weights)

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.mu0_weights).tobytes()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {"kind": self.kind, "beta0": self.beta0, "beta_inf": self.beta_inf,
                "T": self.grid.T, "N": self.grid.N, "V": self.V, "checksum": self.checksum()}

    def total_ma_mass(self) -> float:
        """Mass of the unnormalized discrete MA of u0, i.e. the volume V."""
        return self.V * float(self.ma0.sum())


def _cone_cell_masses(b0: float, b1: float, t: np.ndarray) -> np.ndarray:
    # exact cell integrals of f0 via the substitution x = e^t / (1 + e^t)
    edges = expit(0.5 * (t[:-1] + t[1:]))
    lower = np.concatenate(([0.0], betainc(b0, b1, edges), [1.0]))
    upper = np.concatenate(([1.0], betaincc(b0, b1, edges), [0.0]))
    lo_cell = np.diff(lower)
    hi_cell = -np.diff(upper)
    mid = np.concatenate(([0.0], edges, [1.0]))
    centre = 0.5 * (mid[:-1] + mid[1:])
    return np.where(centre < 0.5, lo_cell, hi_cell)


def _truncated_cell_masses(b0: float, b1: float, t: np.ndarray) -> np.ndarray:
    def dens(x):
        return math.exp(b0 * x - (b0 + b1) * float(np.logaddexp(0.0, x)))
    edges = np.concatenate(([t[0]], 0.5 * (t[:-1] + t[1:]), [t[-1]]))
    w = np.array([integrate.quad(dens, a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
    return w / w.sum()


def make_radial_model(beta0: float = 1.0, beta_inf: float | None = None, T: float = 12.0,
                      N: int = 256, diagnostics: bool = False,
                      max_nodes: int = MAX_RADIAL_NODES) -> ModelSpace:
    """Sphere with cone angles 2*pi*beta0 at 0 and 2*pi*beta_inf at infinity."""
    beta_inf = beta0 if beta_inf is None else beta_inf
    b0, b1 = float(beta0), float(beta_inf)
    if N % 2 or N < 16:
        raise ModelError("N must be even and at least 16")
    if N + 1 > max_nodes:
        raise ResourceError(f"{N + 1} nodes exceed the budget of {max_nodes}")
    if not T > 0:
        raise ModelError("T must be positive")
    if min(b0, b1) <= 0 and not diagnostics:
        raise KltError(f"cone parameters ({b0}, {b1}) are not klt")
    if max(b0, b1) > 1:
        raise ModelError("cone parameters must lie in (0, 1]")
    V = b0 + b1
    if V <= 0:
        raise ModelError("the anticanonical volume must be positive")
    grid = Grid(1, float(T), int(N))
    t = grid.axis
    u0 = V * np.logaddexp(0.0, t)
    backend = RadialBackend(t, V, u0)
    if b0 == b1:
        # the reference is the Gibbs measure of the closed-form KE potential
        u_ke = 2.0 * np.logaddexp(0.0, b0 * t)
        m = _axis_ma(u_ke, grid.h, V)
        a = np.log(np.maximum(m, 1e-300)) + (u_ke - u0)
        w = np.exp(a - a.max())
        w /= w.sum()
    elif min(b0, b1) > 0:
        w = _cone_cell_masses(b0, b1, t)
        w /= w.sum()
    else:
        w = _truncated_cell_masses(b0, b1, t)
    return ModelSpace("radial", grid, V, b0, b1, u0, w, backend, diagnostics)


def make_product_model(T: float = 10.0, N: int = 128, max_nodes: int = MAX_PRODUCT_NODES) -> ModelSpace:
    """Torus-invariant P^1 x P^1 with the round reference on each factor."""
    if N % 2 or N < 16:
        raise ModelError("N must be even and at least 16")
    if (N + 1) ** 2 > max_nodes:
        raise ResourceError(f"{(N + 1) ** 2} nodes exceed the budget of {max_nodes}")
    grid = Grid(2, float(T), int(N))
    backend = ProductBackend(grid.axis, 2.0)
    return ModelSpace("product", grid, backend.V, 1.0, 1.0, backend.u0, backend.ma0.copy(),
                      backend, False)


# ---------------------------------------------------------------------------
# klt gate


@dataclass(frozen=True)
class KltProfile:
    T: tuple
    masses: tuple
    increments: tuple
    ratio: float
    bounded: bool


def klt_mass_profile(beta0: float, beta_inf: float, T_list, ratio_threshold: float = 0.99) -> KltProfile:
    """Unnormalized mass of the adapted density on [-T, T] for each cutoff."""
    Ts = [float(x) for x in T_list]
    if len(Ts) < 3 or any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ModelError("need at least three increasing cutoffs")
    b0, b1 = float(beta0), float(beta_inf)

    def dens(x):
        return math.exp(b0 * x - (b0 + b1) * float(np.logaddexp(0.0, x)))

    masses, total, prev = [], 0.0, 0.0
    for T in Ts:
        total += integrate.quad(dens, -T, -prev, limit=200)[0] + integrate.quad(dens, prev, T, limit=200)[0]
        masses.append(total)
        prev = T
    inc = np.diff(masses)
    ratio = float(inc[-1] / inc[-2])
    return KltProfile(tuple(Ts), tuple(masses), tuple(inc.tolist()), ratio, ratio < ratio_threshold)


# ---------------------------------------------------------------------------
# convex analysis


def _check_convex(u: np.ndarray, eps: float) -> None:
    d2 = np.diff(u, 2)
    if d2.size and d2.min() < -eps * max(1.0, np.abs(u).max()):
        raise AdmissibilityError("input is not discretely convex")


def legendre_transform(u, t=None, slopes=None, eps: float = EPS_CONV):
    """Discrete Legendre transform u*(p) = max_i (p t_i - u_i).

    Returns (slopes, values).  A Potential may be passed directly, in which
    case the slope grid covers the model slope interval [0, V].
    """
    if isinstance(u, Potential):
        model = u.model
        if model.n != 1:
            raise ModelError("Legendre transforms are implemented for the radial model")
        t = model.axis
        if slopes is None:
            slopes = np.linspace(0.0, model.V, model.grid.N + 1)
        u = u.u
    u = np.asarray(u, dtype=float)
    t = np.asarray(t, dtype=float)
    _check_convex(u, eps)
    if slopes is None:
        s = np.diff(u) / np.diff(t)
        slopes = np.linspace(s.min(), s.max(), t.size)
    p = np.asarray(slopes, dtype=float)
    return p, _conjugate(t, u, p)


def _lower_hull(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Indices of the vertices of the lower convex hull (x increasing)."""
    hull: list[int] = []
    for k in range(x.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            if (f[j] - f[i]) * (x[k] - x[i]) >= (f[k] - f[i]) * (x[j] - x[i]):
                hull.pop()
            else:
                break
        hull.append(k)
    return np.array(hull)


def _conjugate(x: np.ndarray, f: np.ndarray, q: np.ndarray) -> np.ndarray:
    """max_k (q x_k - f_k) for every q, in O((K + Q) log K)."""
    idx = _lower_hull(x, f)
    xh, fh = x[idx], f[idx]
    if xh.size == 1:
        return q * xh[0] - fh[0]
    k = np.searchsorted(np.diff(fh) / np.diff(xh), q)
    return q * xh[k] - fh[k]


def legendre_breakpoints(u: np.ndarray, t: np.ndarray, lo: float, hi: float):
    """Exact transform of the piecewise-linear interpolant of u on [lo, hi].

    The transform is piecewise linear with kinks at the slopes of u, so it
    is returned as values at the sorted breakpoints (including lo and hi).
    """
    s = np.diff(u) / np.diff(t)
    p = np.unique(np.clip(np.concatenate(([lo, hi], s)), lo, hi))
    return p, _conjugate(t, u, p)


def inverse_legendre(p: np.ndarray, ustar: np.ndarray, t: np.ndarray) -> np.ndarray:
    """u(t_i) = max_k (p_k t_i - u*(p_k)) for a piecewise-linear u*."""
    return _conjugate(p, ustar, t)


def psh_envelope(g, model: ModelSpace) -> Potential:
    """Largest admissible potential lying below g at every node."""
    if model.n != 1:
        raise ModelError("psh_envelope is implemented for the radial model")
    g = np.asarray(g.values if isinstance(g, Potential) else g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ModelError("envelope input must be finite")
    t = model.axis
    f = model.u0 + g
    idx = _lower_hull(t, f)
    slopes = np.diff(f[idx]) / np.diff(t[idx])
    a = np.unique(np.concatenate(([0.0, model.V], slopes[(slopes > 0) & (slopes < model.V)])))
    # sup of affine minorants with slope clamped to [0, V]
    env = _conjugate(a, _conjugate(t, f, a), t)
    env = np.minimum(env, f)
    return Potential(model, env - model.u0, "none")
