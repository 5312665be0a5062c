"""Energy, entropy and Orlicz functionals on potentials and grid measures."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp, xlogy

from .errors import AdmissibilityError, ModelError, SolverError
from .model_space import GridMeasure, ModelSpace, Potential

CLAMP_LIMIT = 1e-6
ATOM_LIMIT = 1e-4

REPORT_COLUMNS = ("E", "J", "I_ref", "Estar", "L", "Ding", "Mab", "H", "gap", "residual_max")


def _vals(x) -> np.ndarray:
    if isinstance(x, Potential):
        return x.values
    if isinstance(x, GridMeasure):
        return x.weights
    return np.asarray(x, dtype=float).ravel()


def _admissible(phi: Potential) -> Potential:
    if not isinstance(phi, Potential):
        raise TypeError("expected a Potential")
    return phi.require_admissible(phi.model.eps_conv)


# ---------------------------------------------------------------------------
# Monge-Ampere and energies


def ma_measure(phi: Potential) -> GridMeasure:
    """Normalized Monge-Ampere measure of an admissible potential."""
    model = _admissible(phi).model
    w = model.ma_weights(phi.values)
    neg = -w[w < 0].sum()
    if neg > CLAMP_LIMIT:
        raise AdmissibilityError(f"negative Monge-Ampere mass {neg:.3e} exceeds the clamp limit")
    if neg > 0:
        w = np.maximum(w, 0.0)
        w /= w.sum()
    return GridMeasure(model, w, float(neg))


def mixed_measure(phi: Potential, psi: Potential, j: int) -> GridMeasure:
    """Measure of omega_phi^j ^ omega_psi^(n-j), normalized by V."""
    model = _admissible(phi).model
    _admissible(psi)
    if not 0 <= j <= model.n:
        raise ModelError(f"j must lie in [0, {model.n}]")
    if j == model.n:
        return GridMeasure(model, model.ma_weights(phi.values))
    if j == 0:
        return GridMeasure(model, model.ma_weights(psi.values))
    return GridMeasure(model, model.mixed_weights(phi.values, psi.values))


def energy(phi: Potential) -> float:
    """Monge-Ampere energy E, normalized by E(0) = 0."""
    return _admissible(phi).model.energy_value(phi.values)


def energy_by_mixed(phi: Potential) -> float:
    """E as the average of pairings with the mixed measures against 0."""
    zero = phi.model.zero()
    n = phi.model.n
    return sum(mixed_measure(phi, zero, j).pair(phi.values) for j in range(n + 1)) / (n + 1)


def energy_difference_bis(phi: Potential, psi: Potential) -> float:
    """E(phi) - E(psi) through the mixed measures of the pair."""
    n = phi.model.n
    w = phi.values - psi.values
    return sum(mixed_measure(phi, psi, j).pair(w) for j in range(n + 1)) / (n + 1)


def functional_I(phi: Potential, psi: Potential) -> float:
    model = _admissible(phi).model
    _admissible(psi)
    w = phi.values - psi.values
    return float(w @ (model.ma_weights(psi.values) - model.ma_weights(phi.values)))


def functional_I_gradient(phi: Potential, psi: Potential) -> float:
    """I through the Dirichlet-type norms of d(phi - psi)."""
    model = phi.model
    w = phi.values - psi.values
    if model.n == 1:
        return model.grad_norm(psi.values, w)
    return model.grad_norm(phi.values, w) + model.grad_norm(psi.values, w)


def gradient_norm_sq(phi1: Potential, phi2: Potential, psi: Potential) -> float:
    """Squared L2 norm of d(phi1 - phi2) against omega_psi^(n-1)."""
    return phi1.model.grad_norm(psi.values, phi1.values - phi2.values)


def functional_J(phi: Potential, base: Potential | None = None) -> float:
    """J_base(phi) = E(base) - E(phi) + <phi - base, MA(base)>."""
    model = _admissible(phi).model
    base = model.zero() if base is None else _admissible(base)
    w = phi.values - base.values
    return float(model.energy_value(base.values) - model.energy_value(phi.values)
                 + w @ model.ma_weights(base.values))


def dual_energy(mu: GridMeasure, calibration: Potential | None = None, cfg=None,
                tol: float = 1e-8) -> float:
    """E*(mu) = E(phi_mu) - <phi_mu, mu> where MA(phi_mu) = mu."""
    model = mu.model
    if calibration is None:
        from .ma_solver import solve_ma
        calibration = solve_ma(mu, model, cfg)
    _admissible(calibration)
    ma = model.ma_weights(calibration.values)
    if 0.5 * np.abs(ma - mu.weights).sum() > tol:
        raise SolverError("calibration potential does not solve MA(phi) = mu")
    return float(model.energy_value(calibration.values) - calibration.values @ mu.weights)


def dual_energy_sup_defect(mu: GridMeasure, estar: float, samples) -> float:
    """max over samples of E(phi) - <phi, mu> - E*(mu); never positive in theory."""
    model = mu.model
    return max(model.energy_value(p.values) - p.values @ mu.weights - estar for p in samples)


# ---------------------------------------------------------------------------
# Ding, Mabuchi and entropy


def log_laplace(g, mu) -> float:
    """log <e^g, mu> computed stably."""
    w = _vals(mu)
    g = _vals(g)
    pos = w > 0
    return float(logsumexp(g[pos], b=w[pos]))


def functional_L(phi: Potential) -> float:
    return -log_laplace(-phi.values, phi.model.mu0_weights)


def gibbs_weights(phi, mu0) -> np.ndarray:
    """Probability weights proportional to e^{-phi} mu0."""
    w = _vals(mu0)
    a = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)) - _vals(phi), -np.inf)
    a = np.exp(a - a.max())
    return a / a.sum()


class EntropyTV(NamedTuple):
    H: float
    tv: float

    @property
    def l1(self) -> float:
        return 2.0 * self.tv


def relative_entropy(nu, mu) -> float:
    nu, mu = _vals(nu), _vals(mu)
    if np.any((mu <= 0) & (nu > 0)):
        return math.inf
    pos = nu > 0
    return float(np.sum(xlogy(nu[pos], nu[pos]) - xlogy(nu[pos], mu[pos])))


def entropy_tv(nu, mu) -> EntropyTV:
    """Relative entropy H(nu | mu) and total variation sup_A |nu(A) - mu(A)|."""
    if isinstance(nu, GridMeasure) and isinstance(mu, GridMeasure) and nu.model.grid != mu.model.grid:
        raise ModelError("measures live on different grids")
    a, b = _vals(nu), _vals(mu)
    if a.shape != b.shape:
        raise ModelError("measures live on different grids")
    return EntropyTV(relative_entropy(a, b), 0.5 * float(np.abs(a - b).sum()))


@dataclass
class FunctionalReport:
    E: float
    J: float
    I_ref: float
    Estar: float
    L: float
    Ding: float
    Mab: float
    H: float
    gap: float
    residuals: dict = field(default_factory=dict)
    notes: tuple = ()

    @property
    def residual_max(self) -> float:
        vals = [v for v in self.residuals.values() if np.isfinite(v)]
        return max(vals) if vals else 0.0

    def row(self) -> list[float]:
        return [getattr(self, c) for c in REPORT_COLUMNS[:-1]] + [self.residual_max]

    def to_json(self) -> dict:
        d = {c: v for c, v in zip(REPORT_COLUMNS, self.row())}
        d["residuals"] = dict(self.residuals)
        d["notes"] = list(self.notes)
        return d


def ding_mab(phi: Potential) -> FunctionalReport:
    """Ding and Mabuchi functionals with the identities linking them."""
    model = _admissible(phi).model
    v = phi.values
    mu0 = model.mu0_weights
    ma = model.ma_weights(v)
    E = model.energy_value(v)
    ma_ref = model.ma0
    I_ref = float(v @ (ma_ref - ma))
    J = float(-E + v @ ma_ref)
    Estar = float(E - v @ ma)
    L = functional_L(phi)
    ding = L - E
    notes = []
    bad = (mu0 <= 0) & (ma > ATOM_LIMIT)
    if bad.any():
        notes.append("entropy not computed: MA charges a node carrying no reference mass")
        H = mab = gap = math.nan
        resid = {}
    else:
        H = relative_entropy(np.maximum(ma, 0.0), mu0)
        mab = H - Estar
        gap = mab - ding
        h_omega = relative_entropy(np.maximum(ma, 0.0), gibbs_weights(v, mu0))
        resid = {"mab_ding_entropy": abs(gap - h_omega)}
    resid["estar_I_minus_J"] = abs(Estar - (I_ref - J))
    resid["mass"] = abs(ma.sum() - 1.0)
    if model.n == 1:
        resid["J_half_I"] = abs(J - 0.5 * I_ref)
    return FunctionalReport(E, J, I_ref, Estar, L, ding, mab, H, gap, resid, tuple(notes))


def entropy_legendre_check(g, mu, samples: int = 200, seed: int = 0):
    """Worst slack of <g, nu> - H(nu | mu) <= log <e^g, mu> over random nu.

    Returns (worst_slack, gibbs_defect); the Gibbs measure attains equality.
    """
    g, w = _vals(g), _vals(mu)
    rhs = log_laplace(g, w)
    rng = np.random.default_rng(seed)
    worst = math.inf
    support = np.flatnonzero(w > 0)
    for k in range(samples):
        nu = np.zeros_like(w)
        if k % 2:
            nu[support] = rng.dirichlet(np.full(support.size, rng.uniform(0.1, 2.0)))
        else:
            pick = rng.choice(support, size=min(support.size, int(rng.integers(1, 6))), replace=False)
            nu[pick] = rng.dirichlet(np.ones(pick.size))
        worst = min(worst, rhs - (g @ nu - relative_entropy(nu, w)))
    star = gibbs_weights(-g, w)
    defect = abs(rhs - (g @ star - relative_entropy(star, w)))
    return float(worst), float(defect)


# ---------------------------------------------------------------------------
# alpha-invariant and Moser constant


def _log_f0(model: ModelSpace, t):
    return model.beta0 * t - (model.beta0 + model.beta_inf) * np.logaddexp(0.0, t)


def _family_increment(model, alpha, m, mirror, a, b):
    sgn = -1.0 if mirror else 1.0

    def f(x):
        return math.exp(alpha * m * float(np.logaddexp(0.0, -sgn * x)) + float(_log_f0(model, x)))
    return (integrate.quad(f, -b, -a, limit=400, epsrel=1e-12)[0]
            + integrate.quad(f, a, b, limit=400, epsrel=1e-12)[0])


def family_bounded(model: ModelSpace, alpha: float, m_steps: int = 16,
                   cutoffs=(20.0, 40.0, 60.0, 80.0), ratio_threshold: float = 0.99) -> bool:
    """Whether all integrals of e^{-alpha phi_m} against mu0 stay bounded in T."""
    for m in np.linspace(model.V / m_steps, model.V, m_steps):
        for mirror in (False, True):
            inc = [_family_increment(model, alpha, m, mirror, a, b)
                   for a, b in zip(cutoffs[:-1], cutoffs[1:])]
            if inc[-1] >= ratio_threshold * inc[-2]:
                return False
    return True


@functools.lru_cache(maxsize=32)
def _alpha_bracket(b0, b1, T, N, m_steps, alpha_tol):
    from .model_space import make_radial_model
    model = make_radial_model(b0, b1, T, N)
    lo, hi = 0.0, 1.0
    if family_bounded(model, hi, m_steps):
        return hi, math.inf
    while hi - lo > alpha_tol:
        mid = 0.5 * (lo + hi)
        if family_bounded(model, mid, m_steps):
            lo = mid
        else:
            hi = mid
    return lo, hi


def alpha_estimate(model: ModelSpace, m_steps: int = 16, alpha_tol: float = 0.01) -> tuple[float, float]:
    """Bracket of the radial alpha-invariant over the extremal family."""
    if model.n != 1:
        raise ModelError("alpha_estimate needs a radial model")
    return _alpha_bracket(model.beta0, model.beta_inf, model.grid.T, 16, m_steps, alpha_tol)


def moser_constant(model: ModelSpace, alpha: float, samples: int = 500, seed: int = 0,
                   check_bracket: bool = True) -> float:
    """max over sampled sup-normalized potentials of log <e^{-alpha phi}, mu0>."""
    from .sampling import extremal_family, sample_potential
    if check_bracket and model.n == 1:
        lo, _ = alpha_estimate(model)
        if alpha >= lo:
            raise ModelError(f"alpha={alpha} is not below the alpha bracket ({lo})")
    mu0 = model.mu0_weights
    best = 0.0
    pots = [sample_potential(model, seed, i) for i in range(samples)]
    if model.n == 1:
        pots += [extremal_family(model, m, mir) for m in np.linspace(model.V / 16, model.V, 16)
                 for mir in (False, True)]
    for p in pots:
        v = p.values - p.values.max()
        best = max(best, log_laplace(-alpha * v, mu0))
    return float(best)


# ---------------------------------------------------------------------------
# Orlicz weights


@dataclass(frozen=True)
class OrliczWeight:
    name: str
    param: float | None = None

    def __post_init__(self):
        if self.name not in ("chi_entropy", "chi_star_exp", "power_p"):
            raise ModelError(f"unknown weight {self.name!r}")
        if self.name == "power_p" and not (self.param and self.param > 1):
            raise ModelError("power weights need p > 1")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore"):
            if self.name == "chi_entropy":
                return (s + 1.0) * np.log1p(s) - s
            if self.name == "chi_star_exp":
                return np.expm1(s) - s
            return s ** self.param / self.param

    def conjugate(self) -> "OrliczWeight":
        if self.name == "chi_entropy":
            return OrliczWeight("chi_star_exp")
        if self.name == "chi_star_exp":
            return OrliczWeight("chi_entropy")
        p = self.param
        return OrliczWeight("power_p", p / (p - 1.0))


def luxembourg_norm(f, w: OrliczWeight, mu) -> float:
    """inf { lam > 0 : <w(|f| / lam), mu> <= 1 }."""
    f, m = np.abs(_vals(f)), _vals(mu)
    on = (m > 0) & (f > 0)
    if not on.any():
        return 0.0
    f, m = f[on], m[on]

    def gauge(lam):
        with np.errstate(over="ignore"):
            return float(m @ w(f / lam)) - 1.0

    hi = float(f.max())
    while gauge(hi) > 0:
        hi *= 2.0
    lo = hi
    while gauge(lo) <= 0:
        lo *= 0.5
        if lo < 1e-300:  # pragma: no cover
            raise SolverError("Luxembourg bracket collapsed")
    return float(optimize.brentq(gauge, lo, hi, xtol=1e-300, rtol=1e-13))


def holder_young_check(f, g, mu, w: OrliczWeight) -> float:
    """Worst slack of the Hoelder-Young inequality and its density corollary."""
    f, g, m = np.abs(_vals(f)), np.abs(_vals(g)), _vals(mu)
    ws = w.conjugate()
    nf, ng = luxembourg_norm(f, w, m), luxembourg_norm(g, ws, m)
    lhs = float(m @ (f * g))
    slack = 2.0 * nf * ng - lhs
    A = max(1.0, float(m @ w(f)))
    if np.isfinite(A):
        slack = min(slack, 2.0 * A * ng - lhs)
    return float(slack)
