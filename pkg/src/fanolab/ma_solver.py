"""Discrete Monge-Ampere solvers: prescribed measure, Ricci inverse, KE."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

from .errors import AdmissibilityError, ModelError, SolverError
from .functionals import gibbs_weights
from .model_space import GridMeasure, ModelSpace, Potential


@dataclass(frozen=True)
class SolverConfig:
    max_newton_steps: int = 60
    residual_tol: float = 1e-10
    armijo_factor: float = 0.5
    min_step: float = 2.0 ** -20
    armijo_c: float = 1e-4
    convexity_repair: bool = True
    max_repairs: int = 1000
    concentration_cap: float = 0.5
    atom_drift_limit: float = 1e-2

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise ModelError("residual_tol must be positive")
        if self.max_newton_steps < 1:
            raise ModelError("max_newton_steps must be at least 1")


@dataclass
class NewtonLog:
    residuals: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    repairs: int = 0

    def rows(self):
        return [(k, r, s) for k, (r, s) in enumerate(zip(self.residuals, self.steps))]


def _tv(a, b) -> float:
    return 0.5 * float(np.abs(a - b).sum())


def _repair(model: ModelSpace, v: np.ndarray) -> np.ndarray:
    """Project a slightly non-convex radial iterate back onto the cone."""
    from .model_space import psh_envelope
    return np.array(psh_envelope(v, model).values)


def _radial_direct(model: ModelSpace, target: np.ndarray) -> np.ndarray:
    # MA is affine in one dimension: slopes are V times the cumulative mass
    s = model.V * np.cumsum(target)[:-1]
    s = np.clip(s, 0.0, model.V)
    u = np.concatenate(([0.0], np.cumsum(s * model.grid.h)))
    phi = u - model.u0
    return phi - phi.max()


def _check_target(target: GridMeasure, cfg: SolverConfig) -> np.ndarray:
    w = target.weights
    if abs(w.sum() - 1.0) > 1e-10 or w.min() < -1e-14:
        raise ModelError("target must be a probability measure")
    if w.max() > cfg.concentration_cap:
        raise SolverError("target violates the concentration cap",
                          {"max_weight": float(w.max()), "cap": cfg.concentration_cap})
    return w


def _product_newton(model: ModelSpace, target_fn, a: float, init: np.ndarray,
                    cfg: SolverConfig, log: NewtonLog) -> tuple[np.ndarray, float]:
    """Newton on the free nodes of the product model, Sherman-Morrison for the
    rank-one part of the Gibbs derivative."""
    F_idx = model.free
    v = init.copy()

    def resid(x):
        g = target_fn(x)
        return model.ma_weights(x) - g, g

    r, g = resid(v)
    norm = float(np.abs(r[F_idx]).sum())
    for _ in range(cfg.max_newton_steps):
        log.residuals.append(_tv(r, 0.0))
        if _tv(r, 0.0) <= cfg.residual_tol:
            break
        A = model.backend.jacobian(v)[F_idx][:, F_idx]
        gF = g[F_idx]
        if a != 0.0:
            A = A + a * _diag(gF)
        lu = spla.splu(A.tocsc())
        d = lu.solve(-r[F_idx])
        if a != 0.0:
            y = lu.solve(gF)
            d = d + a * y * (gF @ d) / (1.0 - a * (gF @ y))
        lam = 1.0
        while True:
            trial = v.copy()
            trial[F_idx] += lam * d
            rt, gt = resid(trial)
            nt = float(np.abs(rt[F_idx]).sum())
            if nt <= (1.0 - cfg.armijo_c * lam) * norm or lam <= cfg.min_step:
                break
            lam *= cfg.armijo_factor
        log.steps.append(lam)
        v, r, g, norm = trial, rt, gt, nt
    return v, _tv(r, 0.0)


def _diag(x):
    import scipy.sparse as sp
    return sp.diags(x)


def solve_ma(target: GridMeasure, model: ModelSpace | None = None, cfg: SolverConfig | None = None,
             log: NewtonLog | None = None) -> Potential:
    """Admissible normalized phi with MA(phi) = target."""
    cfg = cfg or SolverConfig()
    model = model or target.model
    log = log if log is not None else NewtonLog()
    w = _check_target(target, cfg)
    if model.n == 1:
        phi = _radial_direct(model, w)
        log.residuals.append(_tv(model.ma_weights(phi), w))
        log.steps.append(1.0)
        res = log.residuals[-1]
    else:
        phi, res = _product_newton(model, lambda x: w, 0.0, np.zeros(model.grid.size), cfg, log)
    if res > cfg.residual_tol:
        raise SolverError("Monge-Ampere inversion did not reach tolerance", {"residual": res})
    pot = Potential(model, phi, model.normalization)
    if not pot.is_admissible(model.eps_conv):
        raise AdmissibilityError("solution left the admissible cone")
    return pot


def gibbs_measure(phi: Potential) -> GridMeasure:
    """mu_phi proportional to e^{-phi} mu0."""
    return GridMeasure(phi.model, gibbs_weights(phi.values, phi.model.mu0_weights))


def ricci_inverse(phi: Potential, model: ModelSpace | None = None, cfg: SolverConfig | None = None) -> Potential:
    """Solve MA(phi') = e^{-phi + L(phi)} mu0."""
    model = model or phi.model
    phi.require_admissible(model.eps_conv)
    return solve_ma(gibbs_measure(phi), model, cfg)


def _radial_newton(model: ModelSpace, a: float, b: float, phik: np.ndarray, init: np.ndarray,
                   cfg: SolverConfig, even: bool, log: NewtonLog, drift: bool = False):
    """Newton for MA(psi) = normalize(mu0 e^{-a psi - b phik}) in one dimension."""
    mu0 = model.mu0_weights
    bk = b * phik
    ab0 = model.backend.banded()
    v = init - init.max()

    def resid(x):
        g = gibbs_weights(a * x + bk, mu0)
        return model.ma_weights(x) - g, g

    r, g = resid(v)
    res = _tv(r, 0.0)
    centres = []
    t = model.axis
    for _ in range(cfg.max_newton_steps):
        log.residuals.append(res)
        if res <= cfg.residual_tol:
            break
        ab = ab0.copy()
        ab[1] += a * g
        d = solve_banded((1, 1), ab, -r)
        if even:
            d = 0.5 * (d + d[::-1])
        lam = 1.0
        while True:
            trial = v + lam * d
            if model.admissibility_defect(trial) > 1e-9 and cfg.convexity_repair:
                trial = _repair(model, trial)
                log.repairs += 1
            trial -= trial.max()
            rt, gt = resid(trial)
            rest = _tv(rt, 0.0)
            if rest <= (1.0 - cfg.armijo_c * lam) * res or lam <= cfg.min_step:
                break
            lam *= cfg.armijo_factor
        log.steps.append(lam)
        v, r, g, res = trial, rt, gt, rest
        if log.repairs > cfg.max_repairs:
            raise SolverError("convexity repair triggered too often",
                              {"repairs": log.repairs, "residual": res})
        if drift:
            m = model.ma_weights(v)
            centres.append(float(m @ t))
    return v, res, centres


def ke_solve(model: ModelSpace, cfg: SolverConfig | None = None, gauge: str = "even",
             init: Potential | None = None, log: NewtonLog | None = None):
    """Newton on MA(phi) = e^{-phi + L(phi)} mu0; returns (phi, tv residual)."""
    cfg = cfg or SolverConfig()
    log = log if log is not None else NewtonLog()
    if gauge not in ("even", "none"):
        raise ModelError("gauge must be 'even' or 'none'")
    v0 = np.zeros(model.grid.size) if init is None else init.values.copy()
    if model.n == 2:
        mu0 = model.mu0_weights
        v, res = _product_newton(model, lambda x: gibbs_weights(x, mu0), 1.0, v0, cfg, log)
        if res > cfg.residual_tol:
            raise SolverError("KE Newton did not converge", {"residual": res})
        return Potential(model, v, "pinned"), res
    unequal = model.beta0 != model.beta_inf
    even = gauge == "even" and not unequal
    if even:
        v0 = 0.5 * (v0 + v0[::-1])
    try:
        v, res, centres = _radial_newton(model, 1.0, 0.0, np.zeros_like(v0), v0, cfg, even, log, drift=True)
    except SolverError as exc:
        exc.diagnostics["residuals"] = list(log.residuals)
        raise
    ma = model.ma_weights(v)
    atoms = float(ma[0] + ma[-1])
    diag = {"residual": res, "boundary_atom_mass": atoms, "steps": len(log.steps),
            "centre_of_mass": centres, "residuals": list(log.residuals)}
    if centres:
        diag["drift"] = centres[-1] - float(model.ma0 @ model.axis)
    if res > cfg.residual_tol:
        raise SolverError("KE Newton did not converge", diag)
    if atoms > cfg.atom_drift_limit:
        # the only discrete solutions left sit on the truncation boundary
        raise SolverError("KE iterates drifted to the grid boundary", diag)
    return Potential(model, v, "sup", even), res


def backward_krf_step(phi: Potential, dt: float, cfg: SolverConfig | None = None,
                      log: NewtonLog | None = None) -> Potential:
    """One implicit step of the normalized flow.

    Solves (phi' - phi)/dt = log MA(phi') - log mu0 + phi' + c, i.e.
    MA(phi') = normalize(mu0 exp(-(1 - 1/dt) phi' - phi/dt)).
    """
    cfg = cfg or SolverConfig()
    model = phi.model
    if not dt > 0:
        raise ModelError("dt must be positive")
    if model.n != 1:
        raise ModelError("the flow is implemented for the radial model")
    a, b = 1.0 - 1.0 / dt, 1.0 / dt
    if a == 0.0:
        return ricci_inverse(phi, model, cfg)
    log = log if log is not None else NewtonLog()
    v, res, _ = _radial_newton(model, a, b, phi.values, phi.values, cfg, phi.even, log)
    if res > cfg.residual_tol:
        raise SolverError("implicit flow step did not converge", {"residual": res})
    return Potential(model, v, "sup", phi.even)


def ke_residual(phi: Potential) -> float:
    """tv distance between MA(phi) and its Gibbs measure."""
    model = phi.model
    return _tv(model.ma_weights(phi.values), gibbs_weights(phi.values, model.mu0_weights))


def closed_form_ke(model: ModelSpace) -> Potential:
    """u = 2 log(1 + e^{beta t}) relative to u0, sup-normalized (equal cones)."""
    if model.n != 1 or model.beta0 != model.beta_inf:
        raise ModelError("closed form exists for equal cone angles only")
    phi = 2.0 * np.logaddexp(0.0, model.beta0 * model.axis) - model.u0
    return Potential(model, phi - phi.max(), "sup", True)


def ke_density(model: ModelSpace, t) -> np.ndarray:
    """beta e^{beta t} (1 + e^{beta t})^{-2}."""
    b = model.beta0
    x = b * np.asarray(t, dtype=float)
    return b * np.exp(x - 2.0 * np.logaddexp(0.0, x))


__all__ = ["SolverConfig", "NewtonLog", "solve_ma", "ricci_inverse", "ke_solve", "backward_krf_step",
           "gibbs_measure", "ke_residual", "closed_form_ke", "ke_density"]
