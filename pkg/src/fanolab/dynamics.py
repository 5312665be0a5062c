"""Ricci iteration, normalized Kaehler-Ricci flow and weak geodesics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, SolverError
from .functionals import ding_mab, functional_I, functional_J, gibbs_weights
from .ma_solver import SolverConfig, backward_krf_step, ke_residual, ricci_inverse
from .model_space import (ModelSpace, Potential, inverse_legendre, legendre_breakpoints,
                          legendre_transform, psh_envelope)
from .sampling import translate_potential

TRACE_HEADER = ("step", "time", "E", "J", "I_prev", "L", "Ding", "Mab", "H",
                "tv_residual", "dissipation_cum", "c2_interior", "flags")


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return "%.17g" % x


@dataclass
class Trace:
    kind: str
    records: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    converged_at: int | None = None
    final: Potential | None = None
    potentials: list = field(default_factory=list)

    def add(self, step, time, report, I_prev, tv, diss, c2, flags):
        self.records.append({
            "step": step, "time": time, "E": report.E, "J": report.J, "I_prev": I_prev,
            "L": report.L, "Ding": report.Ding, "Mab": report.Mab, "H": report.H,
            "tv_residual": tv, "dissipation_cum": diss, "c2_interior": c2,
            "flags": ";".join(flags)})

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=float)

    def flagged(self, flag: str) -> list[int]:
        return [r["step"] for r in self.records if flag in r["flags"].split(";")]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for r in self.records:
                w.writerow([fmt(r[c]) for c in TRACE_HEADER])


def interior_c2(phi: Potential, margin: float = 2.0) -> float:
    """Largest second difference quotient of u away from the cutoff."""
    model = phi.model
    T, h = model.grid.T, model.grid.h
    if not margin < T:
        raise ModelError("margin must be smaller than T")
    t = model.axis
    keep = np.abs(t) <= T - margin
    if model.n == 1:
        d2 = np.full(t.size, -np.inf)
        d2[1:-1] = np.diff(phi.u, 2) / h ** 2
        return float(d2[keep].max())
    u = phi.u.reshape(model.grid.shape)
    dx = np.full(u.shape, -np.inf)
    dy = np.full(u.shape, -np.inf)
    dx[1:-1, :] = np.diff(u, 2, axis=0) / h ** 2
    dy[:, 1:-1] = np.diff(u, 2, axis=1) / h ** 2
    box = keep[:, None] & keep[None, :]
    return float(max(dx[box].max(), dy[box].max()))


# ---------------------------------------------------------------------------
# Ricci iteration


def ricci_iterate(phi0: Potential, model: ModelSpace | None = None, max_iter: int = 50,
                  stop_tol: float = 1e-10, gauge: str = "even", cfg: SolverConfig | None = None,
                  chain_tol: float = 1e-8, margin: float = 2.0) -> Trace:
    """phi_{j+1} = ricci_inverse(phi_j) with the Mabuchi/Ding monitors."""
    model = model or phi0.model
    cfg = cfg or SolverConfig()
    phi = phi0.require_admissible(model.eps_conv)
    even = gauge == "even" and model.n == 1 and model.beta0 == model.beta_inf
    if even:
        phi = phi.symmetrized()
    tr = Trace("iterate")
    rep = ding_mab(phi)
    tr.add(0, 0.0, rep, math.nan, ke_residual(phi), 0.0, interior_c2(phi, margin), ["start"])
    tr.potentials.append(phi)
    for j in range(max_iter):
        try:
            nxt = ricci_inverse(phi, model, cfg)
        except SolverError as exc:
            tr.status, tr.message = "failed", f"step {j + 1}: {exc}"
            break
        if even:
            nxt = nxt.symmetrized()
        new = ding_mab(nxt)
        I = functional_I(nxt, phi)
        flags = []
        flags.append("chain_ok" if new.Mab <= rep.Ding + chain_tol and rep.Ding <= rep.Mab + chain_tol
                     else "chain_fail")
        flags.append("mab_ok" if new.Mab <= rep.Mab + chain_tol else "mab_increase")
        if I <= stop_tol:
            flags.append("converged")
        tr.add(j + 1, float(j + 1), new, I, ke_residual(nxt), 0.0, interior_c2(nxt, margin), flags)
        tr.potentials.append(nxt)
        phi, rep = nxt, new
        if I <= stop_tol:
            tr.converged_at = j
            break
    tr.final = phi
    if tr.converged_at is None and tr.status == "ok":
        tr.message = "iteration budget exhausted"
    return tr


# ---------------------------------------------------------------------------
# normalized Kaehler-Ricci flow


def _stiffness(model: ModelSpace, ma: np.ndarray) -> float:
    return float(2.0 * model.backend.scale / ma.min() + 1.0)


def krf_run(phi0: Potential, model: ModelSpace | None = None, dt: float = 0.01, t_end: float = 20.0,
            scheme: str = "explicit", cfg: SolverConfig | None = None, cfl: float = 0.5,
            substeps: int | None = None, record_every: int = 1, step_slack: float | None = None,
            margin: float = 2.0) -> Trace:
    """Normalized Kaehler-Ricci flow d phi/dt = log(MA(phi) / mu_phi).

    The explicit scheme updates every node, the two end nodes carrying the
    lumped tails, and splits each step into enough sub-steps for the stability guard dt_sub * kappa <= cfl,
    kappa being the largest diagonal entry of the linearized right-hand side.
    A fixed `substeps` count that violates the guard raises.
    """
    model = model or phi0.model
    cfg = cfg or SolverConfig()
    if model.n != 1:
        raise ModelError("the flow is implemented for the radial model")
    if scheme not in ("explicit", "backward"):
        raise ModelError("scheme must be 'explicit' or 'backward'")
    if not (dt > 0 and t_end > 0):
        raise ModelError("dt and t_end must be positive")
    slack = 10.0 * dt * dt if step_slack is None else step_slack
    phi = phi0.require_admissible(model.eps_conv)
    mu0 = model.mu0_weights
    nsteps = int(round(t_end / dt))
    tr = Trace("flow")
    rep = ding_mab(phi)
    ma = model.ma_weights(phi.values)
    tv = 0.5 * float(np.abs(ma - gibbs_weights(phi.values, mu0)).sum())
    diss = 0.0
    tr.add(0, 0.0, rep, math.nan, tv, diss, interior_c2(phi, margin), ["start"])
    v = np.array(phi.values)
    for k in range(1, nsteps + 1):
        try:
            if scheme == "explicit":
                if ma.min() <= 0:
                    raise SolverError("Monge-Ampere density vanishes at a node")
                kappa = _stiffness(model, ma)
                nsub = substeps or max(1, math.ceil(dt * kappa / cfl))
                if dt / nsub * kappa > cfl:
                    raise SolverError(f"CFL guard violated: dt*kappa = {dt / nsub * kappa:.3g} > {cfl}",
                                      {"kappa": kappa, "dt": dt, "substeps": nsub})
                h = dt / nsub
                for _ in range(nsub):
                    m = model.ma_weights(v)
                    if m.min() <= 0:
                        raise SolverError("Monge-Ampere density vanished during the step")
                    v += h * (np.log(m) - np.log(gibbs_weights(v, mu0)))
                new_phi = Potential(model, v, "none", phi.even)
            else:
                new_phi = backward_krf_step(phi, dt, cfg)
                v = np.array(new_phi.values)
        except SolverError as exc:
            tr.status, tr.message = "failed", f"step {k}: {exc}"
            break
        diss += dt * tv * tv
        new = ding_mab(new_phi)
        ma = model.ma_weights(new_phi.values)
        tv = 0.5 * float(np.abs(ma - gibbs_weights(new_phi.values, mu0)).sum())
        flags = ["ding_ok" if new.Ding <= rep.Ding + slack else "ding_increase",
                 "mab_ok" if new.Mab <= rep.Mab + slack else "mab_increase"]
        if k % record_every == 0 or k == nsteps or "increase" in "".join(flags):
            I = functional_I(new_phi, phi) if new_phi.is_admissible() and phi.is_admissible() else math.nan
            tr.add(k, k * dt, new, I, tv, diss, interior_c2(new_phi, margin), flags)
        phi, rep = new_phi, new
    tr.final = phi
    return tr


def dissipation_defect(trace: Trace) -> float:
    """max over recorded pairs t < t' of Ding(t') - Ding(t) + (D(t') - D(t))."""
    ding = trace.column("Ding")
    diss = trace.column("dissipation_cum")
    g = ding + diss
    # worst increase of Ding + cumulative dissipation over any later time
    running_min = np.minimum.accumulate(g)
    return float(np.max(g - running_min))


# ---------------------------------------------------------------------------
# geodesics


@dataclass
class Geodesic:
    s: np.ndarray
    potentials: list
    E: np.ndarray
    Ding: np.ndarray

    def affinity_defect(self) -> float:
        return float(np.abs(np.diff(self.E, 2)).max()) if self.E.size > 2 else 0.0

    def convexity_defect(self) -> float:
        return float(max(0.0, -np.diff(self.Ding, 2).min())) if self.Ding.size > 2 else 0.0


def geodesic(phi_a: Potential, phi_b: Potential, steps: int = 10) -> Geodesic:
    """Weak geodesic by linear interpolation of Legendre transforms."""
    model = phi_a.model
    if model.n != 1:
        raise ModelError("geodesics are implemented for the radial model")
    phi_a.require_admissible(model.eps_conv)
    phi_b.require_admissible(model.eps_conv)
    t = model.axis
    pa, _ = legendre_breakpoints(phi_a.u, t, 0.0, model.V)
    pb, _ = legendre_breakpoints(phi_b.u, t, 0.0, model.V)
    p = np.union1d(pa, pb)
    ua = legendre_transform(phi_a.u, t, p)[1]
    ub = legendre_transform(phi_b.u, t, p)[1]
    s = np.linspace(0.0, 1.0, steps + 1)
    pots, E, D = [], [], []
    for sk in s:
        if sk == 0.0:
            pot = phi_a
        elif sk == 1.0:
            pot = phi_b
        else:
            u = inverse_legendre(p, (1.0 - sk) * ua + sk * ub, t)
            # the envelope only removes roundoff-level non-convexity
            pot = psh_envelope(u - model.u0, model)
        r = ding_mab(pot)
        pots.append(pot)
        E.append(r.E)
        D.append(r.Ding)
    return Geodesic(s, pots, np.array(E), np.array(D))


# ---------------------------------------------------------------------------
# automorphism probe


def noncoercive_probe(model: ModelSpace, shifts=(0.0, 1.0, 2.0, 4.0)) -> list[dict]:
    """J, Ding and Mab along translates of the KE potential."""
    if model.n != 1 or model.beta0 != model.beta_inf:
        raise ModelError("the probe needs a radial model with equal cone angles")
    rows = []
    for s in shifts:
        if abs(s) >= model.grid.T / 2:
            raise ModelError(f"shift {s} pushes the potential off the grid")
        phi = translate_potential(model, float(s))
        r = ding_mab(phi)
        rows.append({"shift": float(s), "J": functional_J(phi), "Ding": r.Ding, "Mab": r.Mab,
                     "tv_residual": ke_residual(phi)})
    return rows
