"""Seeded verification suites for the inequality chains.

Each suite walks a deterministic stream of samples, records a signed slack
per check (negative means violated) and keeps the worst one together with
the (seed, index) address of the sample that produced it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .functionals import (OrliczWeight, alpha_estimate, entropy_legendre_check, entropy_tv,
                          functional_I, functional_J, holder_young_check, log_laplace,
                          moser_constant, relative_entropy)
from .ma_solver import ke_residual
from .model_space import ModelSpace, Potential, make_radial_model, psh_envelope
from .sampling import sample_potential, sample_rng

CSV_HEADER = "suite,seed,n_samples,worst_slack,worst_sample"
SLACK_TOL = 1e-9


@dataclass
class VerificationReport:
    suite: str
    seed: int
    n_samples: int = 0
    worst_slack: float = math.inf
    worst_sample: str = ""
    constants: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    skipped: int = 0
    notes: list = field(default_factory=list)

    def record(self, check: str, slack: float, index) -> None:
        slack = float(slack)
        if math.isnan(slack):
            slack = -math.inf
        if slack < self.checks.get(check, (math.inf, ""))[0]:
            self.checks[check] = (slack, f"{self.seed}:{index}")
        if slack < self.worst_slack:
            self.worst_slack = slack
            self.worst_sample = f"{self.seed}:{index}"

    @property
    def passed(self) -> bool:
        return self.worst_slack >= -SLACK_TOL

    def to_json(self) -> dict:
        return {"suite": self.suite, "seed": self.seed, "n_samples": self.n_samples,
                "worst_slack": self.worst_slack, "worst_sample": self.worst_sample,
                "constants": dict(self.constants),
                "checks": {k: {"worst_slack": v[0], "worst_sample": v[1]} for k, v in self.checks.items()},
                "skipped": self.skipped, "notes": list(self.notes)}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)

    def csv_line(self) -> str:
        return f"{self.suite},{self.seed},{self.n_samples},{self.worst_slack:.17g},{self.worst_sample}"


# ---------------------------------------------------------------------------
# energy functionals


def verify_ij_sandwich(model: ModelSpace, samples: int = 1000, seed: int = 0) -> VerificationReport:
    """n^-1 J_phi(psi) <= J_psi(phi) <= I(phi, psi) <= (n+1) J_psi(phi), plus
    n^-1 E*(MA(phi)) <= J(phi) <= n E*(MA(phi)) and I, J >= 0."""
    n = model.n
    rep = VerificationReport("ij_sandwich", seed)
    for i in range(samples):
        phi = sample_potential(model, seed, 2 * i)
        psi = sample_potential(model, seed, 2 * i + 1)
        I = functional_I(phi, psi)
        j_pp = functional_J(phi, psi)
        j_qp = functional_J(psi, phi)
        rep.record("J_lower", j_pp - j_qp / n, i)
        rep.record("J_le_I", I - j_pp, i)
        rep.record("I_le_J", (n + 1) * j_pp - I, i)
        rep.record("I_nonneg", I, i)
        J0 = functional_J(phi)
        ma = model.ma_weights(phi.values)
        estar = model.energy_value(phi.values) - float(phi.values @ ma)
        rep.record("compen_lower", J0 - estar / n, i)
        rep.record("compen_upper", n * estar - J0, i)
        rep.record("J_nonneg", J0, i)
        rep.n_samples += 1
    return rep


def verify_quasi_triangle(model: ModelSpace, samples: int = 2000, seed: int = 0,
                          family: str = "mixed") -> VerificationReport:
    """Empirical quasi-triangle constant with the per-triple gradient chain.

    `family` is 'random', 'midpoint' (phi3 the midpoint of phi1, phi2) or
    'mixed' (every fourth triple is a midpoint triple).
    """
    if family not in ("random", "midpoint", "mixed"):
        raise ModelError(f"unknown triple family {family!r}")
    n = model.n
    rep = VerificationReport("quasi_triangle", seed)
    ratio_min = math.inf
    for i in range(samples):
        p1 = sample_potential(model, seed, 3 * i)
        p2 = sample_potential(model, seed, 3 * i + 1)
        mid = family == "midpoint" or (family == "mixed" and i % 4 == 3)
        if mid:
            p3 = Potential(model, 0.5 * (p1.values + p2.values), "none")
        else:
            p3 = sample_potential(model, seed, 3 * i + 2)
        I12 = functional_I(p1, p2)
        if I12 < 1e-12:
            rep.skipped += 1
            continue
        I13 = functional_I(p1, p3)
        I32 = functional_I(p3, p2)
        ratio_min = min(ratio_min, (I13 + I32) / I12)
        u = p1.values - p2.values
        v = Potential(model, 0.5 * (p1.values + p2.values), "none")
        b0 = model.grad_norm(v.values, u)
        rep.record("compareI_lower", I12 - b0, i)
        rep.record("compareI_upper", 2 ** (n - 1) * b0 - I12, i)
        if n >= 2:
            b1 = model.grad_norm(p3.values, u)
            Iv = functional_I(p3, v)
            rep.record("bp_recursion", b0 + 4.0 * math.sqrt(max(b0, 0.0) * max(Iv, 0.0)) - b1, i)
        if n == 1:
            # the Dirichlet picture gives the half-triangle constant
            rep.record("c1_half", (I13 + I32) - 0.5 * I12, i)
        rep.n_samples += 1
    rep.constants["c_empirical"] = ratio_min
    if n >= 2:
        rep.notes.append("c_2 is reported, not asserted against a constant")
    return rep


def quasi_triangle_monotone(model: ModelSpace, seed: int, sizes=(10, 20, 40, 80)) -> tuple[list, bool]:
    """Empirical c_n over nested sample sets; it can only decrease."""
    vals = [verify_quasi_triangle(model, s, seed).constants["c_empirical"] for s in sorted(sizes)]
    return vals, all(b <= a for a, b in zip(vals, vals[1:]))


def verify_h_iterate(H: float = 1.0, t_samples: int = 10000, p_max: int = 3,
                     seed: int = 0) -> VerificationReport:
    """h(t) = t + sqrt(H t): h^p(t) <= 4 H^(1 - 2^-p) t^(2^-p) for t <= 2^(-2^(p+1)) H."""
    if not H > 0:
        raise ModelError("H must be positive")
    rep = VerificationReport("h_iterate", seed)
    rep.constants["H"] = H

    def h(t):
        return t + np.sqrt(H * t)

    rng = np.random.default_rng(seed)
    for p in range(p_max + 1):
        top = math.log(H) - 2 ** (p + 1) * math.log(2.0)
        t = np.exp(rng.uniform(top - 40.0, top, t_samples))
        x = t.copy()
        for _ in range(p):
            x = h(x)
        bound = 4.0 * H ** (1.0 - 2.0 ** -p) * t ** (2.0 ** -p)
        # compare in log form so tiny t keep their resolution
        slack = np.log(bound) - np.log(x)
        k = int(np.argmin(slack))
        rep.record(f"hp_{p}", slack[k], f"p{p}/{k}")
        ts = np.sort(t)
        rep.record("monotone", float(np.diff(h(ts)).min()), f"p{p}")
        rep.n_samples += t_samples
    return rep


# ---------------------------------------------------------------------------
# entropy


def _random_measure(model: ModelSpace, rng: np.random.Generator, k: int) -> np.ndarray:
    mu0 = model.mu0_weights
    pos = np.flatnonzero(mu0 > 0)
    nu = np.zeros_like(mu0)
    if k % 3 == 0:
        nu[pos] = mu0[pos] * np.exp(rng.normal(0.0, rng.uniform(0.1, 3.0), pos.size))
    elif k % 3 == 1:
        nu[pos] = rng.dirichlet(np.full(pos.size, rng.uniform(0.05, 2.0)))
    else:
        pick = rng.choice(pos, size=int(rng.integers(1, 8)), replace=False)
        nu[pick] = rng.dirichlet(np.ones(pick.size))
    return nu / nu.sum()


def verify_measure_inequalities(model: ModelSpace, samples: int = 1000, seed: int = 0) -> VerificationReport:
    """Pinsker, the entropy Legendre bound and Hoelder-Young on random data."""
    rep = VerificationReport("measure_inequalities", seed)
    mu0 = model.mu0_weights
    weights = [OrliczWeight("chi_entropy"), OrliczWeight("chi_star_exp"), OrliczWeight("power_p", 3.0)]
    for i in range(samples):
        rng = sample_rng(seed, i)
        nu = _random_measure(model, rng, i)
        et = entropy_tv(nu, mu0)
        rep.record("pinsker", et.H - 2.0 * et.tv ** 2, i)
        g = rng.normal(0.0, rng.uniform(0.1, 5.0), mu0.size)
        worst, defect = entropy_legendre_check(g, mu0, samples=4, seed=i)
        rep.record("legendre_bound", worst, i)
        rep.record("legendre_gibbs_equality", -defect, i)
        f = np.abs(rng.standard_t(3, mu0.size))
        gg = np.abs(rng.normal(0.0, 1.0, mu0.size))
        rep.record("holder_young", holder_young_check(f, gg, mu0, weights[i % 3]), i)
        rep.n_samples += 1
    return rep


def verify_entropy_energy(model: ModelSpace, alpha: float, samples: int = 500, seed: int = 0,
                          moser_samples: int | None = None) -> VerificationReport:
    """H(MA(phi)|mu0) >= alpha(<phi, MA(0)> - <phi, MA(phi)>) - C_alpha >= alpha E* - C_alpha."""
    if model.n != 1:
        raise ModelError("the entropy-energy suite runs on radial models")
    lo, _ = alpha_estimate(model)
    if not 0 < alpha < lo:
        raise ModelError(f"alpha={alpha} must lie strictly below the alpha bracket ({lo})")
    C = moser_constant(model, alpha, samples if moser_samples is None else moser_samples, seed)
    rep = VerificationReport("entropy_energy", seed, constants={"alpha": alpha, "C_alpha": C})
    mu0 = model.mu0_weights
    ma0 = model.ma0
    n = model.n
    crit = n / (n + 1)
    for i in range(samples):
        phi = sample_potential(model, seed, i)
        ma = model.ma_weights(phi.values)
        H = relative_entropy(np.maximum(ma, 0.0), mu0)
        if math.isinf(H):
            rep.skipped += 1
            continue
        v = phi.values
        estar = model.energy_value(v) - float(v @ ma)
        rep.record("hmin", H - alpha * float(v @ ma0 - v @ ma) + C, i)
        rep.record("estar", H - alpha * estar + C, i)
        if alpha > crit:
            I = float(v @ (ma0 - ma))
            rep.record("coercive_branch", H - estar - (alpha - crit) * I + C, i)
        rep.n_samples += 1
    if alpha <= crit:
        rep.notes.append(f"alpha <= n/(n+1) = {crit:.4g}: coercive branch vacuous")
    return rep


# ---------------------------------------------------------------------------
# coercivity transfer


def divisor_density(model: ModelSpace, kappa: float = 0.5) -> np.ndarray:
    """rho = kappa (t - 2 log(1 + e^t)), a log-singular weight at both ends."""
    t = model.axis
    return kappa * (t - 2.0 * np.logaddexp(0.0, t))


def verify_coercivity_transfer(model: ModelSpace, lam: float = 0.5, delta: float = 0.3,
                               samples: int = 300, seed: int = 0, kappa: float = 0.5,
                               q: float = 1.9, phi_ke: Potential | None = None) -> VerificationReport:
    """Moser-Trudinger transfer from a base model with Ding bounded below to
    the scaled pair with reference e^{-(1-lam) rho} mu0, psi = lam phi.

    Checks per sample: (a) E_lam(psi) = lam E(phi); (b) the L^{1/lam} bound;
    (c) the Hoelder step to L^p(mu_lam), p = (1-delta)/lam; (d) the
    resulting Ding_lam >= eps^2 J_lam - C3 with eps = p - 1.
    """
    if model.n != 1:
        raise ModelError("the transfer suite runs on radial models")
    if not 0 < lam < 1:
        raise ModelError("lambda must lie in (0, 1)")
    if not 1 < q < 1 / kappa:
        raise ModelError(f"q={q} must lie in (1, {1 / kappa:g}) for e^-rho to be in L^q")
    if not (1 - lam) / q < delta < 1 - lam:
        raise ModelError(f"delta={delta} outside ({(1 - lam) / q:.4g}, {1 - lam:.4g})")
    p = (1.0 - delta) / lam
    if not p > 1:
        raise ModelError("p = (1 - delta)/lambda must exceed 1")
    if (1 - lam) * kappa / delta >= 1:
        raise ModelError("scaled pair is not klt for this delta")
    eps = p - 1.0
    if phi_ke is None:
        from .ma_solver import ke_solve
        phi_ke, _ = ke_solve(model)
    if ke_residual(phi_ke) > 1e-8:
        raise ModelError("the KE potential is not certified")
    r_ke = phi_ke.values
    ding_ke = (-log_laplace(-r_ke, model.mu0_weights) - model.energy_value(r_ke))
    logA = -ding_ke                       # Ding >= Ding(phi_KE) certifies A
    scaled = make_radial_model(lam * model.beta0, lam * model.beta_inf, model.grid.T, model.grid.N)
    mu0 = model.mu0_weights
    rho = divisor_density(model, kappa)
    logZ = log_laplace(-(1 - lam) * rho, mu0)
    mu_lam = np.exp(-(1 - lam) * rho - logZ) * mu0
    logB = log_laplace(-(1 - lam) * rho / delta, mu0)
    logC = (delta * logB - logZ) / p
    logA2 = lam * logA + logC
    ma0 = scaled.ma0
    pots = [sample_potential(model, seed, i) for i in range(samples)]
    C2 = max(log_laplace(-eps * lam * f.values, mu_lam) + eps * lam * float(f.values @ ma0) for f in pots)
    C2 = max(C2, 0.0)
    C3 = (1 - eps ** 2) * logA2 + eps * C2
    rep = VerificationReport("coercivity_transfer", seed, constants={
        "lambda": lam, "delta": delta, "kappa": kappa, "q": q, "p": p, "eps": eps,
        "log_A": logA, "log_B": logB, "log_Z": logZ, "log_A_prime": logA2, "C2": C2, "C3": C3})
    for i, phi in enumerate(pots):
        v = phi.values
        psi = lam * v
        E = model.energy_value(v)
        E_lam = scaled.energy_value(psi)
        rep.record("scaling", 1e-9 * max(1.0, abs(E)) - abs(E_lam - lam * E), i)
        log_l1 = log_laplace(-v, mu0)             # lam * log_l1 = log ||e^-psi||_{L^{1/lam}(mu0)}
        rep.record("moser_base", lam * logA - E_lam - lam * log_l1, i)
        log_lp = log_laplace(-p * psi, mu_lam) / p
        rep.record("holder", logC + lam * log_l1 - log_lp, i)
        rep.record("moser_scaled", logA2 - E_lam - log_lp, i)
        ding_lam = -log_laplace(-psi, mu_lam) - E_lam
        J_lam = float(psi @ ma0) - E_lam
        rep.record("ding_coercive", ding_lam - eps ** 2 * J_lam + C3, i)
        rep.n_samples += 1
    return rep


# ---------------------------------------------------------------------------
# variational characterization


def verify_varke_min(model: ModelSpace, phi_ke: Potential, samples: int = 500, seed: int = 0,
                     dt: float = 1e-4) -> VerificationReport:
    """KE minimizes Ding and Mabuchi; E o P has derivative <v, MA(P(phi))>."""
    from .functionals import ding_mab
    if ke_residual(phi_ke) > 1e-8:
        raise ModelError("phi_KE is not certified by its KE residual")
    ref = ding_mab(phi_ke)
    rep = VerificationReport("varke_min", seed, constants={"Ding_KE": ref.Ding, "Mab_KE": ref.Mab})
    worst_fd = 0.0
    for i in range(samples):
        phi = sample_potential(model, seed, i)
        r = ding_mab(phi)
        rep.record("ding_min", r.Ding - ref.Ding + 1e-8, i)
        if not math.isnan(r.Mab):
            rep.record("mab_min", r.Mab - ref.Mab + 1e-8, i)
        if model.n == 1:
            rng = sample_rng(seed, 10 ** 6 + i)
            c, w = rng.uniform(-0.5, 0.5) * model.grid.T, rng.uniform(0.5, 3.0)
            t = model.axis
            vdir = rng.normal() * (np.tanh((t - c + w) * 2) - np.tanh((t - c - w) * 2)) / 2
            env = psh_envelope(phi.values, model)
            Ep = model.energy_value(psh_envelope(phi.values + dt * vdir, model).values)
            Em = model.energy_value(psh_envelope(phi.values - dt * vdir, model).values)
            fd = (Ep - Em) / (2 * dt)
            exact = float(vdir @ model.ma_weights(env.values))
            worst_fd = max(worst_fd, abs(fd - exact))
        rep.n_samples += 1
    rep.constants["envelope_derivative_error"] = worst_fd
    return rep


SUITES = ("ij_sandwich", "quasi_triangle", "h_iterate", "measure_inequalities",
          "entropy_energy", "coercivity_transfer", "varke_min")


def run_suite(name: str, model: ModelSpace, samples: int, seed: int, **kw) -> VerificationReport:
    """Dispatch used by the command line."""
    if name == "ij_sandwich":
        return verify_ij_sandwich(model, samples, seed)
    if name == "quasi_triangle":
        return verify_quasi_triangle(model, samples, seed)
    if name == "h_iterate":
        return verify_h_iterate(kw.get("H", 1.0), samples, kw.get("p_max", 3), seed)
    if name == "measure_inequalities":
        return verify_measure_inequalities(model, samples, seed)
    if name == "entropy_energy":
        return verify_entropy_energy(model, kw.get("alpha", 0.25), samples, seed)
    if name == "coercivity_transfer":
        return verify_coercivity_transfer(model, kw.get("lam", 0.5), kw.get("delta", 0.3), samples, seed)
    if name == "varke_min":
        from .ma_solver import ke_solve
        phi, _ = ke_solve(model)
        return verify_varke_min(model, phi, samples, seed)
    raise ModelError(f"unknown suite {name!r}")
