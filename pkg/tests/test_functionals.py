import math

import numpy as np
import pytest

from fanolab.errors import ModelError, SolverError
from fanolab.functionals import (OrliczWeight, alpha_estimate, ding_mab, dual_energy,
                                 dual_energy_sup_defect, energy, energy_by_mixed,
                                 energy_difference_bis, entropy_legendre_check, entropy_tv,
                                 family_bounded, functional_I, functional_I_gradient, functional_J,
                                 functional_L, gibbs_weights, holder_young_check, luxembourg_norm,
                                 ma_measure, mixed_measure, moser_constant, relative_entropy)
from fanolab.ma_solver import closed_form_ke
from fanolab.model_space import Potential, make_radial_model
from fanolab.sampling import sample_potential

# quadrature values for the beta = 1/2 football, KE potential against the
# reference u0 = log(1 + e^t): E = 1/2 - log 2, J = pi/2 - 3/2
FOOTBALL_KE_E = 0.5 - math.log(2.0)
FOOTBALL_KE_J = math.pi / 2 - 1.5
FOOTBALL_KE_DING = -0.04841729471054514


def _rel(a, b):
    return abs(a - b) / max(1.0, abs(a), abs(b))


def test_energy_normalization_and_constants(any_model):
    assert energy(any_model.zero()) == 0.0
    if any_model.n == 1:
        c = Potential(any_model, np.full(any_model.grid.size, -0.7))
        assert energy(c) == pytest.approx(-0.7, abs=1e-14)


def test_energy_two_evaluations_agree(any_model):
    for i in range(10):
        phi = sample_potential(any_model, 11, 2 * i)
        psi = sample_potential(any_model, 11, 2 * i + 1)
        assert _rel(energy(phi), energy_by_mixed(phi)) < 1e-10
        assert _rel(energy(phi) - energy(psi), energy_difference_bis(phi, psi)) < 1e-10


def test_energy_derivative_is_ma(any_model):
    phi = sample_potential(any_model, 4, 0)
    rng = np.random.default_rng(0)
    d = np.zeros(any_model.grid.size)
    d[any_model.free] = rng.normal(size=any_model.free.size) * 1e-5
    m = any_model
    fd = (m.energy_value(phi.values + d) - m.energy_value(phi.values - d)) / 2
    assert fd == pytest.approx(float(d @ m.ma_weights(phi.values)), rel=1e-6, abs=1e-16)


def test_mixed_measure_endpoints(any_model):
    phi = sample_potential(any_model, 6, 0)
    psi = sample_potential(any_model, 6, 1)
    n = any_model.n
    assert np.allclose(mixed_measure(phi, psi, n).weights, any_model.ma_weights(phi.values))
    assert np.allclose(mixed_measure(phi, psi, 0).weights, any_model.ma_weights(psi.values))
    for j in range(n + 1):
        assert mixed_measure(phi, psi, j).total == pytest.approx(1.0, abs=1e-12)


def test_I_by_gradients(any_model):
    for i in range(5):
        phi = sample_potential(any_model, 12, 2 * i)
        psi = sample_potential(any_model, 12, 2 * i + 1)
        assert _rel(functional_I(phi, psi), functional_I_gradient(phi, psi)) < 1e-10


def test_J_is_half_I_in_one_dimension(round_model):
    phi = sample_potential(round_model, 3, 7)
    assert functional_J(phi) == pytest.approx(0.5 * functional_I(phi, round_model.zero()), abs=1e-13)


def test_ma_measure_clamps_roundoff_negatives(round_model):
    # envelope samples have flat stretches where MA is zero up to roundoff
    phi = sample_potential(round_model, 3, 0)
    mu = ma_measure(phi)
    assert mu.weights.min() >= 0.0
    assert mu.defect < 1e-12
    assert mu.is_probability()


def test_ding_mab_identities(any_model):
    for i in range(10):
        r = ding_mab(sample_potential(any_model, 21, i))
        assert r.residual_max < 1e-10
        assert r.Mab >= r.Ding - 1e-12


def test_functional_report_serializes(round_model):
    r = ding_mab(round_model.zero())
    js = r.to_json()
    assert set(js) >= {"E", "J", "Ding", "Mab", "H", "residuals"}
    assert len(r.row()) > 5


def test_football_ke_functionals_converge_to_quadrature():
    m = make_radial_model(0.5, 0.5, T=20, N=4096)
    r = ding_mab(closed_form_ke(m))
    # the closed form is sup-normalized, the quadrature potential as well
    assert r.E == pytest.approx(FOOTBALL_KE_E, abs=1e-5)
    assert r.J == pytest.approx(FOOTBALL_KE_J, abs=1e-5)
    assert r.Ding == pytest.approx(FOOTBALL_KE_DING, abs=1e-5)


def test_dual_energy_matches_I_minus_J(any_model):
    for i in range(5):
        phi = sample_potential(any_model, 8, i)
        mu = ma_measure(phi)
        estar = dual_energy(mu, phi)
        I0 = functional_I(phi, any_model.zero())
        assert _rel(estar, I0 - functional_J(phi)) < 1e-10


def test_dual_energy_solves_when_needed(round_model):
    phi = sample_potential(round_model, 8, 1)
    mu = ma_measure(phi)
    assert dual_energy(mu) == pytest.approx(dual_energy(mu, phi), abs=1e-10)
    # E* is the sup of E(psi) - <psi, mu>
    others = [sample_potential(round_model, 8, k) for k in range(2, 30)]
    assert dual_energy_sup_defect(mu, dual_energy(mu, phi), others) <= 1e-12


def test_dual_energy_rejects_wrong_calibration(round_model):
    mu = ma_measure(sample_potential(round_model, 8, 1))
    with pytest.raises(SolverError):
        dual_energy(mu, sample_potential(round_model, 8, 2))


def test_L_and_gibbs(round_model):
    assert functional_L(round_model.zero()) == pytest.approx(0.0, abs=1e-15)
    phi = sample_potential(round_model, 2, 2)
    g = gibbs_weights(phi.values, round_model.mu0_weights)
    assert g.sum() == pytest.approx(1.0)
    c = Potential(round_model, phi.values + 3.0)
    assert functional_L(c) == pytest.approx(functional_L(phi) + 3.0, abs=1e-12)


def test_entropy_and_tv_convention():
    mu = np.array([0.5, 0.5])
    nu = np.array([1.0, 0.0])
    r = entropy_tv(nu, mu)
    assert r.H == pytest.approx(math.log(2.0))
    assert r.tv == pytest.approx(0.5)
    assert r.l1 == pytest.approx(1.0)
    assert r.H >= 2 * r.tv ** 2
    assert relative_entropy(mu, nu) == math.inf


def test_entropy_tv_rejects_mismatched_grids(round_model, football):
    with pytest.raises(ModelError):
        entropy_tv(np.ones(3) / 3, np.ones(4) / 4)


def test_entropy_legendre_bound(round_model):
    g = np.sin(round_model.axis)
    worst, defect = entropy_legendre_check(g, round_model.mu0_weights, samples=100)
    assert worst >= -1e-12
    assert defect < 1e-12


def test_alpha_bracket_contains_half(round_model, football):
    for m in (round_model, football):
        lo, hi = alpha_estimate(m)
        assert lo <= 0.5 <= hi
        assert hi - lo <= 0.01


def test_family_bounded_threshold(round_model):
    assert family_bounded(round_model, 0.4)
    assert not family_bounded(round_model, 0.6)


def test_moser_constant(round_model):
    C = moser_constant(round_model, 0.25, samples=50, seed=0)
    assert C >= 0.0
    with pytest.raises(ModelError):
        moser_constant(round_model, 0.7, samples=5)


def test_orlicz_weights_and_conjugates():
    w = OrliczWeight("chi_entropy")
    assert w.conjugate() == OrliczWeight("chi_star_exp")
    assert OrliczWeight("power_p", 3.0).conjugate().param == pytest.approx(1.5)
    assert float(w(0.0)) == 0.0
    # Young: w(s) + w*(r) >= s r
    s, r = np.meshgrid(np.linspace(0, 3, 31), np.linspace(0, 3, 31))
    assert np.all(w(s) + w.conjugate()(r) >= s * r - 1e-12)
    with pytest.raises(ModelError):
        OrliczWeight("nope")
    with pytest.raises(ModelError):
        OrliczWeight("power_p", 1.0)


def test_luxembourg_norm_of_power_weight():
    # for w(s) = s^p / p the norm is p^(-1/p) times the L^p norm
    mu = np.full(4, 0.25)
    f = np.array([1.0, 2.0, 0.5, 0.0])
    p = 3.0
    lp = (mu @ f ** p) ** (1 / p)
    assert luxembourg_norm(f, OrliczWeight("power_p", p), mu) == pytest.approx(lp * p ** (-1 / p), rel=1e-12)
    assert luxembourg_norm(np.zeros(4), OrliczWeight("power_p", p), mu) == 0.0


def test_holder_young_on_random_data():
    rng = np.random.default_rng(3)
    for k in range(50):
        mu = rng.dirichlet(np.ones(20))
        f, g = np.abs(rng.normal(size=20)), np.abs(rng.standard_cauchy(20))
        for w in (OrliczWeight("chi_entropy"), OrliczWeight("chi_star_exp"), OrliczWeight("power_p", 2.5)):
            assert holder_young_check(f, g, mu, w) >= -1e-9
