import csv

import numpy as np
import pytest

from fanolab.dynamics import (TRACE_HEADER, dissipation_defect, geodesic, interior_c2, krf_run,
                              noncoercive_probe, ricci_iterate)
from fanolab.errors import ModelError
from fanolab.ma_solver import closed_form_ke, ke_residual
from fanolab.model_space import Potential, make_radial_model
from fanolab.sampling import sample_potential, translate_potential


@pytest.fixture(scope="module")
def small_round():
    return make_radial_model(1.0, 1.0, T=6, N=32)


def test_iteration_from_ke_stops_at_once(round_model):
    tr = ricci_iterate(round_model.zero(), max_iter=5)
    assert tr.converged_at == 0
    assert np.abs(tr.final.values).max() < 1e-12


def test_iteration_converges_on_football(football):
    phi0 = sample_potential(football, 3, 0, even=True)
    tr = ricci_iterate(phi0, max_iter=50)
    assert tr.status == "ok" and tr.converged_at is not None
    assert not tr.flagged("chain_fail") and not tr.flagged("mab_increase")
    mab = tr.column("Mab")
    assert np.all(np.diff(mab) <= 1e-8)
    assert np.abs(tr.final.values - closed_form_ke(football).values).max() < 1e-3


def test_iteration_on_unequal_cones_fails_cleanly(unequal):
    tr = ricci_iterate(unequal.zero(), max_iter=50)
    assert tr.status == "failed" or tr.converged_at is None
    assert tr.records


def test_trace_csv(tmp_path, football):
    tr = ricci_iterate(sample_potential(football, 3, 1, even=True), max_iter=3)
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == TRACE_HEADER
    assert len(rows) == len(tr.records) + 1
    steps = [int(r[0]) for r in rows[1:]]
    assert steps == sorted(set(steps))


def test_interior_c2(round_model):
    c2 = interior_c2(round_model.zero())
    assert 0 < c2 < 1.0
    with pytest.raises(ModelError):
        interior_c2(round_model.zero(), margin=20)


def test_flow_monotone_and_converges(small_round):
    phi0 = sample_potential(small_round, 2, 1, kind="smooth", even=True)
    tr = krf_run(phi0, dt=0.01, t_end=20.0, record_every=100)
    assert tr.status == "ok"
    assert not tr.flagged("ding_increase") and not tr.flagged("mab_increase")
    assert tr.records[-1]["tv_residual"] <= 1e-4
    assert dissipation_defect(tr) <= 0.01


def test_flow_guard_with_fixed_substeps(small_round):
    tr = krf_run(small_round.zero(), dt=0.5, t_end=1.0, substeps=1)
    assert tr.status == "failed" and "CFL" in tr.message


def test_flow_backward_scheme(football):
    phi0 = sample_potential(football, 2, 0, even=True)
    tr = krf_run(phi0, dt=0.1, t_end=10.0, scheme="backward", record_every=10)
    assert tr.status == "ok"
    assert not tr.flagged("ding_increase")
    assert tr.records[-1]["tv_residual"] < 1e-6


def test_flow_rejects_bad_arguments(small_round, product):
    with pytest.raises(ModelError):
        krf_run(small_round.zero(), scheme="leapfrog")
    with pytest.raises(ModelError):
        krf_run(small_round.zero(), dt=-1)
    with pytest.raises(ModelError):
        krf_run(product.zero())


def test_geodesic_between_equal_endpoints(round_model):
    p = sample_potential(round_model, 1, 0)
    g = geodesic(p, p, 4)
    for q in g.potentials:
        assert np.abs(q.values - p.values).max() < 1e-12
    assert np.ptp(g.E) < 1e-12


def test_geodesic_to_a_constant(round_model):
    a = round_model.zero()
    b = Potential(round_model, np.full(round_model.grid.size, -1.0))
    g = geodesic(a, b, 4)
    for s, q in zip(g.s, g.potentials):
        assert np.abs(q.values + s).max() < 1e-12
    assert g.affinity_defect() < 1e-12


def test_geodesic_signature_properties():
    m = make_radial_model(1.0, 1.0, T=12, N=4096)
    for i in range(3):
        g = geodesic(sample_potential(m, 17, 2 * i), sample_potential(m, 17, 2 * i + 1), 10)
        assert g.affinity_defect() <= 1e-4 * max(1.0, np.ptp(g.E))
        assert g.convexity_defect() <= 1e-8


def test_ke_orbit_geodesic_stays_ke():
    m = make_radial_model(1.0, 1.0, T=24, N=4096)
    g = geodesic(translate_potential(m, -1.0), translate_potential(m, 1.0), 8)
    assert max(ke_residual(p) for p in g.potentials) <= 1e-4


def test_noncoercive_probe():
    m = make_radial_model(1.0, 1.0, T=24, N=4096)
    rows = noncoercive_probe(m, (0.0, 1.0, 2.0, 4.0))
    J = [r["J"] for r in rows]
    assert all(b > a for a, b in zip(J, J[1:]))
    assert np.ptp([r["Ding"] for r in rows]) <= 1e-3
    assert np.ptp([r["Mab"] for r in rows]) <= 1e-3
    with pytest.raises(ModelError):
        noncoercive_probe(m, (13.0,))


def test_probe_needs_equal_cones(unequal):
    with pytest.raises(ModelError):
        noncoercive_probe(unequal)
