import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foliated_averaging.averaging import (
    AveragedField,
    ErgodicRate,
    averaged_field,
    delta_diagnostic,
    delta_running,
    fit_eta,
    leaf_average_quadrature,
    leaf_average_timeseries,
    solve_averaged_ode,
)
from foliated_averaging.errors import FitError, HorizonError, ParameterError
from foliated_averaging.geometry import Box
from foliated_averaging.io import read_csv
from foliated_averaging.sde import fast_step, rescaled_view, simulate_replicas
from foliated_averaging.systems import cylinder_system, sphere_system


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.6, 1.4), st.floats(-0.9, 0.9))
def test_constant_horizontal_push_averages_vanish(k1, k2, r, z):
    s = cylinder_system(k=(k1, k2, 0.0))
    v = np.array([r, z])
    for i in range(2):
        assert abs(leaf_average_quadrature(s, s.vertical_component(i), v)) < 1e-12


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_linear_push_average_is_half_radius(r):
    s = cylinder_system(perturbation="linear", r_max=3.0)
    q = leaf_average_quadrature(s, s.vertical_component(0), np.array([r, 0.0]))
    assert q == pytest.approx(r / 2, abs=1e-12)


def test_constant_function_averages_to_itself():
    for s, v in ((cylinder_system(), np.array([1.0, 0.0])), (sphere_system(), np.array([1.2]))):
        assert leaf_average_quadrature(s, lambda x: np.full(np.shape(x)[:-1], 3.25), v) == pytest.approx(3.25)


def test_sphere_averages():
    for kind, expect in (("radial", 1.2), ("linear", 0.4), ("constant", 0.0)):
        s = sphere_system(perturbation=kind)
        q = leaf_average_quadrature(s, s.vertical_component(0), np.array([1.2]))
        assert q == pytest.approx(expect, abs=1e-12)


def test_quadrature_table_matches_closed_form_and_lipschitz():
    s = cylinder_system(perturbation="linear", r_max=3.0)
    Q = averaged_field(s)
    mesh = np.stack(np.meshgrid(*Q.grid, indexing="ij"), axis=-1)
    np.testing.assert_allclose(Q.table, s.closed_form_average(mesh), atol=1e-12)
    assert Q.lipschitz_estimate == pytest.approx(0.5, abs=1e-10)
    # off-grid evaluation by interpolation, vector and batch shapes
    np.testing.assert_allclose(Q(np.array([1.234, 0.1])), [0.617, 0.0], atol=1e-12)
    assert Q(np.ones((4, 5, 2))).shape == (4, 5, 2)


def test_averaged_field_table_csv(tmp_path):
    s = sphere_system(perturbation="linear")
    Q = averaged_field(s, grid=8)
    Q.table_to_csv(tmp_path / "q.csv")
    header, data, _ = read_csv(tmp_path / "q.csv")
    assert header == ["v_grid", "Q1"]
    np.testing.assert_allclose(data[:, 1], data[:, 0] / 3, atol=1e-12)


def test_closed_form_source_and_errors():
    s = cylinder_system(perturbation="linear")
    Q = averaged_field(s, "closed_form")
    np.testing.assert_allclose(Q(np.array([1.0, 0.0])), [0.5, 0.0])
    with pytest.raises(ParameterError):
        averaged_field(s, "magic")
    with pytest.raises(ParameterError):
        averaged_field(cylinder_system(lambda1=0.0, lambda2=0.0), "closed_form")


def test_time_average_source_is_close_to_quadrature():
    s = cylinder_system(perturbation="linear", lambda1=1.0, lambda2=0.0)
    Q = averaged_field(s, "time_average", grid=4, horizon=100.0)
    mesh = np.stack(np.meshgrid(*Q.grid, indexing="ij"), axis=-1)
    np.testing.assert_allclose(Q.table, s.closed_form_average(mesh), atol=0.02)


def test_rotation_time_average_converges_like_one_over_t():
    s = cylinder_system(perturbation="linear", lambda1=1.0, lambda2=0.0)
    ta = leaf_average_timeseries(s, s.vertical_component(0), None, horizon=100.0)
    assert abs(ta.estimate[0] - 0.5) < 0.01


def test_brownian_time_average_converges_like_root_t():
    s = cylinder_system(perturbation="linear", lambda1=0.0, lambda2=1.0)
    g = s.vertical_component(0)
    ta = leaf_average_timeseries(s, g, None, horizon=400.0, replicas=64, seed=3)
    rate = fit_eta(ta.times, ta.errors(0.5)[..., 0])
    single = leaf_average_timeseries(s, g, None, horizon=400.0, seed=4)
    assert abs(single.estimate[0] - 0.5) <= 3 * rate.c / math.sqrt(400.0)


def test_constant_g_running_average_and_zero_eta():
    s = cylinder_system()
    ta = leaf_average_timeseries(s, lambda x: np.full(np.shape(x)[:-1], 2.0), None, horizon=10.0, replicas=3)
    assert np.all(ta.curves == 2.0)
    rate = fit_eta(ta.times, ta.errors(2.0)[..., 0])
    assert rate.model == "zero"
    assert rate(5.0) == 0.0


@pytest.mark.parametrize("lam,lo,hi", [((1.0, 0.0), 0.8, 1.2), ((0.0, 1.0), 0.35, 0.65)])
def test_eta_exponents(lam, lo, hi):
    s = cylinder_system(perturbation="linear", lambda1=lam[0], lambda2=lam[1])
    ta = leaf_average_timeseries(s, s.vertical_component(0), None, horizon=400.0, replicas=64, seed=7)
    rate = fit_eta(ta.times, ta.errors(0.5)[..., 0])
    assert rate.model == "power"
    assert lo <= rate.q <= hi


def test_ergodic_rate_validation():
    with pytest.raises(ParameterError):
        ErgodicRate("power", -1.0, 0.5)
    r = ErgodicRate("power", 2.0, 0.5)
    assert r(4.0) == pytest.approx(1.0)
    with pytest.raises(FitError):
        fit_eta(np.linspace(0, 1, 5), np.ones((2, 5)))


def test_averaged_ode_closed_forms():
    lin = cylinder_system(perturbation="linear", r_max=3.0)
    Q = averaged_field(lin, "closed_form")
    path = solve_averaged_ode(Q, np.array([1.0, 0.2]), 1.0, 1e-3)
    v1 = path.v[-1]
    assert abs(v1[0] - math.exp(0.5)) / math.exp(0.5) <= 1e-8
    assert v1[1] == 0.2

    const = cylinder_system(k=(1.0, 2.0, 0.0))
    path = solve_averaged_ode(averaged_field(const), np.array([1.0, 0.0]), 2.0, 1e-3)
    np.testing.assert_allclose(path.v, np.broadcast_to([1.0, 0.0], path.v.shape), atol=1e-12)

    vert = cylinder_system(perturbation="vertical", k=(0, 0, 0.5), z_min=-5, z_max=5)
    path = solve_averaged_ode(averaged_field(vert, "closed_form"), np.array([1.0, 0.0]), 2.0, 1e-3)
    np.testing.assert_allclose(path.v[:, 1], 0.5 * path.times, atol=1e-12)


def test_boundary_hit_times():
    lin = cylinder_system(perturbation="linear", r_max=3.0)
    Q = averaged_field(lin, "closed_form")
    path = solve_averaged_ode(Q, np.array([1.0, 0.0]), 5.0, 1e-3, lin.chart.vertical_domain, gammas=[0.25])
    assert path.T0 == pytest.approx(2 * math.log(3.0), abs=1e-9)
    assert path.T_gamma[0.25] == pytest.approx(2 * math.log(2.75), abs=1e-9)
    assert path.times[-1] == pytest.approx(path.T0)

    vert = cylinder_system(perturbation="vertical", k=(0, 0, 1.0))
    path = solve_averaged_ode(averaged_field(vert, "closed_form"), np.array([1.0, 0.0]), 5.0, 1e-3,
                              vert.chart.vertical_domain, gammas=[0.25])
    assert path.T0 == pytest.approx(1.0, abs=1e-9)
    assert path.T_gamma[0.25] == pytest.approx(0.75, abs=1e-9)


def test_averaged_path_csv(tmp_path):
    Q = AveragedField(lambda v: -v, Box((-2.0,), (2.0,)), "closed_form")
    path = solve_averaged_ode(Q, np.array([1.0]), 1.0, 0.01)
    assert path(1.0)[0] == pytest.approx(math.exp(-1.0), rel=1e-8)
    path.to_csv(tmp_path / "v.csv")
    header, data, _ = read_csv(tmp_path / "v.csv")
    assert header == ["t", "v1"]
    assert data.shape == (101, 2)


def _rescaled(system, eps, horizon, replicas=1, seed=0):
    dt, steps = fast_step(eps, horizon)
    batch = simulate_replicas(system.with_epsilon(eps), None, dt, steps, seed, replicas, "exact_leaf")
    return rescaled_view(batch, eps, horizon)


def test_delta_trivial_cases():
    s = cylinder_system(perturbation="linear", r_max=3.0)
    rv = _rescaled(s, 0.1, 1.0, replicas=4)
    const = lambda x: np.full(np.shape(x)[:-1], 1.5)
    np.testing.assert_array_equal(delta_diagnostic(rv, const, lambda v: np.full(np.shape(v)[:-1], 1.5), 0.0, 1.0), 0.0)
    Qg = averaged_field(s).component(0)
    np.testing.assert_array_equal(delta_diagnostic(rv, s.vertical_component(0), Qg, 0.3, 0.0), 0.0)
    u, vals = delta_running(rv, s.vertical_component(0), Qg, 0.0, 1.0)
    assert u[0] == 0.0 and u[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(vals[:, -1], delta_diagnostic(rv, s.vertical_component(0), Qg, 0.0, 1.0))
    with pytest.raises(HorizonError):
        delta_diagnostic(rv, const, const, 0.5, 1.0)


def test_delta_shrinks_with_epsilon():
    from foliated_averaging.experiments import estimate_delta

    s = cylinder_system(perturbation="linear", r_max=3.0)
    table = estimate_delta(s, [0.2, 0.05], t=1.0, replicas=200, seed=1)
    big, small = (r.estimate for r in table.rows)
    assert small.value < big.value
    assert small.ci_high < big.ci_low
