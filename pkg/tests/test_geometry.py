import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foliated_averaging.errors import DomainError, FoliationViolation, JacobianMissing, ParameterError
from foliated_averaging.geometry import (
    Box,
    CylinderChart,
    LineChart,
    SphereChart,
    VectorField,
    check_dpi,
    check_jacobian,
    check_roundtrip,
    constant_field,
    decompose_vector,
    linear_field,
    verify_foliated,
    vertical_projection,
)
from foliated_averaging.systems import ROTATION_XY, cylinder_system, sample_points, sphere_system


def test_box_distance_and_contains():
    b = Box((0.5, -1.0), (1.5, 1.0))
    assert b.contains(np.array([1.0, 0.0]))
    assert not b.contains(np.array([1.5, 0.0]))
    assert b.distance_to_boundary(np.array([1.0, 0.2])) == pytest.approx(0.5)
    assert b.signed_distance(np.array([2.0, 0.0])) == pytest.approx(-0.5)
    with pytest.raises(ParameterError):
        Box((1.0,), (0.0,))


def test_cylinder_projection_examples():
    c = CylinderChart(0.5, 3.0, -1.0, 6.0)
    np.testing.assert_allclose(vertical_projection(c, [1.0, 0.0, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(vertical_projection(c, [0.0, 2.0, 5.0]), [2.0, 5.0])


def test_sphere_projection_example():
    s = SphereChart(1.0, 6.0)
    np.testing.assert_allclose(vertical_projection(s, [3.0, 4.0, 0.0]), [5.0])


def test_projection_outside_domain_raises():
    c = CylinderChart()
    with pytest.raises(DomainError) as info:
        vertical_projection(c, [3.0, 0.0, 0.0])
    np.testing.assert_allclose(info.value.point, [3.0, 0.0, 0.0])
    with pytest.raises(DomainError):
        vertical_projection(c, [np.nan, 0.0, 0.0])
    with pytest.raises(DomainError):
        vertical_projection(c, [1.0, 0.0])


def test_decompose_vertical_constant():
    c = CylinderChart()
    h, v = decompose_vector(c, [1.0, 0.0, 0.0], [0.0, 0.0, 2.5])
    np.testing.assert_allclose(h, 0.0, atol=1e-15)
    np.testing.assert_allclose(v[1:], [0.0, 2.5])


def test_decompose_radial_at_angle_zero():
    c = CylinderChart()
    h, v = decompose_vector(c, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    assert v[1] == pytest.approx(1.0)
    assert h[0] == pytest.approx(0.0)


def test_decompose_at_quarter_turn():
    c = CylinderChart()
    p = np.array([0.0, 1.0, 0.0])
    K = np.array([1.0, 0.0, 0.0])
    h, v = decompose_vector(c, p, K)
    assert v[1] == pytest.approx(0.0, abs=1e-15)
    assert h[0] == pytest.approx(-1.0)
    # finite differences of r along K
    eps = 1e-6
    fd = (np.hypot(*(p + eps * K)[:2]) - np.hypot(*(p - eps * K)[:2])) / (2 * eps)
    assert fd == pytest.approx(v[1], abs=1e-9)


cyl_points = st.tuples(
    st.floats(-np.pi, np.pi), st.floats(0.55, 1.45), st.floats(-0.95, 0.95)
).map(lambda t: np.array([t[1] * np.cos(t[0]), t[1] * np.sin(t[0]), t[2]]))
vectors = st.lists(st.floats(-3, 3), min_size=3, max_size=3).map(np.array)


@given(cyl_points, vectors)
def test_decomposition_sums_to_chart_differential(p, K):
    c = CylinderChart()
    h, v = decompose_vector(c, p, K)
    np.testing.assert_allclose(h + v, c.dphi(p, K), atol=1e-12)
    assert np.all(h[1:] == 0) and v[0] == 0


@given(cyl_points, vectors)
def test_cylinder_dpi_matches_finite_differences(p, K):
    assert check_dpi(CylinderChart(), p, K) < 1e-6


@settings(max_examples=50)
@given(st.floats(-3, 3), st.floats(0.1, 3.0), st.floats(0.55, 1.45))
def test_sphere_roundtrip(phi, theta, r):
    s = SphereChart()
    p = r * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    assert check_roundtrip(s, p) < 1e-12
    assert check_dpi(s, p, [0.3, -0.2, 0.7]) < 1e-6


def test_roundtrip_all_charts():
    for chart in (CylinderChart(), SphereChart(), LineChart()):
        pts = sample_points(chart, 50, seed=3)
        assert check_roundtrip(chart, pts) < 1e-12
        assert np.all(chart.contains(pts))


def test_unwrap_removes_angle_jumps():
    c = CylinderChart()
    u = np.linspace(0, 20, 400)
    pts = np.stack([np.cos(u), np.sin(u), np.zeros_like(u)], axis=-1)
    st_ = c.unwrap(c.chart_state(pts), axis=-2)
    np.testing.assert_allclose(st_[:, 0], u, atol=1e-12)


def test_vector_field_jacobians():
    pts = sample_points(CylinderChart(), 20, seed=1)
    assert check_jacobian(linear_field(ROTATION_XY), pts) < 1e-8
    assert check_jacobian(constant_field([1.0, 2.0, 3.0]), pts) < 1e-12
    f = VectorField(lambda x: x**2)
    assert not f.has_jacobian
    with pytest.raises(JacobianMissing):
        f.jacobian(pts)


def test_rotation_fields_are_exactly_tangent():
    s = cylinder_system()
    pts = sample_points(s.chart, 100, seed=0)
    rep = verify_foliated((s.drift,) + s.diffusion, s.chart, pts)
    assert rep.max_violation == pytest.approx(0.0, abs=1e-14)


def test_radial_field_violates_foliation():
    c = CylinderChart()
    pts = sample_points(c, 10, seed=0)
    with pytest.raises(FoliationViolation) as info:
        verify_foliated([linear_field(ROTATION_XY), constant_field([1.0, 0.0, 0.0])], c, pts)
    assert info.value.field_index == 1
    assert info.value.violation > 0.1


def test_sphere_tangential_projection_passes():
    c = SphereChart()
    k = np.array([0.3, -1.0, 2.0])

    def tangential(x):
        x = np.asarray(x)
        return k - (x @ k)[..., None] * x / np.sum(x * x, axis=-1, keepdims=True)

    pts = sample_points(c, 100, seed=2)
    assert verify_foliated([VectorField(tangential)], c, pts).max_violation < 1e-12
    assert sphere_system().verify().max_violation < 1e-12
