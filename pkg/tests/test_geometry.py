import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from dtnmap.geometry import (
    Mesh,
    MeshingError,
    is_simple,
    make_disk,
    make_domain,
    make_smooth_star,
    triangulate,
    validate_mesh,
)


def test_disk_curve_points():
    d = make_disk(1.0)
    np.testing.assert_allclose(d(0.0)[0], [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(d(math.pi / 2)[0], [0.0, 1.0], atol=1e-15)
    assert d.length() == pytest.approx(2 * math.pi, abs=1e-12)


def test_disk_radius_two_length():
    assert abs(make_disk(2.0).length() - 4 * math.pi) <= 1e-10


def test_disk_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        make_disk(0.0)
    with pytest.raises(ValueError):
        make_disk(-1.0)


def test_star_with_zero_amplitude_is_disk():
    s = np.linspace(0, 2 * math.pi, 777)
    np.testing.assert_allclose(make_smooth_star(1.3, 0.0, 5)(s), make_disk(1.3)(s), atol=1e-12)


def test_star_radius_extremes():
    s = np.linspace(0, 2 * math.pi, 6001)
    r = np.linalg.norm(make_smooth_star(1.0, 0.2, 3)(s), axis=1)
    assert r.min() == pytest.approx(0.8, abs=1e-6)
    assert r.max() == pytest.approx(1.2, abs=1e-12)


def test_star_is_simple_by_dense_pairwise_oracle():
    star = make_smooth_star(1.0, 0.2, 3)
    s = np.arange(4096) * (2 * math.pi / 4096)
    pts = star(s)
    assert is_simple(pts)
    # brute-force oracle: no two samples closer than a fraction of the local spacing,
    # except consecutive ones
    d = pdist(pts)
    spacing = np.linalg.norm(np.diff(pts, axis=0), axis=1).min()
    n = len(pts)
    i, j = np.triu_indices(n, 1)
    far = (j - i > 1) & ~((i == 0) & (j == n - 1))
    assert d[far].min() > 0.5 * spacing
    star.check()


def test_star_rejects_large_amplitude():
    with pytest.raises(ValueError):
        make_smooth_star(1.0, 1.0, 3)
    with pytest.raises(ValueError):
        make_smooth_star(1.0, 1.5, 3)


def test_figure_eight_is_not_simple():
    s = np.arange(512) * (2 * math.pi / 512)
    pts = np.column_stack([np.sin(s), np.sin(s) * np.cos(s)])
    assert not is_simple(pts)


def test_make_domain_dispatch():
    assert make_domain("disk", radius=2.0).length() == pytest.approx(4 * math.pi)
    with pytest.raises(ValueError):
        make_domain("square")


@given(st.floats(0.0, 0.6), st.integers(2, 6))
@settings(max_examples=20, deadline=None)
def test_arclength_is_monotone_and_ends_at_length(amplitude, lobes):
    star = make_smooth_star(1.0, amplitude, lobes)
    s = np.linspace(0, 2 * math.pi, 200)
    arc = star.arclength(s)
    assert np.all(np.diff(arc) > 0)
    assert arc[-1] == pytest.approx(star.length(), rel=1e-12)
    back = star.parameters_at_arclength(arc[1:-1])
    np.testing.assert_allclose(back, s[1:-1], atol=1e-10)


def test_disk_area_within_two_percent(coarse):
    big = triangulate(make_disk(), 0.2)
    assert big.areas().sum() == pytest.approx(math.pi, rel=0.02)
    assert coarse.mesh.areas().sum() == pytest.approx(math.pi, rel=0.02)


def test_area_error_decreases_under_refinement(coarse, u1):
    meshes = (triangulate(make_disk(), 0.2), coarse.mesh, u1.mesh)
    errs = [abs(m.areas().sum() - math.pi) for m in meshes]
    assert errs[0] > errs[1] > errs[2]


def test_boundary_count_doubles_when_h_halves(coarse):
    half = triangulate(make_disk(), 0.05)
    ratio = half.n_boundary / coarse.mesh.n_boundary
    assert 1.8 <= ratio <= 2.2


@pytest.mark.parametrize("domain", [make_disk(1.0), make_disk(0.7), make_smooth_star(1.0, 0.2, 3)])
def test_weights_partition_boundary(domain):
    mesh = triangulate(domain, 0.1)
    assert abs(mesh.weights.sum() - domain.length()) <= 1e-8
    assert np.all(mesh.weights > 0)
    validate_mesh(mesh, domain)


def test_mesh_quality(coarse):
    m = coarse.mesh
    assert m.areas().min() > 0
    assert m.h <= 1.5 * 0.1
    # every boundary vertex sits on the curve
    r = np.linalg.norm(m.boundary_points, axis=1)
    np.testing.assert_allclose(r, 1.0, atol=1e-12)


def test_ring_orientation_cross_products_on_convex_boundary(coarse):
    p = coarse.mesh.boundary_points
    a, b, c = p, np.roll(p, -1, axis=0), np.roll(p, -2, axis=0)
    cross = (b - a)[:, 0] * (c - b)[:, 1] - (b - a)[:, 1] * (c - b)[:, 0]
    assert cross.min() > 0


def test_star_ring_follows_curve_direction():
    star = make_smooth_star(1.0, 0.2, 3)
    mesh = triangulate(star, 0.08)
    p = mesh.boundary_points
    tangent = star.derivative(mesh.boundary_params)
    assert np.einsum("ij,ij->i", np.roll(p, -1, axis=0) - p, tangent).min() > 0


def test_graded_mesh_has_finer_boundary():
    mesh = triangulate(make_disk(), 0.1, 0.03)
    assert mesh.h_boundary <= 0.031
    assert mesh.n_boundary >= math.ceil(2 * math.pi / 0.03)
    validate_mesh(mesh, make_disk())


def test_json_round_trip(coarse):
    m = coarse.mesh
    back = Mesh.from_json(m.to_json())
    for name in ("vertices", "triangles", "boundary", "boundary_params", "edge_arclength", "weights"):
        np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
    assert back.length == m.length


def test_triangulation_is_deterministic():
    a = triangulate(make_disk(), 0.15, seed=3)
    b = triangulate(make_disk(), 0.15, seed=3)
    assert a.to_json() == b.to_json()


def test_inverted_triangle_reported_with_location(coarse):
    m = coarse.mesh
    tri = m.triangles.copy()
    tri[5] = tri[5][[0, 2, 1]]
    bad = Mesh(m.vertices, tri, m.boundary, m.boundary_params, m.edge_arclength, m.weights, m.length)
    with pytest.raises(MeshingError) as info:
        validate_mesh(bad)
    np.testing.assert_allclose(info.value.location, m.vertices[m.triangles[5]].mean(axis=0))
    assert "near (" in str(info.value)


def test_rejects_nonpositive_target():
    with pytest.raises(ValueError):
        triangulate(make_disk(), 0.0)
