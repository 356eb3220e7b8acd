import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gaussbif import load_shipped_mesh, shipped_mesh_path
from gaussbif.mesh import (MeshError, TriMesh, generate_genus2_mesh, generate_polygon_surface,
                           geodesic_distance, load_mesh, write_mesh)


@pytest.mark.parametrize("level, area_tol", [(0, 0.1), (1, 0.02), (2, 0.005)])
def test_euler_characteristic_and_area(level, area_tol):
    mesh = generate_genus2_mesh(level)
    assert mesh.euler_characteristic == -2
    assert mesh.total_area == pytest.approx(4 * math.pi, rel=area_tol)


def test_area_converges_under_refinement(mesh1, mesh2):
    target = 4 * math.pi
    e1 = abs(mesh1.total_area - target)
    e2 = abs(mesh2.total_area - target)
    assert e2 < e1 / 3


def test_refinement_quadruples_triangles(mesh1, mesh2):
    assert mesh2.n_triangles == 4 * mesh1.n_triangles


def test_stiffness_is_symmetric_with_zero_row_sums(mesh2):
    L = mesh2.laplacian.stiffness
    assert abs(L - L.T).max() < 1e-14
    assert np.max(np.abs(L @ np.ones(mesh2.n_vertices))) < 1e-12


def test_no_negative_cotangent_weights(mesh2):
    L = mesh2.laplacian.stiffness.tocoo()
    off = L.data[L.row != L.col]
    assert off.max() <= 1e-14


def test_lumped_mass_partitions_area(mesh2):
    assert mesh2.laplacian.mass_diag.sum() == pytest.approx(mesh2.triangle_areas.sum(), rel=1e-14)
    assert np.all(mesh2.vertex_area > 0)


def test_shipped_genus3_mesh():
    mesh = load_shipped_mesh()
    assert mesh.genus == 3
    assert mesh.euler_characteristic == -4
    assert mesh.total_area == pytest.approx(8 * math.pi, rel=0.05)
    assert shipped_mesh_path().is_file()


def test_genus3_generator_matches_shipped_file(mesh_g3):
    fresh = generate_polygon_surface(3, 1)
    assert fresh.n_vertices == mesh_g3.n_vertices
    assert fresh.total_area == pytest.approx(mesh_g3.total_area, rel=1e-12)


def test_write_load_round_trip(mesh1, tmp_path):
    path = tmp_path / "m.mesh"
    write_mesh(mesh1, path)
    back = load_mesh(path)
    assert back.n_vertices == mesh1.n_vertices
    assert np.array_equal(np.sort(back.edges, axis=0), np.sort(mesh1.edges, axis=0))
    assert back.total_area == pytest.approx(mesh1.total_area, rel=1e-14)
    assert np.allclose(back.coords, mesh1.coords)


def test_load_rejects_missing_header(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("genus 2\nvertices 3\n")
    with pytest.raises(MeshError, match="header"):
        load_mesh(path)


def test_load_rejects_unknown_record(mesh1, tmp_path):
    path = tmp_path / "m.mesh"
    write_mesh(mesh1, path)
    path.write_text(path.read_text() + "bogus 1 2\n")
    with pytest.raises(MeshError, match="unknown record"):
        load_mesh(path)


def test_wrong_genus_fails_euler_check(mesh1):
    with pytest.raises(MeshError, match="Euler"):
        TriMesh(3, mesh1.n_vertices, mesh1.triangles, mesh1.edges, mesh1.lengths)


def test_scaled_lengths_fail_area_check(mesh1):
    with pytest.raises(MeshError, match="area"):
        TriMesh(2, mesh1.n_vertices, mesh1.triangles, mesh1.edges, 1.5 * mesh1.lengths)


def test_missing_triangle_is_not_manifold(mesh1):
    with pytest.raises(MeshError, match="manifold"):
        TriMesh(2, mesh1.n_vertices, mesh1.triangles[1:], mesh1.edges, mesh1.lengths)


def test_triangle_inequality_enforced(mesh1):
    lengths = mesh1.lengths.copy()
    lengths[0] = 50.0
    with pytest.raises(MeshError, match="triangle inequality"):
        TriMesh(2, mesh1.n_vertices, mesh1.triangles, mesh1.edges, lengths, mesh_tolerance=10.0)


def test_genus_below_two_rejected():
    with pytest.raises(MeshError):
        generate_polygon_surface(1, 0)


def test_geodesic_distance_basic(mesh2):
    d = geodesic_distance(mesh2, 0)
    assert d[0] == 0
    assert np.all(np.isfinite(d))
    # unfolded chords can only shorten paths
    assert np.all(d <= geodesic_distance(mesh2, 0, unfold=False) + 1e-12)
    # an edge is at most its length away
    i, j = mesh2.edges[0]
    dd = geodesic_distance(mesh2, int(i))
    assert dd[j] <= mesh2.lengths[0] + 1e-12


def test_diameter_is_bounded_by_polygon_size(mesh2):
    # the octagon circumradius (hyperbolic) is about 1.53
    assert 1.0 < mesh2.diameter < 2 * 1.6


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 254, elements=st.floats(-5, 5)), st.floats(-100, 100))
def test_dirichlet_energy_nonnegative_and_shift_invariant(f, shift):
    mesh = generate_genus2_mesh(1)
    lap = mesh.laplacian
    e = lap.dirichlet_energy(f)
    assert e >= -1e-10
    assert lap.dirichlet_energy(f + shift) == pytest.approx(e, rel=1e-9, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 254, elements=st.floats(-5, 5)))
def test_zero_mean_projection(f):
    mesh = generate_genus2_mesh(1)
    g = mesh.zero_mean(f)
    assert abs(mesh.integrate(g)) < 1e-10 * (1 + np.abs(f).max())
    assert np.allclose(mesh.zero_mean(g), g, atol=1e-12)
