import numpy as np
import pytest

from biofilm_fv.errors import InadmissibleMeshError, InvalidArgumentError, MeshParseError
from biofilm_fv.mesh import (acute_rectangle_triangulation, build_interval_mesh, build_triangular_mesh,
                             discrete_norm_Lp, discrete_seminorm_H1, dual_gradient, generate_square_mesh,
                             parse_mesh_text, read_mesh_file, validate_admissibility, write_mesh_file)

TWO_TRIANGLES = (np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.9], [0.5, -0.8]]), np.array([[0, 1, 2], [1, 0, 3]]))


def max_angle(nodes, tris):
    worst = 0.0
    for t in tris:
        q = nodes[t]
        for i in range(3):
            u, v = q[(i + 1) % 3] - q[i], q[(i + 2) % 3] - q[i]
            worst = max(worst, np.degrees(np.arccos(u @ v / np.linalg.norm(u) / np.linalg.norm(v))))
    return worst


# --- 1D -----------------------------------------------------------------------------

def test_interval_transmissibilities():
    m = build_interval_mesh(10)
    assert np.allclose(m.tau[m.int_edges], 10.0, rtol=1e-13)
    assert np.allclose(m.tau[m.ext_edges], 20.0, rtol=1e-13)
    one = build_interval_mesh(1)
    assert one.n_cells == 1 and one.n_boundary_edges == 2
    assert np.allclose(one.d_sigma, 0.5) and np.allclose(one.tau, 2.0)
    two = build_interval_mesh(2)
    assert two.d_sigma[two.int_edges] == pytest.approx([0.5])
    assert two.tau[two.int_edges] == pytest.approx([2.0])


@pytest.mark.parametrize("args", [(0,), (-3,), (2.5,), (4, (1.0, 1.0)), (4, (1.0, 0.0))])
def test_interval_rejects(args):
    with pytest.raises(InvalidArgumentError):
        build_interval_mesh(*args)


def test_interval_admissibility():
    rep = validate_admissibility(build_interval_mesh(10))
    assert rep.estmesh_lhs == pytest.approx(1.0, rel=1e-14)
    assert rep.estmesh_rhs == 2.0
    assert rep.xi_observed == pytest.approx(0.5, rel=1e-13)
    assert rep.admissible
    assert rep.dual_partition_defect < 1e-14 and rep.diamond_identity_max_defect < 1e-13


def test_edge_and_cell_views():
    m = build_interval_mesh(4, (0.0, 2.0))
    c = m.cell(1)
    assert c.measure == 0.5 and c.center[0] == pytest.approx(0.75)
    e = m.edge(0)
    assert e.is_boundary and e.cells == (0,) and e.normal[0] == -1
    assert not m.edge(1).is_boundary
    assert all(len(e) == 2 for e in m.cell_edges)


# --- 2D -----------------------------------------------------------------------------

def test_single_acute_triangle():
    m = build_triangular_mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.9]]), np.array([[0, 1, 2]]))
    # circumcenter (0.5, y) with y solving 0.25 + y^2 = (0.9 - y)^2
    y = (0.81 - 0.25) / 1.8
    assert m.centers[0] == pytest.approx([0.5, y], abs=1e-15)
    assert m.cell_measure[0] == pytest.approx(0.45)
    assert validate_admissibility(m).admissible


def test_shared_edge_orthogonality():
    m = build_triangular_mesh(*TWO_TRIANGLES)
    assert len(m.int_edges) == 1
    rep = validate_admissibility(m)
    assert rep.orthogonality_max_violation <= 1e-10
    link = m.centers[1] - m.centers[0]
    assert abs(link[0]) < 1e-14  # both circumcenters on x = 0.5


@pytest.mark.parametrize("third", [[0.0, 1.0], [-0.3, 0.8]])
def test_right_or_obtuse_triangle_rejected(third):
    with pytest.raises(InadmissibleMeshError) as err:
        build_triangular_mesh(np.array([[0.0, 0.0], [1.0, 0.0], third]), np.array([[0, 1, 2]]))
    assert "triangle 0" in str(err.value)
    assert err.value.cell == 0


def test_generated_mesh_size_and_angles():
    nodes, tris = acute_rectangle_triangulation(16, 28)
    assert len(tris) == 3584
    assert max_angle(nodes, tris) < 73.0


@pytest.mark.parametrize("nx,ny", [(1, 2), (2, 3), (4, 7), (16, 28), (3, 30)])
def test_generated_mesh_identities(nx, ny):
    m = generate_square_mesh(nx, ny)
    assert m.n_cells == 8 * nx * ny
    rep = validate_admissibility(m)
    assert rep.admissible and rep.xi_observed > 0
    assert rep.diamond_identity_max_defect <= 1e-10
    assert rep.estmesh_lhs <= rep.estmesh_rhs + 1e-10
    assert rep.dual_partition_defect <= 1e-10
    assert rep.cell_partition_defect <= 1e-12
    assert m.total_measure == pytest.approx(1.0, rel=1e-13)


@pytest.mark.parametrize("nx,ny", [(1, 1), (4, 4), (5, 3), (0, 2)])
def test_generator_rejects(nx, ny):
    with pytest.raises(InvalidArgumentError):
        acute_rectangle_triangulation(nx, ny)


def test_centers_inside_cells():
    m = generate_square_mesh(3, 5)
    for K, tri in enumerate(m.triangles):
        a, b, c = m.nodes[tri]
        T = np.column_stack([b - a, c - a])
        lam = np.linalg.solve(T, m.centers[K] - a)
        assert lam.min() > 0 and lam.sum() < 1


# --- norms ----------------------------------------------------------------------------

def test_seminorm_examples():
    m = build_interval_mesh(2)
    assert discrete_seminorm_H1(m, [0.25, 0.75, 0.0, 1.0]) == pytest.approx(1.0, rel=1e-15)
    assert discrete_seminorm_H1(m, [0.3, 0.3, 0.3, 0.3]) == 0.0
    with pytest.raises(InvalidArgumentError):
        discrete_seminorm_H1(m, [0.25, 0.75])


@pytest.mark.parametrize("mesh", [build_interval_mesh(13), generate_square_mesh(2, 3)])
def test_seminorm_properties(mesh):
    rng = np.random.default_rng(3)
    n = mesh.n_cells + mesh.n_boundary_edges
    for _ in range(10):
        u, v = rng.normal(size=n), rng.normal(size=n)
        su, sv = discrete_seminorm_H1(mesh, u), discrete_seminorm_H1(mesh, v)
        assert discrete_seminorm_H1(mesh, 3 * u) == pytest.approx(3 * su, rel=1e-13)
        assert discrete_seminorm_H1(mesh, u + v) <= su + sv + 1e-12


def test_Lp_norms():
    m = build_interval_mesh(2)
    assert discrete_norm_Lp(m, np.ones(2), 1) == pytest.approx(1.0)
    assert discrete_norm_Lp(m, np.ones(2), 2) == pytest.approx(1.0)
    assert discrete_norm_Lp(m, 2 * np.ones(2), 1) == pytest.approx(2.0)
    assert discrete_norm_Lp(m, np.array([1.0, -1.0]), 2) == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        discrete_norm_Lp(m, np.ones(2), 3)


def test_dual_gradient_1d():
    m = build_interval_mesh(8)
    x = m.centers[:, 0]
    grad = dual_gradient(m, np.concatenate([x, [0.0, 1.0]]))
    assert np.allclose(grad[m.int_edges, 0], 1.0, rtol=1e-13)
    assert np.allclose(dual_gradient(m, np.full(10, 0.7)), 0.0)


def test_dual_gradient_2d_diamond():
    m = build_triangular_mesh(*TWO_TRIANGLES)
    j = m.int_edges[0]
    nu = m.normals[j]
    slope = 1.7
    vc = slope * m.centers @ nu
    vb = np.zeros(m.n_boundary_edges)
    grad = dual_gradient(m, np.concatenate([vc, vb]))[j]
    # m(sigma) / m(T) with m(T) = m(sigma) d / 2 gives twice the normal slope
    assert grad == pytest.approx(2 * slope * nu, rel=1e-12)


# --- text format -----------------------------------------------------------------------

def test_mesh_file_roundtrip(tmp_path):
    nodes, tris = acute_rectangle_triangulation(3, 5)
    p = tmp_path / "m.txt"
    write_mesh_file(p, nodes, tris)
    m1 = build_triangular_mesh(nodes, tris)
    m2 = read_mesh_file(p)
    assert (m1.n_cells, m1.n_edges) == (m2.n_cells, m2.n_edges)
    assert np.array_equal(m1.cell_measure, m2.cell_measure)
    assert np.array_equal(m1.edge_measure, m2.edge_measure)


@pytest.mark.parametrize("text,line", [
    ("", None),
    ("NODES\n0 0 0\n1 1 0\n2 0 1\n", None),
    ("NODES\n0 0 0\n1 1 x\n", 3),
    ("0 0 0\n", 1),
    ("NODES\n0 0 0\n1 1 0\n2 0.5 0.9\nTRIANGLES\n0 0 1 7\n", None),
    ("NODES\n0 0 0\n0 1 0\n", 3),
])
def test_mesh_parse_errors(text, line):
    with pytest.raises(MeshParseError) as err:
        parse_mesh_text(text)
    assert err.value.line == line
    if line is not None:
        assert str(err.value).startswith(f"line {line}:")
