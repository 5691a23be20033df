import numpy as np
import pytest

from micromorph.mesh import (LOCAL_EDGES, MeshError, build_cube_mesh, cell_geometry, check_mesh,
                             geometry_from_jacobian, refine_uniform, write_vtk)


@pytest.mark.parametrize("n, V, T", [(1, 8, 6), (2, 27, 48), (3, 64, 162)])
def test_counts(n, V, T):
    m = build_cube_mesh(n)
    assert m.num_vertices == V == (n + 1) ** 3
    assert m.num_cells == T == 6 * n ** 3


def test_n1_edges_enumerated():
    # 12 cube edges, 6 face diagonals, 1 body diagonal
    m = build_cube_mesh(1)
    assert m.num_edges == 19
    lengths = np.linalg.norm(np.diff(m.vertices[m.edges], axis=1)[:, 0], axis=1)
    assert np.sum(np.isclose(lengths, 1.0)) == 12
    assert np.sum(np.isclose(lengths, np.sqrt(2))) == 6
    assert np.sum(np.isclose(lengths, np.sqrt(3))) == 1
    # the body diagonal is interior although both endpoints are on the boundary
    assert m.boundary_edge.sum() == 18


def test_rejects_zero():
    with pytest.raises(MeshError):
        build_cube_mesh(0)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_invariants(n):
    m = build_cube_mesh(n)
    check_mesh(m)
    assert m.num_vertices - m.num_edges + m.num_faces - m.num_cells == 1
    assert np.all(np.linalg.det(m.jacobians) > 0)
    assert abs(m.volumes.sum() - 1.0) <= 1e-13
    np.testing.assert_allclose(m.volumes, 1.0 / (6 * n ** 3), rtol=1e-12)
    assert abs(m.boundary_face_areas().sum() - 6.0) <= 1e-13


def test_face_sharing():
    m = build_cube_mesh(3)
    counts = np.bincount(m.cell_faces.ravel(), minlength=m.num_faces)
    assert set(np.unique(counts)) == {1, 2}
    assert np.sum(counts == 1) == len(m.boundary_faces) == 6 * 2 * 9


def test_interior_faces_opposite_orientation():
    m = build_cube_mesh(2)
    x = m.vertices
    seen = {}
    for c in range(m.num_cells):
        for k in range(4):
            f = m.cell_faces[c, k]
            face_pts = x[np.delete(m.cells[c], k)]
            opp = x[m.cells[c, k]]
            nrm = np.cross(face_pts[1] - face_pts[0], face_pts[2] - face_pts[0])
            if np.dot(nrm, face_pts[0] - opp) < 0:
                nrm = -nrm  # outward with respect to cell c
            seen.setdefault(f, []).append(nrm / np.linalg.norm(nrm))
    for normals in seen.values():
        if len(normals) == 2:
            np.testing.assert_allclose(normals[0], -normals[1], atol=1e-14)


def test_edge_signs_consistent():
    m = build_cube_mesh(3)
    local = m.cells[:, LOCAL_EDGES]  # (T, 6, 2)
    glob = m.edges[m.cell_edges]
    same = np.all(local == glob, axis=-1)
    flipped = np.all(local[..., ::-1] == glob, axis=-1)
    assert np.all(same | flipped)
    np.testing.assert_array_equal(m.cell_edge_sign, np.where(same, 1, -1))
    assert np.all(m.edges[:, 0] < m.edges[:, 1])


def test_boundary_normals_outward():
    m = build_cube_mesh(2)
    for (c, k), nrm in zip(m.boundary_faces, m.boundary_normals):
        centre = m.vertices[np.delete(m.cells[c], k)].mean(axis=0)
        assert np.isclose(np.linalg.norm(nrm), 1.0)
        assert np.dot(centre + 1e-3 * nrm - 0.5, nrm) > 0.5 - 1e-12


def test_refine_matches_build():
    m = refine_uniform(build_cube_mesh(1))
    assert m.num_cells == 48
    ref = build_cube_mesh(2)
    np.testing.assert_array_equal(m.cells, ref.cells)
    np.testing.assert_array_equal(m.vertices, ref.vertices)
    assert m.h == ref.h == 0.5


def test_refinement_is_nested():
    coarse, fine = build_cube_mesh(2), build_cube_mesh(4)
    cverts = coarse.vertices[coarse.cells]
    for c in range(0, fine.num_cells, 7):
        p = fine.centroids[c]
        # each fine cell lies in some coarse cell
        inside = False
        for cv in cverts:
            lam = np.linalg.solve((cv[1:] - cv[0]).T, p - cv[0])
            if np.all(lam >= -1e-12) and lam.sum() <= 1 + 1e-12:
                fv = fine.vertices[fine.cells[c]]
                lams = np.linalg.solve((cv[1:] - cv[0]).T, (fv - cv[0]).T).T
                inside = np.all(lams >= -1e-12) and np.all(lams.sum(axis=1) <= 1 + 1e-12)
                break
        assert inside


def test_cell_geometry():
    m = build_cube_mesh(2)
    for c in (0, 17, 47):
        J, JinvT, vol = cell_geometry(m, c)
        np.testing.assert_allclose(JinvT @ J.T, np.eye(3), atol=1e-13)
        assert np.isclose(abs(np.linalg.det(J)), 6 * vol)
        assert np.isclose(vol, 1 / 48)


def test_reference_geometry():
    J, JinvT, vol = geometry_from_jacobian(np.eye(3))
    np.testing.assert_array_equal(JinvT, np.eye(3))
    assert vol == pytest.approx(1 / 6)


def test_degenerate_cell():
    with pytest.raises(MeshError):
        geometry_from_jacobian(np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]]))


def test_vtk(tmp_path):
    m = build_cube_mesh(1)
    path = tmp_path / "m.vtk"
    write_vtk(path, m, {"s": np.arange(6.0), "v": np.ones((6, 3)), "t": np.zeros((6, 3, 3))})
    text = path.read_text()
    assert "CELL_TYPES 6" in text and "SCALARS s" in text and "VECTORS v" in text and "TENSORS t" in text
    with pytest.raises(ValueError):
        write_vtk(path, m, {"bad": np.ones(5)})
