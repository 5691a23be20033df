import numpy as np
import pytest
import scipy.linalg

from micromorph import fem
from micromorph.assembly import (assemble_gauge, assemble_laplacian, assemble_load, assemble_mass,
                                 assemble_micromorphic, postprocess_stress_moment)
from micromorph.fields import AnalyticField, constant, polynomial, sine_product
from micromorph.material import MaterialModel, default_material, from_mandel, isotropic, lc_block_diagonal, mandel
from micromorph.mesh import LOCAL_EDGES, build_cube_mesh, cell_geometry


def _spaces(n, p_kind="nedelec0_tensor3", order=1):
    m = build_cube_mesh(n)
    return m, fem.build_space(m, "lagrange_vec3", order), fem.build_space(m, p_kind)


def _material():
    rng = np.random.default_rng(0)
    blocks = []
    for _ in range(3):
        a = rng.standard_normal((3, 3))
        blocks.append(a @ a.T + np.eye(3))
    return MaterialModel(isotropic(1.0, 0.8), isotropic(0.3, 0.6), lc_block_diagonal(blocks), mu_c=0.7)


def _dense_free(S):
    K = S.K.toarray()
    return K[np.ix_(S.free, S.free)]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_exact_symmetry(n):
    m, su, sP = _spaces(n)
    S = assemble_micromorphic(m, su, sP, _material(), keep_parts=True)
    assert abs(S.K - S.K.T).max() == 0.0
    for part in S.parts.values():
        assert abs(part - part.T).max() == 0.0
    G = assemble_gauge(m, sP, _material())
    assert abs(G.K - G.K.T).max() == 0.0


def test_constrained_rows_identity():
    m, su, sP = _spaces(2)
    S = assemble_micromorphic(m, su, sP, default_material())
    K = S.K.toarray()
    for d in S.constrained[:20]:
        np.testing.assert_array_equal(K[d], np.eye(S.dim)[d])


def test_zero_vector_maps_to_zero():
    m, su, sP = _spaces(2)
    S = assemble_micromorphic(m, su, sP, default_material())
    assert np.all(S.K @ np.zeros(S.dim) == 0)


def test_n1_identity_cholesky():
    m, su, sP = _spaces(1)
    S = assemble_micromorphic(m, su, sP, default_material())
    scipy.linalg.cholesky(_dense_free(S))  # raises if not SPD
    G = assemble_gauge(m, sP, default_material())
    scipy.linalg.cholesky(_dense_free(G))


def test_coercivity_witness():
    m, su, sP = _spaces(2)
    S = assemble_micromorphic(m, su, sP, _material())
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = np.zeros(S.dim)
        x[S.free] = rng.standard_normal(len(S.free))
        assert x @ (S.K @ x) > 0


def _energy_oracle(mesh, su, sP, material, u, P):
    """Per-cell loop with the single-cell basis routines and degree-4 quadrature."""
    ce, cm, lc = material.constants()
    q = fem.quadrature(4)
    total = 0.0
    for c in range(mesh.num_cells):
        J, _, vol = cell_geometry(mesh, c)
        uc = u[su.cell_dofs[c]].reshape(4, 3)
        Pc = P[sP.cell_dofs[c]].reshape(6, 3) * mesh.cell_edge_sign[c][:, None]
        gl = fem.grad_lambda(J)
        grad_u = np.einsum("ak,aj->kj", uc, gl)
        for xi, w in zip(q.ref_points, q.weights):
            vals, curls = fem.eval_nedelec_basis(J, xi)
            Pv = np.einsum("er,ek->rk", Pc, vals)
            Pcurl = np.einsum("er,ek->rk", Pc, curls)
            e = mandel(grad_u - Pv)
            s = mandel(Pv)
            k = Pcurl.ravel()
            total += 6 * vol * w * (e @ ce @ e + s @ cm @ s + k @ lc @ k)
    return total


def test_energy_identity_against_oracle():
    m, su, sP = _spaces(2)
    mat = _material()
    S = assemble_micromorphic(m, su, sP, mat, keep_parts=True)
    s = sine_product(1)
    u = fem.interpolate(su, AnalyticField([s, s * 2.0, polynomial({(1, 0, 0): 1.0})]))
    P = fem.interpolate(sP, AnalyticField.scaled(s, [[1.0, 0.5, 0], [0, 2.0, -1.0], [0.3, 0, 1.0]]))
    P[sP.constrained_dofs[::2]] = 0.7  # arbitrary, the raw form does not care
    x = np.concatenate([u, P])
    K = S.parts["A"] + S.parts["curl"]
    energy = x @ (K @ x)
    assert abs(energy - _energy_oracle(m, su, sP, mat, u, P)) <= 1e-12 * energy


def test_p2_and_lagrange_tensor_assemble():
    m, su, sP = _spaces(2, "lagrange_tensor3", order=2)
    S = assemble_micromorphic(m, su, sP, default_material())
    assert abs(S.K - S.K.T).max() == 0.0
    scipy.linalg.cholesky(_dense_free(S))


def test_space_mismatch():
    m, su, sP = _spaces(2)
    other = fem.build_space(build_cube_mesh(2), "nedelec0_tensor3")
    with pytest.raises(ValueError):
        assemble_micromorphic(m, su, other, default_material())
    with pytest.raises(ValueError):
        assemble_gauge(m, su, default_material())


def test_load_zero():
    m, su, sP = _spaces(2)
    assert np.all(assemble_load(su, sP) == 0)


def test_load_constant_f_lumped():
    m, su, sP = _spaces(3)
    c = np.array([1.0, -2.0, 0.5])
    b = assemble_load(su, None, AnalyticField.scaled(constant(1.0), c))
    lumped = np.zeros(m.num_vertices)
    np.add.at(lumped, m.cells.ravel(), np.repeat(m.volumes / 4, 4))
    np.testing.assert_allclose(b.reshape(-1, 3), np.outer(lumped, c), atol=1e-14)
    np.testing.assert_allclose(b.reshape(-1, 3).sum(axis=0), c, atol=1e-13)


def test_load_constant_moment_nedelec():
    m, su, sP = _spaces(2)
    Mc = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 0.5], [0.2, 0.4, -2.0]])
    b = assemble_load(None, sP, None, AnalyticField.scaled(constant(1.0), Mc))
    # int lam_i grad lam_j - lam_j grad lam_i = vol/4 (grad lam_j - grad lam_i)
    ref = np.zeros((m.num_edges, 3))
    gl = fem.grad_lambda(m.jacobians)
    for c in range(m.num_cells):
        for k, (i, j) in enumerate(LOCAL_EDGES):
            phi = m.volumes[c] / 4 * (gl[c, j] - gl[c, i]) * m.cell_edge_sign[c, k]
            ref[m.cell_edges[c, k]] += Mc @ phi
    np.testing.assert_allclose(b, ref.ravel(), atol=1e-14)


def test_mass_and_laplacian():
    m, su, sP = _spaces(2)
    Mu = assemble_mass(su)
    one = np.tile([1.0, 0.0, 0.0], m.num_vertices)
    assert one @ Mu @ one == pytest.approx(1.0, abs=1e-14)
    MP = assemble_mass(sP)
    K = np.eye(3)
    cst = fem.interpolate(sP, AnalyticField.scaled(constant(1.0), K))
    assert cst @ MP @ cst == pytest.approx(3.0, abs=1e-13)
    L = assemble_laplacian(m, components=1)
    x = m.vertices[:, 0]
    assert x @ L @ x == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(L @ np.ones(m.num_vertices), 0.0, atol=1e-14)


def test_gauge_curl_energy_of_gradients():
    m = build_cube_mesh(3)
    sP = fem.build_space(m, "nedelec0_tensor3")
    S = assemble_gauge(m, sP, default_material(0.0), keep_parts=True)
    KC = S.parts["curl"]
    # polynomial potentials of degree <= 4: the 2-point edge rule is exact
    taus = [polynomial({(2, 1, 1): 1.0, (0, 2, 0): -1.0}), polynomial({(1, 1, 2): 2.0}),
            polynomial({(2, 2, 0): 1.0, (1, 0, 0): 0.5})]
    pot = AnalyticField(np.array([[t] for t in taus], dtype=object))
    g = fem.interpolate(sP, lambda x: pot.grad(x)[:, :, 0, :])
    MP = assemble_mass(sP)
    assert abs(g @ KC @ g) <= 1e-12 * (g @ MP @ g)
    tau = np.random.default_rng(2).standard_normal(3 * m.num_vertices)
    g = fem.gradient_matrix(m) @ tau
    assert abs(g @ KC @ g) <= 1e-12 * (g @ MP @ g)


@pytest.mark.parametrize("mu_c", [0.0, 0.35, 2.0])
def test_skew_energy_closed_form(mu_c):
    m = build_cube_mesh(2)
    sP = fem.build_space(m, "nedelec0_tensor3")
    S = assemble_gauge(m, sP, default_material(mu_c), keep_parts=True)
    K0 = np.array([[0.0, 1.5, -0.5], [-1.5, 0.0, 2.0], [0.5, -2.0, 0.0]])
    e = fem.interpolate(sP, AnalyticField.scaled(constant(1.0), K0))
    # sym e = 0 so the non-curl part is the skew energy; Curl of a constant is 0
    assert e @ S.parts["A"] @ e == pytest.approx(2 * mu_c * np.sum(K0 ** 2), abs=1e-12)
    assert abs(e @ S.parts["curl"] @ e) <= 1e-12


def test_postprocess():
    m, su, sP = _spaces(2)
    mat = _material()
    sigma, mm = postprocess_stress_moment(su, sP, np.zeros(su.dof_count + sP.dof_count), mat)
    assert np.all(sigma == 0) and np.all(mm == 0)
    A = np.array([[0.1, 0.4, 0.0], [0.2, -0.3, 0.5], [0.0, 0.1, 0.2]])
    K = np.array([[1.0, 0.0, 0.3], [0.2, 0.5, 0.0], [-0.4, 0.0, 0.1]])
    u = fem.interpolate(su, AnalyticField.linear(A))
    P = fem.interpolate(sP, AnalyticField.scaled(constant(1.0), K))
    sigma, mm = postprocess_stress_moment(su, sP, np.concatenate([u, P]), mat)
    ce, _, _ = mat.constants()
    expected = from_mandel(ce @ mandel(A - K))
    np.testing.assert_allclose(sigma, np.broadcast_to(expected, sigma.shape), atol=1e-10)
    np.testing.assert_array_equal(sigma, np.swapaxes(sigma, 1, 2))
    np.testing.assert_allclose(mm, 0.0, atol=1e-12)
