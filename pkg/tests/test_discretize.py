import math

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from thinchannel import analytic, discretize
from thinchannel.discretize import (assemble_mapped_channel_forms, build_channel_mesh,
                                    build_dumbbell_forms, build_oscillating_forms,
                                    build_rect_forms, interior_edge_counts, write_mesh)
from thinchannel.errors import ConditioningError, ParameterError
from thinchannel.geometry import (ChannelProfile, constant_profile, dumbbell,
                                  reference_profile)


def dense_eigs(forms, k):
    vals = la.eigh(forms.K.toarray(), forms.M.toarray(), eigvals_only=True)
    return vals[:k]


def channel_forms(profile, nx, ny, dirichlet=("gamma0",)):
    mesh = build_channel_mesh(profile, nx, ny)
    return assemble_mapped_channel_forms(mesh, profile, dirichlet=dirichlet)


# -- meshes --------------------------------------------------------------------


def test_channel_mesh_counts():
    mesh = build_channel_mesh(reference_profile(0.25), 4, 4)
    assert mesh.n_nodes == 25
    assert len(mesh.quads) == 16
    assert len(mesh.tagged_edges("gamma0")) == 4
    assert len(mesh.tagged_edges("gammaL")) == 4
    assert len(mesh.tagged_edges("lateral")) == 8


def test_channel_mesh_refinement_along_axis():
    p = reference_profile(0.25)
    a = build_channel_mesh(p, 4, 6)
    b = build_channel_mesh(p, 8, 6)
    assert len(b.quads) == 2 * len(a.quads)
    assert len(b.tagged_edges("gamma0")) == len(a.tagged_edges("gamma0"))


def test_channel_mesh_rejects_small_grid():
    with pytest.raises(ParameterError):
        build_channel_mesh(reference_profile(0.25), 3, 8)


@pytest.mark.parametrize("nx, ny", [(4, 4), (7, 5), (16, 3)])
def test_mesh_conforming(nx, ny):
    mesh = discretize.rect_mesh(0, 1, 0, 1, nx, ny)
    counts = interior_edge_counts(mesh)
    boundary = 2 * (nx + ny)
    assert np.count_nonzero(counts == 1) == boundary
    assert np.all((counts == 1) | (counts == 2))


def test_jacobians_positive():
    mesh = build_channel_mesh(reference_profile(0.25), 8, 8)
    _, _, detJ = discretize._geometry(mesh)[:3]
    assert np.all(detJ > 0)


# -- mapped channel forms ----------------------------------------------------------


@pytest.mark.parametrize("profile", [reference_profile(0.25), constant_profile(0.05),
                                     ChannelProfile((0.1, -0.05), family="direct")])
def test_channel_forms_symmetric(profile):
    f = channel_forms(profile, 8, 8)
    for A in (f.K, f.M, f.K_full, f.M_full):
        assert abs(A - A.T).max() <= 1e-14 * abs(A).max()


def test_channel_forms_definite_with_dirichlet():
    f = channel_forms(reference_profile(0.25), 6, 6)
    assert f.has_dirichlet
    assert np.linalg.eigvalsh(f.K.toarray()).min() > 0
    assert np.linalg.eigvalsh(f.M.toarray()).min() > 0


def test_random_probes_semidefinite():
    rng = np.random.default_rng(1)
    forms = [channel_forms(reference_profile(0.25), 8, 8, dirichlet=()),
             build_dumbbell_forms(dumbbell(reference_profile(0.5)), 1 / 8, 8, 4),
             build_oscillating_forms(0.3, 0.25, 8, 8)]
    for f in forms:
        X = rng.standard_normal((f.n, 100))
        assert np.all(np.einsum("ij,ij->j", X, f.K @ X) >= -1e-10)
        assert np.all(np.einsum("ij,ij->j", X, f.M @ X) > 0)


def test_constant_channel_separable_limit():
    L = 1.0
    exact = analytic.const_channel_tau(L)
    vals = [dense_eigs(channel_forms(constant_profile(0.05), n, 4), 1)[0] for n in (8, 16, 32)]
    errors = [abs(v - exact) for v in vals]
    assert errors[-1] / exact < 1e-3
    for e1, e2 in zip(errors, errors[1:]):
        assert 3.5 <= e1 / e2 <= 4.5


def test_patch_test_affine_map():
    # constant width: the map is affine, so linear functions are represented exactly
    p = constant_profile(0.2)
    mesh = build_channel_mesh(p, 6, 5)
    f = assemble_mapped_channel_forms(mesh, p, dirichlet=())
    xy = mesh.physical_nodes()
    a, b = 0.7, -1.3
    u = a * xy[:, 0] + b * xy[:, 1]
    area = 2 * 0.2 * 1.0
    assert u @ (f.K_full @ u) == pytest.approx((a * a + b * b) * area, rel=1e-12)
    one = np.ones(mesh.n_nodes)
    assert one @ (f.M_full @ one) == pytest.approx(area, rel=1e-12)


def test_mass_total_equals_channel_area():
    p = reference_profile(0.5)
    mesh = build_channel_mesh(p, 64, 4)
    f = assemble_mapped_channel_forms(mesh, p, dirichlet=())
    one = np.ones(mesh.n_nodes)
    # 2 * int_0^1 (0.3 + 0.2 (1-s)^2)^2 ds
    exact = 2 * (0.09 + 0.12 / 3 + 0.04 / 5)
    assert one @ (f.M_full @ one) == pytest.approx(exact, rel=1e-3)


def test_reference_channel_above_bound():
    from thinchannel.geometry import tau_lower_bound
    p = reference_profile(0.25)
    f = channel_forms(p, 32, 32)
    lam = dense_eigs(f, 1)[0]
    assert lam >= tau_lower_bound(p, 0.6).bound


def test_conditioning_guard():
    p = reference_profile(0.02)   # g ~ 0.3**50 ~ 7e-27
    with pytest.raises(ConditioningError):
        channel_forms(p, 8, 8)


# -- rectangles and dumbbells ----------------------------------------------------------


def test_rect_neumann_kernel():
    f = build_rect_forms(-1, 0, -0.415, 0.415, 8, 6)
    assert np.abs(f.K @ np.ones(f.n)).max() < 1e-10


def test_rect_dirichlet_square():
    f = build_rect_forms(0, 1, 0, 1, 16, 16, dirichlet=True)
    assert dense_eigs(f, 1)[0] == pytest.approx(2 * math.pi**2, rel=2e-2)


def test_dumbbell_without_channel_matches_rectangle():
    f = build_dumbbell_forms(dumbbell(None), 1 / 16, 8, 4)
    vals = dense_eigs(f, 4)
    exact = analytic.rect_neumann_eigs(1.0, 0.83, 4)
    assert abs(vals[0]) < 1e-10
    np.testing.assert_allclose(vals[1:], exact[1:], rtol=2e-2)


def test_dumbbell_kernel_and_symmetry():
    f = build_dumbbell_forms(dumbbell(reference_profile(0.5)), 1 / 16, 8, 4)
    assert np.abs(f.K @ np.ones(f.n)).max() < 1e-10
    assert abs(f.K - f.K.T).max() <= 1e-14 * abs(f.K).max()
    assert not f.has_dirichlet
    # tied channel trace nodes interpolate the base edge: constants expand to constants
    np.testing.assert_allclose(f.expand(np.ones(f.n)), 1.0, rtol=1e-14)


def test_dumbbell_interface_tags():
    f = build_dumbbell_forms(dumbbell(constant_profile(0.05)), 1 / 16, 8, 4)
    tags = f.parts.base_mesh.edge_tags
    assert np.count_nonzero(tags == "interface") >= 1


def test_dumbbell_constant_channel_mode():
    target = math.pi**2 / 4
    for h, nx in ((1 / 16, 16), (1 / 32, 32)):
        f = build_dumbbell_forms(dumbbell(constant_profile(0.05)), h, nx, 4)
        vals = dense_eigs(f, 6)
        assert np.min(np.abs(vals - target)) / target < 0.1


def test_dumbbell_shrinking_stub_continuity():
    # a short narrow stub only pushes its own modes far up the spectrum
    base = dense_eigs(build_dumbbell_forms(dumbbell(None), 1 / 16, 8, 4), 5)
    gaps = []
    for w in (0.04, 0.01, 0.0025):
        stub = ChannelProfile((w,), length=2 * w, family="direct")
        vals = dense_eigs(build_dumbbell_forms(dumbbell(stub), 1 / 16, 8, 4), 5)
        gaps.append(np.max(np.abs(vals[1:] - base[1:]) / base[1:]))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[-1] < 1e-3


# -- oscillating domain ------------------------------------------------------------------


def test_oscillating_zero_amplitude_is_square():
    f = build_oscillating_forms(0.0, 0.25, 16, 16)
    g = build_rect_forms(0, 1, -1, 0, 16, 16, dirichlet=True)
    np.testing.assert_allclose(dense_eigs(f, 3), dense_eigs(g, 3), rtol=1e-12)


def test_oscillating_symmetric_pd():
    f = build_oscillating_forms(0.3, 0.25, 12, 12)
    assert abs(f.K - f.K.T).max() <= 1e-14 * abs(f.K).max()
    assert np.linalg.eigvalsh(f.M.toarray()).min() > 0
    assert f.dirichlet_mask.sum() == 2 * (12 + 12)


def test_oscillating_mesh_self_convergence():
    from thinchannel.eigensolve import EigenRequest, lobpcg
    req = EigenRequest(k=1)
    a = lobpcg(build_oscillating_forms(0.3, 0.25, 64, 64), req).values[0]
    b = lobpcg(build_oscillating_forms(0.3, 0.25, 128, 128), req).values[0]
    assert abs(a - b) / b < 0.01


def test_oscillating_rejects_negative_amplitude():
    with pytest.raises(ParameterError):
        build_oscillating_forms(-0.1, 0.25, 8, 8)


# -- mesh dump -----------------------------------------------------------------------------


def test_write_mesh(tmp_path):
    p = reference_profile(0.5)
    mesh = build_channel_mesh(p, 4, 4)
    path = tmp_path / "mesh.txt"
    write_mesh(mesh, path)
    lines = path.read_text().splitlines()
    kinds = [ln.split()[0] for ln in lines]
    assert kinds.count("node") == 25
    assert kinds.count("quad") == 16
    assert kinds.count("edge") == 16
    first = lines[0].split()
    assert float(first[1 + 1]) == pytest.approx(0.0)
    assert float(first[3]) == pytest.approx(-p.g(0.0))
    assert {ln.split()[-1] for ln in lines if ln.startswith("edge")} == {
        "gamma0", "gammaL", "lateral"}


def test_forms_from_matrices():
    K = sp.diags([1.0, 2.0, 3.0])
    f = discretize.AssembledForms.from_matrices(K, sp.identity(3))
    assert f.n == 3 and not f.has_dirichlet
