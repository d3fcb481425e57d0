import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from thermoreg import fem, plant as plant_mod
from thermoreg.fem import ShapeSpec
from thermoreg.flow import solve_navier_stokes, solve_stokes
from thermoreg.mesh import BoundarySegment, Geometry, build_structured_mesh

B_SHAPE = ShapeSpec("indicator-rectangle", bounds=(0.0, 0.05, 0.1, 0.4))
BD_SHAPE = ShapeSpec("boundary-indicator")
C1_SHAPE = ShapeSpec("indicator-rectangle", bounds=(0.7, 0.9, 0.1, 0.3), amplitude=0.2**-2)


@pytest.fixture(scope="module")
def small_plant(geometry, mesh11):
    st = solve_stokes(mesh11, geometry, re=100.0)
    ns = solve_navier_stokes(mesh11, geometry, re=100.0, initial=st)
    return plant_mod.build_plant(mesh11, ns, 100.0, 0.7, B_SHAPE, BD_SHAPE, C1_SHAPE)


def test_alpha(small_plant):
    assert small_plant.alpha == pytest.approx(1.0 / 70.0, rel=1e-15)


def test_design_mesh_state_dimension(geometry, mesh41):
    ns = solve_navier_stokes(mesh41, geometry, re=100.0)
    p = plant_mod.build_plant(mesh41, ns, 100.0, 0.7, B_SHAPE, BD_SHAPE, C1_SHAPE)
    assert 1545 <= p.dims["state"] <= 1553
    assert p.dims == {"state": p.drift.shape[0], "inputs": 1, "outputs": 1, "disturbances": 1}


def test_operators_nonzero(small_plant):
    assert np.linalg.norm(small_plant.control) > 0
    assert np.linalg.norm(small_plant.disturbance) > 0
    assert np.linalg.norm(small_plant.observation) > 0


def test_standard_form_preserves_transfer(small_plant):
    std = plant_mod.to_standard_form(small_plant)
    for w in (1.0, 2.0, 3.0):
        gen = plant_mod.transfer_value(small_plant, 1j * w)
        assert np.max(np.abs(std.transfer(1j * w) - gen)) < 1e-10


def test_standard_form_identity_mass(small_plant):
    n = small_plant.drift.shape[0]
    eye_plant = plant_mod.GeneralizedPlant(
        mass=sp.identity(n, format="csr"),
        drift=small_plant.drift,
        control=small_plant.control,
        disturbance=small_plant.disturbance,
        observation=small_plant.observation,
        reduction=small_plant.reduction,
        mesh=small_plant.mesh,
        re=small_plant.re,
        pr=small_plant.pr,
    )
    std = plant_mod.to_standard_form(eye_plant)
    assert np.allclose(std.a, small_plant.drift.toarray(), atol=1e-14)
    assert np.allclose(std.b, small_plant.control, atol=1e-14)


def test_standard_form_eigenvalues_match_generalized(small_plant):
    std = plant_mod.to_standard_form(small_plant)
    direct = np.linalg.eigvals(std.a)
    oracle = sla.eig(
        small_plant.drift.toarray(), small_plant.mass.toarray(), right=False
    )
    dist = np.abs(direct[:, None] - oracle[None, :])
    assert dist.min(axis=1).max() < 1e-8
    assert dist.min(axis=0).max() < 1e-8


def test_rightmost_spectrum_stable_and_conjugate_closed(small_plant):
    eigs = plant_mod.rightmost_spectrum(small_plant, k=6)
    assert eigs[0].real < 0
    assert np.all(np.diff(eigs.real) <= 1e-12)
    complex_ones = eigs[np.abs(eigs.imag) > 1e-10]
    for lam in complex_ones:
        assert np.min(np.abs(complex_ones - lam.conjugate())) < 1e-8


def test_rightmost_spectrum_pure_diffusion(geometry):
    # All-wall boundary and zero velocity: the slowest mode of the Dirichlet
    # Laplacian on the unit square is -alpha * 2 pi^2.
    import dataclasses

    from thermoreg.mesh import WALL

    mesh = build_structured_mesh(Geometry(), 21)
    mesh = dataclasses.replace(
        mesh,
        node_tags=np.where(mesh.node_tags != 0, WALL, 0).astype(np.int8),
        edge_tags=np.full_like(mesh.edge_tags, WALL),
    )
    re, pr = 100.0, 0.7
    alpha = 1.0 / (re * pr)
    mass = fem.assemble_mass(mesh, "P2")
    stiff = fem.assemble_stiffness(mesh, "P2")
    red = fem.dirichlet_reduction(mesh)
    p = plant_mod.GeneralizedPlant(
        mass=red.matrix(mass),
        drift=red.matrix((-alpha * stiff).tocsr()),
        control=np.ones((red.size, 1)),
        disturbance=np.ones((red.size, 1)),
        observation=np.ones((1, red.size)),
        reduction=red,
        mesh=mesh,
        re=re,
        pr=pr,
    )
    lam = plant_mod.rightmost_spectrum(p, k=1)[0]
    expected = -alpha * 2.0 * np.pi**2
    assert abs(lam.real - expected) / abs(expected) < 0.05
    assert abs(lam.imag) < 1e-10


def test_transfer_conjugate_symmetry(small_plant):
    for w in (0.5, 1.0, 3.0):
        pw = plant_mod.transfer_value(small_plant, 1j * w)
        pmw = plant_mod.transfer_value(small_plant, -1j * w)
        assert np.max(np.abs(pmw - np.conj(pw))) < 1e-12
        assert np.all(np.isfinite(pw))


def test_transfer_matches_dense_resolvent(small_plant):
    std = plant_mod.to_standard_form(small_plant)
    for s in (1j, 0.5 + 2j, 3.0):
        gen = plant_mod.transfer_value(small_plant, s)
        assert np.max(np.abs(gen - std.transfer(s))) < 1e-10


def test_transfer_decays_at_infinity(small_plant):
    vals = [np.abs(plant_mod.transfer_value(small_plant, s))[0, 0] for s in (1e2, 1e4, 1e6)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 1e-6


def test_invalid_parameters(mesh11, geometry):
    st = solve_stokes(mesh11, geometry, re=100.0)
    with pytest.raises(ValueError):
        plant_mod.build_plant(mesh11, st, -1.0, 0.7, B_SHAPE, BD_SHAPE, C1_SHAPE)


def test_plant_export(tmp_path, small_plant):
    plant_mod.save_plant(small_plant, tmp_path / "plant")
    import json

    meta = json.loads((tmp_path / "plant" / "plant.json").read_text())
    assert meta["dims"]["state"] == small_plant.dims["state"]
    back = fem.read_matrix_coo(tmp_path / "plant" / "drift.coo", shape=small_plant.drift.shape)
    assert np.allclose(back.toarray(), small_plant.drift.toarray(), atol=0)
