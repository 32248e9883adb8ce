import itertools
import math

import numpy as np
import pytest

from latred.errors import LatticeError
from latred.lattice import (DamageState, FrameSpec, LatticeModel, MaterialLaw, axial_forces,
                            axial_tangent, bar_strain, build_frame_lattice, external_forces,
                            internal_forces, strain_energy, tangent_stiffness, thermodynamic_force,
                            update_damage)

from conftest import SQRT2, single_bar, small_block


def state_with(d):
    d = np.atleast_1d(np.asarray(d, dtype=float))
    return DamageState(d.copy(), d.copy())


def test_single_bar_model():
    m = single_bar()
    assert m.n_bars == 1 and m.n_free == 1
    np.testing.assert_allclose(m.f_unit, [1.0])


def test_default_tower_load_box():
    m = build_frame_lattice(FrameSpec())
    loaded = m.positions[m.loaded_nodes]
    assert len(loaded) == 9
    assert np.all((loaded[:, 0] >= 7) & (loaded[:, 0] <= 9))
    assert np.all((loaded[:, 1] >= 8) & (loaded[:, 1] <= 10))
    assert np.all(loaded[:, 2] == 11)
    f = m.full_displacement(m.f_unit) - m.prescribed
    per_node = f.reshape(-1, 3)[m.loaded_nodes]
    np.testing.assert_allclose(per_node[:, :2], 0.0)
    np.testing.assert_allclose(per_node[:, 2], -1.0 / 3.0)


def test_tower_bars_axis_aligned_unit_length():
    m = build_frame_lattice(FrameSpec(bracing=False))
    np.testing.assert_allclose(m.lengths, 1.0)
    assert np.all(np.isclose(np.abs(m.directions).max(axis=1), 1.0))


def _enumerate_braced_cube(n):
    pts = set(itertools.product(range(n + 1), repeat=3))
    count = 0
    for p, q in itertools.combinations(sorted(pts), 2):
        diff = sorted(abs(a - b) for a, b in zip(p, q))
        if diff == [0, 0, 1] or diff == [0, 1, 1]:
            count += 1
    return count


def test_braced_cube_bar_count():
    m = small_block((2, 2, 2), bracing=True)
    # 54 axis bars + 36 unit faces with 2 diagonals each
    assert m.n_bars == _enumerate_braced_cube(2) == 54 + 72


def test_unbraced_cube_bar_count():
    assert small_block((2, 2, 2), bracing=False).n_bars == 54


def test_disconnected_lattice_rejected():
    with pytest.raises(LatticeError):
        LatticeModel([[0, 0, 0], [1, 0, 0], [5, 0, 0], [6, 0, 0]], [[0, 1], [2, 3]],
                     dirichlet=[(0, 0.0)], load_dofs=[(3, 1.0)])


def test_no_load_rejected():
    with pytest.raises(LatticeError):
        LatticeModel([[0, 0, 0], [1, 0, 0]], [[0, 1]], dirichlet=[(0, 0.0)], load_dofs=[])
    with pytest.raises(LatticeError):
        build_frame_lattice(FrameSpec(load_box=((100, 101), (0, 0), (0, 0))))


def test_overlapping_bcs_rejected():
    with pytest.raises(LatticeError):
        LatticeModel([[0, 0, 0], [1, 0, 0]], [[0, 1]], dirichlet=[(3, 0.0)], load_dofs=[(3, 1.0)])


def test_bar_strain_examples():
    m = LatticeModel([[0, 0, 0], [1, 0, 0]], [[0, 1]], dirichlet=[(0, 0.0)], load_dofs=[(3, 1.0)])
    assert bar_strain(m, 0, [0, 0, 0, 0.25, 0, 0]) == pytest.approx(0.25)
    assert bar_strain(m, 0, [0.3, -0.2, 0.1, 0.3, -0.2, 0.1]) == 0.0
    d = LatticeModel([[0, 0, 0], [1, 1, 0]], [[0, 1]], dirichlet=[(0, 0.0)], load_dofs=[(3, 1.0)])
    assert d.lengths[0] == pytest.approx(SQRT2)
    assert bar_strain(d, 0, [0, 0, 0, 0.1, 0, 0]) == pytest.approx(0.05)


def test_thermodynamic_force_examples():
    m = single_bar()
    bar = m.bars[0]
    assert thermodynamic_force(bar, 0.0) == 0.0
    assert thermodynamic_force(bar, 0.25) == pytest.approx(0.03125)
    m2 = LatticeModel([[0, 0, 0], [1, 0, 0]], [[0, 1]], section=3.0, young=2.0,
                      dirichlet=[(0, 0.0)], load_dofs=[(3, 1.0)])
    assert thermodynamic_force(m2.bars[0], 1.0) == pytest.approx(3.0)


def test_damage_update_examples():
    m = single_bar()
    s = update_damage(DamageState.virgin(1), m, np.array([0.25]))
    assert s.d[0] == pytest.approx(0.25, abs=1e-15)
    s = update_damage(state_with(0.5), m, np.array([0.25]))
    assert s.d[0] == 0.5
    s = update_damage(DamageState.virgin(1), m, np.array([1.2]))
    assert s.history[0] == pytest.approx(1.2) and s.d[0] == 1.0


def test_internal_force_examples():
    m = single_bar()
    assert np.all(internal_forces(m, np.zeros(1), DamageState.virgin(1)) == 0)
    s = state_with(0.25)
    assert axial_forces(m, np.array([0.25]), s)[0] == pytest.approx(0.1875)
    R = internal_forces(m, np.array([0.25]), s) + external_forces(m, 0.1875)
    assert abs(R[0]) < 1e-15


def test_series_bars_interior_balance():
    m = LatticeModel([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1], [1, 2]],
                     dirichlet=[(0, 0), (1, 0), (2, 0), (4, 0), (5, 0), (7, 0), (8, 0)],
                     load_dofs=[(6, 1.0)])
    U = np.array([0.1, 0.2])  # x of nodes 1 and 2: equal strains
    F = internal_forces(m, U, DamageState.virgin(2))
    assert abs(F[0]) < 1e-15 and F[1] == pytest.approx(-0.1)


def test_tangent_examples():
    m = LatticeModel([[0, 0, 0], [1, 0, 0]], [[0, 1]], dirichlet=[(1, 0), (2, 0), (4, 0), (5, 0)],
                     load_dofs=[(3, 1.0)])
    K = tangent_stiffness(m, np.zeros(2), DamageState.virgin(1), "secant").toarray()
    np.testing.assert_allclose(K, [[1, -1], [-1, 1]])
    b = single_bar()
    U = np.array([0.25])
    s = update_damage(DamageState.virgin(1), b, U)
    assert axial_tangent(b, U, s, "consistent")[0] == pytest.approx(0.5)
    locked = state_with(0.5)
    assert axial_tangent(b, U, locked, "secant")[0] == pytest.approx(0.5)
    # unloading at locked damage: consistent equals secant
    assert axial_tangent(b, U, locked, "consistent")[0] == pytest.approx(0.5)


def test_external_forces_examples():
    m = small_block((1, 1, 1))
    assert len(m.loaded_nodes) == 4
    assert np.all(external_forces(m, 0.0) == 0)
    F = m.full_displacement(external_forces(m, 1.0)) - m.prescribed
    np.testing.assert_allclose(F.reshape(-1, 3)[m.loaded_nodes, 2], -0.5)
    np.testing.assert_allclose(external_forces(m, 2.0), 2 * external_forces(m, 1.0))


def test_energy_gradient(block_model):
    rng = np.random.default_rng(3)
    m = block_model
    U = 0.05 * rng.standard_normal(m.n_free)
    s = state_with(rng.uniform(0, 0.9, m.n_bars))
    F = internal_forces(m, U, s)
    h = 1e-6
    g = np.array([(strain_energy(m, U + h * e, s) - strain_energy(m, U - h * e, s)) / (2 * h)
                  for e in np.eye(m.n_free)])
    assert np.linalg.norm(F + g) / np.linalg.norm(g) < 1e-6


def test_secant_tangent_matches_fd(block_model):
    rng = np.random.default_rng(4)
    m = block_model
    U = 0.05 * rng.standard_normal(m.n_free)
    s = state_with(rng.uniform(0, 0.9, m.n_bars))
    K = tangent_stiffness(m, U, s, "secant").toarray()
    h = 1e-6
    J = np.column_stack([-(internal_forces(m, U + h * e, s) - internal_forces(m, U - h * e, s)) / (2 * h)
                         for e in np.eye(m.n_free)])
    assert np.linalg.norm(K - J) / np.linalg.norm(J) < 1e-5


def test_consistent_tangent_matches_fd_on_loading_branch(block_model):
    rng = np.random.default_rng(5)
    m = block_model
    U = 0.05 * rng.standard_normal(m.n_free) + 0.02
    virgin = DamageState.virgin(m.n_bars)

    def force(V):
        return internal_forces(m, V, update_damage(virgin, m, V))

    s = update_damage(virgin, m, U)
    K = tangent_stiffness(m, U, s, "consistent").toarray()
    h = 1e-7
    J = np.column_stack([-(force(U + h * e) - force(U - h * e)) / (2 * h) for e in np.eye(m.n_free)])
    assert np.linalg.norm(K - J) / np.linalg.norm(J) < 1e-5


def test_residual_stiffness_floor():
    m = single_bar(residual=1e-6)
    assert axial_forces(m, np.array([2.0]), state_with(1.0))[0] == pytest.approx(2e-6)


def test_linear_material_has_no_damage():
    m = single_bar(damage=False)
    s = update_damage(DamageState.virgin(1), m, np.array([5.0]))
    assert s.d[0] == 0.0


def test_material_validation():
    with pytest.raises(LatticeError):
        MaterialLaw(alpha_dmg=-1.0)
    with pytest.raises(LatticeError):
        MaterialLaw(residual_stiffness=1.0)


def test_fingerprint_distinguishes_load():
    a = build_frame_lattice(FrameSpec())
    b = build_frame_lattice(FrameSpec(load_box=((9, 11), (9, 11), (11, 11))))
    assert a.fingerprint() == build_frame_lattice(FrameSpec()).fingerprint()
    assert a.fingerprint() != b.fingerprint()
    assert a.n_free == b.n_free
