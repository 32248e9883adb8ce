import numpy as np
import pytest

from latred.errors import ControlFailure
from latred.lattice import (DamageState, FrameSpec, build_frame_lattice, external_forces,
                            internal_forces, tangent_stiffness, update_damage)
from latred.nonlinear import (IncrementControl, arc_length_step, newton_solve_full, run_increments,
                              run_reference)

from conftest import SMALL_TOWER, single_bar, small_block


def test_zero_load_zero_iterations(block_model):
    dU, it = newton_solve_full(block_model, DamageState.virgin(block_model.n_bars),
                               np.zeros(block_model.n_free), 0.0)
    assert it == 0 and not np.any(dU)


def test_single_bar_prescribed_load():
    m = single_bar()
    dU, it = newton_solve_full(m, DamageState.virgin(1), np.zeros(1), 0.1875, tol=1e-12)
    assert dU[0] == pytest.approx(0.25, abs=1e-10)


def test_linear_lattice_one_iteration():
    m = small_block(damage=False)
    dU, it = newton_solve_full(m, DamageState.virgin(m.n_bars), np.zeros(m.n_free), 2.0, tol=1e-10)
    assert it == 1
    K = tangent_stiffness(m, np.zeros(m.n_free), DamageState.virgin(m.n_bars)).toarray()
    np.testing.assert_allclose(dU, np.linalg.solve(K, external_forces(m, 2.0)), rtol=1e-9, atol=1e-12)


def test_single_bar_snap_through():
    m = single_bar()
    h = run_reference(m, IncrementControl(delta_d_max=0.1), 10)
    eps = np.array([r.U[0] for r in h.records])
    np.testing.assert_allclose(eps, np.arange(1, 11) / 10, atol=1e-8)
    np.testing.assert_allclose(h.load_factors, (1 - eps) * eps, atol=1e-8)
    np.testing.assert_allclose(h.deflections, eps, atol=1e-8)
    i, peak = h.peak()
    assert i == 4 and peak == pytest.approx(0.25)


def test_all_bars_broken_control_failure():
    m = single_bar()
    with pytest.raises(ControlFailure):
        arc_length_step(m, DamageState(np.ones(1), np.ones(1)), np.ones(1), IncrementControl())


def test_empty_history():
    h = run_reference(single_bar(), IncrementControl(), 0)
    assert len(h) == 0 and h.load_factors.size == 0


def test_control_validation():
    with pytest.raises(ValueError):
        IncrementControl(delta_d_max=0)
    with pytest.raises(ValueError):
        IncrementControl(newton_tol=-1)


@pytest.fixture(scope="module")
def small_tower_history():
    m = build_frame_lattice(SMALL_TOWER)
    return m, run_reference(m, IncrementControl(delta_d_max=0.1), 10)


def test_small_tower_increment_invariants(small_tower_history):
    m, h = small_tower_history
    d_prev = np.zeros(m.n_bars)
    for r in h.records:
        d = r.state.d
        assert np.all((d >= 0) & (d <= 1))
        assert np.all(d >= d_prev)
        assert (d - d_prev).max() == pytest.approx(0.1, rel=1e-3)
        R = internal_forces(m, r.U, r.state) + external_forces(m, r.load_factor)
        assert np.linalg.norm(R) / abs(r.load_factor) <= 1e-8
        d_prev = d


def test_small_tower_limit_point(small_tower_history):
    _, h = small_tower_history
    i, peak = h.peak()
    assert 0 < i < len(h) - 1
    assert h.load_factors[-1] < peak


def test_bundled_tower_limit_point():
    m = build_frame_lattice(FrameSpec(material=SMALL_TOWER.material))
    h = run_reference(m, IncrementControl(delta_d_max=1 / 30), 30)
    i, peak = h.peak()
    assert 5 < i < 29
    assert np.all(np.diff(h.load_factors[i:]) < 0)


def test_reference_is_deterministic():
    m = build_frame_lattice(SMALL_TOWER)
    a = run_reference(m, IncrementControl(delta_d_max=0.1), 4)
    b = run_reference(m, IncrementControl(delta_d_max=0.1), 4)
    for ra, rb in zip(a.records, b.records):
        assert ra.load_factor == rb.load_factor
        assert np.array_equal(ra.U, rb.U)
        assert np.array_equal(ra.state.d, rb.state.d)


def test_failure_carries_increment():
    m = single_bar(residual=1e-6)
    with pytest.raises(ControlFailure) as info:
        run_reference(m, IncrementControl(delta_d_max=0.5), 5)
    assert info.value.increment == 3
    assert len(info.value.history) == 2
