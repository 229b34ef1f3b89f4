"""Reference solver: closed-form kernels, part sums, and the image-sum oracle."""

import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy.special import erfc

from oracles import (
    fourier_energy_mp,
    lattice_sum_direct,
    numerical_gradient,
    short_range_energy_direct,
    zero_mode_energy_mp,
)
from slabewald.core import BoxGeometry, make_ewald_params, make_system
from slabewald.ewald2d import (
    EnergyBreakdown,
    converged_lattice_sum,
    direct_lattice_sum,
    fourier_energy_ref,
    ref_energy_forces,
    self_energy,
    short_range_energy_forces,
    slab_energy_forces,
    total_energy_ref,
    xi_closed,
    zero_mode_energy_ref,
)

ERFC_01 = 0.8875370839817152     # erfc(0.1), mpmath oracle
ERFC_1 = 0.15729920705028513     # erfc(1)
ERF_1 = 0.8427007929497149       # erf(1)
SQRT_PI = 1.7724538509055159


def _salt(n_pairs, box, seed, margin=0.0):
    rng = np.random.default_rng(seed)
    n = 2 * n_pairs
    span = np.array([box.lx, box.ly, box.lz - 2 * margin])
    pos = rng.random((n, 3)) * span + [0.0, 0.0, margin]
    q = np.concatenate([np.ones(n_pairs), -np.ones(n_pairs)])
    return make_system(q, np.ones(n), pos, box=box)


# ---------------------------------------------------------------------------
# closed-form kernels
# ---------------------------------------------------------------------------

def test_xi_zero_separation_is_erfc():
    for alpha, k in ((1.0, 2.0), (0.25, 0.5), (3.0, 6.0)):
        xp, xm = xi_closed(k, 0.0, alpha)
        # k = 2 alpha makes both kernels erfc(1)
        assert xp == pytest.approx(ERFC_1, rel=1e-14)
        assert xm == pytest.approx(ERFC_1, rel=1e-14)
    xp, xm = xi_closed(1.0, 0.0, 1.0)
    assert xp == xm == pytest.approx(erfc(0.5), rel=1e-14)


def test_xi_stable_equals_naive_at_moderate_exponent():
    rng = np.random.default_rng(10)
    for _ in range(200):
        alpha = 0.2 + rng.random() * 2.0
        k = 0.05 + rng.random() * 4.0
        z = rng.random() * min(19.5 / k, 25.0 / alpha)
        naive = xi_closed(k, z, alpha, variant="naive")
        stable = xi_closed(k, z, alpha, variant="stable")
        for a, b in zip(naive, stable):
            assert a == pytest.approx(b, rel=1e-12, abs=1e-280)


def test_xi_stable_finite_where_naive_degrades():
    # kz = 800: the plain exponential overflows while the erfc factor
    # underflows, so the literal product is 0*inf or inf
    xp_naive, _ = xi_closed(1.0, 800.0, 1.0, variant="naive")
    assert not np.isfinite(xp_naive)
    xp, xm = xi_closed(1.0, 800.0, 1.0, variant="stable")
    assert np.isfinite(xp) and np.isfinite(xm)
    assert xp == 0.0                       # below the FP64 floor
    assert xm == pytest.approx(2.0 * math.exp(-800.0), rel=1e-12)

    # kz = 50: representable but already deep in the damped regime
    xp, xm = xi_closed(1.0, 50.0, 1.0, variant="stable")
    assert xp <= 1e-300
    assert xm == pytest.approx(2.0 * math.exp(-50.0), rel=1e-10)


def test_xi_pair_sum_bounded_by_gaussian():
    rng = np.random.default_rng(11)
    for _ in range(300):
        alpha = 0.2 + rng.random() * 2.0
        k = 0.05 + rng.random() * 5.0
        z = rng.random() * 40.0
        xp, xm = xi_closed(k, z, alpha)
        assert xp + xm <= 4.0 * math.exp(-k * k / (4 * alpha * alpha)) * (
            1 + 1e-12)


def test_xi_validates_arguments():
    with pytest.raises(ValueError, match="k must be positive"):
        xi_closed(0.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="variant"):
        xi_closed(1.0, 1.0, 1.0, variant="fast")


# ---------------------------------------------------------------------------
# short-range part
# ---------------------------------------------------------------------------

def test_short_range_single_pair():
    box = BoxGeometry(100.0, 100.0, 10.0)
    system = make_system([1.0, -1.0], [1.0, 1.0],
                         np.array([[0.5, 50.0, 5.0], [1.5, 50.0, 5.0]]),
                         box=box)
    u, forces = short_range_energy_forces(system, box, 0.1, 40.0)
    assert u == pytest.approx(-ERFC_01, rel=1e-14)
    # attractive pair: force on the left particle points right
    assert forces[0, 0] > 0
    npt.assert_allclose(forces[0], -forces[1], rtol=1e-14)


def test_short_range_empty_and_singular():
    box = BoxGeometry(10.0, 10.0, 5.0)
    empty = make_system(np.empty(0), np.empty(0), np.empty((0, 3)))
    u, forces = short_range_energy_forces(empty, box, 1.0, 3.0)
    assert u == 0.0 and forces.shape == (0, 3)

    dup = make_system([1.0, 1.0], [1.0, 1.0],
                      np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]), box=box)
    with pytest.raises(ValueError, match="coincident"):
        short_range_energy_forces(dup, box, 1.0, 3.0)


def test_short_range_rejects_wide_cutoff():
    box = BoxGeometry(10.0, 10.0, 5.0)
    system = _salt(2, box, 0)
    with pytest.raises(ValueError, match="half"):
        short_range_energy_forces(system, box, 1.0, 5.5)


def test_short_range_matches_direct_double_loop():
    box = BoxGeometry(12.0, 9.0, 6.0)
    system = _salt(15, box, 12)
    u, _ = short_range_energy_forces(system, box, 1.1, 4.0)
    direct = short_range_energy_direct(system.charge, system.pos,
                                       box.lx, box.ly, 1.1, 4.0)
    assert u == pytest.approx(direct, rel=1e-13)


def test_short_range_forces_are_exact_gradient():
    box = BoxGeometry(10.0, 10.0, 6.0)
    system = _salt(5, box, 13, margin=0.5)
    alpha, r_c = 0.9, 3.5
    _, forces = short_range_energy_forces(system, box, alpha, r_c)

    def energy_of(pos):
        moved = make_system(system.charge, system.mass, pos, box=box)
        return short_range_energy_forces(moved, box, alpha, r_c)[0]

    fd = -numerical_gradient(energy_of, system.pos, h=1e-6)
    npt.assert_allclose(forces, fd, atol=1e-6 * np.abs(forces).max())


# ---------------------------------------------------------------------------
# Fourier part (nonzero modes)
# ---------------------------------------------------------------------------

def test_fourier_single_particle_keeps_only_charge_term():
    box = BoxGeometry(8.0, 8.0, 4.0)
    system = make_system([1.0], [1.0], np.array([[1.0, 2.0, 2.0]]), box=box)
    params = make_ewald_params(1.0, 3.0, box)
    u = fourier_energy_ref(system, box, params)
    knorm = params.kmodes[:, 2]
    expected = np.sum(np.pi / (knorm * box.area) * erfc(knorm / 2.0))
    assert u == pytest.approx(float(expected), rel=1e-13)


def test_fourier_mirror_pair_matches_high_precision_sum():
    box = BoxGeometry(6.0, 6.0, 4.0)
    pos = np.array([[1.0, 2.5, 1.0], [4.0, 2.5, 1.0]])  # offset Lx/2
    system = make_system([1.0, -1.0], [1.0, 1.0], pos, box=box)
    params = make_ewald_params(1.0, 2.5, box)
    u = fourier_energy_ref(system, box, params)
    expected = fourier_energy_mp(system.charge, system.pos, box.lx, box.ly,
                                 1.0, params.kmodes)
    assert u == pytest.approx(expected, rel=1e-12)


def test_fourier_random_system_matches_high_precision_sum():
    box = BoxGeometry(6.0, 6.0, 4.0)
    system = _salt(3, box, 14)
    params = make_ewald_params(1.0, 2.5, box)
    u = fourier_energy_ref(system, box, params)
    expected = fourier_energy_mp(system.charge, system.pos, box.lx, box.ly,
                                 1.0, params.kmodes)
    assert u == pytest.approx(expected, rel=1e-12)


def test_total_energy_invariant_in_alpha():
    box = BoxGeometry(160.0, 160.0, 160.0)
    system = _salt(10, box, 15)
    totals = [total_energy_ref(system, box,
                               make_ewald_params(a, 6.0, box)).total
              for a in (0.08, 0.10, 0.12)]
    spread = max(totals) - min(totals)
    assert spread <= 1e-8 * abs(totals[1])


# ---------------------------------------------------------------------------
# zero mode, self term, slab term
# ---------------------------------------------------------------------------

def test_zero_mode_equal_heights_uses_gaussian_kernel():
    box = BoxGeometry(10.0, 10.0, 5.0)
    pos = np.array([[1.0, 1.0, 2.0], [8.0, 3.0, 2.0]])
    system = make_system([1.0, 1.0], [1.0, 1.0], pos, box=box)
    alpha = 0.1
    kernel = 1.0 / (alpha * SQRT_PI)
    assert kernel == pytest.approx(5.641895835477563, rel=1e-15)
    expected = -2.0 * np.pi / box.area * 0.5 * 4.0 * kernel
    assert zero_mode_energy_ref(system, box, alpha) == pytest.approx(
        expected, rel=1e-13)


def test_zero_mode_pair_at_unit_scaled_separation():
    box = BoxGeometry(10.0, 10.0, 5.0)
    pos = np.array([[1.0, 1.0, 1.0], [4.0, 7.0, 3.0]])  # dz = 2, alpha = 0.5
    system = make_system([1.0, -1.0], [1.0, 1.0], pos, box=box)
    alpha = 0.5
    k_same = 1.0 / (alpha * SQRT_PI)
    k_pair = 2.0 * ERF_1 + math.exp(-1.0) / (alpha * SQRT_PI)
    expected = -2.0 * np.pi / box.area * (k_same - k_pair)
    assert zero_mode_energy_ref(system, box, alpha) == pytest.approx(
        expected, rel=1e-13)


def test_zero_mode_invariant_under_z_shift():
    box = BoxGeometry(10.0, 10.0, 8.0)
    rng = np.random.default_rng(16)
    pos = rng.random((6, 3)) * [10, 10, 3]
    q = np.array([1.0, 1.0, -1.0, -1.0, 1.0, -1.0])
    a = make_system(q, np.ones(6), pos, box=box)
    b = make_system(q, np.ones(6), pos + [0, 0, 4.0], box=box)
    ua = zero_mode_energy_ref(a, box, 0.7)
    ub = zero_mode_energy_ref(b, box, 0.7)
    assert ua == pytest.approx(ub, rel=1e-12)


def test_zero_mode_matches_high_precision_sum():
    box = BoxGeometry(9.0, 7.0, 6.0)
    system = _salt(4, box, 17)
    got = zero_mode_energy_ref(system, box, 0.6)
    expected = zero_mode_energy_mp(system.charge, system.pos[:, 2], 0.6,
                                   box.area)
    assert got == pytest.approx(expected, rel=1e-13)


def test_self_energy_closed_form():
    box = BoxGeometry(10.0, 10.0, 5.0)
    system = make_system([1.0], [1.0], np.array([[1.0, 1.0, 1.0]]), box=box)
    assert self_energy(system, 0.1) == pytest.approx(0.05641895835477563,
                                                     rel=1e-15)
    assert self_energy(system, 0.2) == pytest.approx(
        2.0 * self_energy(system, 0.1), rel=1e-15)
    empty = make_system(np.empty(0), np.empty(0), np.empty((0, 3)))
    assert self_energy(empty, 0.1) == 0.0


def test_slab_term_charged_planes():
    box = BoxGeometry(100.0, 100.0, 100.0, sigma_top=-0.005,
                      sigma_bot=-0.005)
    system = make_system([1.0], [1.0], np.array([[1.0, 1.0, 0.0]]), box=box)
    u, forces = slab_energy_forces(system, box)
    assert u == pytest.approx(math.pi, rel=1e-14)
    # equal densities pull equally from both sides
    assert forces[0, 2] == 0.0


def test_slab_term_general_densities():
    box = BoxGeometry(10.0, 10.0, 100.0, sigma_top=0.002, sigma_bot=-0.001)
    system = make_system([2.0], [1.0], np.array([[1.0, 1.0, 30.0]]), box=box)
    u, forces = slab_energy_forces(system, box)
    assert u == pytest.approx(2.0 * -2.0 * math.pi * (0.002 * 70.0
                                                      - 0.001 * 30.0),
                              rel=1e-13)
    assert forces[0, 2] == pytest.approx(-2.0 * math.pi * 2.0
                                         * (0.002 - -0.001), rel=1e-13)
    # and the force is the exact z-gradient of the energy
    shifted = make_system([2.0], [1.0], np.array([[1.0, 1.0, 30.001]]),
                          box=box)
    du = slab_energy_forces(shifted, box)[0] - u
    assert forces[0, 2] == pytest.approx(-du / 0.001, rel=1e-9)


# ---------------------------------------------------------------------------
# brute-force image sum
# ---------------------------------------------------------------------------

def test_lattice_sum_matches_plain_python_reimplementation():
    box = BoxGeometry(5.0, 4.0, 3.0)
    system = _salt(2, box, 18)
    fast = direct_lattice_sum(system, box, 6)
    slow = lattice_sum_direct(system.charge, system.pos, box.lx, box.ly, 6)
    assert fast == pytest.approx(slow, rel=1e-12)


def test_lattice_sum_close_pair_near_bare_coulomb():
    box = BoxGeometry(100.0, 100.0, 10.0)
    pos = np.array([[50.0, 50.0, 5.0], [51.0, 50.0, 5.0]])
    system = make_system([1.0, -1.0], [1.0, 1.0], pos, box=box)
    u200 = direct_lattice_sum(system, box, 200)
    u400 = direct_lattice_sum(system, box, 400)
    assert u200 == pytest.approx(-1.0, abs=0.02)
    assert abs(u400 - u200) < abs(u200 + 1.0)  # image tail shrinks with R


def test_lattice_sum_xy_translation_invariance():
    box = BoxGeometry(7.0, 7.0, 4.0)
    system = _salt(3, box, 19)
    moved = make_system(system.charge, system.mass,
                        system.pos + [2.3, -1.1, 0.0], box=box)
    a = direct_lattice_sum(system, box, 30)
    b = direct_lattice_sum(moved, box, 30)
    assert a == pytest.approx(b, rel=1e-11)


def test_lattice_sum_validates_input():
    box = BoxGeometry(7.0, 7.0, 4.0)
    lone = make_system([1.0], [1.0], np.array([[1.0, 1.0, 1.0]]), box=box)
    with pytest.raises(ValueError, match="neutral"):
        direct_lattice_sum(lone, box, 10)
    with pytest.raises(ValueError, match="radius"):
        direct_lattice_sum(_salt(1, box, 0), box, 0)


def test_reference_total_agrees_with_image_sum():
    box = BoxGeometry(100.0, 100.0, 100.0)
    system = _salt(5, box, 20)
    params = make_ewald_params(0.15, 6.0, box)
    total = total_energy_ref(system, box, params).total
    oracle = converged_lattice_sum(system, box)
    assert total == pytest.approx(oracle, rel=1e-6)


# ---------------------------------------------------------------------------
# assembly and forces
# ---------------------------------------------------------------------------

def test_breakdown_assembly_identity():
    bd = EnergyBreakdown(u_s=1.5, u_l_k=0.25, u_l_0=-0.5, u_self=2.0,
                         u_ps=0.125)
    assert bd.total == 1.5 + 0.25 - 0.5 - 2.0 + 0.125


def test_total_energy_empty_system():
    box = BoxGeometry(10.0, 10.0, 5.0)
    empty = make_system(np.empty(0), np.empty(0), np.empty((0, 3)))
    params = make_ewald_params(1.0, 3.0, box)
    bd, forces = ref_energy_forces(empty, box, params)
    assert bd.total == 0.0
    assert forces.shape == (0, 3)


def test_reference_forces_newtons_third_law():
    box = BoxGeometry(10.0, 10.0, 6.0)
    system = _salt(8, box, 21)
    params = make_ewald_params(1.0, 4.0, box)
    _, forces = ref_energy_forces(system, box, params)
    npt.assert_allclose(forces.sum(axis=0), np.zeros(3),
                        atol=1e-11 * np.abs(forces).sum())


def test_reference_forces_are_exact_gradient():
    box = BoxGeometry(8.0, 8.0, 6.0)
    system = _salt(4, box, 22, margin=0.8)
    params = make_ewald_params(1.0, 3.0, box)
    _, forces = ref_energy_forces(system, box, params)

    def energy_of(pos):
        moved = make_system(system.charge, system.mass, pos, box=box)
        return total_energy_ref(moved, box, params).total

    fd = -numerical_gradient(energy_of, system.pos, h=1e-5)
    npt.assert_allclose(forces, fd, atol=2e-6 * np.abs(forces).max())


def test_total_stable_equals_naive_in_thin_safe_box():
    box = BoxGeometry(8.0, 8.0, 3.0)
    system = _salt(6, box, 23)
    params = make_ewald_params(1.0, 3.0, box)  # k_c * lz = 18 < 20
    stable = total_energy_ref(system, box, params).total
    naive = total_energy_ref(system, box, params, variant="naive").total
    assert naive == pytest.approx(stable, rel=1e-12)
