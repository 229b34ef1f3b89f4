"""Exponential-sum construction, certification, and the derived kernels."""

import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy.special import erfc

from oracles import dxi_pair_mp, erf_sum_mp, xi_pair_mp, xi_soe_mp
from slabewald.ewald2d import dxi_closed, xi_closed
from slabewald.soe import (
    CERT_DOMAIN,
    CONTOUR_PARAMS,
    SOEApprox,
    build_soe_contour,
    certify_soe,
    certify_soe_raw,
    dxi_soe,
    erf_soe,
    erfc_soe,
    eval_soe,
    eval_soe_real,
    load_soe_table,
    save_soe_table,
    xi_soe,
)

# sup_x |exp(-x^2) - exp(-2x)| and its location, from the high-precision
# golden-section scan oracle (tests/oracles.py, gap_scan_max)
GAP_W1_S2 = 0.4113253034952338
GAP_W1_S2_AT = 0.4814008712980189
# sup_x |exp(-x^2) - exp(-x)| likewise
GAP_W1_S1 = 0.18185906260258541

ERFC_1 = 0.15729920705028513      # erfc(1) to 17 digits (mpmath oracle)
ERF_1 = 0.8427007929497149        # erf(1) likewise


# ---------------------------------------------------------------------------
# construction and certification
# ---------------------------------------------------------------------------

def test_contour_reaches_tabulated_accuracy(soe8, soe16, soe24):
    assert soe8.eps_certified <= 1e-4
    assert soe16.eps_certified <= 1e-8
    assert soe24.eps_certified <= 1e-12


def test_certified_error_nonincreasing_in_m():
    eps = [build_soe_contour(m).eps_certified for m in (8, 12, 16, 20, 24)]
    assert all(b <= a for a, b in zip(eps, eps[1:]))


def test_build_rejects_tiny_m_and_bumps_odd():
    with pytest.raises(ValueError):
        build_soe_contour(1)
    assert build_soe_contour(7).m == 8


def test_gaussian_match_within_certified_error(soe16):
    x = np.random.default_rng(0).random(500) * CERT_DOMAIN
    err = np.abs(eval_soe_real(soe16, x) - np.exp(-x ** 2))
    assert err.max() <= soe16.eps_certified * (1 + 1e-9)


def test_weights_sum_to_one_within_eps(soe8, soe16, soe24):
    """At x=0 the exponential sum collapses to sum(w); the Gaussian is 1.

    The certificate bounds the evaluated sum; np.sum accumulates in a
    different order, so allow its worst-case rounding on top. For m=24 that
    rounding is comparable to the certified error itself.
    """
    for soe in (soe8, soe16, soe24):
        rounding = soe.m * np.finfo(float).eps * np.sum(np.abs(soe.w))
        assert abs(np.sum(soe.w) - 1.0) <= soe.eps_certified + rounding


def test_evaluation_is_real_to_conjugate_pair_accuracy(soe16):
    x = np.linspace(0.0, CERT_DOMAIN, 2001)
    vals = eval_soe(soe16.w, soe16.s, x)
    assert np.all(np.abs(vals.imag) <= 1e-13 * (1.0 + np.abs(vals.real)))


def test_certify_single_term_gaps():
    got = certify_soe_raw(np.array([1.0 + 0j]), np.array([2.0 + 0j]))
    assert got == pytest.approx(GAP_W1_S2, rel=1e-9)
    got = certify_soe_raw(np.array([1.0 + 0j]), np.array([1.0 + 0j]))
    assert got == pytest.approx(GAP_W1_S1, rel=1e-9)


def test_certify_self_comparison_is_zero(soe8):
    target = lambda x: eval_soe_real(soe8, x)
    assert certify_soe(soe8, target=target) == 0.0


def test_certify_matches_stored_value(soe16):
    assert certify_soe(soe16) == pytest.approx(soe16.eps_certified,
                                               rel=1e-12)


def test_certify_rejects_coarse_grid(soe8):
    with pytest.raises(ValueError, match="grid_n"):
        certify_soe(soe8, grid_n=500)


def test_soeapprox_rejects_nonpositive_exponent_real_part():
    with pytest.raises(ValueError, match="positive real part"):
        SOEApprox(m=1, w=np.array([1.0 + 0j]), s=np.array([-1.0 + 1j]),
                  eps_certified=1.0, domain_max=20.0)


# ---------------------------------------------------------------------------
# table round trip
# ---------------------------------------------------------------------------

def test_table_roundtrip_bit_exact(tmp_path, soe8):
    path = tmp_path / "soe.csv"
    save_soe_table(path, soe8)
    back = load_soe_table(path)
    npt.assert_array_equal(back.w, soe8.w)
    npt.assert_array_equal(back.s, soe8.s)
    assert back.eps_certified == pytest.approx(soe8.eps_certified, rel=1e-12)


def test_load_single_term_table_recertifies(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("re_w,im_w,re_s,im_s\n1.0,0.0,1.0,0.0\n")
    soe = load_soe_table(path)
    assert soe.m == 1
    assert soe.eps_certified == pytest.approx(GAP_W1_S1, rel=1e-9)


def test_load_rejects_bad_tables(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("re_w,im_w,re_s,im_s\n")
    with pytest.raises(ValueError):
        load_soe_table(empty)

    wrong = tmp_path / "wrong.csv"
    wrong.write_text("w,ws,re_s,im_s\n1,0,1,0\n")
    with pytest.raises(ValueError, match="header"):
        load_soe_table(wrong)

    negative = tmp_path / "neg.csv"
    negative.write_text("re_w,im_w,re_s,im_s\n1.0,0.0,-2.0,0.0\n")
    with pytest.raises(ValueError, match="positive real part"):
        load_soe_table(negative)


# ---------------------------------------------------------------------------
# xi kernels
# ---------------------------------------------------------------------------

def _xi_bound(alpha, k, eps):
    return 2.0 * alpha * np.exp(-k * k / (4 * alpha * alpha)) / (
        math.sqrt(math.pi) * k) * eps


def _dxi_bound(alpha, k, eps):
    return 4.0 * alpha * np.exp(-k * k / (4 * alpha * alpha)) / \
        math.sqrt(math.pi) * eps


def test_xi_at_zero_separation_reduces_to_erfc(soe16):
    for alpha, k in ((1.0, 2.0), (0.5, 1.3), (2.0, 0.7)):
        xp, xm = xi_soe(soe16, alpha, k, 0.0)
        bound = _xi_bound(alpha, k, soe16.eps_certified)
        assert abs(xp - erfc(k / (2 * alpha))) <= bound
        assert abs(xm - erfc(k / (2 * alpha))) <= bound
    xp, xm = xi_soe(soe16, 1.0, 2.0, 0.0)
    assert xp == pytest.approx(ERFC_1, abs=1e-8)
    assert xm == pytest.approx(ERFC_1, abs=1e-8)


def test_xi_decays_at_large_separation(soe16):
    alpha, k = 1.0, 1.5
    xp, xm = xi_soe(soe16, alpha, k, 10.0)
    bound = _xi_bound(alpha, k, soe16.eps_certified)
    assert abs(xp) <= erfc(k / (2 * alpha) + alpha * 10.0) + bound
    assert abs(xm) <= math.exp(-k * 10.0) * 2.0 + bound


def test_xi_rejects_nonpositive_k(soe8):
    with pytest.raises(ValueError, match="k must be positive"):
        xi_soe(soe8, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError, match="k must be positive"):
        dxi_soe(soe8, 1.0, -1.0, 1.0)


def test_xi_matches_high_precision_reimplementation(soe8):
    alpha = 0.8
    for k, z in ((0.5, 0.3), (2.0, 1.7), (4.0, 6.0)):
        xp, xm = xi_soe(soe8, alpha, k, z)
        mp_p, mp_m = xi_soe_mp(soe8.w, soe8.s, alpha, k, z)
        assert xp == pytest.approx(float(mp_p), rel=1e-12, abs=1e-300)
        assert xm == pytest.approx(float(mp_m), rel=1e-12, abs=1e-300)


def test_xi_and_dxi_obey_global_error_bound(soe8, soe16):
    """Against the overflow-free closed form, on random (k,z) draws."""
    rng = np.random.default_rng(42)
    alpha = 0.5
    k = 0.02 + rng.random(100) * 4.98
    z = rng.random(100) * 40.0
    for soe in (soe8, soe16):
        eps = soe.eps_certified
        for ki, zi in zip(k, z):
            ref_p, ref_m = xi_closed(ki, zi, alpha)
            got_p, got_m = xi_soe(soe, alpha, ki, zi)
            assert abs(got_p - ref_p) <= _xi_bound(alpha, ki, eps)
            assert abs(got_m - ref_m) <= _xi_bound(alpha, ki, eps)
            dref_p, dref_m = dxi_closed(ki, zi, alpha)
            dgot_p, dgot_m = dxi_soe(soe, alpha, ki, zi)
            assert abs(dgot_p - dref_p) <= _dxi_bound(alpha, ki, eps)
            assert abs(dgot_m - dref_m) <= _dxi_bound(alpha, ki, eps)


def test_xi_pair_sum_stays_bounded(soe16):
    rng = np.random.default_rng(8)
    alpha = 0.7
    for _ in range(50):
        k = 0.05 + rng.random() * 4.0
        z = rng.random() * 20.0
        xp, xm = xi_soe(soe16, alpha, k, z)
        cap = 4.0 * math.exp(-k * k / (4 * alpha * alpha)) \
            + 2.0 * _xi_bound(alpha, k, soe16.eps_certified)
        assert xp + xm <= cap


def test_dxi_matches_finite_differences(soe16):
    alpha = k = 1.0
    z, h = 1.0, 1e-5
    fp, fm = xi_soe(soe16, alpha, k, z + h)
    bp, bm = xi_soe(soe16, alpha, k, z - h)
    dp, dm = dxi_soe(soe16, alpha, k, z)
    assert dp == pytest.approx((fp - bp) / (2 * h), abs=1e-9)
    assert dm == pytest.approx((fm - bm) / (2 * h), abs=1e-9)


def test_dxi_plus_at_zero_matches_direct_substitution(soe8):
    alpha, k = 1.3, 0.9
    expected = -(2.0 * alpha ** 2 / math.sqrt(math.pi)) \
        * math.exp(-k * k / (4 * alpha * alpha)) \
        * np.real(np.sum(soe8.w * soe8.s / (alpha * soe8.s + k)))
    got, _ = dxi_soe(soe8, alpha, k, 0.0)
    assert got == pytest.approx(expected, rel=1e-13)


def test_removable_singularity_is_smooth_in_k():
    """A real exponent lets alpha*s_l approach k arbitrarily closely; the
    rearranged kernels must stay accurate uniformly through the crossing."""
    soe = SOEApprox(m=1, w=np.array([1.0 + 0j]), s=np.array([2.0 + 0j]),
                    eps_certified=GAP_W1_S2, domain_max=CERT_DOMAIN)
    alpha, z = 1.0, 1.4
    b = 2.0
    for gap in (-1e-4, -1e-9, 1e-12, 3e-9, 1e-6, 1e-4, 1e-2):
        k = b * (1.0 + gap)
        xp, xm = xi_soe(soe, alpha, k, z)
        mp_p, mp_m = xi_soe_mp(soe.w, soe.s, alpha, k, z)
        assert xp == pytest.approx(float(mp_p), rel=1e-9)
        assert xm == pytest.approx(float(mp_m), rel=1e-9)
        dp, dm = dxi_soe(soe, alpha, k, z)
        h = 1e-6
        fp, fm = xi_soe(soe, alpha, k, z + h)
        bp, bm = xi_soe(soe, alpha, k, z - h)
        assert dp == pytest.approx((fp - bp) / (2 * h), rel=1e-6, abs=1e-12)
        assert dm == pytest.approx((fm - bm) / (2 * h), rel=1e-6, abs=1e-12)


# ---------------------------------------------------------------------------
# erf and erfc forms
# ---------------------------------------------------------------------------

def test_erf_form_basics(soe16):
    alpha = 1.0
    assert erf_soe(soe16, alpha, 0.0) == 0.0
    bound = (2.0 * alpha / math.sqrt(math.pi)) * soe16.eps_certified
    assert abs(erf_soe(soe16, alpha, 1.0) - ERF_1) <= bound
    z = np.linspace(0.0, 15.0, 301)
    vals = erf_soe(soe16, alpha, z)
    # nondecreasing up to the certified wiggle room of the integrand
    slack = (2 * alpha / math.sqrt(math.pi)) * soe16.eps_certified * (z[1] - z[0])
    assert np.all(np.diff(vals) >= -slack)


def test_erf_form_error_grows_at_most_linearly(soe8):
    alpha = 0.5
    z = np.linspace(0.0, 40.0, 401)
    err = np.abs(erf_soe(soe8, alpha, z)
                 - np.array([math.erf(alpha * zi) for zi in z]))
    cap = (2.0 * alpha / math.sqrt(math.pi)) * soe8.eps_certified \
        * np.minimum(z, CERT_DOMAIN / alpha) + 1e-15
    assert np.all(err <= cap)


def test_erf_form_matches_high_precision_reimplementation(soe8):
    for z in (0.3, 2.0, 11.0):
        got = erf_soe(soe8, 0.9, z)
        assert got == pytest.approx(float(erf_sum_mp(soe8.w, soe8.s, 0.9, z)),
                                    rel=1e-12)


def test_erfc_tail_form_decays(soe24):
    assert abs(erfc_soe(soe24, 1.0) - ERFC_1) <= 1e-11
    x = np.linspace(0.0, 30.0, 121)
    vals = erfc_soe(soe24, x)
    slack = (2 / math.sqrt(math.pi)) * soe24.eps_certified * (x[1] - x[0])
    assert np.all(np.diff(vals) <= slack)
    assert vals[-1] < 1e-8


# ---------------------------------------------------------------------------
# cross-checks of the closed-form reference kernels themselves
# ---------------------------------------------------------------------------

def test_stable_closed_form_matches_high_precision_oracle():
    rng = np.random.default_rng(9)
    for _ in range(25):
        k = 0.05 + rng.random() * 5.0
        z = rng.random() * 50.0
        alpha = 0.2 + rng.random() * 1.5
        xp, xm = xi_closed(k, z, alpha)
        mp_p, mp_m = xi_pair_mp(k, z, alpha)
        assert xp == pytest.approx(float(mp_p), rel=1e-13, abs=1e-280)
        assert xm == pytest.approx(float(mp_m), rel=1e-13, abs=1e-280)
        dp, dm = dxi_closed(k, z, alpha)
        mdp, mdm = dxi_pair_mp(k, z, alpha)
        # the derivative is a difference of two kernel-scale terms, so
        # tolerance is anchored to that scale rather than the result
        scale = k * max(abs(xp), abs(xm)) \
            + 2 * alpha / math.sqrt(math.pi) + 1e-280
        assert abs(dp - float(mdp)) <= 1e-13 * scale
        assert abs(dm - float(mdm)) <= 1e-13 * scale
