"""Sum-of-exponentials approximation of the unit Gaussian.

Approximates exp(-x^2) by sum_l w_l exp(-s_l |x|) with complex conjugate-pair
coefficients, obtained from trapezoidal quadrature of the inverse Laplace
representation

    exp(-x^2) = sqrt(pi)/(2*pi*i) * integral_G exp(z) z^{-1/2} exp(-2 sqrt(z) |x|) dz

along a hyperbolic contour z(u) = mu*(1 + sin(i*u - delta)). Replacing the
Gaussian by exponentials is what turns the slab Fourier kernels into
recursion-friendly forms: every z dependence becomes exp(-beta*z) with
Re(beta) >= 0.

Contour parameters below were tuned per term count by minimizing the sup error
on [0, 20] (beyond x = 20 both the Gaussian and the approximant are far below
any tolerance of interest). Certification never trusts stored values: the sup
error is always re-measured on a dense grid with local refinement.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

SQRT_PI = np.sqrt(np.pi)

# term count -> (mu, h, delta), tuned by Nelder-Mead on the certification grid
CONTOUR_PARAMS = {
    4: (9.488067269, 0.470062043, 1.017129457),
    6: (5.538899482, 0.485312224, 0.911189212),
    8: (5.471154454, 0.416613684, 0.876565397),
    12: (11.247880597, 0.250206047, 0.970986853),
    16: (19.946013034, 0.169984766, 1.018726016),
    20: (29.503144889, 0.127993786, 1.068943730),
    24: (35.541230958, 0.106333243, 1.074848562),
}

# measured sup errors for the tuned contours (informational; recertified at build)
ACHIEVED_EPS = {4: 1.6e-3, 6: 2.0e-4, 8: 3.2e-5, 12: 2.9e-7,
                16: 1.4e-9, 20: 2.2e-11, 24: 2.3e-13}

CERT_DOMAIN = 20.0

# Relative threshold below which the recursive mode sweep switches the
# removable singularity at alpha*s_l = k to its analytic limit. The limit
# branch errs O(gap) and the generic branch O(eps/gap^2); 2e-6 balances the
# two at roughly 1e-5 worst case. Only coefficient tables with (nearly) real
# exponents can get that close; the built-in contours never do.
SINGULAR_TOL = 2e-6


@dataclass(frozen=True)
class SOEApprox:
    """Certified exponential-sum coefficients for exp(-x^2)."""

    m: int
    w: np.ndarray
    s: np.ndarray
    eps_certified: float
    domain_max: float

    def __post_init__(self):
        if np.any(self.s.real <= 0):
            raise ValueError("every exponent must have positive real part")


def eval_soe(w: np.ndarray, s: np.ndarray, x) -> np.ndarray:
    """sum_l w_l exp(-s_l |x|), returned with its (tiny) imaginary part kept."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    return np.exp(-np.multiply.outer(x, s)) @ w


def eval_soe_real(soe: SOEApprox, x) -> np.ndarray:
    return np.real(eval_soe(soe.w, soe.s, x))


def _contour_nodes(m: int, mu: float, h: float, delta: float):
    j = np.arange(-(m // 2), m // 2)
    u = (j + 0.5) * h
    z = mu * (1.0 + np.sin(1j * u - delta))
    dz = 1j * mu * np.cos(1j * u - delta)
    w = SQRT_PI * h / (2.0j * np.pi) * np.exp(z) * z ** (-0.5) * dz
    s = 2.0 * np.sqrt(z)
    return w, s


def _interp_params(m: int):
    sizes = sorted(CONTOUR_PARAMS)
    if m < sizes[0] or m > sizes[-1]:
        raise ValueError(f"term count {m} outside the tuned range {sizes[0]}..{sizes[-1]}; "
                         "use load_soe_table for external coefficients")
    hi = next(v for v in sizes if v >= m)
    lo = max(v for v in sizes if v <= m)
    if lo == hi:
        return CONTOUR_PARAMS[m]
    t = (m - lo) / (hi - lo)
    return tuple((1 - t) * a + t * b
                 for a, b in zip(CONTOUR_PARAMS[lo], CONTOUR_PARAMS[hi]))


def build_soe_contour(m: int, x_max: float = CERT_DOMAIN) -> SOEApprox:
    """Construct and certify an m-term exponential sum for the unit Gaussian.

    Even m in the tuned range 4..24 are supported directly (odd m is bumped up:
    conjugate pairing needs an even count). The returned eps_certified is the
    measured sup error on [0, x_max].
    """
    if m < 2:
        raise ValueError("need at least two terms")
    if m % 2:
        m += 1
    w, s = _contour_nodes(m, *_interp_params(m))
    if np.any(s.real <= 0):
        raise ValueError("contour produced an exponent with nonpositive real part")
    eps = certify_soe_raw(w, s, x_max)
    return SOEApprox(m=m, w=w, s=s, eps_certified=eps, domain_max=x_max)


def certify_soe_raw(w: np.ndarray, s: np.ndarray, x_max: float = CERT_DOMAIN,
                    grid_n: int = 20001, target=None) -> float:
    """Sup error of the exponential sum against exp(-x^2) on [0, x_max].

    Dense uniform grid scan followed by bounded local refinement around every
    interior grid maximum. ``target`` overrides the Gaussian (self-comparison
    mode for the test harness).
    """
    if grid_n < 1000:
        raise ValueError("grid_n must be at least 1000")
    if target is None:
        target = lambda x: np.exp(-np.asarray(x, dtype=np.float64) ** 2)

    def err(x):
        return np.abs(np.real(eval_soe(w, s, x)) - target(x))

    x = np.linspace(0.0, x_max, grid_n)
    e = err(x)
    best = float(e.max())
    interior = np.flatnonzero((e[1:-1] >= e[:-2]) & (e[1:-1] >= e[2:])) + 1
    for i in interior:
        res = minimize_scalar(lambda t: -err(t), bounds=(x[i - 1], x[i + 1]),
                              method="bounded", options={"xatol": 1e-12})
        best = max(best, float(-res.fun))
    return best


def certify_soe(soe: SOEApprox, x_max: float = CERT_DOMAIN, grid_n: int = 20001,
                target=None) -> float:
    return certify_soe_raw(soe.w, soe.s, x_max, grid_n, target)


def load_soe_table(path, x_max: float = CERT_DOMAIN) -> SOEApprox:
    """Load coefficients from CSV (header re_w,im_w,re_s,im_s) and recertify.

    The certification error is always recomputed locally, never trusted from
    the file.
    """
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=np.float64)
    data = np.atleast_1d(data)
    if data.size == 0:
        raise ValueError("empty coefficient table")
    if list(data.dtype.names) != ["re_w", "im_w", "re_s", "im_s"]:
        raise ValueError("coefficient table must have header re_w,im_w,re_s,im_s")
    if np.any(~np.isfinite(data["re_w"])) or np.any(~np.isfinite(data["re_s"])):
        raise ValueError("coefficient table contains non-finite entries")
    w = data["re_w"] + 1j * data["im_w"]
    s = data["re_s"] + 1j * data["im_s"]
    if np.any(s.real <= 0):
        raise ValueError("every exponent must have positive real part")
    eps = certify_soe_raw(w, s, x_max)
    return SOEApprox(m=len(w), w=w, s=s, eps_certified=eps, domain_max=x_max)


def save_soe_table(path, soe: SOEApprox) -> None:
    with open(path, "w") as fh:
        fh.write("re_w,im_w,re_s,im_s\n")
        for wl, sl in zip(soe.w, soe.s):
            fh.write(f"{wl.real:.17g},{wl.imag:.17g},{sl.real:.17g},{sl.imag:.17g}\n")


def _exp_gap_ratio(ekz, ebz, z, g):
    """(exp(-kz) - exp(-bz)) / (b - k), elementwise over modes.

    Built from the already bounded exponentials, so it neither overflows nor
    cancels: where |(b-k)z| is small the quotient switches to the series of
    z(1 - exp(-u))/u at u = (b-k)z, making it smooth through b = k.
    """
    u = np.multiply.outer(z, g)
    small = np.abs(u) < 1e-2
    series = 1.0 + u * (-0.5 + u * (1.0 / 6.0
                                    + u * (-1.0 / 24.0 + u * (1.0 / 120.0))))
    direct = (ekz[..., None] - ebz) / np.where(small, 1.0, g)
    return np.where(small, (ekz * z)[..., None] * series, direct)


def xi_soe(soe: SOEApprox, alpha: float, k: float, z):
    """Exponential-sum closed forms of the slab Fourier kernels.

    Returns (xi_plus, xi_minus) approximating exp(+-kz) erfc(k/2a +- a z).
    The xi_minus bracket has a removable singularity at alpha*s_l = k; it is
    rearranged through (exp(-kz) - exp(-bz))/(b - k) so the evaluation stays
    accurate uniformly in k.
    """
    if k <= 0:
        raise ValueError("k must be positive (zero mode handled separately)")
    z = np.asarray(z, dtype=np.float64)
    b = alpha * soe.s  # (m,)
    common = (2.0 * alpha / SQRT_PI) * np.exp(-k * k / (4.0 * alpha * alpha))
    ebz = np.exp(-np.multiply.outer(z, b))  # (..., m)
    ekz = np.exp(-k * z)

    xi_p = common * np.real(ebz @ (soe.w / (b + k)))

    ratio = _exp_gap_ratio(ekz, ebz, z, b - k)
    xi_m = common * np.real(ekz * np.sum(soe.w / (b + k)) + ratio @ soe.w)
    return xi_p, xi_m


def dxi_soe(soe: SOEApprox, alpha: float, k: float, z):
    """z-derivatives of the xi_soe closed forms, same stable rearrangement."""
    if k <= 0:
        raise ValueError("k must be positive (zero mode handled separately)")
    z = np.asarray(z, dtype=np.float64)
    b = alpha * soe.s
    common = (2.0 * alpha / SQRT_PI) * np.exp(-k * k / (4.0 * alpha * alpha))
    ebz = np.exp(-np.multiply.outer(z, b))
    ekz = np.exp(-k * z)

    dxi_p = -common * np.real(ebz @ (soe.w * b / (b + k)))

    ratio = _exp_gap_ratio(ekz, ebz, z, b - k)
    dxi_m = common * np.real(ekz * np.sum(soe.w * b / (b + k))
                             - ratio @ (soe.w * b))
    return dxi_p, dxi_m


def erf_soe(soe: SOEApprox, alpha: float, z):
    """Error-function approximation (2/sqrt(pi)) sum (w_l/s_l)(1 - exp(-a s_l z))."""
    z = np.asarray(z, dtype=np.float64)
    ebz = np.exp(-np.multiply.outer(alpha * z, soe.s))
    return (2.0 / SQRT_PI) * np.real((1.0 - ebz) @ (soe.w / soe.s))


def erfc_soe(soe: SOEApprox, x):
    """Tail form (2/sqrt(pi)) sum (w_l/s_l) exp(-s_l x) of the complementary erf.

    Obtained by integrating the exponential sum over [x, inf). Unlike
    1 - erf_soe it decays to zero at large x instead of saturating at the
    quadrature defect, which keeps kernels built from it accurate uniformly
    in the slab height.
    """
    x = np.asarray(x, dtype=np.float64)
    ebz = np.exp(-np.multiply.outer(x, soe.s))
    return (2.0 / SQRT_PI) * np.real(ebz @ (soe.w / soe.s))
