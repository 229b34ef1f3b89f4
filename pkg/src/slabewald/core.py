"""Shared domain types and parameter selection for slab-geometry Coulomb solvers.

The simulation cell is periodic in x and y and confined in z, with optional
uniformly charged planes at z = 0 and z = lz. All quantities use reduced
Gaussian units: the bare pair potential is q_i*q_j/r with no 4*pi*eps0 factor.

The Ewald splitting parameter ``alpha`` (an inverse length) divides the
interaction into a short-range erfc part, truncated at r_c = s/alpha, and a
smooth Fourier part, truncated at k_c = 2*s*alpha. With these coupled cutoffs
both halves converge like exp(-s^2), so a single dimensionless ``s`` controls
the overall truncation accuracy.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import erfc

SQRT_PI = np.sqrt(np.pi)

NEUTRALITY_TOL = 1e-12


@dataclass(frozen=True)
class BoxGeometry:
    """Doubly periodic cell [0,lx)x[0,ly) confined to z in [0,lz].

    sigma_top and sigma_bot are uniform surface charge densities (charge per
    area) on the planes z = lz and z = 0.
    """

    lx: float
    ly: float
    lz: float
    sigma_top: float = 0.0
    sigma_bot: float = 0.0

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0 and self.lz > 0):
            raise ValueError("box lengths must be positive")
        if not (np.isfinite(self.sigma_top) and np.isfinite(self.sigma_bot)):
            raise ValueError("slab charge densities must be finite")

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def volume(self) -> float:
        return self.lx * self.ly * self.lz


@dataclass
class ParticleSystem:
    """Charges, masses, positions and velocities; the mutable MD state.

    Positions are wrapped into the primary cell in x,y at construction and
    kept unwrapped in z (the z recursion and the wall forces need absolute z).
    """

    charge: np.ndarray
    mass: np.ndarray
    pos: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        self.charge = np.ascontiguousarray(self.charge, dtype=np.float64)
        self.mass = np.ascontiguousarray(self.mass, dtype=np.float64)
        self.pos = np.ascontiguousarray(self.pos, dtype=np.float64)
        self.vel = np.ascontiguousarray(self.vel, dtype=np.float64)
        n = self.charge.shape[0]
        if self.mass.shape != (n,) or self.pos.shape != (n, 3) or self.vel.shape != (n, 3):
            raise ValueError("inconsistent array shapes")
        if n and not np.all(self.mass > 0):
            raise ValueError("masses must be positive")

    @property
    def n(self) -> int:
        return self.charge.shape[0]

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(self.charge.copy(), self.mass.copy(),
                              self.pos.copy(), self.vel.copy())


def make_system(charge, mass, pos, vel=None, box: BoxGeometry | None = None) -> ParticleSystem:
    """Build a ParticleSystem, wrapping x,y into the primary cell if a box is given."""
    pos = np.array(pos, dtype=np.float64).reshape(-1, 3)
    n = pos.shape[0]
    charge = np.asarray(charge, dtype=np.float64)
    mass = np.asarray(mass, dtype=np.float64)
    if vel is None:
        vel = np.zeros((n, 3))
    if box is not None:
        pos[:, 0] = np.mod(pos[:, 0], box.lx)
        pos[:, 1] = np.mod(pos[:, 1], box.ly)
        if n and (pos[:, 2].min() < 0 or pos[:, 2].max() > box.lz):
            raise ValueError("z coordinates must lie in [0, lz]")
    return ParticleSystem(charge, mass, pos, np.asarray(vel, dtype=np.float64))


@dataclass(frozen=True)
class EwaldParams:
    """Splitting parameter, coupled cutoffs, and the enumerated k-mode set.

    kmodes is an array of shape (K, 3) holding (kx, ky, |k|) for every nonzero
    integer-lattice mode k = 2*pi*(mx/lx, my/ly) with |k| <= k_c, boundary ties
    included. The set is closed under k -> -k and excludes (0,0).
    """

    alpha: float
    s: float
    r_c: float
    k_c: float
    kmodes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not (self.alpha > 0 and self.s > 0):
            raise ValueError("alpha and s must be positive")


def enumerate_kmodes(box: BoxGeometry, k_c: float) -> np.ndarray:
    """Nonzero lattice modes with |k| <= k_c (circular cutoff), deterministic order."""
    fx = 2.0 * np.pi / box.lx
    fy = 2.0 * np.pi / box.ly
    mx_max = int(np.floor(k_c / fx + 1e-9))
    my_max = int(np.floor(k_c / fy + 1e-9))
    mx, my = np.meshgrid(np.arange(-mx_max, mx_max + 1),
                         np.arange(-my_max, my_max + 1), indexing="ij")
    kx = fx * mx.ravel()
    ky = fy * my.ravel()
    knorm = np.hypot(kx, ky)
    # keep boundary ties: |k| <= k_c up to FP roundoff
    keep = (knorm > 0) & (knorm <= k_c * (1 + 1e-12))
    kx, ky, knorm = kx[keep], ky[keep], knorm[keep]
    order = np.lexsort((ky, kx, knorm))
    return np.column_stack([kx[order], ky[order], knorm[order]])


def make_ewald_params(alpha: float, s: float, box: BoxGeometry) -> EwaldParams:
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    if s <= 0.0:
        raise ValueError("s must be positive")
    r_c = s / alpha
    k_c = 2.0 * s * alpha
    return EwaldParams(alpha=alpha, s=s, r_c=r_c, k_c=k_c,
                       kmodes=enumerate_kmodes(box, k_c))


def validate_neutrality(system: ParticleSystem, box: BoxGeometry,
                        tol: float = NEUTRALITY_TOL) -> tuple[bool, float]:
    """Check total charge neutrality including the slab planes.

    Returns (ok, residual) with residual = |sum q_i + (sigma_top+sigma_bot)*lx*ly|.
    Without neutrality the doubly periodic lattice sum diverges, so solvers
    refuse to run when ok is False.
    """
    residual = float(abs(system.charge.sum()
                         + (box.sigma_top + box.sigma_bot) * box.area))
    scale = max(1.0, float(np.abs(system.charge).sum()))
    return residual <= tol * scale, residual


@njit(cache=True)
def _bucket_sort_perm(z, lz):  # pragma: no cover - exercised via sort_by_z
    n = z.shape[0]
    nb = n if n > 0 else 1
    counts = np.zeros(nb + 1, dtype=np.int64)
    ids = np.empty(n, dtype=np.int64)
    for i in range(n):
        b = int(z[i] / lz * nb)
        if b < 0:
            b = 0
        elif b >= nb:
            b = nb - 1
        ids[i] = b
        counts[b + 1] += 1
    for b in range(nb):
        counts[b + 1] += counts[b]
    perm = np.empty(n, dtype=np.int64)
    fill = counts[:nb].copy()
    for i in range(n):  # stable scatter in input order
        b = ids[i]
        perm[fill[b]] = i
        fill[b] += 1
    # insertion sort inside each bucket: O(1) average occupancy for uniform z,
    # stable because equal keys never swap
    for b in range(nb):
        lo, hi = counts[b], counts[b + 1]
        for i in range(lo + 1, hi):
            pi = perm[i]
            zi = z[pi]
            j = i - 1
            while j >= lo and z[perm[j]] > zi:
                perm[j + 1] = perm[j]
                j -= 1
            perm[j + 1] = pi
    return perm


def sort_by_z(system: ParticleSystem, lz: float) -> np.ndarray:
    """Stable permutation ordering particles by z, via linear-time bucket sort."""
    z = system.pos[:, 2]
    if not np.all(np.isfinite(z)):
        raise ValueError("z coordinates must be finite")
    return _bucket_sort_perm(np.ascontiguousarray(z), lz)


def choose_alpha(n: int, box: BoxGeometry, mode: str = "balanced",
                 prefactor: float = 1.0, s: float = 4.0) -> float:
    """Pick the splitting parameter from the solver cost-balance scaling laws.

    ``balanced`` equalizes the short-range and Fourier work of the recursive
    solver, alpha ~ N^{1/5} / (lx^{2/5} ly^{2/5} lz^{1/5}); when the implied
    r_c exceeds lz the interaction volume is a cylinder rather than a sphere
    and the balance switches to alpha ~ N^{1/4} / sqrt(lx*ly). ``linear``
    fixes the per-particle short-range cost, alpha ~ (N/V)^{1/3}, which suits
    the stochastic Fourier estimator. The laws carry no constants, hence the
    tunable prefactor.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    if mode == "linear":
        return prefactor * (n / box.volume) ** (1.0 / 3.0)
    if mode == "balanced":
        alpha = prefactor * n ** 0.2 / (box.lx ** 0.4 * box.ly ** 0.4 * box.lz ** 0.2)
        if s / alpha > box.lz:  # thin slab: cylinder-shaped neighborhood
            alpha = prefactor * n ** 0.25 / np.sqrt(box.lx * box.ly)
        return alpha
    raise ValueError(f"unknown alpha mode: {mode!r}")


@dataclass(frozen=True)
class ErrorPrediction:
    """Closed-form RMS truncation-error estimates for the coupled cutoffs."""

    e_phi_s: float
    e_phi_l: float
    e_U_s: float
    e_U_l: float
    e_F_s: float
    e_F_l: float


def predict_errors(params: EwaldParams, Q: float, V: float, n: int | None = None) -> ErrorPrediction:
    """Evaluate the truncation-error predictors at the given cutoffs.

    Parameters
    ----------
    params : EwaldParams
        Supplies alpha, r_c and k_c.
    Q : float
        Sum of squared charges.
    V : float
        Cell volume lx*ly*lz.
    n : int, optional
        Particle count; used to turn Q into an RMS per-particle charge for
        the force estimates. Defaults to treating sqrt(Q) as one charge.

    Returns
    -------
    ErrorPrediction
        RMS errors for the potential, energy, and force, split into
        real-space (truncated at r_c) and Fourier (truncated at k_c) parts.
    """
    a, rc, kc = params.alpha, params.r_c, params.k_c
    if Q <= 0:
        return ErrorPrediction(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    q_rms = np.sqrt(Q / n) if n else np.sqrt(Q)

    x = a * rc
    if x > 2.0:
        # large-cutoff asymptote of the real-space quadrature integral
        Qs = np.exp(-2.0 * x * x) / (4.0 * np.pi * a ** 4 * rc ** 3)
    else:
        Qs = (2.0 * np.exp(-x * x) * erfc(x) / (a * SQRT_PI)
              - rc * erfc(x) ** 2
              - np.sqrt(2.0 / (np.pi * a * a)) * erfc(np.sqrt(2.0) * x))
        Qs = max(Qs, 0.0)  # exact form can round negative once both cutoffs are huge
    gk = np.exp(-kc * kc / (4.0 * a * a))

    e_phi_s = np.sqrt(4.0 * np.pi * Q / V * Qs)
    e_phi_l = np.sqrt(8.0 * a * a * Q / (np.pi * V)) * kc ** -1.5 * gk
    e_U_s = Q * np.sqrt(0.5 / V) * np.exp(-x * x) / (a * a * rc ** 1.5)
    e_U_l = Q * np.sqrt(8.0 * a * a / (np.pi * V)) * kc ** -1.5 * gk
    e_F_s = 2.0 * q_rms * np.sqrt(Q / V) * np.exp(-x * x) / np.sqrt(rc)
    e_F_l = 4.0 * q_rms * np.sqrt(Q / (np.pi * V)) * a * gk / np.sqrt(kc)
    return ErrorPrediction(float(e_phi_s), float(e_phi_l), float(e_U_s),
                           float(e_U_l), float(e_F_s), float(e_F_l))


def rms_error(a, b) -> float:
    """sqrt(mean |a_i - b_i|^2); inputs must have matching lengths."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    if a.size == 0:
        raise ValueError("need at least one value")
    return float(np.sqrt(np.mean(np.abs(a - b) ** 2)))


PARTICLE_CSV_HEADER = "id,q,m,x,y,z,vx,vy,vz"


def load_particles(path, box: BoxGeometry | None = None) -> ParticleSystem:
    """Read a particle CSV (header id,q,m,x,y,z,vx,vy,vz), ordered by id."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=np.float64)
    data = np.atleast_1d(data)
    expected = PARTICLE_CSV_HEADER.split(",")
    if list(data.dtype.names) != expected:
        raise ValueError(f"particle CSV must have header {PARTICLE_CSV_HEADER}")
    order = np.argsort(data["id"], kind="stable")
    data = data[order]
    pos = np.column_stack([data["x"], data["y"], data["z"]])
    vel = np.column_stack([data["vx"], data["vy"], data["vz"]])
    return make_system(data["q"], data["m"], pos, vel, box=box)


def save_particles(path, system: ParticleSystem) -> None:
    with open(path, "w") as fh:
        fh.write(PARTICLE_CSV_HEADER + "\n")
        for i in range(system.n):
            x, y, z = system.pos[i]
            vx, vy, vz = system.vel[i]
            fh.write(f"{i},{system.charge[i]:.17g},{system.mass[i]:.17g},"
                     f"{x:.17g},{y:.17g},{z:.17g},{vx:.17g},{vy:.17g},{vz:.17g}\n")
