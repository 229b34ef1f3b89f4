"""Stochastic Fourier-mode estimator for the slab Ewald solver.

Instead of summing every mode inside the cutoff, each evaluation draws a
small batch of P integer modes from the Boltzmann-like weight
exp(-k^2/4a^2)/H on the full (unbounded) mode lattice and rescales:

    U_fourier ~ (H/P) sum_eta exp(+k_eta^2/4a^2) u(k_eta) + C_Q,

where u(k) is the pairwise single-mode energy evaluated with the O(N m)
recursion sweep, H is the total weight over the lattice, and C_Q collects the
position-independent charge terms, summed deterministically since they cost
nothing per step. The estimator is unbiased over the sampler's stationary
distribution; fluctuations average out over batches (and, in dynamics, over
time steps) rather than biasing the mean.

Only the nonzero Fourier modes are sampled. The short-range sum, the k=0
mode, the confining-plane term and the self energy are evaluated exactly on
every call; they are cheap and their omission from sampling keeps the
estimator variance low.

Modes are drawn by a Metropolis chain with an independence proposal: each
axis proposes m* = round(X), X ~ Normal(0, a L/(pi sqrt(2))), which matches
the per-axis width of the target weight, so acceptance stays high and the
exact discrete-vs-continuous mismatch is absorbed by the accept test. The
origin has zero target weight and is always rejected. The chain is thinned
(every thin-th step enters a batch) and burned in until a fixed number of
accepted moves have occurred. Rejected steps repeat the previous mode; the
repeats must stay in the batch with their multiplicity or the stationary
weights would be wrong.
"""

import math
import warnings

import numpy as np
from numba import njit
from scipy.special import erfc

from .core import SQRT_PI, BoxGeometry, EwaldParams, ParticleSystem, enumerate_kmodes
from .ewald2d import EnergyBreakdown, self_energy, short_range_energy_forces, slab_energy_forces
from .soe import SOEApprox
from .soewald2d import (TWO_OVER_SQRT_PI, _decay_table, _fourier_soe_sweep,
                        _sorted_view, _zero_mode_soe_sweep, zero_mode_energy_soe)


def normalization_H(alpha: float, box: BoxGeometry) -> float:
    """Total importance weight sum_{k != 0} exp(-k^2 / 4 alpha^2).

    Evaluated through whichever side of the Poisson summation identity
    converges fast: the dual form (a^2 lx ly / pi) sum exp(-a^2 (mx^2 lx^2 +
    my^2 ly^2)) - 1 needs only a few terms once a L is large, the direct
    lattice form only a few once a L is small.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    lmin = min(box.lx, box.ly)
    if alpha * lmin < 5.0:
        warnings.warn("alpha * min(lx, ly) < 5: few Fourier modes carry "
                      "weight, the stochastic mode estimator is inefficient "
                      "in this regime", stacklevel=2)
    if alpha * lmin >= 2.0:
        mx = int(np.ceil(7.0 / (alpha * box.lx))) + 1
        my = int(np.ceil(7.0 / (alpha * box.ly))) + 1
        gx = np.exp(-(alpha * box.lx * np.arange(-mx, mx + 1)) ** 2)
        gy = np.exp(-(alpha * box.ly * np.arange(-my, my + 1)) ** 2)
        dual = float(np.sum(gx) * np.sum(gy))
        return alpha ** 2 * box.area / np.pi * dual - 1.0
    cx = np.pi / (alpha * box.lx)
    cy = np.pi / (alpha * box.ly)
    mx = int(np.ceil(7.0 / cx)) + 1
    my = int(np.ceil(7.0 / cy)) + 1
    gx = np.exp(-(cx * np.arange(-mx, mx + 1)) ** 2)
    gy = np.exp(-(cy * np.arange(-my, my + 1)) ** 2)
    return float(np.sum(gx) * np.sum(gy)) - 1.0


def charge_term_sum(alpha: float, box: BoxGeometry, Q: float,
                    s_cap: float = 6.0) -> float:
    """Deterministic sum of the per-mode charge terms pi Q erfc(k/2a)/(k A).

    erfc(k/2a) cuts the sum off on its own; capping at k = 2 s_cap alpha
    with s_cap = 6 leaves a tail below 1e-17 Q alpha. Amortized: recompute
    only when alpha, the box, or the charges change.
    """
    kmodes = enumerate_kmodes(box, 2.0 * s_cap * alpha)
    if kmodes.shape[0] == 0:
        return 0.0
    knorm = kmodes[:, 2]
    return float(np.sum(np.pi * Q / (knorm * box.area) * erfc(knorm / (2 * alpha))))


# ---------------------------------------------------------------------------
# Metropolis mode sampler
# ---------------------------------------------------------------------------

@njit(cache=True)
def _axis_logq(m, ax):  # pragma: no cover
    """log proposal mass of the rounded-normal draw on one axis."""
    am = abs(m)
    if am == 0:
        return np.log(math.erf(0.5 * ax))
    return np.log(0.5 * (math.erf((am + 0.5) * ax) - math.erf((am - 0.5) * ax)))


@njit(cache=True)
def _chain_kernel(state, axx, axy, normals, uniforms, thin, rec,
                  n_want):  # pragma: no cover
    """Advance the chain one step per random row; record every thin-th step.

    state = [mx, my, steps_since_record]; returns (steps_used, n_recorded,
    n_accepted). With n_want = 0 nothing is recorded (burn-in mode).
    """
    steps = normals.shape[0]
    mx = state[0]
    my = state[1]
    since = state[2]
    sigx = 1.0 / (axx * np.sqrt(2.0))
    sigy = 1.0 / (axy * np.sqrt(2.0))
    logt = -((axx * mx) ** 2 + (axy * my) ** 2)
    logq = _axis_logq(mx, axx) + _axis_logq(my, axy)
    nrec = 0
    nacc = 0
    used = 0
    for i in range(steps):
        if n_want > 0 and nrec >= n_want:
            break
        used = i + 1
        px = int(np.rint(normals[i, 0] * sigx))
        py = int(np.rint(normals[i, 1] * sigy))
        if not (px == 0 and py == 0):
            logt_new = -((axx * px) ** 2 + (axy * py) ** 2)
            logq_new = _axis_logq(px, axx) + _axis_logq(py, axy)
            if np.log(uniforms[i]) < (logt_new - logt) + (logq - logq_new):
                mx = px
                my = py
                logt = logt_new
                logq = logq_new
                nacc += 1
        since += 1
        if n_want > 0 and since >= thin:
            rec[nrec, 0] = mx
            rec[nrec, 1] = my
            nrec += 1
            since = 0
    state[0] = mx
    state[1] = my
    state[2] = since
    return used, nrec, nacc


class ModeSampler:
    """Thinned Metropolis chain over the nonzero integer mode lattice."""

    def __init__(self, alpha: float, box: BoxGeometry, seed: int = 0,
                 thin: int = 10, burn_in: int = 100):
        if thin < 1:
            raise ValueError("thin must be at least 1")
        self.alpha = alpha
        self.box = box
        self.thin = thin
        self.axx = np.pi / (alpha * box.lx)
        self.axy = np.pi / (alpha * box.ly)
        self.rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        self.accepted = 0
        self.steps = 0
        sigx = 1.0 / (self.axx * np.sqrt(2.0))
        sigy = 1.0 / (self.axy * np.sqrt(2.0))
        mx = my = 0
        while mx == 0 and my == 0:
            mx = int(np.rint(self.rng.normal(0.0, sigx)))
            my = int(np.rint(self.rng.normal(0.0, sigy)))
        self._state = np.array([mx, my, 0], dtype=np.int64)
        acc = 0
        while acc < burn_in:
            chunk = 4 * burn_in
            _, _, na = _chain_kernel(self._state, self.axx, self.axy,
                                     self.rng.normal(size=(chunk, 2)),
                                     self.rng.uniform(size=chunk),
                                     self.thin, np.empty((0, 2), np.int64), 0)
            acc += na
        self._state[2] = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.steps if self.steps else float("nan")

    def batch_indices(self, P: int) -> np.ndarray:
        """Sample P integer modes (mx, my); repeats carry their multiplicity."""
        rec = np.empty((P, 2), dtype=np.int64)
        got = 0
        while got < P:
            need = (P - got) * self.thin - int(self._state[2]) + self.thin
            used, nrec, nacc = _chain_kernel(
                self._state, self.axx, self.axy,
                self.rng.normal(size=(need, 2)), self.rng.uniform(size=need),
                self.thin, rec[got:], P - got)
            got += nrec
            self.accepted += nacc
            self.steps += used
        return rec

    def batch(self, P: int) -> np.ndarray:
        """Sample P modes as (kx, ky, |k|) rows."""
        rec = self.batch_indices(P)
        kx = 2 * np.pi * rec[:, 0] / self.box.lx
        ky = 2 * np.pi * rec[:, 1] / self.box.ly
        return np.column_stack([kx, ky, np.hypot(kx, ky)])


def metropolis_batch(sampler: ModeSampler, P: int) -> np.ndarray:
    """Draw one batch of P modes from the sampler."""
    if P < 1:
        raise ValueError("batch size must be at least 1")
    return sampler.batch(P)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def _rb_fourier_sweep(system, box, alpha, soe, modes, H, want_forces):
    perm, x, y, z, q = _sorted_view(system, box)
    n = len(z)
    P = modes.shape[0]
    forces = np.zeros((n, 3))
    if n < 2:
        return 0.0, forces
    b = alpha * soe.s
    decays = _decay_table(z, b)
    # importance weight exp(+k^2/4a^2) cancels the Gaussian prefactor of the
    # mode kernels analytically; only (H/P)(2a/sqrt(pi)) remains
    commonv = np.full(P, (H / P) * TWO_OVER_SQRT_PI * alpha)
    u = _fourier_soe_sweep(x, y, z, q,
                           np.ascontiguousarray(modes[:, 0]),
                           np.ascontiguousarray(modes[:, 1]),
                           np.ascontiguousarray(modes[:, 2]),
                           commonv, soe.w, b, box.area, decays,
                           1 if want_forces else 0, forces)
    out = np.zeros((n, 3))
    out[perm] = forces
    return float(u), out


def rb_energy_estimate(system: ParticleSystem, box: BoxGeometry, alpha: float,
                       soe: SOEApprox, modes: np.ndarray, H: float,
                       c_q: float | None = None) -> float:
    """Single-batch estimate of the full nonzero-mode Fourier energy."""
    if c_q is None:
        c_q = charge_term_sum(alpha, box, float(np.sum(system.charge ** 2)))
    u, _ = _rb_fourier_sweep(system, box, alpha, soe, modes, H, False)
    return u + c_q


def rb_force_estimate(system: ParticleSystem, box: BoxGeometry, alpha: float,
                      soe: SOEApprox, modes: np.ndarray, H: float) -> np.ndarray:
    """Single-batch estimate of the nonzero-mode forces plus the exact k=0
    and confining-plane forces (those are never sampled)."""
    _, forces = _rb_fourier_sweep(system, box, alpha, soe, modes, H, True)
    perm, _, _, z, q = _sorted_view(system, box)
    n = len(z)
    if n >= 2:
        b = alpha * soe.s
        decays = _decay_table(z, b)
        fz = np.zeros(n)
        _zero_mode_soe_sweep(z, q, soe.w, soe.s, b, alpha, box.area, decays,
                             1, fz)
        fz_full = np.zeros(n)
        fz_full[perm] = 2.0 * np.pi / box.area * q * fz
        forces[:, 2] += fz_full
    _, f_ps = slab_energy_forces(system, box)
    return forces + f_ps


def rb_energy_forces(system: ParticleSystem, box: BoxGeometry,
                     params: EwaldParams, soe: SOEApprox, sampler: ModeSampler,
                     P: int, H: float | None = None,
                     c_q: float | None = None):
    """One stochastic evaluation: breakdown and forces using a fresh batch.

    Short-range, k=0, plane and self terms are deterministic; only the
    nonzero Fourier modes fluctuate batch to batch.
    """
    alpha = params.alpha
    if H is None:
        H = normalization_H(alpha, box)
    if c_q is None:
        c_q = charge_term_sum(alpha, box, float(np.sum(system.charge ** 2)))
    modes = sampler.batch(P)
    perm, x, y, z, q = _sorted_view(system, box)
    n = len(z)
    u_s, f_s = short_range_energy_forces(system, box, alpha, params.r_c)
    u_ps, f_ps = slab_energy_forces(system, box)
    u_self = self_energy(system, alpha)
    Q = float(np.sum(q ** 2))
    u_0 = -SQRT_PI * Q / (alpha * box.area) if n else 0.0
    forces_sorted = np.zeros((n, 3))
    u_k = c_q
    if n >= 2:
        b = alpha * soe.s
        decays = _decay_table(z, b)
        commonv = np.full(P, (H / P) * TWO_OVER_SQRT_PI * alpha)
        u_k += float(_fourier_soe_sweep(
            x, y, z, q,
            np.ascontiguousarray(modes[:, 0]),
            np.ascontiguousarray(modes[:, 1]),
            np.ascontiguousarray(modes[:, 2]),
            commonv, soe.w, b, box.area, decays, 1, forces_sorted))
        fz = np.zeros(n)
        u_0 += float(-2.0 * np.pi / box.area
                     * _zero_mode_soe_sweep(z, q, soe.w, soe.s, b, alpha,
                                            box.area, decays, 1, fz))
        forces_sorted[:, 2] += 2.0 * np.pi / box.area * q * fz
    fourier_forces = np.zeros((n, 3))
    fourier_forces[perm] = forces_sorted
    breakdown = EnergyBreakdown(u_s=u_s, u_l_k=u_k, u_l_0=u_0,
                                u_self=u_self, u_ps=u_ps)
    return breakdown, f_s + fourier_forces + f_ps


@njit(cache=True)
def _rb_batch_energy_kernel(x, y, z, q, kx_all, ky_all, kv_all, commonv_all,
                            w, b, area, decays, P, out):  # pragma: no cover
    dummy = np.zeros((1, 3))
    for i in range(out.shape[0]):
        lo = i * P
        hi = lo + P
        out[i] = _fourier_soe_sweep(x, y, z, q, kx_all[lo:hi], ky_all[lo:hi],
                                    kv_all[lo:hi], commonv_all[lo:hi], w, b,
                                    area, decays, 0, dummy)


def run_many_batches(system: ParticleSystem, box: BoxGeometry,
                     params: EwaldParams, soe: SOEApprox, n_batches: int,
                     P: int, seed: int = 0, thin: int = 10,
                     burn_in: int = 100) -> np.ndarray:
    """Total-energy estimates over many independent batches of one frozen
    configuration; the workhorse behind the bias and variance diagnostics."""
    alpha = params.alpha
    H = normalization_H(alpha, box)
    Q = float(np.sum(system.charge ** 2))
    c_q = charge_term_sum(alpha, box, Q)
    u_s, _ = short_range_energy_forces(system, box, alpha, params.r_c)
    u_ps, _ = slab_energy_forces(system, box)
    u_det = (u_s + zero_mode_energy_soe(system, box, alpha, soe)
             - self_energy(system, alpha) + u_ps + c_q)

    sampler = ModeSampler(alpha, box, seed=seed, thin=thin, burn_in=burn_in)
    rec = sampler.batch_indices(n_batches * P)
    kx = 2 * np.pi * rec[:, 0] / box.lx
    ky = 2 * np.pi * rec[:, 1] / box.ly
    kv = np.hypot(kx, ky)

    _, x, yv, z, q = _sorted_view(system, box)
    out = np.empty(n_batches)
    if len(z) < 2:
        out[:] = 0.0
        return out + u_det
    b = alpha * soe.s
    decays = _decay_table(z, b)
    commonv = np.full(n_batches * P, (H / P) * TWO_OVER_SQRT_PI * alpha)
    _rb_batch_energy_kernel(x, yv, z, q, kx, ky, kv, commonv, soe.w, b,
                            box.area, decays, P, out)
    return out + u_det


def variance_diagnostics(estimates: np.ndarray) -> dict:
    """Mean, standard error and their running versions over a batch series."""
    est = np.asarray(estimates, dtype=np.float64)
    nb = len(est)
    if nb < 2:
        raise ValueError("need at least two batches")
    idx = np.arange(1, nb + 1)
    run_mean = np.cumsum(est) / idx
    sq = np.cumsum(est ** 2)
    var = np.maximum(sq - idx * run_mean ** 2, 0.0)
    run_std = np.zeros(nb)
    run_std[1:] = np.sqrt(var[1:] / (idx[1:] - 1.0))
    run_stderr = np.zeros(nb)
    run_stderr[1:] = run_std[1:] / np.sqrt(idx[1:])
    return {"n": nb, "mean": float(run_mean[-1]),
            "stderr": float(run_stderr[-1]), "running_mean": run_mean,
            "running_stderr": run_stderr}


def write_diagnostics_csv(path, estimates: np.ndarray) -> None:
    d = variance_diagnostics(estimates)
    with open(path, "w") as fh:
        fh.write("batch_index,estimate,running_mean,running_stderr\n")
        for i, (e, rm, rs) in enumerate(zip(estimates, d["running_mean"],
                                            d["running_stderr"])):
            fh.write(f"{i},{e:.17g},{rm:.17g},{rs:.17g}\n")
