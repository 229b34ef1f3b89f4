"""Minimal molecular dynamics engine for confined charged fluids.

The engine integrates N point charges between two repulsive walls, with
periodic x,y. Forces combine one of the three Coulomb solvers (reference,
recursive, or stochastic) with a purely repulsive shifted-truncated
Lennard-Jones core and the same repulsive form acting on the wall distance.
Reduced units throughout: charge^2 / (4 pi epsilon_0) = 1, k_B = 1.

Integrators: plain velocity Verlet, a Langevin scheme with the exact
Ornstein-Uhlenbeck update in the middle of the step (kick, drift, OU noise,
drift, kick), and a single Nose-Hoover chain whose conserved quantity is
tracked so thermostat health is observable.

The stochastic solver feeds fluctuating forces into the dynamics; with the
Langevin thermostat those fluctuations average out over steps rather than
biasing sampled averages, which is what makes per-step mode sampling viable.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import BoxGeometry, EwaldParams, ParticleSystem, make_ewald_params
from .ewald2d import (_pair_kernel_brute, _pair_kernel_cells, build_cell_list,
                      ref_energy_forces)
from .rbse2d import ModeSampler, charge_term_sum, normalization_H, rb_energy_forces
from .soe import SOEApprox, build_soe_contour
from .soewald2d import soe_energy_forces

WCA_CUT = 2.0 ** (1.0 / 6.0)


def lj_forces(system: ParticleSystem, box: BoxGeometry, eps: float = 1.0,
              sigma: float = 1.0):
    """Purely repulsive pair core: 4 eps [(s/r)^12 - (s/r)^6] + eps below
    r = 2^(1/6) s, zero beyond. Returns (energy, forces)."""
    n = system.n
    forces = np.zeros((n, 3))
    if n < 2 or eps == 0.0:
        return 0.0, forces
    cut = WCA_CUT * sigma
    cl = build_cell_list(system.pos, box, cut)
    if cl.ncx == 1:
        u, flag = _pair_kernel_brute(system.pos, system.charge, box.lx, box.ly,
                                     0.0, cut, 1, eps, sigma, forces)
    else:
        u, flag = _pair_kernel_cells(system.pos, system.charge, box.lx, box.ly,
                                     0.0, cut, cl.ncx, cl.ncy, cl.ncz,
                                     cl.cell_start, cl.order, 1, eps, sigma,
                                     forces)
    if flag:
        raise ValueError("coincident particles in the repulsive core")
    return float(u), forces


def wall_forces(system: ParticleSystem, box: BoxGeometry, eps: float = 1.0,
                sigma: float = 0.5):
    """Same repulsive form on the distance to the planes z=0 and z=lz."""
    z = system.pos[:, 2]
    forces = np.zeros((system.n, 3))
    u = 0.0
    cut = WCA_CUT * sigma
    for dist, sign in ((z, 1.0), (box.lz - z, -1.0)):
        m = dist < cut
        if not np.any(m):
            continue
        d = dist[m]
        if np.any(d <= 0):
            raise ValueError("particle at or beyond a wall")
        s6 = (sigma / d) ** 6
        u += float(np.sum(4.0 * eps * (s6 * s6 - s6) + eps))
        forces[m, 2] += sign * 24.0 * eps * (2.0 * s6 * s6 - s6) / d
    return u, forces


@dataclass
class MDOptions:
    """Knobs for run_simulation; defaults give a stable dilute slab run."""

    dt: float = 0.005
    n_steps: int = 1000
    equilibration: int = 0            # steps to run before sampling starts
    temperature: float = 1.0
    thermostat: str = "langevin"      # langevin | nose-hoover | none
    gamma: float = 1.0                # Langevin friction rate
    tau: float = 0.5                  # Nose-Hoover relaxation time
    solver: str = "soewald2d"         # ewald2d | soewald2d | rbse2d
    alpha: float | None = None        # None: pick from the box and count
    s: float = 4.0
    soe_size: int = 8
    batch_size: int = 16              # sampled modes per step (rbse2d)
    lj_eps: float = 1.0
    lj_sigma: float = 1.0
    wall_eps: float = 1.0
    wall_sigma: float = 0.5
    coulomb: bool = True
    seed: int = 0
    sample_every: int = 10


@dataclass
class MDResult:
    times: np.ndarray
    positions: np.ndarray             # wrapped, (n_samples, N, 3)
    unwrapped: np.ndarray             # (n_samples, N, 3), xy never wrapped
    velocities: np.ndarray
    potential: np.ndarray
    kinetic: np.ndarray
    conserved: np.ndarray             # NVE/NH invariant; nan for Langevin
    charge: np.ndarray
    mass: np.ndarray
    box: BoxGeometry
    options: MDOptions = field(repr=False)


class _ForceField:
    """Bundles the chosen Coulomb solver with the short-range repulsions."""

    def __init__(self, box: BoxGeometry, charge: np.ndarray, opts: MDOptions,
                 rb_seed: int):
        self.box = box
        self.opts = opts
        self.params: EwaldParams | None = None
        self.soe: SOEApprox | None = None
        self.sampler = None
        self.H = None
        self.c_q = None
        if opts.coulomb:
            from .core import choose_alpha
            alpha = opts.alpha
            if alpha is None:
                alpha = choose_alpha(len(charge), box,
                                     "linear" if opts.solver == "rbse2d" else "balanced",
                                     prefactor=0.8, s=opts.s)
            self.params = make_ewald_params(alpha, opts.s, box)
            if opts.solver in ("soewald2d", "rbse2d"):
                self.soe = build_soe_contour(opts.soe_size)
            if opts.solver == "rbse2d":
                self.sampler = ModeSampler(alpha, box, seed=rb_seed)
                self.H = normalization_H(alpha, box)
                self.c_q = charge_term_sum(alpha, box, float(np.sum(charge ** 2)))

    def evaluate(self, system: ParticleSystem):
        u = 0.0
        forces = np.zeros((system.n, 3))
        opts = self.opts
        if opts.coulomb:
            if opts.solver == "ewald2d":
                bd, fc = ref_energy_forces(system, self.box, self.params)
            elif opts.solver == "soewald2d":
                bd, fc = soe_energy_forces(system, self.box, self.params, self.soe)
            elif opts.solver == "rbse2d":
                bd, fc = rb_energy_forces(system, self.box, self.params,
                                          self.soe, self.sampler,
                                          opts.batch_size, H=self.H,
                                          c_q=self.c_q)
            else:
                raise ValueError(f"unknown solver {opts.solver!r}")
            u += bd.total
            forces += fc
        if opts.lj_eps:
            u_lj, f_lj = lj_forces(system, self.box, opts.lj_eps, opts.lj_sigma)
            u += u_lj
            forces += f_lj
        u_w, f_w = wall_forces(system, self.box, opts.wall_eps, opts.wall_sigma)
        return u + u_w, forces + f_w


def maxwell_velocities(mass: np.ndarray, temperature: float,
                       rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=(len(mass), 3)) * np.sqrt(temperature / mass)[:, None]
    v -= np.average(v, axis=0, weights=mass)[None, :]
    return v


def kinetic_energy(mass: np.ndarray, vel: np.ndarray) -> float:
    return float(0.5 * np.sum(mass * np.sum(vel ** 2, axis=1)))


def langevin_step(pos, vel, forces, mass, dt, gamma, temperature, noise):
    """One kick-drift-OU-drift-kick step; returns positions needing new forces.

    The OU stage uses the exact one-step solution, c = exp(-gamma dt) and
    noise scale sqrt((1 - c^2) T / m), so the thermostat is stable for any dt.
    """
    inv_m = 1.0 / mass[:, None]
    vel = vel + 0.5 * dt * forces * inv_m
    pos = pos + 0.5 * dt * vel
    c = np.exp(-gamma * dt)
    vel = c * vel + np.sqrt((1.0 - c * c) * temperature / mass)[:, None] * noise
    pos = pos + 0.5 * dt * vel
    return pos, vel


def nose_hoover_step(pos, vel, forces, mass, dt, xi, eta, q_nh, n_f,
                     temperature, force_eval):
    """Single-chain Nose-Hoover around velocity Verlet.

    Returns updated state plus the new (u, forces). eta integrates xi so the
    invariant U + K + Q xi^2/2 + n_f T eta can be monitored.
    """
    inv_m = 1.0 / mass[:, None]
    k2 = 2.0 * kinetic_energy(mass, vel)
    xi += 0.25 * dt * (k2 - n_f * temperature) / q_nh
    scale = np.exp(-0.5 * dt * xi)
    vel = vel * scale
    eta += 0.5 * dt * xi
    k2 = 2.0 * kinetic_energy(mass, vel)
    xi += 0.25 * dt * (k2 - n_f * temperature) / q_nh

    vel = vel + 0.5 * dt * forces * inv_m
    pos = pos + dt * vel
    u, forces = force_eval(pos, vel)
    vel = vel + 0.5 * dt * forces * inv_m

    k2 = 2.0 * kinetic_energy(mass, vel)
    xi += 0.25 * dt * (k2 - n_f * temperature) / q_nh
    scale = np.exp(-0.5 * dt * xi)
    vel = vel * scale
    eta += 0.5 * dt * xi
    k2 = 2.0 * kinetic_energy(mass, vel)
    xi += 0.25 * dt * (k2 - n_f * temperature) / q_nh
    return pos, vel, forces, u, xi, eta


def run_simulation(system: ParticleSystem, box: BoxGeometry,
                   opts: MDOptions) -> MDResult:
    """Integrate and sample; returns wrapped and unwrapped trajectories."""
    n = system.n
    ss = np.random.SeedSequence(opts.seed)
    thermo_ss, rb_ss, vel_ss = ss.spawn(3)
    rng = np.random.Generator(np.random.Philox(thermo_ss))
    ff = _ForceField(box, system.charge, opts,
                     rb_seed=int(rb_ss.generate_state(1)[0]))

    pos = system.pos.copy()
    mass = system.mass
    if system.vel is not None and np.any(system.vel):
        vel = system.vel.copy()
    else:
        vel = maxwell_velocities(mass, opts.temperature,
                                 np.random.Generator(np.random.Philox(vel_ss)))
    shift = np.zeros((n, 2))  # accumulated xy wrap offsets

    def wrap(p):
        for d, ln in ((0, box.lx), (1, box.ly)):
            moved = np.floor(p[:, d] / ln)
            shift[:, d] += moved * ln
            p[:, d] -= moved * ln
        return p

    def sys_at(p, v):
        return ParticleSystem(charge=system.charge, mass=mass, pos=p, vel=v)

    pos = wrap(pos)
    u, forces = ff.evaluate(sys_at(pos, vel))

    eq = opts.equilibration
    if not 0 <= eq <= opts.n_steps:
        raise ValueError("equilibration must lie in [0, n_steps]")
    n_samples = (opts.n_steps - eq) // opts.sample_every + 1
    times = np.empty(n_samples)
    traj = np.empty((n_samples, n, 3))
    traj_un = np.empty((n_samples, n, 3))
    vels = np.empty((n_samples, n, 3))
    pot = np.empty(n_samples)
    kin = np.empty(n_samples)
    cons = np.full(n_samples, np.nan)

    xi = 0.0
    eta = 0.0
    n_f = 3 * n
    q_nh = n_f * opts.temperature * opts.tau ** 2

    def record(idx, step, u_now):
        times[idx] = step * opts.dt
        traj[idx] = pos
        traj_un[idx] = pos
        traj_un[idx, :, 0] += shift[:, 0]
        traj_un[idx, :, 1] += shift[:, 1]
        vels[idx] = vel
        pot[idx] = u_now
        kin[idx] = kinetic_energy(mass, vel)
        if opts.thermostat == "none":
            cons[idx] = u_now + kin[idx]
        elif opts.thermostat == "nose-hoover":
            cons[idx] = (u_now + kin[idx] + 0.5 * q_nh * xi ** 2
                         + n_f * opts.temperature * eta)

    sample = 0
    if eq == 0:
        record(0, 0, u)
        sample = 1
    for step in range(1, opts.n_steps + 1):
        if opts.thermostat == "langevin":
            noise = rng.normal(size=(n, 3))
            pos, vel = langevin_step(pos, vel, forces, mass, opts.dt,
                                     opts.gamma, opts.temperature, noise)
            pos = wrap(pos)
            u, forces = ff.evaluate(sys_at(pos, vel))
            vel = vel + 0.5 * opts.dt * forces / mass[:, None]
        elif opts.thermostat == "nose-hoover":
            def fe(p, v):
                return ff.evaluate(sys_at(wrap(p), v))
            pos, vel, forces, u, xi, eta = nose_hoover_step(
                pos, vel, forces, mass, opts.dt, xi, eta, q_nh, n_f,
                opts.temperature, fe)
            pos = wrap(pos)
        elif opts.thermostat == "none":
            inv_m = 1.0 / mass[:, None]
            vel = vel + 0.5 * opts.dt * forces * inv_m
            pos = wrap(pos + opts.dt * vel)
            u, forces = ff.evaluate(sys_at(pos, vel))
            vel = vel + 0.5 * opts.dt * forces * inv_m
        else:
            raise ValueError(f"unknown thermostat {opts.thermostat!r}")
        if step >= eq and (step - eq) % opts.sample_every == 0:
            record(sample, step, u)
            sample += 1

    return MDResult(times=times, positions=traj, unwrapped=traj_un,
                    velocities=vels, potential=pot, kinetic=kin,
                    conserved=cons, charge=system.charge.copy(),
                    mass=mass.copy(), box=box, options=opts)


# ---------------------------------------------------------------------------
# observables and I/O
# ---------------------------------------------------------------------------

def compute_observables(result: MDResult, n_bins: int = 40,
                        n_blocks: int = 5, max_lag_frac: float = 0.5,
                        skip_frac: float = 0.2) -> dict:
    """Mean-square displacements (multiple time origins, xy and z split) and
    block-averaged z concentration profiles per charge species."""
    nf = len(result.times)
    skip = int(skip_frac * nf)
    un = result.unwrapped[skip:]
    zs = result.positions[skip:, :, 2]
    nfu = un.shape[0]
    if nfu < 4:
        raise ValueError("trajectory too short for observables")
    dt_f = result.times[1] - result.times[0] if nf > 1 else 1.0

    max_lag = max(1, int(max_lag_frac * nfu))
    lags = np.unique(np.linspace(1, max_lag, min(60, max_lag)).astype(int))
    msd_xy = np.empty(len(lags))
    msd_z = np.empty(len(lags))
    for i, lag in enumerate(lags):
        d = un[lag:] - un[:-lag]
        msd_xy[i] = np.mean(np.sum(d[..., :2] ** 2, axis=-1))
        msd_z[i] = np.mean(d[..., 2] ** 2)

    box = result.box
    edges = np.linspace(0.0, box.lz, n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    bin_vol = box.area * (edges[1] - edges[0])
    species = np.unique(result.charge)
    blocks = np.array_split(np.arange(nfu), n_blocks)
    conc = {}
    conc_std = {}
    for sp in species:
        sel = result.charge == sp
        means = []
        for blk in blocks:
            h = np.zeros(n_bins)
            for f in blk:
                h += np.histogram(zs[f, sel], bins=edges)[0]
            means.append(h / (len(blk) * bin_vol))
        means = np.array(means)
        conc[float(sp)] = means.mean(axis=0)
        conc_std[float(sp)] = means.std(axis=0, ddof=1)
    return {"lag_times": lags * dt_f, "msd_xy": msd_xy, "msd_z": msd_z,
            "z_bin_centers": centers, "concentration": conc,
            "concentration_std": conc_std}


def write_trajectory_csv(path, result: MDResult) -> None:
    """Frames in long form: step,id,x,y,z,vx,vy,vz."""
    steps = np.rint(result.times / result.options.dt).astype(int)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "id", "x", "y", "z", "vx", "vy", "vz"])
        for f, step in enumerate(steps):
            for i in range(result.positions.shape[1]):
                x, y, z = result.positions[f, i]
                vx, vy, vz = result.velocities[f, i]
                wr.writerow([step, i, f"{x:.17g}", f"{y:.17g}", f"{z:.17g}",
                             f"{vx:.17g}", f"{vy:.17g}", f"{vz:.17g}"])


def write_observables_csv(msd_path, conc_path, obs: dict) -> None:
    with open(msd_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "msd_xy", "msd_z"])
        for t, a, b in zip(obs["lag_times"], obs["msd_xy"], obs["msd_z"]):
            wr.writerow([f"{t:.17g}", f"{a:.17g}", f"{b:.17g}"])
    species = sorted(obs["concentration"])
    with open(conc_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["z_bin_center"]
                    + [f"concentration_q{sp:+g}" for sp in species])
        for i, zc in enumerate(obs["z_bin_centers"]):
            wr.writerow([f"{zc:.17g}"]
                        + [f"{obs['concentration'][sp][i]:.17g}" for sp in species])
