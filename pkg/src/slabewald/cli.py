"""Batch command line front-end for the slab electrostatics solvers.

The CLI reads a flat sectioned ``key = value`` config file, builds the
particle system and solver parameters from it, runs one of five
subcommands (validate, energy, scan-error, simulate, bench) and writes CSV
outputs plus a JSON manifest. The manifest records the resolved config
text, its SHA-256 hash and the two random seeds (md_seed, rb_seed), so a
deterministic run can be reproduced bit for bit from the manifest alone.

Exit codes: 0 success, 2 validation failure (for example a non-neutral
system), 3 config error (unknown keys, bad values, an unusable cutoff),
4 numeric failure (non-finite results or a diverged simulation).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    BoxGeometry,
    ParticleSystem,
    choose_alpha,
    load_particles,
    make_ewald_params,
    make_system,
    predict_errors,
    validate_neutrality,
)
from .ewald2d import (
    converged_lattice_sum,
    ref_energy_forces,
    total_energy_ref,
)
from .md import MDOptions, compute_observables, run_simulation, \
    write_observables_csv, write_trajectory_csv
from .rbse2d import ModeSampler, rb_energy_forces, run_many_batches, \
    variance_diagnostics
from .soe import CONTOUR_PARAMS, build_soe_contour, load_soe_table
from .soewald2d import soe_energy_forces, total_energy_soe

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4

METHODS = ("ewald2d", "soewald2d", "rbse2d")


class ConfigError(Exception):
    """Malformed or inconsistent configuration (exit code 3)."""


class ValidationError(Exception):
    """The configured physical system is invalid (exit code 2)."""


class NumericError(Exception):
    """A computation produced non-finite or diverged results (exit code 4)."""


_REQ = object()

# Section -> key -> (converter, default). _REQ marks keys that must be
# present. Unknown sections or keys are hard errors so typos cannot
# silently fall back to defaults.
_SCHEMA = {
    "box": {
        "lx": (float, _REQ),
        "ly": (float, _REQ),
        "lz": (float, _REQ),
        "sigma_top": (float, 0.0),
        "sigma_bot": (float, 0.0),
    },
    "particles": {
        "file": (str, ""),
        "n_pairs": (int, 0),
        "charge": (float, 1.0),
        "mass": (float, 1.0),
        "min_dist": (float, 0.0),
        "z_margin": (float, 0.5),
        "seed": (int, 0),
    },
    "method": {
        "name": (str, _REQ),
    },
    "ewald": {
        "s": (float, 4.0),
        "alpha": (str, "auto"),
        "alpha_mode": (str, "balanced"),
        "alpha_prefactor": (float, 1.0),
    },
    "soe": {
        "size": (int, 8),
        "table": (str, ""),
        "target_eps": (float, 0.0),
    },
    "rb": {
        "batch_size": (int, 16),
        "thin": (int, 10),
        "burn_in": (int, 100),
        "seed": (int, 0),
    },
    "md": {
        "dt": (float, 0.005),
        "steps": (int, 1000),
        "equilibration": (int, 0),
        "thermostat": (str, "langevin"),
        "temperature": (float, 1.0),
        "gamma": (float, 1.0),
        "tau": (float, 0.5),
        "record_every": (int, 10),
        "seed": (int, 0),
    },
    "lj": {
        "epsilon": (float, 1.0),
        "sigma": (float, 1.0),
    },
    "wall": {
        "epsilon": (float, 1.0),
        "sigma": (float, 0.5),
    },
    "bench": {
        "density": (float, 0.0),
        "cap_ewald2d": (int, 3000),
        "repeats": (int, 5),
    },
    "output": {
        "dir": (str, "out"),
    },
}


class RunConfig:
    """Resolved configuration: every schema key bound to a typed value."""

    def __init__(self, resolved: dict):
        self._resolved = resolved

    def __getitem__(self, key):
        section, name = key.split(".", 1)
        return self._resolved[section][name]

    def get(self, section: str) -> dict:
        return dict(self._resolved[section])

    def set(self, key: str, value) -> None:
        section, name = key.split(".", 1)
        if name not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key [{section}] {name}")
        self._resolved[section][name] = value

    def text(self) -> str:
        """Canonical resolved form used for hashing and the manifest."""
        lines = []
        for section in sorted(self._resolved):
            lines.append(f"[{section}]")
            for name in sorted(self._resolved[section]):
                lines.append(f"{name} = {self._resolved[section][name]!r}")
            lines.append("")
        return "\n".join(lines)

    def sha256(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()


def parse_config(path: str) -> RunConfig:
    """Read an INI-style config; reject unknown sections or keys."""
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    resolved = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for name in parser[section]:
            if name not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key [{section}] {name}")
    for section, keys in _SCHEMA.items():
        resolved[section] = {}
        for name, (conv, default) in keys.items():
            if parser.has_option(section, name):
                raw = parser.get(section, name)
                try:
                    resolved[section][name] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(
                        f"bad value for [{section}] {name}: {raw!r}") from exc
            elif default is _REQ:
                raise ConfigError(f"missing required key [{section}] {name}")
            else:
                resolved[section][name] = default
    cfg = RunConfig(resolved)
    if cfg["method.name"] not in METHODS:
        raise ConfigError(f"unknown method {cfg['method.name']!r}; "
                          f"choose one of {', '.join(METHODS)}")
    for key in ("box.lx", "box.ly", "box.lz", "particles.mass", "ewald.s",
                "md.dt", "md.temperature", "lj.epsilon", "lj.sigma",
                "wall.epsilon", "wall.sigma"):
        if cfg[key] <= 0:
            raise ConfigError(f"[{key.split('.')[0]}] {key.split('.')[1]} "
                              f"must be positive")
    return cfg


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_box(cfg: RunConfig) -> BoxGeometry:
    return BoxGeometry(cfg["box.lx"], cfg["box.ly"], cfg["box.lz"],
                       sigma_top=cfg["box.sigma_top"],
                       sigma_bot=cfg["box.sigma_bot"])


def generate_particles(n_pairs: int, charge: float, mass: float,
                       box: BoxGeometry, seed: int, min_dist: float = 0.0,
                       z_margin: float = 0.5) -> ParticleSystem:
    """Place n_pairs cation-anion pairs uniformly at random in the box.

    With ``min_dist > 0`` positions are drawn by rejection so no two
    particles sit closer than that distance (with xy periodic images
    considered); this gives a usable start for dynamics.
    """
    n = 2 * n_pairs
    rng = np.random.default_rng(seed)
    lo = np.array([0.0, 0.0, z_margin])
    hi = np.array([box.lx, box.ly, box.lz - z_margin])
    if np.any(hi <= lo):
        raise ConfigError("z_margin leaves no room for particles")
    pos = np.empty((n, 3))
    placed = 0
    attempts = 0
    limit = 2000 * max(n, 1)
    while placed < n:
        if attempts >= limit:
            raise ConfigError(
                "could not place particles at the requested min_dist; "
                "lower min_dist or enlarge the box")
        attempts += 1
        cand = lo + rng.random(3) * (hi - lo)
        if min_dist > 0.0 and placed:
            d = pos[:placed] - cand
            d[:, 0] -= box.lx * np.round(d[:, 0] / box.lx)
            d[:, 1] -= box.ly * np.round(d[:, 1] / box.ly)
            if np.min(np.sum(d * d, axis=1)) < min_dist ** 2:
                continue
        pos[placed] = cand
        placed += 1
    q = np.concatenate([np.full(n_pairs, charge), np.full(n_pairs, -charge)])
    return make_system(q, np.full(n, mass), pos, box=box)


def build_system(cfg: RunConfig, box: BoxGeometry) -> ParticleSystem:
    path = cfg["particles.file"]
    if path:
        try:
            return load_particles(path)
        except OSError as exc:
            raise ConfigError(f"cannot read particle file {path!r}") from exc
    n_pairs = cfg["particles.n_pairs"]
    if n_pairs < 0:
        raise ConfigError("[particles] n_pairs must be >= 0")
    if n_pairs == 0 and not path:
        return make_system(np.empty(0), np.empty(0), np.empty((0, 3)))
    return generate_particles(n_pairs, cfg["particles.charge"],
                              cfg["particles.mass"], box,
                              cfg["particles.seed"],
                              cfg["particles.min_dist"],
                              cfg["particles.z_margin"])


def build_alpha(cfg: RunConfig, box: BoxGeometry, n: int) -> float:
    raw = cfg["ewald.alpha"]
    if raw == "auto":
        mode = cfg["ewald.alpha_mode"]
        if mode not in ("balanced", "linear"):
            raise ConfigError(f"unknown alpha_mode {mode!r}")
        return choose_alpha(max(n, 1), box, mode=mode,
                            prefactor=cfg["ewald.alpha_prefactor"],
                            s=cfg["ewald.s"])
    try:
        alpha = float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for [ewald] alpha: {raw!r}") from exc
    if alpha <= 0:
        raise ConfigError("[ewald] alpha must be positive")
    return alpha


def _checked_params(box: BoxGeometry, alpha: float, s: float):
    half = 0.5 * min(box.lx, box.ly)
    if s / alpha > half * (1 + 1e-12):
        raise ConfigError(
            f"cutoff r_c = s/alpha = {s / alpha:.6g} exceeds half the "
            f"in-plane box size {half:.6g}; raise alpha or shrink s")
    try:
        return make_ewald_params(alpha, s, box)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_params(cfg: RunConfig, box: BoxGeometry, n: int):
    return _checked_params(box, build_alpha(cfg, box, n), cfg["ewald.s"])


def build_soe(cfg: RunConfig):
    table = cfg["soe.table"]
    if table:
        try:
            return load_soe_table(table)
        except OSError as exc:
            raise ConfigError(f"cannot read SOE table {table!r}") from exc
    target = cfg["soe.target_eps"]
    size = cfg["soe.size"]
    if target > 0.0:
        for m in sorted(CONTOUR_PARAMS):
            soe = build_soe_contour(m)
            if soe.eps_certified <= target:
                return soe
        raise ConfigError(f"no stored contour reaches target_eps={target:g}")
    if size not in CONTOUR_PARAMS:
        raise ConfigError(f"no stored contour of size {size}; available: "
                          f"{sorted(CONTOUR_PARAMS)}")
    return build_soe_contour(size)


def _check_finite(name: str, *arrays) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"{name} produced non-finite values")


def evaluate_method(method: str, system: ParticleSystem, box: BoxGeometry,
                    cfg: RunConfig, params=None, soe=None, sampler=None):
    """One energy+force evaluation with the chosen solver."""
    if params is None:
        params = build_params(cfg, box, system.n)
    if method == "ewald2d":
        return ref_energy_forces(system, box, params)
    if soe is None:
        soe = build_soe(cfg)
    if method == "soewald2d":
        return soe_energy_forces(system, box, params, soe)
    if sampler is None:
        sampler = ModeSampler(params.alpha, box, seed=cfg["rb.seed"],
                              thin=cfg["rb.thin"], burn_in=cfg["rb.burn_in"])
    return rb_energy_forces(system, box, params, soe, sampler,
                            cfg["rb.batch_size"])


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _cell(value) -> str:
    """CSV cell: full-precision repr for floats, plain repr otherwise."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return repr(value)


def write_manifest(outdir: Path, command: str, cfg: RunConfig,
                   outputs: list[str]) -> None:
    payload = {
        "command": command,
        "version": __version__,
        "config_sha256": cfg.sha256(),
        "md_seed": cfg["md.seed"],
        "rb_seed": cfg["rb.seed"],
        "outputs": sorted(outputs),
        "resolved_config": cfg.text(),
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _outdir(cfg: RunConfig, args) -> Path:
    outdir = Path(args.out if args.out else cfg["output.dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


def _apply_overrides(cfg: RunConfig, args) -> None:
    if args.method:
        if args.method not in METHODS:
            raise ConfigError(f"unknown method {args.method!r}")
        cfg.set("method.name", args.method)
    if args.seed is not None:
        cfg.set("md.seed", args.seed)
        cfg.set("rb.seed", args.seed)
    if args.threads:
        try:
            import numba
            numba.set_num_threads(
                min(args.threads, numba.config.NUMBA_NUM_THREADS))
        except (ImportError, ValueError):
            pass


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_validate(cfg: RunConfig, args) -> int:
    box = build_box(cfg)
    system = build_system(cfg, box)
    method = cfg["method.name"]
    print(f"method: {method}")
    print(f"box: {box.lx:g} x {box.ly:g} x {box.lz:g}, "
          f"sigma_top={box.sigma_top:g}, sigma_bot={box.sigma_bot:g}")
    print(f"particles: {system.n}")

    ok, residual = validate_neutrality(system, box)
    if not ok:
        print(f"neutrality: FAILED (residual charge {residual:.6e})")
        raise ValidationError(f"system is not charge neutral "
                              f"(residual {residual:.6e})")
    print(f"neutrality: ok (residual {residual:.1e})")

    params = build_params(cfg, box, system.n)
    half = 0.5 * min(box.lx, box.ly)
    print(f"ewald: alpha={params.alpha:.6g} s={params.s:g} "
          f"r_c={params.r_c:.6g} k_c={params.k_c:.6g} "
          f"modes={len(params.kmodes)}")
    print(f"cutoff: ok (r_c={params.r_c:.6g} <= min(Lx,Ly)/2={half:.6g})")

    if method in ("soewald2d", "rbse2d"):
        soe = build_soe(cfg)
        target = cfg["soe.target_eps"]
        label = f" (target {target:g}: ok)" if target > 0.0 else ""
        print(f"soe: size={soe.m} certified_eps={soe.eps_certified:.3e}"
              f"{label}")

    charge_sq = float(np.sum(system.charge ** 2)) if system.n else 0.0
    pred = predict_errors(params, charge_sq, box.volume, n=max(system.n, 1))
    print(f"predicted errors: U_short={pred.e_U_s:.3e} "
          f"U_fourier={pred.e_U_l:.3e} F_short={pred.e_F_s:.3e} "
          f"F_fourier={pred.e_F_l:.3e}")
    print("ok")
    return EXIT_OK


def cmd_energy(cfg: RunConfig, args) -> int:
    box = build_box(cfg)
    system = build_system(cfg, box)
    method = cfg["method.name"]
    outdir = _outdir(cfg, args)
    outputs = []

    if system.n == 0:
        rows = [("short_range", 0.0), ("fourier_nonzero", 0.0),
                ("fourier_zero", 0.0), ("self", 0.0), ("slab", 0.0),
                ("total", 0.0)]
        forces = np.zeros((0, 3))
    else:
        ok, residual = validate_neutrality(system, box)
        if not ok:
            raise ValidationError(f"system is not charge neutral "
                                  f"(residual {residual:.6e})")
        params = build_params(cfg, box, system.n)
        breakdown, forces = evaluate_method(method, system, box, cfg,
                                            params=params)
        _check_finite("energy evaluation", [breakdown.total], forces)
        rows = [("short_range", breakdown.u_s),
                ("fourier_nonzero", breakdown.u_l_k),
                ("fourier_zero", breakdown.u_l_0),
                ("self", breakdown.u_self),
                ("slab", breakdown.u_ps),
                ("total", breakdown.total)]
        if method == "rbse2d" and args.repeats > 1:
            soe = build_soe(cfg)
            estimates = run_many_batches(system, box, params, soe,
                                         args.repeats,
                                         cfg["rb.batch_size"],
                                         seed=cfg["rb.seed"],
                                         thin=cfg["rb.thin"],
                                         burn_in=cfg["rb.burn_in"])
            stats = variance_diagnostics(estimates)
            rows += [("rb_mean_total", stats["mean"]),
                     ("rb_stderr_total", stats["stderr"]),
                     ("rb_batches", float(args.repeats))]
        if args.oracle:
            if system.n > 64:
                raise ConfigError("--oracle is limited to systems of at "
                                  "most 64 particles")
            oracle = converged_lattice_sum(system, box)
            charge_sq = float(np.sum(system.charge ** 2))
            pred = predict_errors(params, charge_sq, box.volume, n=system.n)
            budget = pred.e_U_s + pred.e_U_l
            if method in ("soewald2d", "rbse2d"):
                soe = build_soe(cfg)
                budget += soe.eps_certified * (abs(breakdown.u_l_k)
                                               + abs(breakdown.u_l_0))
            rows += [("oracle_total", oracle),
                     ("oracle_abs_diff", abs(rows[5][1] - oracle)),
                     ("predicted_error", budget)]

    energy_path = outdir / "energy.csv"
    with open(energy_path, "w") as fh:
        fh.write("component,value\n")
        for name, value in rows:
            fh.write(f"{name},{_cell(value)}\n")
    outputs.append(energy_path.name)

    forces_path = outdir / "forces.csv"
    with open(forces_path, "w") as fh:
        fh.write("id,fx,fy,fz\n")
        for i in range(forces.shape[0]):
            fh.write(f"{i},{_cell(forces[i, 0])},{_cell(forces[i, 1])},"
                     f"{_cell(forces[i, 2])}\n")
    outputs.append(forces_path.name)

    write_manifest(outdir, "energy", cfg, outputs)
    for name, value in rows:
        print(f"{name}: {value:.12g}")
    return EXIT_OK


def _scan_values(args, conv):
    if not args.values:
        raise ConfigError("--values is required for this scan")
    try:
        return [conv(v) for v in args.values.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --values list {args.values!r}") from exc


def cmd_scan_error(cfg: RunConfig, args) -> int:
    box = build_box(cfg)
    outdir = _outdir(cfg, args)
    soe = build_soe(cfg)
    scan = args.scan
    outputs = []

    def rel_err(value, reference):
        scale = max(abs(reference), 1e-300)
        return abs(value - reference) / scale

    def ref_s(alpha, rbox, want):
        # the converged reference still has to respect r_c <= min(L)/2
        return min(want, alpha * 0.5 * min(rbox.lx, rbox.ly))

    if scan == "s":
        values = _scan_values(args, float)
        system = build_system(cfg, box)
        _require_neutral(system, box)
        alpha = build_alpha(cfg, box, system.n)
        s_ref = ref_s(alpha, box, max(8.0, max(values) + 2.0))
        ref = total_energy_ref(system, box,
                               _checked_params(box, alpha, s_ref)).total
        rows = []
        for s in values:
            params = _checked_params(box, alpha, s)
            u_ref = total_energy_ref(system, box, params).total
            u_soe = total_energy_soe(system, box, params, soe).total
            rows.append((s, rel_err(u_ref, ref), rel_err(u_soe, ref)))
        path = _write_scan_csv(outdir, "scan_s.csv",
                               "s,error_ewald2d,error_soewald2d", rows)
        outputs.append(path)

    elif scan == "n":
        values = _scan_values(args, int)
        rho = _reference_density(cfg, box)
        rows = []
        for n in values:
            if n % 2:
                raise ConfigError("N values must be even (neutral pairs)")
            side = (n / rho) ** (1.0 / 3.0)
            nbox = BoxGeometry(side, side, side)
            system = generate_particles(n // 2, cfg["particles.charge"],
                                        cfg["particles.mass"], nbox,
                                        cfg["particles.seed"],
                                        z_margin=cfg["particles.z_margin"])
            alpha = build_alpha(cfg, nbox, n)
            params = _checked_params(nbox, alpha, cfg["ewald.s"])
            ref = total_energy_ref(
                system, nbox,
                _checked_params(nbox, alpha, ref_s(alpha, nbox, 8.0))).total
            u_ref = total_energy_ref(system, nbox, params).total
            u_soe = total_energy_soe(system, nbox, params, soe).total
            rows.append((n, rel_err(u_ref, ref), rel_err(u_soe, ref)))
        path = _write_scan_csv(outdir, "scan_n.csv",
                               "n,error_ewald2d,error_soewald2d", rows)
        outputs.append(path)

    elif scan == "lz":
        values = _scan_values(args, float)
        rows = []
        for lz in values:
            lbox = BoxGeometry(box.lx, box.ly, lz,
                               sigma_top=box.sigma_top,
                               sigma_bot=box.sigma_bot)
            system = build_system(cfg, lbox)
            _require_neutral(system, lbox)
            alpha = build_alpha(cfg, lbox, system.n)
            params = _checked_params(lbox, alpha, cfg["ewald.s"])
            ref = total_energy_ref(system, lbox, params).total
            naive = total_energy_ref(system, lbox, params,
                                     variant="naive").total
            u_soe = total_energy_soe(system, lbox, params, soe).total
            rows.append((lz, rel_err(naive, ref), rel_err(u_soe, ref)))
        path = _write_scan_csv(outdir, "scan_lz.csv",
                               "lz,error_naive,error_soe", rows)
        outputs.append(path)

    elif scan == "zforce":
        system = build_system(cfg, box)
        _require_neutral(system, box)
        params = build_params(cfg, box, system.n)
        _, f_ref = ref_energy_forces(system, box, params)
        _, f_soe = soe_energy_forces(system, box, params, soe)
        err = np.sqrt(np.sum((f_soe - f_ref) ** 2, axis=1))
        path = outdir / "scan_zforce.csv"
        with open(path, "w") as fh:
            fh.write("z,error\n")
            for i in range(system.n):
                fh.write(f"{_cell(system.pos[i, 2])},{_cell(err[i])}\n")
        outputs.append(path.name)

    else:
        raise ConfigError(f"unknown scan kind {scan!r}")

    write_manifest(outdir, f"scan-error:{scan}", cfg, outputs)
    print(f"wrote {', '.join(outputs)} to {outdir}")
    return EXIT_OK


def _require_neutral(system: ParticleSystem, box: BoxGeometry) -> None:
    ok, residual = validate_neutrality(system, box)
    if not ok:
        raise ValidationError(f"system is not charge neutral "
                              f"(residual {residual:.6e})")


def _reference_density(cfg: RunConfig, box: BoxGeometry) -> float:
    rho = cfg["bench.density"]
    if rho > 0.0:
        return rho
    n = 2 * cfg["particles.n_pairs"]
    if n == 0:
        raise ConfigError("set [bench] density or [particles] n_pairs so a "
                          "density can be derived")
    return n / box.volume


def _write_scan_csv(outdir: Path, name: str, header: str, rows) -> str:
    path = outdir / name
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    return path.name


def cmd_simulate(cfg: RunConfig, args) -> int:
    box = build_box(cfg)
    system = build_system(cfg, box)
    _require_neutral(system, box)
    method = cfg["method.name"]
    thermostat = cfg["md.thermostat"]
    if thermostat not in ("langevin", "nose-hoover", "none"):
        raise ConfigError(f"unknown thermostat {thermostat!r}")
    raw_alpha = cfg["ewald.alpha"]
    opts = MDOptions(
        dt=cfg["md.dt"],
        n_steps=cfg["md.steps"],
        equilibration=cfg["md.equilibration"],
        temperature=cfg["md.temperature"],
        thermostat=thermostat,
        gamma=cfg["md.gamma"],
        tau=cfg["md.tau"],
        solver=method,
        alpha=None if raw_alpha == "auto" else build_alpha(cfg, box,
                                                           system.n),
        s=cfg["ewald.s"],
        soe_size=cfg["soe.size"],
        batch_size=cfg["rb.batch_size"],
        lj_eps=cfg["lj.epsilon"],
        lj_sigma=cfg["lj.sigma"],
        wall_eps=cfg["wall.epsilon"],
        wall_sigma=cfg["wall.sigma"],
        seed=cfg["md.seed"],
        sample_every=cfg["md.record_every"],
    )
    if opts.equilibration > opts.n_steps:
        raise ConfigError("[md] equilibration must not exceed steps")
    outdir = _outdir(cfg, args)
    try:
        result = run_simulation(system, box, opts)
    except ValueError as exc:
        raise NumericError(f"simulation diverged: {exc}") from exc
    _check_finite("simulation", result.potential, result.kinetic,
                  result.positions)
    obs = compute_observables(result)

    traj_path = outdir / "trajectory.csv"
    write_trajectory_csv(traj_path, result)
    msd_path = outdir / "msd.csv"
    conc_path = outdir / "concentration.csv"
    write_observables_csv(msd_path, conc_path, obs)
    outputs = [traj_path.name, msd_path.name, conc_path.name]
    write_manifest(outdir, "simulate", cfg, outputs)

    kin = result.kinetic
    n_dof = 3 * max(system.n, 1)
    t_mean = float(np.mean(2.0 * kin[len(kin) // 2:] / n_dof))
    print(f"steps: {opts.n_steps} (equilibration {opts.equilibration})")
    print(f"mean kinetic temperature (second half): {t_mean:.4f}")
    print(f"wrote {', '.join(outputs)} to {outdir}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    n_list = _scan_values(args, int)
    repeats = args.repeats if args.repeats > 1 else cfg["bench.repeats"]
    cap = cfg["bench.cap_ewald2d"]
    box0 = build_box(cfg)
    rho = _reference_density(cfg, box0)
    outdir = _outdir(cfg, args)
    soe = build_soe(cfg)
    rows = []
    for n in n_list:
        if n % 2:
            raise ConfigError("N values must be even (neutral pairs)")
        side = (n / rho) ** (1.0 / 3.0)
        box = BoxGeometry(side, side, side)
        system = generate_particles(n // 2, cfg["particles.charge"],
                                    cfg["particles.mass"], box,
                                    cfg["particles.seed"],
                                    z_margin=cfg["particles.z_margin"])
        for method in METHODS:
            if method == "ewald2d" and n > cap:
                continue
            mode = "linear" if method == "rbse2d" else \
                cfg["ewald.alpha_mode"]
            alpha = choose_alpha(n, box, mode=mode,
                                 prefactor=cfg["ewald.alpha_prefactor"],
                                 s=cfg["ewald.s"])
            params = _checked_params(box, alpha, cfg["ewald.s"])
            sampler = None
            if method == "rbse2d":
                sampler = ModeSampler(params.alpha, box,
                                      seed=cfg["rb.seed"],
                                      thin=cfg["rb.thin"],
                                      burn_in=cfg["rb.burn_in"])
            evaluate_method(method, system, box, cfg, params=params,
                            soe=soe, sampler=sampler)  # warm up JIT paths
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                evaluate_method(method, system, box, cfg, params=params,
                                soe=soe, sampler=sampler)
                times.append(time.perf_counter() - t0)
            seconds = float(np.median(times))
            rows.append((n, method, seconds))
            print(f"N={n} {method}: {seconds:.6f} s "
                  f"(median of {repeats})")
    path = outdir / "bench.csv"
    with open(path, "w") as fh:
        fh.write("N,method,seconds\n")
        for n, method, seconds in rows:
            fh.write(f"{n},{method},{_cell(seconds)}\n")
    write_manifest(outdir, "bench", cfg, [path.name])
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slabewald",
        description="Slab-geometry Coulomb solvers: validation, one-shot "
                    "energies, error scans, dynamics and timing from one "
                    "config file.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--out", default="", help="output directory "
                       "(overrides [output] dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="override both md and rb seeds")
        p.add_argument("--method", default="",
                       help="override [method] name")
        p.add_argument("--threads", type=int, default=0,
                       help="cap worker threads")
        p.add_argument("--repeats", type=int, default=1,
                       help="repeat count (rbse2d batches, bench timings)")

    p = sub.add_parser("validate", help="check config, neutrality, cutoffs "
                       "and print predicted errors")
    common(p)

    p = sub.add_parser("energy", help="one-shot energy and forces")
    common(p)
    p.add_argument("--oracle", action="store_true",
                   help="also run the brute-force lattice sum (small N)")

    p = sub.add_parser("scan-error", help="error versus s, N, Lz or "
                       "per-particle z")
    common(p)
    p.add_argument("--scan", required=True,
                   choices=("s", "n", "lz", "zforce"))
    p.add_argument("--values", default="",
                   help="comma-separated scan values")

    p = sub.add_parser("simulate", help="run dynamics and write "
                       "trajectory + observables")
    common(p)

    p = sub.add_parser("bench", help="wall-time per evaluation for each "
                       "method over an N list")
    common(p)
    p.add_argument("--values", default="",
                   help="comma-separated particle counts")

    return parser


_COMMANDS = {
    "validate": cmd_validate,
    "energy": cmd_energy,
    "scan-error": cmd_scan_error,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        _apply_overrides(cfg, args)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
