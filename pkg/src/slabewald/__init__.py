"""Electrostatics for slab-confined particle systems.

The package computes Coulomb energies and forces for charge-neutral systems
that are periodic in x and y but confined along z, using three
interchangeable solvers:

``ewald2d``
    A direct doubly-periodic Ewald reference.  The Fourier-space kernels are
    evaluated through the scaled complementary error function, which keeps
    them finite for arbitrarily tall boxes, at O(N^2) cost per mode.
``soewald2d``
    The same sum rewritten through a sum-of-exponentials fit of the Gaussian
    screening kernel.  Exponentials turn the pairwise z-couplings into
    prefix recursions over z-sorted particles, reducing each mode to O(N).
``rbse2d``
    A random-batch variant that replaces the full mode sum with a small
    importance-sampled batch, giving an unbiased O(N) estimator suitable
    for thermostats that tolerate stochastic forces.

A compact molecular dynamics driver (``md``) and a batch command line
front-end (``cli``) sit on top of the solvers.
"""

from .core import (
    BoxGeometry,
    ErrorPrediction,
    EwaldParams,
    ParticleSystem,
    choose_alpha,
    enumerate_kmodes,
    load_particles,
    make_ewald_params,
    make_system,
    predict_errors,
    save_particles,
    sort_by_z,
    validate_neutrality,
)
from .soe import (
    SOEApprox,
    build_soe_contour,
    certify_soe,
    dxi_soe,
    erf_soe,
    erfc_soe,
    load_soe_table,
    save_soe_table,
    xi_soe,
)
from .ewald2d import (
    EnergyBreakdown,
    converged_lattice_sum,
    direct_lattice_sum,
    dxi_closed,
    fourier_energy_forces_ref,
    ref_energy_forces,
    self_energy,
    short_range_energy_forces,
    slab_energy_forces,
    total_energy_ref,
    xi_closed,
    zero_mode_energy_forces_ref,
)
from .soewald2d import (
    forces_soe,
    fourier_energy_soe,
    recursive_pair_sum,
    soe_energy_forces,
    total_energy_soe,
    zero_mode_energy_soe,
)
from .rbse2d import (
    ModeSampler,
    charge_term_sum,
    metropolis_batch,
    normalization_H,
    rb_energy_forces,
    run_many_batches,
    variance_diagnostics,
)
from .md import (
    MDOptions,
    MDResult,
    compute_observables,
    run_simulation,
)

__version__ = "1.0.0"

__all__ = [
    "BoxGeometry",
    "EnergyBreakdown",
    "ErrorPrediction",
    "EwaldParams",
    "MDOptions",
    "MDResult",
    "ModeSampler",
    "ParticleSystem",
    "SOEApprox",
    "build_soe_contour",
    "certify_soe",
    "charge_term_sum",
    "choose_alpha",
    "compute_observables",
    "converged_lattice_sum",
    "direct_lattice_sum",
    "dxi_closed",
    "dxi_soe",
    "enumerate_kmodes",
    "erf_soe",
    "erfc_soe",
    "forces_soe",
    "fourier_energy_forces_ref",
    "fourier_energy_soe",
    "load_particles",
    "load_soe_table",
    "make_ewald_params",
    "make_system",
    "metropolis_batch",
    "normalization_H",
    "predict_errors",
    "rb_energy_forces",
    "recursive_pair_sum",
    "ref_energy_forces",
    "run_many_batches",
    "run_simulation",
    "save_particles",
    "save_soe_table",
    "self_energy",
    "short_range_energy_forces",
    "slab_energy_forces",
    "soe_energy_forces",
    "sort_by_z",
    "total_energy_ref",
    "total_energy_soe",
    "validate_neutrality",
    "variance_diagnostics",
    "xi_closed",
    "xi_soe",
    "zero_mode_energy_forces_ref",
    "zero_mode_energy_soe",
]
