"""Scattering by many small bodies: single-body electrostatics, discrete
many-body solvers and their continuum limits for acoustic and
electromagnetic waves."""

from .acoustic_continuum import (
    GridFieldSolution,
    first_born,
    schrodinger_residual,
    solve_hard,
    solve_impedance_continuum,
    solve_soft,
)
from .acoustic_discrete import (
    DiscreteFieldSolution,
    cross_section,
    evaluate_field,
    solve_dirichlet,
    solve_discrete,
    solve_impedance,
    solve_neumann,
)
from .electrostatics import (
    PolarizabilityResult,
    alpha_series,
    b_tensor,
    beta_tensor,
    capacitance,
    convergence_estimate,
    polarizability,
)
from .em_scattering import (
    EMFieldSolution,
    SMatrix6,
    build_smatrix,
    dipole_far_fields,
    solve_em_continuum,
    solve_em_discrete,
)
from .ensemble import (
    Box,
    DensityFields,
    Grid,
    ParticleEnsemble,
    bin_densities,
    check_regime,
    sample_ensemble,
)
from .geometry import (
    QuadratureRule,
    SurfaceMesh,
    double_surface_integral,
    generate_box,
    generate_ellipsoid,
    generate_sphere,
    load_mesh,
)
from .io import emit_plot_data

__version__ = "0.1.0"
