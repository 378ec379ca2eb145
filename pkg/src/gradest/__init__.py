"""Gradient-growth envelopes for divergence-form elliptic operators.

The library studies operators ``div(A(x) grad u) = 0`` whose coefficient
matrix is square-Dini continuous at the origin.  It computes the
sphere-reduced matrix ``R(r)``, the growth envelope ``E(r)``, solves the
associated non-autonomous dynamical systems, builds weak solutions by a
decomposition and fixed-point procedure, and checks the annulus-mean
gradient bound ``M2(grad u, r) <= c E(r) ||u||`` together with its
sharpness on Gilbarg-Serrin coefficient fields.
"""

from gradest.sphere import (
    SphereRule,
    SphereSamples,
    HarmonicBasis,
    build_sphere_rule,
    build_harmonic_basis,
    sphere_mean,
    first_moment,
    project_affine,
    affine_complement,
    harmonic_analyze,
    harmonic_synthesize,
)
from gradest.coeffs import (
    Modulus,
    CoefficientField,
    GSProfile,
    ScenarioConfig,
    log_power_modulus,
    constant_modulus,
    make_identity_field,
    make_gs_field,
    square_dini_integral,
    check_field,
    check_modulus,
    load_scenario,
    scenario_from_dict,
)

from gradest.estimator import (
    ReducedCurve,
    EnvelopeCurve,
    reduced_matrix,
    growth_rate,
    build_reduced_curve,
    build_envelope,
    check_regularity,
)

from gradest.dynsys import (
    BlockSystem,
    BlockSolution,
    ContractionError,
    fundamental_matrix,
    envelope_on_grid,
    verify_propagator_bounds,
    solve_forced,
    solve_block_system,
    verify_block_bounds,
)

from gradest.potential import (
    RadialGrid,
    ModalField,
    VectorSamples,
    AnnulusProfile,
    annulus_mean,
    sobolev_annulus_mean,
    annulus_profile,
    solve_poisson_source,
    solve_poisson_divergence,
    verify_potential_bounds,
)

__version__ = "0.1.0"
