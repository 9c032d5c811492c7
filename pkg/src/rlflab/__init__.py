"""Numerical laboratory for continuity equations with measure initial data.

Particle measures and measures on measures (:mod:`rlflab.measures`),
Hamiltonian fields with repulsive Coulomb singularities (:mod:`rlflab.fields`),
guarded flows and superposition solutions (:mod:`rlflab.flow`), weak-form
residuals and stability statistics (:mod:`rlflab.weakform`), a semiclassical
Schrodinger solver with Wigner and Husimi transforms (:mod:`rlflab.quantum`),
and experiment orchestration (:mod:`rlflab.harness`).
"""

from .measures import (
    ParticleMeasure,
    MeasureEnsemble,
    GridSpec,
    GridDensity,
    BumpFunction,
    TestFunctionDictionary,
    integrate_test,
    pushforward,
    expectation,
    density_estimate,
    bin_density,
    default_bandwidth,
    check_density_bound,
    check_regular,
    dirac_ensemble,
    product_ensemble,
    weak_distance,
    dyadic_dictionary,
    uniform_cloud,
    grid_cloud,
    particles_from_density,
)
from .fields import (
    SingularSet,
    PhaseSpaceField,
    Potential,
    eval_field,
    coulomb_force,
    dist_to_singular,
    decay_integrand,
    make_field,
    make_potential,
    free_field,
    harmonic_field,
    coulomb_field,
)
from .flow import (
    StepControl,
    Trajectory,
    FlowMap,
    RLFReport,
    integrate_trajectory,
    ode_residual,
    flow_map,
    check_rlf,
    superpose,
    measure_flow,
    load_flow_map,
)
from .weakform import (
    MeasureCurve,
    CurveFamily,
    TimeBump,
    GridCurve,
    default_time_bumps,
    l1_grid_distance,
    weak_residual,
    solve_functional_continuity,
    uniform_regularity_stat,
    decay_stat,
    space_tightness_stat,
    time_tightness_stat,
    limit_continuity_stat,
    stability_gap,
    StabilityReport,
)
from .quantum import (
    SpatialGrid,
    Envelope,
    WKBParams,
    WaveFunction,
    PhaseSpaceDensity,
    bump_envelope,
    gaussian_envelope,
    wkb_initial,
    potential_on_grid,
    evolve,
    evolve_path,
    reflect,
    time_reversal_defect,
    wigner,
    husimi,
    husimi_to_measure,
    husimi_centroid,
    dual_distance,
    semiclassical_experiment,
    alpha1_experiment,
    SemiclassicalResult,
    Alpha1Result,
)
from .harness import (
    ExperimentConfig,
    RunRecord,
    run_experiment,
    emit_plotdata,
    list_experiments,
    resolve_output_dir,
    OUTPUT_ROOT_ENV,
)

__version__ = "0.1.0"
