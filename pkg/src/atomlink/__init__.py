"""Dissipative entanglement pumping between two distant three-level atoms.

Two atoms sit in separate cavities bridged by a chain of lossy bosonic
modes.  A weak always-on drive plus engineered decay pumps the pair into
the singlet or triplet Bell state of their ground levels; this package
builds the truncated composite spaces, integrates the master equation,
reduces it to an effective four-level model, and reproduces the headline
fidelity and robustness numbers from the command line.
"""

from .qspace import (
    CompositeSpace,
    DensityMatrix,
    SparseOp,
    SubsystemSpec,
    atom3,
    build_space,
    embed_product,
    local_operator,
    mode,
)
from .model import (
    HamiltonianParts,
    ModeLayout,
    PhysicalParams,
    WeakCouplingWarning,
    build_collapse_ops,
    build_hamiltonian_parts,
    build_space_for,
    collapse_labels,
    cooperativity,
    delocalized_frequencies,
    fig3_params,
    ground_state_vector,
    mediating_detunings_for,
    params_for_cooperativity,
    random_ground_state,
    standard_layout,
)
from .dynamics import (
    DegenerateSteadyStateError,
    LindbladGenerator,
    SteadyStateResult,
    SuperoperatorSizeError,
    TraceDriftError,
    Trajectory,
    atomic_populations,
    evolve,
    liouvillian_matrix,
    population_recorder,
    steady_state,
)
from .effective import (
    AnalyticRates,
    EffectiveModel,
    analytic_rates,
    analytic_stark_shifts,
    build_effective_generator,
    build_effective_model,
    effective_hamiltonian,
    effective_lindblads,
    ground_manifold,
    rate_deviations,
)
from .analysis import (
    DipPoint,
    FidelityEstimate,
    FitResult,
    OptimizationResult,
    ScalingStudy,
    SweepTable,
    c_scaling_study,
    estimate_infidelity,
    fidelity_evaluator,
    find_dips,
    fit_inverse_c,
    optimize_fidelity,
    sweep_grid,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # spaces and operators
    "SubsystemSpec", "CompositeSpace", "SparseOp", "DensityMatrix",
    "atom3", "mode", "build_space", "local_operator", "embed_product",
    # physical model
    "PhysicalParams", "HamiltonianParts", "ModeLayout", "WeakCouplingWarning",
    "fig3_params", "params_for_cooperativity", "mediating_detunings_for",
    "standard_layout", "build_space_for", "build_hamiltonian_parts",
    "build_collapse_ops", "collapse_labels", "delocalized_frequencies",
    "cooperativity", "ground_state_vector", "random_ground_state",
    # solvers
    "LindbladGenerator", "Trajectory", "SteadyStateResult",
    "DegenerateSteadyStateError", "SuperoperatorSizeError", "TraceDriftError",
    "liouvillian_matrix", "evolve", "steady_state", "atomic_populations",
    "population_recorder",
    # effective model
    "EffectiveModel", "AnalyticRates", "ground_manifold",
    "effective_hamiltonian", "effective_lindblads", "analytic_rates",
    "analytic_stark_shifts", "build_effective_model", "build_effective_generator",
    "rate_deviations",
    # analysis
    "FidelityEstimate", "FitResult", "OptimizationResult", "SweepTable",
    "DipPoint", "ScalingStudy", "estimate_infidelity", "fit_inverse_c",
    "optimize_fidelity", "sweep_grid", "fidelity_evaluator", "find_dips",
    "c_scaling_study",
]
