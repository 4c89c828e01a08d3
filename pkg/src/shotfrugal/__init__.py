"""Shot-frugal variational training over quantum datasets."""

from .ansatz import ParamCircuit, build_hea, build_strongly_entangling, shifted_theta
from .estimators import (
    EstimateResult,
    GradientEstimate,
    analytic_variance_linear,
    estimate_gradient,
    estimate_gradient_linear,
    estimate_gradient_mse,
    estimate_gradient_poly,
    estimate_loss_linear,
    estimate_loss_mse,
    estimate_loss_poly,
    ibs_neg_log_likelihood,
    min_block_size,
    ustat_power,
)
from .exceptions import (
    BudgetError,
    ConfigurationError,
    DegreeError,
    DistributionError,
    NonTerminationError,
    ShapeError,
    ShotFrugalError,
    SizeError,
    SpecificationError,
)
from .lossspec import (
    DatasetEntry,
    LossSpec,
    autoencoder_global_loss,
    autoencoder_local_loss,
    exact_gradient,
    exact_loss,
    lipschitz_bound,
    mse_loss,
    polynomial_loss,
    vqse_local_loss,
)
from .models import QuantumAutoencoder, QuantumPCA
from .optimizers import (
    OptimizerConfig,
    RefoqusState,
    RunRecord,
    adam_run,
    gcans_shots,
    icans_shots,
    refoqus_run,
    rosalin_run,
)
from .sampling import AllocationStrategy, ShotTable, allocate, allocation_moments, wrs_probabilities
from .simulator import (
    Gate,
    MeasurableTerm,
    StateVector,
    apply_circuit,
    density_from_ensemble,
    exact_top_eigenvalues,
    expectation,
    init_zero,
    sample_term,
    shot_meter,
)

__version__ = "0.1.0"
