"""Non-parametric estimation of multivariate Hawkes kernel norms from integrated cumulants."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .model import (  # noqa: F401
    BranchingMatrices,
    CumulantSet,
    EventStream,
    HawkesModel,
    KernelFamily,
    KernelSpec,
    check_stationary,
    g_from_model,
    g_from_r,
    matrices_from_g,
    spectral_norm,
    theoretical_cumulants,
    theoretical_third_cumulant,
)
from .simulate import SimConfig, simulate, simulate_batch  # noqa: F401
from .cumulants import (  # noqa: F401
    BoundaryPolicy,
    CumulantConfig,
    aggregate_cumulants,
    estimate_cumulants,
    estimate_cumulants_many,
    select_H,
)
from .estimator import EstimationResult, NphcConfig, StepRule, estimate, loss, loss_gradient  # noqa: F401
from .analysis import (  # noqa: F401
    EventTaxonomy,
    ancestor_fraction,
    exogenous_fraction,
    slotwise_estimate,
    symmetry_report,
)
