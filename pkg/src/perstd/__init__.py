"""Personalized coupled tensor decomposition.

Recovers content shared across heterogeneous tensor datasets that each
observe a degraded view of a common low-rank tensor plus their own
low-rank distinct component.  Provides the tensor algebra, uniqueness
certificates, a semi-algebraic recovery pipeline, a flexible coupled
least-squares solver, synthetic data generation, and a command line
interface for the experiment protocols.
"""

__version__ = "0.1.0"

from .tensor_core import (  # noqa: F401
    CpdFactors,
    cp_reconstruct,
    cp_tensor,
    fold,
    khatri_rao,
    mode_product,
    multilinear_product,
    read_matrix,
    read_tensor,
    unfold,
    write_matrix,
    write_tensor,
)
from .model import (  # noqa: F401
    CoupledModel,
    MeasurementModel,
    clean_datasets,
    identity_measurement,
)
from .numerics import (  # noqa: F401
    SingularSystemWarning,
    SylvesterSystem,
    assign_fixed_cardinality,
    kruskal_rank,
    numeric_rank,
    pinv,
    solve_generalized_sylvester,
)
from .cpd import CpdOptions, CpdResult, cpd_als, factor_match_score  # noqa: F401
from .uniqueness import (  # noqa: F401
    ProblemDims,
    UniquenessReport,
    Witness,
    check_deterministic,
    check_generic,
)
from .semialg import SemiAlgResult, hybrid_regression_mode3, semialg_decompose  # noqa: F401
from .coupled_als import (  # noqa: F401
    AlsState,
    CouplingSpec,
    coupled_als_fit,
    fit_multistart,
    objective,
    random_state,
    state_from_semialg,
)
from .datagen import (  # noqa: F401
    CloudConfig,
    SynthConfig,
    SynthData,
    add_noise,
    apply_clouds,
    band_averaging,
    blend_common,
    cloud_metrics,
    generate_cloud_map,
    generate_synthetic,
    nrmse,
    spatial_decimation,
)
