"""Randomized sketching of low-CP-rank tensor sets and polynomial images."""

__version__ = "0.1.0"

from .bounds import (  # noqa: E402
    ConstantSet,
    PhiFunction,
    VarietyParams,
    budget_report,
    calibrate_phi,
    fjlt_dim,
    median_committee_k,
    norming_log_card,
    required_phi,
    subgaussian_dim,
    tensor_phi,
    tensor_sufficient_dim,
    total_measurements,
)
from .errors import (  # noqa: E402
    ConstructionError,
    DegenerateFitError,
    MaterializationCapError,
    ShapeMismatchError,
    ValidationError,
    VarsketchError,
)
from .median import Committee, argmed, distortion, median_jlt_pairwise, median_sketch  # noqa: E402
from .sketch import (  # noqa: E402
    OperatorSpec,
    SketchOperator,
    apply_cp,
    apply_dense,
    make_fjlt,
    make_gaussian,
    make_identity,
    make_kfjlt,
    make_khatri_rao,
    make_kronecker,
    make_rademacher,
)
from .tensor import (  # noqa: E402
    CPTensor,
    cp_difference,
    cp_norm_sq,
    materialize,
    normalize,
    normalize_cp,
    random_cp,
    random_unit_cp,
)
