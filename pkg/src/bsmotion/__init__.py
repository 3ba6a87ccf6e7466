"""Fixed-size B-spline compression of variable-length mesh motion.

Trajectories are arrays ``(T, n, 3)`` of per-point displacements from the
initial shape; control grids are ``(k, n, 3)``.
"""

from .embedding import (
    DEFAULT_SCHEDULE,
    EmbeddingBasis,
    EmbeddingStack,
    LevelSchedule,
    TransportOperator,
    build_embedding_basis,
    build_transport,
    embed,
    pad_control_points,
    reconstruct_from_embedding,
)
from .estimators import BSplineMotionEncoder, MultilevelEmbedding
from .metrics import (
    MetricConfig,
    charbonnier,
    correspondence_loss,
    linear_baseline,
    mean_l1_error,
    rigidity_loss,
    total_weighted_loss,
)
from .sampling import (
    MeshSequence,
    SampledSurface,
    farthest_point_sample,
    interpolate_attributes,
    knn,
    sample_surface,
)
from .solver import (
    ControlGrid,
    FittingOperator,
    UnderdeterminedError,
    build_fitting_operator,
    build_second_difference,
    fit_control_points,
    fit_ridge,
    fit_variable_sequence,
    reproject,
)
from .spline import (
    BasisMatrix,
    KnotVector,
    basis_derivative_values,
    basis_values,
    build_basis_matrix,
    build_clamped_uniform_knots,
)

__version__ = "0.1.0"
