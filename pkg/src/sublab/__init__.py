"""Numerics for hypoelliptic Brownian motion on Carnot groups.

Group laws and gauges (:mod:`sublab.groups`), killed-process simulation
(:mod:`sublab.simulation`), the Dirichlet sub-Laplacian on a grid
(:mod:`sublab.spectral`) and the small-deviation and heat-content
experiments built on them (:mod:`sublab.asymptotics`).
"""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ConvergenceError,
    DomainTooSmallError,
    InsufficientSamplesError,
    InvalidInputError,
    SingularityError,
    SublabError,
)
from .groups import (  # noqa: E402
    CarnotGroupSpec,
    HomogeneousNorm,
    bcdh_product,
    catalog_names,
    dilate,
    gauge_harmonic_candidate,
    get_group,
    group_inverse,
    homogeneous_norm,
    left_invariant_frame,
    load_group,
)
from .simulation import (  # noqa: E402
    Domain,
    ExitBatch,
    SimConfig,
    SurvivalCurve,
    decay_rate,
    sample_exit_batch,
    sample_path,
    scaling_check,
    survival_curve,
)
from .spectral import (  # noqa: E402
    GridEigenSystem,
    GridOperator,
    assemble,
    eigenfunction_diagnostics,
    gap_bounds,
    heat_kernel_positivity_check,
    leading_eigenpairs,
)
from .asymptotics import (  # noqa: E402
    boundary_regularity_probe,
    heat_content,
    small_deviation_experiment,
    sup_norm_event_probability,
)

__all__ = [
    "CarnotGroupSpec", "ConvergenceError", "Domain", "DomainTooSmallError", "ExitBatch",
    "GridEigenSystem", "GridOperator", "HomogeneousNorm", "InsufficientSamplesError",
    "InvalidInputError", "SimConfig", "SingularityError", "SublabError", "SurvivalCurve",
    "assemble", "bcdh_product", "boundary_regularity_probe", "catalog_names", "decay_rate",
    "dilate", "eigenfunction_diagnostics", "gap_bounds", "gauge_harmonic_candidate", "get_group",
    "group_inverse", "heat_content", "heat_kernel_positivity_check", "homogeneous_norm",
    "leading_eigenpairs", "left_invariant_frame", "load_group", "sample_exit_batch", "sample_path",
    "scaling_check", "small_deviation_experiment", "sup_norm_event_probability", "survival_curve",
]
