"""Low-discrepancy subset selection by kernel-discrepancy swap search."""

__version__ = "0.1.0"

from .discrepancy import (  # noqa: E402
    DiscrepancyValue,
    ResourceGuardError,
    kernel_disc_sq,
    ksd_sq,
    linf_star_exact,
    linf_star_lower_bound,
    warnock_l2_sq,
)
from .generators import ConfigurationError, GeneratorSpec, fibonacci, generate, sobol  # noqa: E402
from .kernels import (  # noqa: E402
    BetaProductScore,
    GaussianMixtureScore,
    StarKernel,
    SteinKernel,
    WeightedStarKernel,
    median_bandwidth,
)
from .pointset import (  # noqa: E402
    DomainError,
    IndexSubset,
    PointFileError,
    PointSet,
    gather,
    load_pointset,
    write_pointset,
)
from .select import SelectConfig, SelectionResult, select_subset  # noqa: E402
from .stein_points import SteinPointsConfig, stein_points  # noqa: E402

__all__ = [
    "__version__",
    "BetaProductScore",
    "ConfigurationError",
    "DiscrepancyValue",
    "DomainError",
    "GaussianMixtureScore",
    "GeneratorSpec",
    "IndexSubset",
    "PointFileError",
    "PointSet",
    "ResourceGuardError",
    "SelectConfig",
    "SelectionResult",
    "StarKernel",
    "SteinKernel",
    "SteinPointsConfig",
    "WeightedStarKernel",
    "fibonacci",
    "gather",
    "generate",
    "kernel_disc_sq",
    "ksd_sq",
    "linf_star_exact",
    "linf_star_lower_bound",
    "load_pointset",
    "median_bandwidth",
    "select_subset",
    "sobol",
    "stein_points",
    "warnock_l2_sq",
]
