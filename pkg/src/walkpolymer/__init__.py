"""Directed polymer in a field of independent random walks, and its continuum limit."""

__version__ = "0.1.0"

from .errors import (CapabilityError, ConfigError, DomainError, NumericalError, SnapshotError,  # noqa: E402
                     WindowError)
from .lattice_kernels import cont_kernel, rescaled_rw_kernel, rw_kernel  # noqa: E402
from .environment import (Environment, EnvironmentConfig, load_snapshot, sample_environment,  # noqa: E402
                          save_snapshot)
from .correlations import centered_poisson_moment, exact_correlation, mc_correlation  # noqa: E402
from .polymer import PolymerConfig, annealed_partition, quenched_partition  # noqa: E402
from .continuum import GridSpec, fk_moment, sample_fields, series_solution  # noqa: E402

__all__ = [
    "CapabilityError", "ConfigError", "DomainError", "NumericalError", "SnapshotError", "WindowError",
    "cont_kernel", "rescaled_rw_kernel", "rw_kernel",
    "Environment", "EnvironmentConfig", "load_snapshot", "sample_environment", "save_snapshot",
    "centered_poisson_moment", "exact_correlation", "mc_correlation",
    "PolymerConfig", "annealed_partition", "quenched_partition",
    "GridSpec", "fk_moment", "sample_fields", "series_solution",
]
