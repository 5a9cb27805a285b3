"""Case registry, run driver, outputs and the command-line interface."""

from .cases import case_catalog, get_case
from .driver import RunConfig, convergence_study, error_norms, run

__all__ = ["case_catalog", "get_case", "RunConfig", "run",
           "convergence_study", "error_norms"]
