from .poisson_service import poisson_service
from .energy_service import energy_service
from .solver_service import solver_service
from .report_service import report_service
from .task_tracker import sweep_tracker

__all__ = [
    "poisson_service",
    "energy_service",
    "solver_service",
    "report_service",
    "sweep_tracker"
]
