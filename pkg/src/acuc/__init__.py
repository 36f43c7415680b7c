"""AC unit commitment by decomposition into a copper-plate commitment and per-period AC-OPFs."""
from .model import (ACLine, Bus, Case, CommitmentSchedule, Device, DispatchState, FullSolution,
                    ReserveProduct, ReserveState, ReserveZone, TimeGrid, default_products,
                    validate_case)

__all__ = [
    "ACLine", "Bus", "Case", "CommitmentSchedule", "Device", "DispatchState", "FullSolution",
    "ReserveProduct", "ReserveState", "ReserveZone", "TimeGrid", "default_products",
    "validate_case",
]
__version__ = "0.1.0"
