"""balsim: balancing-energy market simulation engine.

BSP and TSO order formulation for RR/mFRR markets, coupling-aware
clearing with marginal pricing, post-clearing dataset aggregation and a
local balancing-mechanism activation problem.
"""

__version__ = "0.1.0"

from .model import (ControlArea, Coupling, CouplingKind, Dataset, GlobalParams,
                    MarketConfig, MarketKind, Order, OrderKind, TimeGrid,
                    TsoParams, Unit, UnitType, Violation, time_grid,
                    validate_dataset)
from .series import TimeSeries

__all__ = [
    "ControlArea", "Coupling", "CouplingKind", "Dataset", "GlobalParams",
    "MarketConfig", "MarketKind", "Order", "OrderKind", "TimeGrid",
    "TimeSeries", "TsoParams", "Unit", "UnitType", "Violation",
    "time_grid", "validate_dataset", "__version__",
]
