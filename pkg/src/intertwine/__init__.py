"""Time-scaled intertwining networks and sector-aware Prony reconstruction."""

import mpmath as _mpmath

from . import core
from .core import (
    ExponentialModel,
    ObservationFunctional,
    SampleWindow,
    SectorSpec,
    SectorState,
    StabilityReport,
    Term,
    TransferMap,
    validate_sector,
)

# Module-level arithmetic on stored mp values should not silently drop to 15 digits.
_mpmath.mp.dps = max(_mpmath.mp.dps, core.WORKING_DPS)

__version__ = "0.1.0"

__all__ = [
    "ExponentialModel",
    "ObservationFunctional",
    "SampleWindow",
    "SectorSpec",
    "SectorState",
    "StabilityReport",
    "Term",
    "TransferMap",
    "validate_sector",
]
