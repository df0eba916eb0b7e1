"""Post-crash market dynamics: reconstruct drift/diffusion coefficients from a
pooled return ensemble, fit the nonstationary model surfaces, simulate the
resulting stochastic dynamics, and measure aftershock statistics."""

from .density import BinningSpec, DensityGrid
from .errors import CrashdynError, DataError, SimulationError, UsageError
from .ingest import PriceSeries, ReturnEnsemble
from .kramers_moyal import CoefficientField
from .omori import OmoriEnsemble, OmoriResult
from .simulate import IndexResult, SimConfig, Trajectory
from .surfaces import (
    DiffusionParams,
    FitReport,
    IndexFitParams,
    OCT87_DIFFUSION,
    OCT87_INDEX_FIT,
    OCT87_POTENTIAL,
    PotentialParams,
)
from .synth import OuSpec

__version__ = "0.1.0"

__all__ = [
    "BinningSpec",
    "CoefficientField",
    "CrashdynError",
    "DataError",
    "DensityGrid",
    "DiffusionParams",
    "FitReport",
    "IndexFitParams",
    "IndexResult",
    "OCT87_DIFFUSION",
    "OCT87_INDEX_FIT",
    "OCT87_POTENTIAL",
    "OmoriEnsemble",
    "OmoriResult",
    "OuSpec",
    "PotentialParams",
    "PriceSeries",
    "ReturnEnsemble",
    "SimConfig",
    "SimulationError",
    "Trajectory",
    "UsageError",
    "__version__",
]
