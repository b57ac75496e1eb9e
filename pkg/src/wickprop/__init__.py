"""Wiener chaos propagators for SDEs and SPDEs.

Noise paths are reduced to Gaussian coordinates on a temporal basis, turned
into normalized Wick-Hermite features, and paired with deterministic
propagators that are either solved from their ODE/PDE systems or estimated
from trajectory data.
"""

__version__ = "0.1.0"

from .chaos import ChaosIndexSet, MultiIndex, WickFeatures, crossed_features, index_set, wick_features  # noqa: E402
from .noise import NoiseBatch, QBrownian, QSpectrum, gaussian_coords, simulate_brownian, simulate_q_brownian  # noqa: E402
from .timebasis import BasisSet, TimeGrid, make_basis  # noqa: E402

__all__ = [
    "BasisSet", "ChaosIndexSet", "MultiIndex", "NoiseBatch", "QBrownian", "QSpectrum", "TimeGrid", "WickFeatures",
    "crossed_features", "gaussian_coords", "index_set", "make_basis", "simulate_brownian", "simulate_q_brownian",
    "wick_features", "__version__",
]
