"""Numerics for SDEs with additive fractional Brownian noise: noise algebra, flows,
Lyapunov exponents, invariant densities and bridge/Girsanov density representations."""
from . import bridge, flow, fraccalc, lyapunov, measure, noise
from .flow import Drift, solve_flow
from .noise import NoiseModel, SigmaClass, sample_fbm
from .paths import PastPath, Path

__version__ = "0.1.0"

__all__ = [
    "Drift", "NoiseModel", "PastPath", "Path", "SigmaClass", "bridge", "flow", "fraccalc",
    "lyapunov", "measure", "noise", "sample_fbm", "solve_flow", "__version__",
]
