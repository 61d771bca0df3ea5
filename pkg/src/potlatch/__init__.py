"""Potlatch / smoothing process simulator and verification harness."""

from .backend import BACKEND
from .kernel import (
    CompleteSpec,
    CustomSpec,
    Kernel,
    TorusSpec,
    build_kernel,
    load_kernel_json,
    random_reversible_kernel,
    stationary_measure,
    two_step_kernel,
)
from .spectral import (
    SpectralDecomposition,
    TorusSpectrum,
    decompose,
    heat_kernel,
    laplacian_of,
    torus_gaps,
)
from .engine import (
    ClockStream,
    DualCoupledRun,
    FunctionalSeries,
    eval_functionals,
    martingale_series,
    potlatch_step,
    simulate,
    simulate_dual_coupled,
    smoothing_step,
    spectral_coords,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ClockStream",
    "CompleteSpec",
    "CustomSpec",
    "DualCoupledRun",
    "FunctionalSeries",
    "Kernel",
    "SpectralDecomposition",
    "TorusSpec",
    "TorusSpectrum",
    "build_kernel",
    "decompose",
    "eval_functionals",
    "heat_kernel",
    "laplacian_of",
    "load_kernel_json",
    "martingale_series",
    "potlatch_step",
    "random_reversible_kernel",
    "simulate",
    "simulate_dual_coupled",
    "smoothing_step",
    "spectral_coords",
    "stationary_measure",
    "torus_gaps",
    "two_step_kernel",
]
