"""Information limits for resolving two incoherent point sources.

Quantum and classical Fisher information for the centroid, separation and
relative brightness of two sources imaged through a one-dimensional PSF.
"""

__version__ = "0.1.0"

from .cfi import (Measurement, ModeMeasurement, PositionBins, direct_imaging_cfi,
                  load_measurement, measurement_cfi, save_measurement, sld_povm)
from .crlb import (PrecisionTriple, asymptotic_precisions, loglog_slope, precisions,
                   separation_precision_closed, sweep)
from .measure_opt import DesignSpec, optimize_measurement, orthonormal_mode_basis
from .montecarlo import EstimationRun, crlb_saturation_study, mle
from .psf import (GaussianPsf, SampledPsf, gaussian_psf, load_psf, moments, overlaps,
                  sampled_psf)
from .qfi import (FisherMatrix, build_subspace, compatibility_check, qfim_closed_form,
                  qfim_grid_oracle, qfim_rank2, quantum_fisher, sld_subspace)
from .scene import SourceParams, intensity_profile, sample_photons

__all__ = [
    "Measurement", "ModeMeasurement", "PositionBins", "direct_imaging_cfi", "load_measurement",
    "measurement_cfi", "save_measurement", "sld_povm", "PrecisionTriple", "asymptotic_precisions",
    "loglog_slope", "precisions", "separation_precision_closed", "sweep", "DesignSpec",
    "optimize_measurement", "orthonormal_mode_basis", "EstimationRun", "crlb_saturation_study",
    "mle", "GaussianPsf", "SampledPsf", "gaussian_psf", "load_psf", "moments", "overlaps",
    "sampled_psf", "FisherMatrix", "build_subspace", "compatibility_check", "qfim_closed_form",
    "qfim_grid_oracle", "qfim_rank2", "quantum_fisher", "sld_subspace", "SourceParams",
    "intensity_profile", "sample_photons",
]
