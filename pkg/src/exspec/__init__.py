"""Extinction spectroscopy of a single emitter.

Forward models, polarization analysis, least-squares fitting, and
photon-counting simulation for interferometric detection of a single
two-level emitter through a scanning probe.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .lineshape import (
    EmitterParams,
    ModalCoupling,
    Spectrum,
    absorption_cross_section,
    detected_spectrum,
    enhancement_factor,
    fluorescence_spectrum,
    linewidth_from_lifetime,
    optimal_dip_coupling,
    resonance_visibility,
    rho21,
    saturation_lorentzian,
    visibility,
    weak_field_lorentzian,
    wrap_phase,
)
from .polarization import (
    AnalyzerScan,
    CrossedAnalyzerError,
    JonesField,
    ProjectedCoupling,
    analyzer_scan,
    crossed_pair_sum,
    effective_coupling,
    ellipse_parameters,
    malus_curve,
    project,
    tip_reference_angle,
)
from .fitting import (
    DegenerateScanError,
    FitConfig,
    FitResult,
    LowContrastError,
    NoPeakError,
    covariance_estimate,
    estimate_baseline,
    fit_fluorescence,
    fit_transmission,
    joint_fit_polar,
)
from .synth import (
    AcquisitionConfig,
    coherent_rate_check,
    simulate_counts,
    snr_estimate,
)

__all__ = [
    "__version__",
    "EmitterParams",
    "ModalCoupling",
    "Spectrum",
    "absorption_cross_section",
    "detected_spectrum",
    "enhancement_factor",
    "fluorescence_spectrum",
    "linewidth_from_lifetime",
    "optimal_dip_coupling",
    "resonance_visibility",
    "rho21",
    "saturation_lorentzian",
    "visibility",
    "weak_field_lorentzian",
    "wrap_phase",
    "AnalyzerScan",
    "CrossedAnalyzerError",
    "JonesField",
    "ProjectedCoupling",
    "analyzer_scan",
    "crossed_pair_sum",
    "effective_coupling",
    "ellipse_parameters",
    "malus_curve",
    "project",
    "tip_reference_angle",
    "DegenerateScanError",
    "FitConfig",
    "FitResult",
    "LowContrastError",
    "NoPeakError",
    "covariance_estimate",
    "estimate_baseline",
    "fit_fluorescence",
    "fit_transmission",
    "joint_fit_polar",
    "AcquisitionConfig",
    "coherent_rate_check",
    "simulate_counts",
    "snr_estimate",
]
