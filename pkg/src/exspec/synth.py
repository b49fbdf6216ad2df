"""Photon-counting measurement simulation and feasibility estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lineshape import (
    EmitterParams,
    ModalCoupling,
    Spectrum,
    weak_field_lorentzian,
    _detected_values,
)

__all__ = [
    "AcquisitionConfig",
    "simulate_counts",
    "snr_estimate",
    "coherent_rate_check",
]


@dataclass(frozen=True)
class AcquisitionConfig:
    """Counting settings: dwell time per point (s), number of averaged
    scan repetitions, rms relative intensity noise of the excitation laser
    (one multiplicative factor drawn per repetition), RNG seed."""

    dwell: float = 0.01
    averages: int = 20
    laser_rms: float = 0.003
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.dwell <= 0.0:
            raise ValueError("dwell must be positive (s)")
        if self.averages < 1:
            raise ValueError("averages must be >= 1")
        if self.laser_rms < 0.0:
            raise ValueError("laser_rms must be >= 0")


def simulate_counts(model: Spectrum, acq: AcquisitionConfig) -> Spectrum:
    """Draw Poisson counts for each repetition and average them.

    Every repetition r applies one shared laser-power factor
    (1 + laser_rms*normal) to all points, then draws independent Poisson
    counts per point.  Returns the averaged count rate (cps) with sigma the
    standard error of the mean across repetitions (for a single repetition,
    the Poisson estimate sqrt(counts)/dwell).  Same seed, same output.
    """
    rates = model.values
    if np.any(rates < 0.0):
        raise ValueError("model intensities must be non-negative count rates")
    rng = np.random.default_rng(acq.seed)
    expected = rates * acq.dwell
    reps = acq.averages
    if acq.laser_rms > 0.0:
        factors = 1.0 + acq.laser_rms * rng.standard_normal(reps)
        factors = np.maximum(factors, 0.0)
    else:
        factors = np.ones(reps)
    counts = rng.poisson(factors[:, None] * expected[None, :]).astype(float)
    mean_rate = counts.mean(axis=0) / acq.dwell
    if reps >= 2:
        sigma = counts.std(axis=0, ddof=1) / (math.sqrt(reps) * acq.dwell)
    else:
        sigma = np.sqrt(counts[0]) / acq.dwell
    return Spectrum(detunings=model.detunings, values=mean_rate, sigma=sigma)


def snr_estimate(p: EmitterParams, m: ModalCoupling, acq: AcquisitionConfig) -> float:
    """Expected signal-to-noise of the resonance feature.

    Signal: accumulated excess counts |I_d(nu21) - I_e| * dwell * averages.
    Noise: shot noise of the accumulated baseline plus the laser intensity
    noise of the accumulated baseline, in quadrature.
    """
    on_resonance = float(_detected_values(p, m, np.zeros(1), saturation=False)[0])
    accumulated = m.i_e * acq.dwell * acq.averages
    signal = abs(on_resonance - m.i_e) * acq.dwell * acq.averages
    noise = math.sqrt(accumulated + (acq.laser_rms * accumulated) ** 2)
    return signal / noise


def coherent_rate_check(p: EmitterParams, m: ModalCoupling) -> float:
    """Count rate of the directly detected coherent emission on resonance.

    This is the incoherent-channel term (C**2/alpha)*(gamma/gamma0)*L(0)*I_e
    alone, i.e. what the detector would see from the emitter with the
    excitation arm blocked.  Typically tens of cps at percent-level
    extinction contrast: far too small to measure directly, while the
    interference term 2*C*(gamma/2)*L(0)*I_e remains thousands of cps.
    """
    lor0 = weak_field_lorentzian(0.0, p.gamma)
    return (m.c_amp**2 / p.alpha) * (p.gamma / p.gamma0) * lor0 * m.i_e
