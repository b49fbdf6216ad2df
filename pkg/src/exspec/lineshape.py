"""Closed-form lineshapes for extinction spectroscopy of a single emitter.

A weakly driven two-level emitter sits in the focus of a scanning probe; the
detector sees the interference of the excitation field that reaches it
directly and the field scattered coherently by the emitter.  On resonance the
scattered field can cancel part of the excitation, producing a dip in the
detected count rate; depending on the relative phase of the two fields the
same emitter can instead produce a peak or a dispersive feature.

Conventions used throughout this package:

* All frequencies, linewidths and drive amplitudes are in MHz.  Linewidths
  are FWHM values.  Detunings are measured from the transition frequency
  ``nu21`` on the same axis as the scan grid.
* Detected intensities are photon count rates in counts per second (cps).
* ``psi`` is the phase of the scattered field relative to the excitation
  field at the detector, in radians, stored folded into [0, 2*pi).
  ``psi = pi/2`` gives a purely absorptive dip, ``3*pi/2`` a peak, and
  values near 0 or pi give dispersive shapes.
* Visibility is ``(I_d - I_e) / I_e``: negative in a dip, positive in a
  surplus of detected light.

The detected transmission spectrum is

    I_d(nu) = I_e * [ 1 + (C**2/alpha) * (gamma/gamma0) * L(nu)
                        - 2*C*L(nu) * (Delta*cos(psi) + (gamma/2)*sin(psi)) ]

where ``Delta = nu - nu21``, ``L`` is the Lorentzian denominator
``1/(Delta**2 + gamma**2/4)`` in the weak-drive limit, ``alpha`` is the
fraction of the scattered power that is collected, and ``C`` (MHz) is a
single coupling amplitude absorbing the emitter dipole strength and the
mode overlap of the scattered and excitation fields.  The first correction
term is the incoherent single-emitter emission into the detection mode; the
second is the interference (extinction) term.  Both are dimensionless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EmitterParams",
    "ModalCoupling",
    "Spectrum",
    "wrap_phase",
    "linewidth_from_lifetime",
    "weak_field_lorentzian",
    "saturation_lorentzian",
    "rho21",
    "detected_spectrum",
    "visibility",
    "resonance_visibility",
    "absorption_cross_section",
    "enhancement_factor",
    "fluorescence_spectrum",
    "optimal_dip_coupling",
]

TWO_PI = 2.0 * math.pi


def wrap_phase(psi: float) -> float:
    """Fold a phase in radians into [0, 2*pi)."""
    return float(np.asarray(psi) % TWO_PI)


@dataclass(frozen=True)
class EmitterParams:
    """Static parameters of the driven two-level emitter.

    Parameters
    ----------
    nu21 : float
        Transition frequency in MHz, on the same axis as the scan grid
        (use 0 to work directly in detuning).
    gamma : float
        Total FWHM linewidth in MHz, including dephasing and spectral
        diffusion.  Must satisfy ``gamma >= gamma0``.
    gamma0 : float
        Radiative (lifetime-limited) FWHM linewidth in MHz.
    alpha : float
        Collected fraction of the total scattered power, in (0, 1].
    omega : float
        Rabi frequency of the drive in MHz.  Zero selects the weak-field
        limit everywhere.
    k_ratio : float
        Saturation bookkeeping factor ``K = 1 + k23/(2*k31)`` for emitters
        with a shelving level fed at rate k23 and emptied at k31.  ``K = 1``
        for a clean two-level system.
    gamma0_assumed : bool
        Set when gamma0 was not measured and was defaulted to gamma; fit
        results carry the flag forward.
    """

    nu21: float
    gamma: float
    gamma0: float
    alpha: float = 0.25
    omega: float = 0.0
    k_ratio: float = 1.0
    gamma0_assumed: bool = False

    def __post_init__(self) -> None:
        if not math.isfinite(self.nu21):
            raise ValueError("nu21 must be finite")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive (MHz, FWHM)")
        if self.gamma0 <= 0.0:
            raise ValueError("gamma0 must be positive (MHz, FWHM)")
        if self.gamma < self.gamma0:
            raise ValueError("gamma must be >= gamma0: broadening only adds width")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha is a collected fraction, must be in (0, 1]")
        if self.omega < 0.0:
            raise ValueError("omega must be non-negative (MHz)")
        if self.k_ratio < 1.0:
            raise ValueError("k_ratio is 1 + k23/(2*k31), must be >= 1")

    @classmethod
    def with_gamma0_unknown(
        cls,
        nu21: float,
        gamma: float,
        alpha: float = 0.25,
        omega: float = 0.0,
        k_ratio: float = 1.0,
    ) -> "EmitterParams":
        """Build parameters when only the total linewidth is known.

        gamma0 defaults to gamma (no extra broadening) and the guess is
        flagged so downstream results can report it.
        """
        return cls(
            nu21=nu21,
            gamma=gamma,
            gamma0=gamma,
            alpha=alpha,
            omega=omega,
            k_ratio=k_ratio,
            gamma0_assumed=True,
        )


@dataclass(frozen=True)
class ModalCoupling:
    """Coupling of the scattered field into the detected mode.

    c_amp is the coupling amplitude C in MHz (>= 0), psi the relative phase
    in radians (folded into [0, 2*pi) on construction), i_e the excitation
    count rate at the detector in cps.
    """

    c_amp: float
    psi: float
    i_e: float

    def __post_init__(self) -> None:
        if self.c_amp < 0.0:
            raise ValueError("c_amp must be >= 0; flip psi by pi instead of negating")
        if not self.i_e > 0.0:
            raise ValueError("i_e must be a positive count rate (cps)")
        object.__setattr__(self, "psi", wrap_phase(self.psi))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """A sampled spectrum: strictly increasing frequency grid plus values.

    detunings is the frequency axis in MHz (relative to the scan origin),
    values the intensity samples (cps, or dimensionless for visibility),
    sigma the optional per-point standard error in the same units as values.
    """

    detunings: np.ndarray
    values: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self) -> None:
        det = np.asarray(self.detunings, dtype=float)
        val = np.asarray(self.values, dtype=float)
        if det.ndim != 1 or det.size == 0:
            raise ValueError("detunings must be a non-empty 1-d array (MHz)")
        if val.shape != det.shape:
            raise ValueError("values must have the same shape as detunings")
        if det.size > 1 and np.any(np.diff(det) <= 0.0):
            raise ValueError("detunings must be strictly increasing")
        object.__setattr__(self, "detunings", det)
        object.__setattr__(self, "values", val)
        if self.sigma is not None:
            sig = np.asarray(self.sigma, dtype=float)
            if sig.shape != det.shape:
                raise ValueError("sigma must have the same shape as detunings")
            if np.any(sig < 0.0):
                raise ValueError("sigma entries must be >= 0")
            object.__setattr__(self, "sigma", sig)

    def __len__(self) -> int:
        return int(self.detunings.size)


def _maybe_scalar(out: np.ndarray, template) -> np.ndarray | float:
    if np.ndim(template) == 0:
        return out.item()
    return out


def linewidth_from_lifetime(tau_ns: float) -> float:
    """Radiative FWHM linewidth in MHz from an excited-state lifetime in ns.

    gamma0 = 1/(2*pi*tau).  A 20 ns lifetime gives about 7.96 MHz.
    """
    if not tau_ns > 0.0:
        raise ValueError("lifetime must be positive (ns)")
    return 1.0e3 / (TWO_PI * tau_ns)


def weak_field_lorentzian(delta, gamma: float):
    """Weak-drive Lorentzian denominator 1/(Delta**2 + gamma**2/4).

    delta is the detuning in MHz (scalar or array); gamma the FWHM in MHz.
    Units of the result are 1/MHz**2.
    """
    if gamma <= 0.0:
        raise ValueError("gamma must be positive (MHz, FWHM)")
    d = np.asarray(delta, dtype=float)
    out = 1.0 / (d * d + 0.25 * gamma * gamma)
    return _maybe_scalar(out, delta)


def saturation_lorentzian(p: EmitterParams, delta):
    """Lorentzian denominator with the drive-dependent saturation term.

    1/(Delta**2 + gamma**2/4 + Omega**2*(gamma/(2*gamma0))*K); reduces to
    the weak-field form at Omega = 0 and to 4/(3*gamma**2) on resonance for
    Omega = gamma = gamma0, K = 1.
    """
    d = np.asarray(delta, dtype=float)
    sat = p.omega * p.omega * (p.gamma / (2.0 * p.gamma0)) * p.k_ratio
    out = 1.0 / (d * d + 0.25 * p.gamma * p.gamma + sat)
    return _maybe_scalar(out, delta)


def rho21(p: EmitterParams, delta):
    """Steady-state optical coherence of the driven transition.

    rho21 = Omega*(-Delta + i*gamma/2)/2 * L(Delta) with the saturated
    Lorentzian denominator.  delta is the detuning in MHz; the result is
    dimensionless and purely imaginary on resonance.
    """
    d = np.asarray(delta, dtype=float)
    lor = np.asarray(saturation_lorentzian(p, d))
    out = 0.5 * p.omega * (-d + 0.5j * p.gamma) * lor
    if np.ndim(delta) == 0:
        return complex(out.item())
    return out


def _lorentzian(p: EmitterParams, delta, saturation: bool):
    if saturation:
        return np.asarray(saturation_lorentzian(p, delta))
    return np.asarray(weak_field_lorentzian(delta, p.gamma))


def _detected_values(
    p: EmitterParams, m: ModalCoupling, delta: np.ndarray, saturation: bool
) -> np.ndarray:
    lor = _lorentzian(p, delta, saturation)
    incoherent = (m.c_amp * m.c_amp / p.alpha) * (p.gamma / p.gamma0) * lor
    phase_factor = delta * math.cos(m.psi) + 0.5 * p.gamma * math.sin(m.psi)
    extinction = -2.0 * m.c_amp * lor * phase_factor
    return m.i_e * (1.0 + incoherent + extinction)


def detected_spectrum(
    p: EmitterParams,
    m: ModalCoupling,
    grid,
    saturation: bool = False,
) -> Spectrum:
    """Detected transmission spectrum on a frequency grid.

    grid is the scan axis in MHz (strictly increasing); the detuning is
    grid - p.nu21.  With saturation=False (the default) the weak-field
    Lorentzian is used regardless of p.omega.
    """
    axis = np.asarray(grid, dtype=float)
    if axis.ndim != 1 or axis.size == 0:
        raise ValueError("grid must be a non-empty 1-d frequency axis (MHz)")
    values = _detected_values(p, m, axis - p.nu21, saturation)
    return Spectrum(detunings=axis, values=values)


def visibility(spec: Spectrum, i_e: float) -> Spectrum:
    """Normalized contrast (values - i_e)/i_e of a detected spectrum."""
    if not i_e > 0.0:
        raise ValueError("i_e must be a positive count rate (cps)")
    sigma = None if spec.sigma is None else spec.sigma / i_e
    return Spectrum(
        detunings=spec.detunings,
        values=spec.values / i_e - 1.0,
        sigma=sigma,
    )


def resonance_visibility(p: EmitterParams, m: ModalCoupling) -> float:
    """Visibility exactly on resonance in the weak-field limit.

    V(0) = 4*C**2/(alpha*gamma*gamma0) - (4*C/gamma)*sin(psi).  Negative
    values mean net extinction of the excitation beam.
    """
    c = m.c_amp
    return 4.0 * c * c / (p.alpha * p.gamma * p.gamma0) - (
        4.0 * c / p.gamma
    ) * math.sin(m.psi)


def absorption_cross_section(wavelength_nm: float) -> float:
    """Peak absorption cross-section 3*lambda**2/(2*pi) in m**2.

    Holds for a lifetime-limited transition; broadening reduces the
    effective value by gamma0/gamma.
    """
    if not wavelength_nm > 0.0:
        raise ValueError("wavelength must be positive (nm)")
    lam_m = wavelength_nm * 1.0e-9
    return 3.0 * lam_m * lam_m / TWO_PI


def enhancement_factor(p: EmitterParams) -> float:
    """Ratio gamma/(alpha*gamma0) by which a perfect-extinction coupling
    budget exceeds unity; large values mean the collected coherent fraction
    is small and the deepest attainable dip shallow."""
    return p.gamma / (p.alpha * p.gamma0)


def fluorescence_spectrum(
    p: EmitterParams,
    amplitude: float,
    grid,
    background: float = 0.0,
    saturation: bool = False,
) -> Spectrum:
    """Incoherent fluorescence excitation spectrum on a frequency grid.

    values = amplitude * L(grid - nu21) + background, with amplitude in
    cps*MHz**2 (peak rate is amplitude*4/gamma**2 + background in the
    weak-field limit) and background in cps.
    """
    if amplitude < 0.0:
        raise ValueError("amplitude must be >= 0 (cps*MHz**2)")
    if background < 0.0:
        raise ValueError("background must be >= 0 (cps)")
    axis = np.asarray(grid, dtype=float)
    if axis.ndim != 1 or axis.size == 0:
        raise ValueError("grid must be a non-empty 1-d frequency axis (MHz)")
    lor = _lorentzian(p, axis - p.nu21, saturation)
    return Spectrum(detunings=axis, values=amplitude * lor + background)


def optimal_dip_coupling(p: EmitterParams, psi: float = 0.5 * math.pi) -> tuple[float, float]:
    """Coupling amplitude that maximizes the resonance dip, and the dip.

    For sin(psi) > 0 the resonance visibility is minimized at
    C = alpha*gamma0*sin(psi)/2, where it equals
    -(alpha*gamma0/gamma)*sin(psi)**2.  Returns (c_opt, v_min).
    """
    s = math.sin(psi)
    if s <= 0.0:
        raise ValueError("dip optimum requires sin(psi) > 0 (absorptive phase)")
    c_opt = 0.5 * p.alpha * p.gamma0 * s
    v_min = -(p.alpha * p.gamma0 / p.gamma) * s * s
    return c_opt, v_min
