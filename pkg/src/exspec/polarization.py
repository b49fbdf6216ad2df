"""Jones-vector polarization analysis for tip and emitter fields.

The excitation field leaving the probe tip and the field scattered by the
emitter generally have different (elliptical) polarizations.  A linear
analyzer at angle theta in front of the detector projects both onto a common
axis, which rescales the coupling amplitude, shifts the interference phase,
and attenuates the excitation baseline.  Rotating the analyzer therefore
morphs the detected line between dip, dispersive, and peak shapes while the
sum over any two orthogonal analyzer settings stays shape-invariant.

Angle conventions: analyzer and ellipse axis angles are in radians measured
from the x axis; analyzer settings are physically pi-periodic.  An ellipse
is described by its major-axis angle and ellipticity angle chi in
[-pi/4, pi/4], with tan(chi) the signed minor/major axis ratio (the sign
sets the handedness) and tan(chi)**2 the Malus min/max intensity ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lineshape import (
    EmitterParams,
    ModalCoupling,
    Spectrum,
    detected_spectrum,
    wrap_phase,
)

__all__ = [
    "JonesField",
    "ProjectedCoupling",
    "AnalyzerScan",
    "CrossedAnalyzerError",
    "project",
    "malus_curve",
    "ellipse_parameters",
    "tip_reference_angle",
    "effective_coupling",
    "analyzer_scan",
    "crossed_pair_sum",
]

PI = math.pi

#: Analyzer transmissions below this fraction of the full field power count
#: as crossed: the interference picture breaks down and only direct emitter
#: emission reaches the detector.
CROSSED_TRANSMISSION = 1.0e-6


class CrossedAnalyzerError(ValueError):
    """An analyzer angle extinguishes the excitation field."""


@dataclass(frozen=True)
class JonesField:
    """Complex transverse field amplitudes (ex, ey) in the lab frame.

    Only the relative amplitude and phase of the two components matter for
    every quantity derived here; a common complex factor on (ex, ey) is a
    gauge choice.
    """

    ex: complex
    ey: complex

    def __post_init__(self) -> None:
        object.__setattr__(self, "ex", complex(self.ex))
        object.__setattr__(self, "ey", complex(self.ey))
        if self.power == 0.0:
            raise ValueError("Jones vector must be non-zero")

    @property
    def power(self) -> float:
        return abs(self.ex) ** 2 + abs(self.ey) ** 2

    @classmethod
    def from_ellipse(
        cls,
        axis_angle: float,
        ellipticity_angle: float,
        amplitude: float = 1.0,
        phase: float = 0.0,
    ) -> "JonesField":
        """Jones vector of a polarization ellipse.

        axis_angle is the major-axis direction (rad), ellipticity_angle chi
        in [-pi/4, pi/4] with tan(chi) the signed axis ratio, amplitude the
        field magnitude, phase a global phase (gauge).
        """
        if not abs(ellipticity_angle) <= 0.25 * PI:
            raise ValueError("ellipticity angle must lie in [-pi/4, pi/4]")
        if not amplitude > 0.0:
            raise ValueError("amplitude must be positive")
        ca, sa = math.cos(axis_angle), math.sin(axis_angle)
        cx, sx = math.cos(ellipticity_angle), math.sin(ellipticity_angle)
        scale = amplitude * complex(math.cos(phase), math.sin(phase))
        return cls(ex=scale * (ca * cx - 1j * sa * sx), ey=scale * (sa * cx + 1j * ca * sx))


def project(field: JonesField, theta):
    """Complex amplitude passed by a linear analyzer at angle theta (rad)."""
    th = np.asarray(theta, dtype=float)
    out = field.ex * np.cos(th) + field.ey * np.sin(th)
    if np.ndim(theta) == 0:
        return complex(out.item() if isinstance(out, np.ndarray) else out)
    return out


def malus_curve(field: JonesField, thetas) -> np.ndarray:
    """Transmitted power |project(field, theta)|**2 versus analyzer angle."""
    amp = project(field, np.asarray(thetas, dtype=float))
    return np.abs(amp) ** 2


def ellipse_parameters(field: JonesField) -> tuple[float, float]:
    """Recover (axis_angle, ellipticity_angle) from a Jones vector.

    The axis angle is folded into [0, pi).  Inverse of
    JonesField.from_ellipse up to gauge and the pi-periodicity of the axis.
    """
    s0 = field.power
    s1 = abs(field.ex) ** 2 - abs(field.ey) ** 2
    cross = np.conj(field.ex) * field.ey
    s2 = 2.0 * cross.real
    s3 = 2.0 * cross.imag
    axis = 0.5 * math.atan2(s2, s1) % PI
    chi = 0.5 * math.asin(min(1.0, max(-1.0, s3 / s0)))
    return axis, chi


def tip_reference_angle(e_tip: JonesField) -> float:
    """Analyzer angle of maximum excitation transmission (ellipse major
    axis, folded into [0, pi))."""
    axis, _ = ellipse_parameters(e_tip)
    return axis


@dataclass(frozen=True)
class ProjectedCoupling:
    """Coupling parameters seen through an analyzer at one angle.

    coupling is None exactly when direct_emission is set: the analyzer is
    crossed with the excitation field, no interference baseline survives,
    and the caller decides whether the direct emitter emission is usable.
    tip_transmission is |project(e_tip, theta)|**2 / e_tip.power.
    """

    theta: float
    coupling: ModalCoupling | None
    direct_emission: bool
    tip_transmission: float


def effective_coupling(
    e_tip: JonesField,
    e_mol: JonesField,
    theta: float,
    base: ModalCoupling,
    theta_ref: float | None = None,
    crossed_threshold: float = CROSSED_TRANSMISSION,
) -> ProjectedCoupling:
    """Coupling parameters behind a linear analyzer at angle theta.

    base holds (C, psi, I_e) measured at the reference analyzer angle
    theta_ref (default: the tip major axis, where the excitation baseline
    is largest).  With t = project(e_tip, .), m = project(e_mol, .) and
    rho = m/t, the analyzer rescales the coupling as

        C(theta)   = C_base * |rho(theta)| / |rho(theta_ref)|
        psi(theta) = psi_base + arg(rho(theta)) - arg(rho(theta_ref))
        I_e(theta) = I_e_base * |t(theta)|**2 / e_tip.power

    so the reference angle reproduces base exactly.  A common complex
    factor on either Jones vector drops out.
    """
    if theta_ref is None:
        theta_ref = tip_reference_angle(e_tip)
    t = project(e_tip, theta)
    transmission = abs(t) ** 2 / e_tip.power
    if transmission < crossed_threshold:
        return ProjectedCoupling(
            theta=theta,
            coupling=None,
            direct_emission=True,
            tip_transmission=transmission,
        )
    t_ref = project(e_tip, theta_ref)
    if abs(t_ref) ** 2 / e_tip.power < crossed_threshold:
        raise ValueError("reference angle is crossed with the excitation field")
    m_ref = project(e_mol, theta_ref)
    if m_ref == 0:
        raise ValueError("emitter field vanishes at the reference angle")
    ratio = (project(e_mol, theta) / t) / (m_ref / t_ref)
    coupling = ModalCoupling(
        c_amp=base.c_amp * abs(ratio),
        psi=wrap_phase(base.psi + np.angle(ratio)),
        i_e=base.i_e * transmission,
    )
    return ProjectedCoupling(
        theta=theta,
        coupling=coupling,
        direct_emission=False,
        tip_transmission=transmission,
    )


@dataclass(frozen=True, eq=False)
class AnalyzerScan:
    """Detected spectra versus analyzer angle.

    thetas are folded into [0, pi) and kept in acquisition order; spectra
    and i_e_vs_theta (the per-angle excitation baselines, cps) are aligned
    with them.
    """

    thetas: np.ndarray
    spectra: tuple[Spectrum, ...]
    i_e_vs_theta: np.ndarray

    def __post_init__(self) -> None:
        th = np.asarray(self.thetas, dtype=float)
        ie = np.asarray(self.i_e_vs_theta, dtype=float)
        if th.ndim != 1 or th.size == 0:
            raise ValueError("thetas must be a non-empty 1-d array (rad)")
        if np.any(th < 0.0) or np.any(th >= PI):
            raise ValueError("thetas must be folded into [0, pi)")
        if len(self.spectra) != th.size or ie.shape != th.shape:
            raise ValueError("spectra and i_e_vs_theta must align with thetas")
        if np.any(ie <= 0.0):
            raise ValueError("excitation baselines must be positive (cps)")
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "spectra", tuple(self.spectra))
        object.__setattr__(self, "i_e_vs_theta", ie)

    def __len__(self) -> int:
        return int(self.thetas.size)


def analyzer_scan(
    p: EmitterParams,
    base: ModalCoupling,
    e_tip: JonesField,
    e_mol: JonesField,
    thetas,
    grid,
    theta_ref: float | None = None,
    saturation: bool = False,
) -> AnalyzerScan:
    """Detected spectra for a set of analyzer angles.

    Angles are folded into [0, pi) (analyzer settings are pi-periodic).
    Raises CrossedAnalyzerError if any angle extinguishes the excitation
    field; such angles have no interference baseline and must be treated
    as direct-emission measurements instead.
    """
    th = np.asarray(thetas, dtype=float) % PI
    if th.ndim != 1 or th.size == 0:
        raise ValueError("thetas must be a non-empty 1-d array (rad)")
    spectra = []
    baselines = np.empty(th.size)
    for k, theta in enumerate(th):
        pc = effective_coupling(e_tip, e_mol, float(theta), base, theta_ref)
        if pc.direct_emission:
            raise CrossedAnalyzerError(
                f"analyzer angle {theta:.6f} rad is crossed with the excitation "
                f"field (transmission {pc.tip_transmission:.2e})"
            )
        spectra.append(detected_spectrum(p, pc.coupling, grid, saturation))
        baselines[k] = pc.coupling.i_e
    return AnalyzerScan(thetas=th, spectra=tuple(spectra), i_e_vs_theta=baselines)


def crossed_pair_sum(
    p: EmitterParams,
    base: ModalCoupling,
    e_tip: JonesField,
    e_mol: JonesField,
    theta: float,
    grid,
    theta_ref: float | None = None,
    saturation: bool = False,
) -> Spectrum:
    """Sum of the detected spectra at analyzer angles theta and theta+pi/2.

    The pair of orthogonal analyzer settings passes the full power of both
    fields, so the sum is independent of theta; its line is absorptive
    whenever the summed interference term has phase pi/2.
    """
    scan = analyzer_scan(
        p,
        base,
        e_tip,
        e_mol,
        [theta, theta + 0.5 * PI],
        grid,
        theta_ref,
        saturation,
    )
    values = scan.spectra[0].values + scan.spectra[1].values
    return Spectrum(detunings=scan.spectra[0].detunings, values=values)
