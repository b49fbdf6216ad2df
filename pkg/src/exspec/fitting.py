"""Weighted least-squares fits of extinction and fluorescence spectra.

The models fitted here are the closed forms from :mod:`exspec.lineshape`:
a Lorentzian for the fluorescence excitation channel and the two-term
interference spectrum for the transmission channel.  The linewidth gamma is
deliberately never a free parameter of the transmission fit; it comes from
the fluorescence channel (or an external measurement) because the
transmission shape near threshold couples gamma too strongly to C and psi.
The collected fraction alpha is likewise fixed (default 0.25): it only
enters multiplied with C**2 and gamma0 and cannot be separated from them by
a single spectrum.

The minimizer is a damped Gauss-Newton (Levenberg-Marquardt) loop written
against the package's analytic Jacobians.  Steps are projected onto simple
per-parameter boxes (C >= 0, I_e > 0, ...); a step is only accepted when it
does not increase the cost, so the accepted-cost sequence is non-increasing
by construction.  The interference phase is optimized unbounded and folded
into [0, 2*pi) for reporting, which keeps shapes near psi = 0 from jamming
against the branch cut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lineshape import Spectrum, wrap_phase
from .polarization import AnalyzerScan, JonesField, ellipse_parameters, project

__all__ = [
    "FitConfig",
    "FitResult",
    "NoPeakError",
    "LowContrastError",
    "DegenerateScanError",
    "estimate_baseline",
    "fit_fluorescence",
    "fit_transmission",
    "joint_fit_polar",
    "covariance_estimate",
]

TWO_PI = 2.0 * math.pi


class NoPeakError(ValueError):
    """Fluorescence data show no line above the wing noise."""


class LowContrastError(ValueError):
    """Transmission data show no feature above the wing noise."""


class DegenerateScanError(ValueError):
    """Analyzer scan cannot constrain the polarization parameters."""


@dataclass(frozen=True)
class FitConfig:
    """Minimizer settings.

    max_iters caps accepted steps; ftol stops on relative cost decrease,
    xtol on relative step size; damping_init seeds the Levenberg damping.
    bounds optionally overrides the per-parameter boxes by name.
    """

    max_iters: int = 200
    ftol: float = 1.0e-10
    xtol: float = 1.0e-10
    damping_init: float = 1.0e-3
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.ftol < 0.0 or self.xtol < 0.0:
            raise ValueError("ftol and xtol must be >= 0")
        if self.damping_init <= 0.0:
            raise ValueError("damping_init must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a least-squares fit.

    params maps every model parameter (free and fixed) to its value; free
    lists the names that were varied, in the order used by covariance.
    residual_rms is the unweighted rms misfit in data units; cost_trace is
    the accepted weighted cost sequence (non-increasing); flags collects
    caveats such as 'gamma0_assumed' or 'covariance_pinv'.
    """

    model: str
    params: dict[str, float]
    free: tuple[str, ...]
    covariance: np.ndarray
    residual_rms: float
    iterations: int
    converged: bool
    cost_trace: np.ndarray
    flags: tuple[str, ...] = ()
    message: str = ""

    def stderr(self, name: str) -> float:
        """1-sigma uncertainty of a free parameter."""
        k = self.free.index(name)
        return float(math.sqrt(max(self.covariance[k, k], 0.0)))


@dataclass(frozen=True)
class _LMOutcome:
    x: np.ndarray
    cost_trace: np.ndarray
    iterations: int
    converged: bool
    message: str


def _levenberg_marquardt(fun, jac, x0, lower, upper, cfg: FitConfig) -> _LMOutcome:
    """Box-projected damped least squares.

    fun returns the weighted residual vector, jac its Jacobian.  Candidate
    steps solve (J'J + lam*diag(J'J)) dx = -J'r and are clipped to the box;
    lam grows until a non-increasing step is found and shrinks after every
    acceptance.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    r = fun(x)
    cost = float(r @ r)
    trace = [cost]
    lam = cfg.damping_init
    converged = False
    message = "max_iters reached"
    iterations = 0
    for _ in range(cfg.max_iters):
        jmat = jac(x)
        grad = jmat.T @ r
        hess = jmat.T @ jmat
        diag = np.diag(hess).copy()
        diag[diag <= 0.0] = max(diag.max(), 1.0)
        accepted = False
        for _ in range(60):
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam = min(lam * 10.0, 1.0e14)
                continue
            x_new = np.clip(x + step, lower, upper)
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new)
            if math.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam = min(lam * 10.0, 1.0e14)
            if lam >= 1.0e14:
                break
        if not accepted:
            # No downhill direction left at maximum damping: either at a
            # minimum or numerically stuck; report which via the gradient.
            grad_scale = float(np.max(np.abs(grad))) / (1.0 + cost)
            converged = grad_scale < 1.0e-6
            message = "stationary point" if converged else "no downhill step found"
            break
        iterations += 1
        dx = x_new - x
        drop = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        trace.append(cost)
        lam = max(lam / 3.0, 1.0e-14)
        if drop <= cfg.ftol * max(cost, 1.0e-300):
            converged = True
            message = "cost decrease below ftol"
            break
        if np.all(np.abs(dx) <= cfg.xtol * (np.abs(x) + cfg.xtol)):
            converged = True
            message = "step below xtol"
            break
    return _LMOutcome(
        x=x,
        cost_trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
        message=message,
    )


def _numerical_jacobian(fun, x, rel_step: float = 1.0e-6) -> np.ndarray:
    """Central-difference Jacobian for models without an analytic one."""
    x = np.asarray(x, dtype=float)
    r0 = fun(x)
    jac = np.empty((r0.size, x.size))
    for k in range(x.size):
        h = rel_step * max(abs(x[k]), 1.0)
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        jac[:, k] = (fun(xp) - fun(xm)) / (2.0 * h)
    return jac


def _weights(spec: Spectrum) -> np.ndarray | None:
    """Per-point weights 1/sigma, or None when sigma is absent or unusable."""
    if spec.sigma is None:
        return None
    if np.any(spec.sigma <= 0.0):
        return None
    return 1.0 / spec.sigma


def _smooth(values: np.ndarray, window: int = 5) -> np.ndarray:
    """Moving average with edge padding; used only for initial guesses and
    feature detection, never inside the fit itself."""
    if values.size < window:
        return values.copy()
    padded = np.concatenate(
        [
            np.full(window // 2, values[0]),
            values,
            np.full(window - 1 - window // 2, values[-1]),
        ]
    )
    kernel = np.full(window, 1.0 / window)
    return np.convolve(padded, kernel, mode="valid")


_SMOOTH_WINDOW = 5
# Feature gate: the smoothed extremum must exceed this many raw-noise sigmas
# (the smoothed noise is wing_std/sqrt(window), so the effective gate on the
# smoothed trace is 4/sqrt(5) ~ 1.8 smoothed sigmas).
_DETECTION_NSIGMA = 4.0


def estimate_baseline(spec: Spectrum, wing_fraction: float = 0.1) -> tuple[float, float]:
    """Baseline level and wing noise from the outermost samples.

    Averages the outermost wing_fraction of points on each side of the
    grid.  Returns (baseline, std) where std is the sample standard
    deviation of the wing points (0.0 when only two points qualify is
    impossible: at least one point per side, ddof=1 needs the pair).
    """
    if not 0.0 < wing_fraction <= 0.5:
        raise ValueError("wing_fraction must be in (0, 0.5]")
    n = len(spec)
    if n < 10:
        raise ValueError("need at least 10 points to estimate a baseline")
    k = max(1, int(round(wing_fraction * n)))
    wings = np.concatenate([spec.values[:k], spec.values[-k:]])
    return float(wings.mean()), float(wings.std(ddof=1))


def _fluorescence_values(x, nu21, gamma, amplitude, background):
    delta = x - nu21
    lor = 1.0 / (delta * delta + 0.25 * gamma * gamma)
    return amplitude * lor + background


def _fluorescence_jacobian(x, nu21, gamma, amplitude, background):
    delta = x - nu21
    lor = 1.0 / (delta * delta + 0.25 * gamma * gamma)
    lor2 = lor * lor
    jac = np.empty((x.size, 4))
    jac[:, 0] = amplitude * 2.0 * delta * lor2
    jac[:, 1] = -amplitude * 0.5 * gamma * lor2
    jac[:, 2] = lor
    jac[:, 3] = 1.0
    return jac


def _transmission_values(x, nu21, c_amp, psi, i_e, gamma, alpha, gamma0):
    delta = x - nu21
    lor = 1.0 / (delta * delta + 0.25 * gamma * gamma)
    incoherent = (c_amp * c_amp / alpha) * (gamma / gamma0) * lor
    phase_factor = delta * np.cos(psi) + 0.5 * gamma * np.sin(psi)
    return i_e * (1.0 + incoherent + lor * (-2.0 * c_amp) * phase_factor)


def _transmission_jacobian(x, nu21, c_amp, psi, i_e, gamma, alpha, gamma0):
    delta = x - nu21
    lor = 1.0 / (delta * delta + 0.25 * gamma * gamma)
    lor2 = lor * lor
    cos_psi, sin_psi = np.cos(psi), np.sin(psi)
    phase_factor = delta * cos_psi + 0.5 * gamma * sin_psi
    inc_coeff = (gamma / gamma0) / alpha
    jac = np.empty((x.size, 4))
    # d/d nu21: dDelta = -1, dL = 2*Delta*L**2, d(phase_factor) = -cos(psi)
    jac[:, 0] = i_e * (
        inc_coeff * c_amp * c_amp * 2.0 * delta * lor2
        - 2.0 * c_amp * (2.0 * delta * lor2 * phase_factor - lor * cos_psi)
    )
    jac[:, 1] = i_e * (2.0 * inc_coeff * c_amp * lor - 2.0 * lor * phase_factor)
    jac[:, 2] = i_e * (-2.0 * c_amp * lor) * (-delta * sin_psi + 0.5 * gamma * cos_psi)
    jac[:, 3] = (
        1.0 + inc_coeff * c_amp * c_amp * lor - 2.0 * c_amp * lor * phase_factor
    )
    return jac


def _covariance_from_jacobian(
    jac: np.ndarray, weights: np.ndarray | None, residuals: np.ndarray
) -> tuple[np.ndarray, bool]:
    """(J'WJ)^-1 scaled by reduced chi-square; True when pinv was needed.

    residuals must already be weighted when weights are given.
    """
    jw = jac if weights is None else jac * weights[:, None]
    n, p = jw.shape
    dof = max(n - p, 1)
    chi2_red = float(residuals @ residuals) / dof
    normal = jw.T @ jw
    used_pinv = False
    try:
        inv = np.linalg.inv(normal)
        # inv() can succeed on near-singular input with garbage content;
        # verify the round trip before trusting it.
        if not np.allclose(normal @ inv, np.eye(p), atol=1.0e-6):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        inv = np.linalg.pinv(normal)
        used_pinv = True
    return chi2_red * inv, used_pinv


def fit_fluorescence(spec: Spectrum, cfg: FitConfig | None = None) -> FitResult:
    """Fit a Lorentzian line to a fluorescence excitation spectrum.

    Free parameters: nu21 (MHz), gamma (MHz, FWHM), amplitude
    (cps*MHz**2), background (cps).  Raises NoPeakError when no sample of
    the lightly smoothed spectrum rises above the wing noise gate.
    """
    cfg = cfg or FitConfig()
    background0, noise = estimate_baseline(spec)
    x = spec.detunings
    smoothed = _smooth(spec.values, _SMOOTH_WINDOW)
    peak_idx = int(np.argmax(smoothed))
    height = smoothed[peak_idx] - background0
    gate = _DETECTION_NSIGMA * noise / math.sqrt(_SMOOTH_WINDOW)
    if not height > gate:
        raise NoPeakError(
            f"peak height {height:.3g} cps does not clear the noise gate {gate:.3g} cps"
        )
    nu0 = float(x[peak_idx])
    # FWHM guess from half-height crossings of the smoothed trace.
    half = background0 + 0.5 * height
    above = smoothed >= half
    idx = np.flatnonzero(above)
    if idx.size >= 2:
        gamma0_guess = float(x[idx[-1]] - x[idx[0]])
    else:
        gamma0_guess = float((x[-1] - x[0]) / 10.0)
    gamma0_guess = max(gamma0_guess, 2.0 * float(np.min(np.diff(x))))
    amp0 = height * 0.25 * gamma0_guess * gamma0_guess

    weights = _weights(spec)
    y = spec.values

    def residuals(p):
        model = _fluorescence_values(x, *p)
        r = model - y
        return r if weights is None else r * weights

    def jacobian(p):
        jac = _fluorescence_jacobian(x, *p)
        return jac if weights is None else jac * weights[:, None]

    names = ("nu21", "gamma", "amplitude", "background")
    span = float(x[-1] - x[0])
    lower = np.array([x[0] - span, 1.0e-9, 0.0, -np.inf])
    upper = np.array([x[-1] + span, np.inf, np.inf, np.inf])
    for k, name in enumerate(names):
        if name in cfg.bounds:
            lower[k], upper[k] = cfg.bounds[name]
    out = _levenberg_marquardt(
        residuals,
        jacobian,
        np.array([nu0, gamma0_guess, amp0, background0]),
        lower,
        upper,
        cfg,
    )
    final = dict(zip(names, out.x))
    r_w = residuals(out.x)
    jac_w = jacobian(out.x)
    cov, used_pinv = _covariance_from_jacobian(
        jac_w, None, r_w
    )  # jacobian() already applies weights
    raw = _fluorescence_values(x, *out.x) - y
    flags = ("covariance_pinv",) if used_pinv else ()
    return FitResult(
        model="fluorescence",
        params=final,
        free=names,
        covariance=cov,
        residual_rms=float(np.sqrt(np.mean(raw * raw))),
        iterations=out.iterations,
        converged=out.converged,
        cost_trace=out.cost_trace,
        flags=flags,
        message=out.message,
    )


def _classify_contrast(
    x: np.ndarray, vis_smooth: np.ndarray, gamma: float
) -> tuple[float, float, float]:
    """Initial (nu21, c_amp, psi) from the shape of the smoothed visibility.

    A dominant negative extremum is read as a dip (psi ~ pi/2), a dominant
    positive one as a peak (psi ~ 3*pi/2); comparable lobes of both signs
    are dispersive with the lobe order picking psi ~ 0 or pi.
    """
    i_min = int(np.argmin(vis_smooth))
    i_max = int(np.argmax(vis_smooth))
    v_min = float(vis_smooth[i_min])
    v_max = float(vis_smooth[i_max])
    depth = max(-v_min, 0.0)
    height = max(v_max, 0.0)
    if depth >= 2.0 * height:
        return float(x[i_min]), depth * gamma / 4.0, 0.5 * math.pi
    if height >= 2.0 * depth:
        return float(x[i_max]), height * gamma / 4.0, 1.5 * math.pi
    nu0 = 0.5 * float(x[i_min] + x[i_max])
    lobe = 0.5 * (v_max - v_min)
    psi0 = 0.0 if i_max < i_min else math.pi
    return nu0, lobe * gamma / 2.0, psi0


def fit_transmission(
    spec: Spectrum,
    gamma: float,
    alpha: float = 0.25,
    gamma0: float | None = None,
    cfg: FitConfig | None = None,
) -> FitResult:
    """Fit the two-term interference model to a transmission spectrum.

    Free parameters: nu21 (MHz), c_amp (MHz), psi (rad, reported folded
    into [0, 2*pi)), i_e (cps).  gamma, alpha and gamma0 are fixed inputs;
    gamma0 defaults to gamma with the 'gamma0_assumed' flag set.  Raises
    LowContrastError when the spectrum shows no feature above the wing
    noise gate.
    """
    cfg = cfg or FitConfig()
    if gamma <= 0.0:
        raise ValueError("gamma must be positive (MHz, FWHM)")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    flags: list[str] = []
    if gamma0 is None:
        gamma0 = gamma
        flags.append("gamma0_assumed")
    elif gamma0 <= 0.0 or gamma0 > gamma:
        raise ValueError("gamma0 must be in (0, gamma]")

    i_e0, noise = estimate_baseline(spec)
    x = spec.detunings
    vis = spec.values / i_e0 - 1.0
    vis_smooth = _smooth(vis, _SMOOTH_WINDOW)
    gate = _DETECTION_NSIGMA * (noise / i_e0) / math.sqrt(_SMOOTH_WINDOW)
    if not float(np.max(np.abs(vis_smooth))) > gate:
        raise LowContrastError(
            f"max visibility {np.max(np.abs(vis_smooth)):.3g} does not clear "
            f"the noise gate {gate:.3g}"
        )
    nu0, c0, psi0 = _classify_contrast(x, vis_smooth, gamma)
    c0 = max(c0, 1.0e-6 * gamma)

    weights = _weights(spec)
    y = spec.values

    def residuals(p):
        model = _transmission_values(x, *p, gamma, alpha, gamma0)
        r = model - y
        return r if weights is None else r * weights

    def jacobian(p):
        jac = _transmission_jacobian(x, *p, gamma, alpha, gamma0)
        return jac if weights is None else jac * weights[:, None]

    names = ("nu21", "c_amp", "psi", "i_e")
    span = float(x[-1] - x[0])
    lower = np.array([x[0] - span, 0.0, -np.inf, 1.0e-12])
    upper = np.array([x[-1] + span, np.inf, np.inf, np.inf])
    for k, name in enumerate(names):
        if name in cfg.bounds:
            lower[k], upper[k] = cfg.bounds[name]
    out = _levenberg_marquardt(
        residuals,
        jacobian,
        np.array([nu0, c0, psi0, i_e0]),
        lower,
        upper,
        cfg,
    )
    psi_raw = out.x[2]
    psi_folded = wrap_phase(psi_raw)
    if abs(psi_folded - psi_raw) > 1.0e-12:
        flags.append("psi_folded")
    solution = out.x.copy()
    solution[2] = psi_folded
    r_w = residuals(out.x)
    jac_w = jacobian(out.x)
    cov, used_pinv = _covariance_from_jacobian(jac_w, None, r_w)
    if used_pinv:
        flags.append("covariance_pinv")
    raw = _transmission_values(x, *out.x, gamma, alpha, gamma0) - y
    params = dict(zip(names, solution))
    params.update({"gamma": gamma, "alpha": alpha, "gamma0": gamma0})
    return FitResult(
        model="transmission",
        params=params,
        free=names,
        covariance=cov,
        residual_rms=float(np.sqrt(np.mean(raw * raw))),
        iterations=out.iterations,
        converged=out.converged,
        cost_trace=out.cost_trace,
        flags=tuple(flags),
        message=out.message,
    )


# Parameter layout of the joint polarization fit.
_POLAR_NAMES = (
    "nu21",
    "c_amp",
    "psi",
    "i_e",
    "tip_axis",
    "tip_ellipticity",
    "mol_axis",
    "mol_ellipticity",
)


def _polar_model_values(
    pvec: np.ndarray,
    thetas: np.ndarray,
    x: np.ndarray,
    gamma: float,
    alpha: float,
    gamma0: float,
) -> np.ndarray:
    """Stacked detected intensities of an analyzer scan, one row per angle.

    Written in terms of the raw field projections rather than the per-angle
    (C, psi) so it stays finite when an angle crosses the excitation field;
    at such angles only the direct emitter emission term survives.
    """
    nu21, c_amp, psi, i_e_base = pvec[:4]
    tip = JonesField.from_ellipse(pvec[4], pvec[5])
    mol = JonesField.from_ellipse(pvec[6], pvec[7])
    theta_ref = pvec[4]  # tip major axis by construction of from_ellipse
    t_ref = project(tip, theta_ref)
    m_ref = project(mol, theta_ref)
    rho_ref = m_ref / t_ref
    power = tip.power

    delta = x - nu21
    lor = 1.0 / (delta * delta + 0.25 * gamma * gamma)
    # I_e(theta)*C(theta)*exp(i*psi(theta)) == z0 * m(theta)*conj(t(theta))
    z0 = i_e_base * c_amp * np.exp(1j * psi) / (power * rho_ref)
    values = np.empty((thetas.size, x.size))
    for k, theta in enumerate(thetas):
        t = project(tip, float(theta))
        m = project(mol, float(theta))
        baseline = i_e_base * abs(t) ** 2 / power
        incoherent = (
            (gamma / gamma0 / alpha)
            * (i_e_base * c_amp * c_amp * abs(m) ** 2 / (power * abs(rho_ref) ** 2))
            * lor
        )
        zc = z0 * m * np.conj(t)
        extinction = -2.0 * lor * ((delta * zc.real) + 0.5 * gamma * zc.imag)
        values[k] = baseline + incoherent + extinction
    return values


def joint_fit_polar(
    scan: AnalyzerScan,
    e_tip_guess: JonesField,
    e_mol_guess: JonesField,
    gamma: float,
    alpha: float = 0.25,
    gamma0: float | None = None,
    cfg: FitConfig | None = None,
) -> FitResult:
    """Fit all analyzer-scan spectra with shared line and field parameters.

    Free parameters: the reference-frame coupling (nu21, c_amp, psi, i_e)
    plus (axis, ellipticity) angles of the excitation and emitter fields.
    Field amplitudes and global phases are not identifiable (any common
    complex factor cancels), so both Jones vectors are parametrized with
    unit power and zero global phase.  gamma, alpha, gamma0 are fixed as
    in fit_transmission.  Raises DegenerateScanError for scans with fewer
    than 4 distinct angles.
    """
    cfg = cfg or FitConfig()
    flags: list[str] = []
    if gamma0 is None:
        gamma0 = gamma
        flags.append("gamma0_assumed")
    n_angles = len(scan)
    distinct = np.unique(np.round(scan.thetas, 9)).size
    if n_angles < 4 or distinct < 4:
        raise DegenerateScanError(
            f"need >= 4 distinct analyzer angles, got {distinct}"
        )

    # Seed the line parameters from the brightest-baseline spectrum alone.
    k_ref = int(np.argmax(scan.i_e_vs_theta))
    single = fit_transmission(scan.spectra[k_ref], gamma, alpha, gamma0, cfg)
    tip_axis0, tip_ell0 = ellipse_parameters(e_tip_guess)
    mol_axis0, mol_ell0 = ellipse_parameters(e_mol_guess)
    # Map the single-angle coupling back to the tip-axis reference frame
    # using the guessed fields.
    theta_k = float(scan.thetas[k_ref])
    t_k = project(e_tip_guess, theta_k)
    trans_k = abs(t_k) ** 2 / e_tip_guess.power
    c0 = single.params["c_amp"]
    psi0 = single.params["psi"]
    ie0 = single.params["i_e"] / max(trans_k, 1.0e-3)
    if abs(t_k) > 0:
        m_k = project(e_mol_guess, theta_k)
        t_ref = project(e_tip_guess, tip_axis0)
        m_ref = project(e_mol_guess, tip_axis0)
        if m_k != 0 and m_ref != 0:
            ratio = (m_k / t_k) / (m_ref / t_ref)
            c0 = c0 / max(abs(ratio), 1.0e-6)
            psi0 = psi0 - float(np.angle(ratio))

    x = scan.spectra[0].detunings
    for sp in scan.spectra[1:]:
        if sp.detunings.shape != x.shape or not np.allclose(sp.detunings, x):
            raise ValueError("all spectra in the scan must share one grid")
    y = np.stack([sp.values for sp in scan.spectra])
    if all(sp.sigma is not None and np.all(sp.sigma > 0) for sp in scan.spectra):
        w = np.stack([1.0 / sp.sigma for sp in scan.spectra])
    else:
        w = None

    def residuals(p):
        model = _polar_model_values(p, scan.thetas, x, gamma, alpha, gamma0)
        r = model - y
        if w is not None:
            r = r * w
        return r.ravel()

    def jacobian(p):
        return _numerical_jacobian(residuals, p, rel_step=1.0e-7)

    ell_cap = 0.25 * math.pi - 1.0e-6
    x0 = np.array([single.params["nu21"], c0, psi0, ie0,
                   tip_axis0, tip_ell0, mol_axis0, mol_ell0])
    span = float(x[-1] - x[0])
    lower = np.array([x[0] - span, 0.0, -np.inf, 1.0e-12,
                      -np.inf, -ell_cap, -np.inf, -ell_cap])
    upper = np.array([x[-1] + span, np.inf, np.inf, np.inf,
                      np.inf, ell_cap, np.inf, ell_cap])
    for k, name in enumerate(_POLAR_NAMES):
        if name in cfg.bounds:
            lower[k], upper[k] = cfg.bounds[name]
    out = _levenberg_marquardt(residuals, jacobian, x0, lower, upper, cfg)

    solution = out.x.copy()
    psi_folded = wrap_phase(solution[2])
    if abs(psi_folded - solution[2]) > 1.0e-12:
        flags.append("psi_folded")
    solution[2] = psi_folded
    solution[4] = solution[4] % math.pi
    solution[6] = solution[6] % math.pi
    r_w = residuals(out.x)
    jac_w = jacobian(out.x)
    cov, used_pinv = _covariance_from_jacobian(jac_w, None, r_w)
    if used_pinv:
        flags.append("covariance_pinv")
    raw = _polar_model_values(out.x, scan.thetas, x, gamma, alpha, gamma0) - y
    params = dict(zip(_POLAR_NAMES, solution))
    params.update({"gamma": gamma, "alpha": alpha, "gamma0": gamma0})
    return FitResult(
        model="polar_joint",
        params=params,
        free=_POLAR_NAMES,
        covariance=cov,
        residual_rms=float(np.sqrt(np.mean(raw * raw))),
        iterations=out.iterations,
        converged=out.converged,
        cost_trace=out.cost_trace,
        flags=tuple(flags),
        message=out.message,
    )


def covariance_estimate(result: FitResult, data: Spectrum | AnalyzerScan) -> np.ndarray:
    """Parameter covariance of a finished fit against the given data.

    Rebuilds the weighted Jacobian at the fitted parameters and returns
    (J'WJ)^-1 scaled by the reduced chi-square; near-singular normal
    matrices fall back to the pseudo-inverse.  Ordering follows
    result.free.
    """
    if result.model == "fluorescence":
        assert isinstance(data, Spectrum)
        p = [result.params[k] for k in ("nu21", "gamma", "amplitude", "background")]
        jac = _fluorescence_jacobian(data.detunings, *p)
        model = _fluorescence_values(data.detunings, *p)
        weights = _weights(data)
        r = model - data.values
        if weights is not None:
            jac = jac * weights[:, None]
            r = r * weights
        cov, _ = _covariance_from_jacobian(jac, None, r)
        return cov
    if result.model == "transmission":
        assert isinstance(data, Spectrum)
        p = [result.params[k] for k in ("nu21", "c_amp", "psi", "i_e")]
        fixed = (result.params["gamma"], result.params["alpha"], result.params["gamma0"])
        jac = _transmission_jacobian(data.detunings, *p, *fixed)
        model = _transmission_values(data.detunings, *p, *fixed)
        weights = _weights(data)
        r = model - data.values
        if weights is not None:
            jac = jac * weights[:, None]
            r = r * weights
        cov, _ = _covariance_from_jacobian(jac, None, r)
        return cov
    if result.model == "polar_joint":
        assert isinstance(data, AnalyzerScan)
        pvec = np.array([result.params[k] for k in _POLAR_NAMES])
        gamma = result.params["gamma"]
        alpha = result.params["alpha"]
        gamma0 = result.params["gamma0"]
        x = data.spectra[0].detunings
        y = np.stack([sp.values for sp in data.spectra])
        if all(sp.sigma is not None and np.all(sp.sigma > 0) for sp in data.spectra):
            w = np.stack([1.0 / sp.sigma for sp in data.spectra])
        else:
            w = None

        def residuals(p):
            model = _polar_model_values(p, data.thetas, x, gamma, alpha, gamma0)
            r = model - y
            if w is not None:
                r = r * w
            return r.ravel()

        jac = _numerical_jacobian(residuals, pvec, rel_step=1.0e-7)
        cov, _ = _covariance_from_jacobian(jac, None, residuals(pvec))
        return cov
    raise ValueError(f"unknown fit model {result.model!r}")
