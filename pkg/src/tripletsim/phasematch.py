"""Quasi-phase-matching solver for the two down-conversion stages.

Energy conservation fixes the idler wavelength from pump and signal; momentum
conservation (phase matching) is restored by a poling grating of period
Lambda_G contributing +/- 2 pi / Lambda_G to the wave-number balance.  This
module solves the phase-matching condition for the signal wavelength, traces
temperature tuning curves, locates the second-harmonic peak of the reverse
process, integrates the pump acceptance bandwidth of a stage, and quantifies
the spectral overlap of two Gaussian lineshapes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, curve_fit

from .errors import FitError, NoRootError

__all__ = [
    "AcceptanceBandwidth",
    "PhasematchSolution",
    "QpmGrating",
    "QpmProcess",
    "TuningPoint",
    "idler_partner",
    "pdc_signal_response",
    "phase_mismatch",
    "poling_period_for_shg",
    "poling_period_for_target",
    "pump_acceptance_bandwidth",
    "shg_mismatch",
    "shg_peak_wavelength",
    "shg_response",
    "solve_phasematched_signal",
    "spectral_overlap",
    "temperature_tuning_curve",
]

# Wavelength tolerance of the root finder.  Far below the nominal 1e-4 nm so
# that the residual |delta_k| at a solution stays under 1e-3 per meter.
BRENT_XTOL_M = 1e-18
BRENT_MAX_ITER = 200


def idler_partner(lambda_p_m: float, lambda_s_m: float) -> float:
    """Idler wavelength from energy conservation, 1/lp = 1/ls + 1/li."""
    if lambda_p_m <= 0:
        raise ValueError(f"pump wavelength must be > 0, got {lambda_p_m}")
    if lambda_s_m <= lambda_p_m:
        raise ValueError(
            f"signal wavelength {lambda_s_m} must exceed pump wavelength {lambda_p_m}"
        )
    return 1.0 / (1.0 / lambda_p_m - 1.0 / lambda_s_m)


@dataclass(frozen=True)
class QpmGrating:
    """Periodic poling grating; sign selects the +/- grating order."""

    poling_period_m: float
    sign: int = -1

    def __post_init__(self):
        if self.poling_period_m <= 0:
            raise ValueError("poling_period_m must be > 0")
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")

    @property
    def grating_k(self) -> float:
        return self.sign * 2.0 * math.pi / self.poling_period_m


@dataclass(frozen=True)
class QpmProcess:
    """One collinear three-wave process: wavelength triple, temperature, grating."""

    lambda_p_m: float
    lambda_s_m: float
    lambda_i_m: float
    temperature_c: float
    grating: QpmGrating
    dispersion: object

    def energy_residual(self) -> float:
        """Relative closure error of 1/lp - 1/ls - 1/li."""
        lhs = 1.0 / self.lambda_p_m
        return (lhs - 1.0 / self.lambda_s_m - 1.0 / self.lambda_i_m) / lhs


def _wavenumber(dispersion, lambda_m, temperature_c):
    return 2.0 * math.pi * dispersion.n_eff(lambda_m, temperature_c) / lambda_m


def phase_mismatch(process: QpmProcess) -> float:
    """delta_k = k_p - k_s - k_i +/- 2 pi / Lambda_G in inverse meters."""
    disp = process.dispersion
    theta = process.temperature_c
    return (
        _wavenumber(disp, process.lambda_p_m, theta)
        - _wavenumber(disp, process.lambda_s_m, theta)
        - _wavenumber(disp, process.lambda_i_m, theta)
        + process.grating.grating_k
    )


def _mismatch_vs_signal(lambda_s_m, lambda_p_m, grating, temperature_c, dispersion):
    """delta_k versus signal wavelength, idler from energy conservation; vectorized."""
    lambda_s_m = np.asarray(lambda_s_m, dtype=float) if np.ndim(lambda_s_m) else lambda_s_m
    lambda_i_m = 1.0 / (1.0 / lambda_p_m - 1.0 / lambda_s_m)
    theta = temperature_c
    dk = (
        _wavenumber(dispersion, lambda_p_m, theta)
        - 2.0 * math.pi * dispersion.n_eff(lambda_s_m, theta) / lambda_s_m
        - 2.0 * math.pi * dispersion.n_eff(lambda_i_m, theta) / lambda_i_m
        + grating.grating_k
    )
    return dk if np.ndim(dk) else float(dk)


def poling_period_for_target(
    lambda_p_m: float,
    lambda_s_m: float,
    temperature_c: float,
    dispersion,
) -> QpmGrating:
    """Grating that phase-matches the given pump/signal pair exactly.

    This is the calibration step: the poling period absorbs the unknown
    guided-mode index corrections so the stage meets its design wavelengths
    at the calibration temperature by construction.
    """
    lambda_i_m = idler_partner(lambda_p_m, lambda_s_m)
    bulk = (
        _wavenumber(dispersion, lambda_p_m, temperature_c)
        - _wavenumber(dispersion, lambda_s_m, temperature_c)
        - _wavenumber(dispersion, lambda_i_m, temperature_c)
    )
    if bulk == 0.0:
        raise ValueError(
            "wave-number balance already closes without a grating; "
            "a finite poling period cannot be derived"
        )
    return QpmGrating(poling_period_m=2.0 * math.pi / abs(bulk), sign=-1 if bulk > 0 else 1)


@dataclass(frozen=True)
class PhasematchSolution:
    lambda_s_m: float
    lambda_i_m: float
    residual_delta_k: float
    n_roots: int

    @property
    def multiple_roots(self) -> bool:
        return self.n_roots > 1


def solve_phasematched_signal(
    lambda_p_m: float,
    grating: QpmGrating,
    temperature_c: float,
    dispersion,
    bracket: tuple[float, float],
    scan_points: int = 128,
) -> PhasematchSolution:
    """Signal wavelength with delta_k = 0 inside the bracket.

    The bracket is scanned for sign changes first; each is refined with
    Brent's method.  With several roots the one nearest the bracket center is
    returned and the multiplicity is flagged on the result.
    """
    lo, hi = bracket
    if not (lambda_p_m < lo < hi):
        raise ValueError(f"bracket {bracket} must satisfy pump < lo < hi")
    grid = np.linspace(lo, hi, scan_points)
    vals = _mismatch_vs_signal(grid, lambda_p_m, grating, temperature_c, dispersion)
    sign_change = np.nonzero(np.diff(np.signbit(vals)))[0]
    exact = np.nonzero(vals == 0.0)[0]

    roots = [float(grid[k]) for k in exact]
    for k in sign_change:
        root = brentq(
            _mismatch_vs_signal,
            grid[k],
            grid[k + 1],
            args=(lambda_p_m, grating, temperature_c, dispersion),
            xtol=BRENT_XTOL_M,
            maxiter=BRENT_MAX_ITER,
        )
        roots.append(float(root))
    if not roots:
        raise NoRootError(
            f"delta_k does not change sign over {bracket}; no phase-matched signal"
        )
    # collapse duplicates from adjacent grid cells straddling the same root
    roots.sort()
    distinct = [roots[0]]
    for r in roots[1:]:
        if r - distinct[-1] > 1e-13:
            distinct.append(r)
    center = 0.5 * (lo + hi)
    distinct.sort(key=lambda r: abs(r - center))
    best = distinct[0]
    roots = distinct
    return PhasematchSolution(
        lambda_s_m=best,
        lambda_i_m=idler_partner(lambda_p_m, best),
        residual_delta_k=_mismatch_vs_signal(best, lambda_p_m, grating, temperature_c, dispersion),
        n_roots=len(roots),
    )


@dataclass(frozen=True)
class TuningPoint:
    temperature_c: float
    lambda_s_m: float | None
    lambda_i_m: float | None


def temperature_tuning_curve(
    grating: QpmGrating,
    lambda_p_m: float,
    theta_range_c: tuple[float, float],
    steps: int,
    dispersion,
    bracket: tuple[float, float],
) -> list[TuningPoint]:
    """Solved signal/idler wavelengths on a monotone temperature grid.

    Temperatures where no root exists inside the bracket are kept in the
    output with absent wavelengths.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    thetas = np.linspace(theta_range_c[0], theta_range_c[1], steps)
    points = []
    for theta in thetas:
        try:
            sol = solve_phasematched_signal(
                lambda_p_m, grating, float(theta), dispersion, bracket
            )
        except NoRootError:
            points.append(TuningPoint(float(theta), None, None))
        else:
            points.append(TuningPoint(float(theta), sol.lambda_s_m, sol.lambda_i_m))
    return points


def poling_period_for_shg(lambda_f_m: float, temperature_c: float, dispersion) -> QpmGrating:
    """Grating that phase-matches degenerate conversion at fundamental lambda_f."""
    bulk = (
        _wavenumber(dispersion, lambda_f_m / 2.0, temperature_c)
        - 2.0 * _wavenumber(dispersion, lambda_f_m, temperature_c)
    )
    if bulk == 0.0:
        raise ValueError("degenerate wave-number balance closes without a grating")
    return QpmGrating(poling_period_m=2.0 * math.pi / abs(bulk), sign=-1 if bulk > 0 else 1)


def sinc_sq(x):
    """sin(x)^2 / x^2 with the removable singularity at 0."""
    return np.sinc(np.asarray(x) / np.pi) ** 2


def shg_mismatch(lambda_f_m, grating: QpmGrating, temperature_c: float, dispersion):
    """Wave-number mismatch of second-harmonic generation at fundamental lambda_f.

    The reverse process of degenerate down-conversion: pump at lambda_f / 2,
    signal and idler both at lambda_f, same grating.  Vectorized.
    """
    lambda_f_m = np.asarray(lambda_f_m, dtype=float) if np.ndim(lambda_f_m) else lambda_f_m
    theta = temperature_c
    dk = (
        2.0 * math.pi * dispersion.n_eff(lambda_f_m / 2.0, theta) / (lambda_f_m / 2.0)
        - 2.0 * (2.0 * math.pi * dispersion.n_eff(lambda_f_m, theta) / lambda_f_m)
        + grating.grating_k
    )
    return dk if np.ndim(dk) else float(dk)


def shg_response(
    grating: QpmGrating,
    temperature_c: float,
    dispersion,
    scan: tuple[float, float],
    length_m: float,
    n_points: int = 801,
) -> tuple[np.ndarray, np.ndarray]:
    """sinc^2(delta_k L / 2) second-harmonic conversion curve over the scan."""
    lams = np.linspace(scan[0], scan[1], n_points)
    dk = shg_mismatch(lams, grating, temperature_c, dispersion)
    return lams, sinc_sq(dk * length_m / 2.0)


def shg_peak_wavelength(
    grating: QpmGrating,
    temperature_c: float,
    dispersion,
    scan: tuple[float, float],
    length_m: float = 0.025,
    n_points: int = 801,
) -> float:
    """Fundamental wavelength maximizing the second-harmonic response.

    The peak of the main sinc^2 lobe sits where delta_k = 0, so a bracketed
    root is used when available; when the scan holds no root the scan-grid
    argmax is returned with a warning, since it can only be a boundary point
    or a side lobe.
    """
    lams = np.linspace(scan[0], scan[1], n_points)
    dk = shg_mismatch(lams, grating, temperature_c, dispersion)
    sign_change = np.nonzero(np.diff(np.signbit(dk)))[0]
    if sign_change.size:
        k = sign_change[0]
        return float(
            brentq(
                shg_mismatch,
                lams[k],
                lams[k + 1],
                args=(grating, temperature_c, dispersion),
                xtol=BRENT_XTOL_M,
                maxiter=BRENT_MAX_ITER,
            )
        )
    best = int(np.argmax(sinc_sq(dk * length_m / 2.0)))
    warnings.warn(
        "no phase-matched point inside the scan; the reported peak is the "
        "argmax of the sampled response at the scan boundary or a side lobe",
        stacklevel=2,
    )
    return float(lams[best])


def pdc_signal_response(
    lambda_p_m: float,
    grating: QpmGrating,
    temperature_c: float,
    dispersion,
    length_m: float,
    n_points: int = 1000,
    lobe_span: float = 4.0,
    coarse_points: int = 512,
) -> float:
    """Signal-wavelength-integrated sinc^2 response of the stage at one pump.

    A coarse scan over the near-degenerate band locates the region where the
    sinc argument stays within lobe_span lobes; the response is then
    integrated on an n_points grid over that region.  The window selection is
    independent of n_points, so refining the grid only refines the quadrature.
    """
    lo = max(1.05 * lambda_p_m, 2.0 * lambda_p_m / 1.5)
    hi = 2.0 * lambda_p_m * 1.5
    lam_min, lam_max = dispersion.lambda_range_m
    lo = max(lo, lam_min * 1.001)
    hi = min(hi, lam_max * 0.999)
    coarse = np.linspace(lo, hi, coarse_points)
    x = _mismatch_vs_signal(coarse, lambda_p_m, grating, temperature_c, dispersion) * (
        length_m / 2.0
    )
    inside = np.abs(x) <= lobe_span * math.pi
    if np.any(inside):
        idx = np.nonzero(inside)[0]
        pad = max(1, coarse_points // 100)
        a = coarse[max(0, idx[0] - pad)]
        b = coarse[min(coarse_points - 1, idx[-1] + pad)]
    else:
        # fully mismatched pump: integrate around the least-mismatched point
        k = int(np.argmin(np.abs(x)))
        half = (hi - lo) / 20.0
        a = max(lo, coarse[k] - half)
        b = min(hi, coarse[k] + half)
    fine = np.linspace(a, b, n_points)
    xf = _mismatch_vs_signal(fine, lambda_p_m, grating, temperature_c, dispersion) * (
        length_m / 2.0
    )
    return float(np.trapezoid(sinc_sq(xf), fine))


def _gaussian(x, amplitude, center, sigma):
    return amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2)


FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class AcceptanceBandwidth:
    fwhm_m: float
    peak_m: float
    pump_grid_m: np.ndarray
    response: np.ndarray
    fit_amplitude: float
    fit_sigma_m: float
    residual_rms: float


def pump_acceptance_bandwidth(
    grating: QpmGrating,
    temperature_c: float,
    dispersion,
    length_m: float,
    pump_scan: tuple[float, float],
    n_pump: int = 161,
    n_signal: int = 1000,
    window_halfwidths: float = 1.0,
) -> AcceptanceBandwidth:
    """Gaussian FWHM of the integrated stage response versus pump wavelength.

    A first pass over pump_scan locates the response peak and its half-maximum
    crossings.  A second, refined pass samples the peak over
    +/- window_halfwidths measured widths, and the Gaussian is least-squares
    fitted there.  Because the fit window tracks the measured width, the
    extracted FWHM is scale-covariant: halving the phase-matched width (for
    example by doubling the interaction length) halves the fit FWHM.
    """
    if window_halfwidths <= 0:
        raise ValueError("window_halfwidths must be > 0")

    def scan(lo, hi):
        pumps = np.linspace(lo, hi, n_pump)
        resp = np.array(
            [
                pdc_signal_response(
                    p, grating, temperature_c, dispersion, length_m, n_points=n_signal
                )
                for p in pumps
            ]
        )
        return pumps, resp

    pumps, resp = scan(pump_scan[0], pump_scan[1])
    peak_idx = int(np.argmax(resp))
    rmax = resp[peak_idx]
    if rmax <= 0:
        raise FitError("integrated response vanished over the whole pump scan")
    if peak_idx in (0, n_pump - 1):
        raise FitError(
            "response peak sits at the scan boundary; widen pump_scan",
            residuals=resp / rmax,
        )
    above = resp >= 0.5 * rmax
    segments = np.count_nonzero(np.diff(above.astype(int)) == 1) + int(above[0])
    if segments > 1:
        raise FitError(
            f"response is non-unimodal ({segments} separate half-maximum segments)",
            residuals=resp / rmax,
        )
    half = 0.5 * rmax
    i = peak_idx
    while i > 0 and resp[i] > half:
        i -= 1
    left = float(np.interp(half, [resp[i], resp[i + 1]], [pumps[i], pumps[i + 1]]))
    j = peak_idx
    while j < n_pump - 1 and resp[j] > half:
        j += 1
    right = float(np.interp(half, [resp[j], resp[j - 1]], [pumps[j], pumps[j - 1]]))
    if resp[0] > half or resp[-1] > half:
        raise FitError(
            "half-maximum crossings fall outside the scan; widen pump_scan",
            residuals=resp / rmax,
        )
    grid_fwhm = right - left
    center0 = 0.5 * (left + right)

    x, y = scan(
        center0 - window_halfwidths * grid_fwhm, center0 + window_halfwidths * grid_fwhm
    )
    try:
        popt, _ = curve_fit(
            _gaussian,
            x,
            y,
            p0=(float(np.max(y)), center0, grid_fwhm / FWHM_PER_SIGMA),
            maxfev=20000,
        )
    except RuntimeError as exc:
        raise FitError(f"gaussian fit failed to converge: {exc}", residuals=y) from exc
    amplitude, center, sigma = popt
    sigma = abs(float(sigma))
    residuals = (y - _gaussian(x, *popt)) / float(np.max(y))
    if amplitude <= 0 or sigma <= 0 or not np.isfinite(sigma):
        raise FitError("gaussian fit returned a non-physical shape", residuals=residuals)
    return AcceptanceBandwidth(
        fwhm_m=FWHM_PER_SIGMA * sigma,
        peak_m=float(center),
        pump_grid_m=x,
        response=y,
        fit_amplitude=float(amplitude),
        fit_sigma_m=sigma,
        residual_rms=float(np.sqrt(np.mean(residuals**2))),
    )


def spectral_overlap(fwhm_a_m: float, fwhm_b_m: float) -> float:
    """Overlap of two unit-area Gaussians, normalized so equal widths give 1.

    sqrt(2 w_a w_b / (w_a^2 + w_b^2)); symmetric and scale-free.
    """
    if fwhm_a_m <= 0 or fwhm_b_m <= 0:
        raise ValueError("both widths must be > 0")
    return math.sqrt(2.0 * fwhm_a_m * fwhm_b_m / (fwhm_a_m**2 + fwhm_b_m**2))
