"""Steady-state spectra of the linearized cavity plus two oscillators.

The cavity field fluctuation ``a`` and both mechanical modes are treated as
a linear amplifier driven by white quantum and thermal noise.  In the frame
of the pump and in units of zero-point quadratures (vacuum variance 1/2):

    dX_a/dt = -κ X_a - Δ P_a                       + √(2κ) X_in
    dP_a/dt =  Δ X_a - κ P_a - 2 Σ_j G_j q_j       + √(2κ) P_in
    dq_j/dt = -Γ_j/2 q_j + ω_j p_j                 + √Γ_j q_in,j
    dp_j/dt = -ω_j q_j - Γ_j/2 p_j - 2 G_j X_a     + √Γ_j p_in,j

with G_j = g_j √n̄ and ω_j including the quadratic-coupling shift.  The
detected signal is the phase quadrature of the transmitted field,
Y = √2 (√(2κ) P_a - P_in), mixed with vacuum at efficiency ε, so the
spectrum is normalized to a shot-noise floor of one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.optimize
import scipy.signal

from .errors import BelowFloor, DegenerateSidebands, Unstable
from .model import CavityDrive, OscillatorParams, SystemConfig

TWO_PI = 2.0 * np.pi
DEFAULT_RBW = TWO_PI * 100.0


@dataclass(frozen=True)
class SpectrumGrid:
    """Symmetrized PSD in shot-noise units on an angular-frequency grid."""

    freqs: np.ndarray
    psd: np.ndarray
    resolution_bw: float = DEFAULT_RBW


@dataclass(frozen=True)
class SidebandPair:
    """Blue (``p_plus``) and red (``p_minus``) motional sideband powers."""

    p_plus: float
    p_minus: float


# --------------------------------------------------------------------------
# Linear model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearModel:
    """Drift ``A``, input coupling ``Bin`` and input noise levels ``sigma``.

    State order: (X_a, P_a, q_1, p_1, q_2, p_2).  ``sigma`` holds the
    symmetrized white-noise densities of the six input quadratures.
    """

    A: np.ndarray
    Bin: np.ndarray
    sigma: np.ndarray
    kappa: float
    epsilon: float


def linear_model(
    osc_pair: Sequence[OscillatorParams], drive: CavityDrive, include_quadratic: bool = True
) -> LinearModel:
    """Assemble the 6x6 quadrature model for a static drive."""
    k, d = drive.kappa, drive.delta_pc
    A = np.zeros((6, 6))
    A[0, 0], A[0, 1] = -k, -d
    A[1, 0], A[1, 1] = d, -k
    Bin = np.zeros((6, 6))
    Bin[0, 0] = Bin[1, 1] = np.sqrt(2 * k)
    sigma = np.full(6, 0.5)
    for j, o in enumerate(osc_pair):
        q, p = 2 + 2 * j, 3 + 2 * j
        w = o.omega + (o.omega_q * drive.nbar if include_quadratic else 0.0)
        G = o.g * np.sqrt(drive.nbar)
        A[q, q] = A[p, p] = -0.5 * o.gamma
        A[q, p] = w
        A[p, q] = -w
        A[p, 0] = -2 * G
        A[1, q] = -2 * G
        Bin[q, q] = Bin[p, p] = np.sqrt(o.gamma)
        sigma[q] = sigma[p] = o.nu_th + 0.5
    return LinearModel(A, Bin, sigma, k, drive.epsilon)


def check_stable(model: LinearModel) -> None:
    ev = np.linalg.eigvals(model.A)
    if np.max(ev.real) >= 0:
        raise Unstable(f"linearized dynamics has growth rate {np.max(ev.real):.3e} 1/s")


def _transfer(model: LinearModel, freqs: np.ndarray) -> np.ndarray:
    """State response (n_freq, 6, 6) to the six input quadratures."""
    eye = np.eye(6)
    mats = -1j * freqs[:, None, None] * eye - model.A
    return np.linalg.solve(mats, np.broadcast_to(model.Bin, mats.shape))


def _config_parts(config) -> tuple[Sequence[OscillatorParams], CavityDrive]:
    if isinstance(config, SystemConfig):
        return config.osc, config.drive
    return config


def steady_spectrum(config, freq_grid, resolution_bw: float = DEFAULT_RBW, include_quadratic: bool = True) -> SpectrumGrid:
    """Detected phase-quadrature PSD (shot-noise units) on ``freq_grid`` (rad/s).

    ``config`` is a :class:`SystemConfig` or an ``(osc_pair, drive)`` tuple.

    Raises
    ------
    Unstable
        If the linearized system has a growing mode.
    """
    osc_pair, drive = _config_parts(config)
    model = linear_model(osc_pair, drive, include_quadratic)
    check_stable(model)
    freqs = np.asarray(freq_grid, dtype=float)
    T = _transfer(model, freqs)
    c = np.zeros(6)
    c[1] = np.sqrt(2.0) * np.sqrt(2 * model.kappa)
    resp = np.einsum("i,fij->fj", c, T)
    resp[:, 1] -= np.sqrt(2.0)
    s_yy = np.einsum("fj,j->f", np.abs(resp) ** 2, model.sigma)
    psd = model.epsilon * s_yy + (1.0 - model.epsilon)
    return SpectrumGrid(freqs, psd, resolution_bw)


def displacement_spectra(
    osc_pair: Sequence[OscillatorParams], drive: CavityDrive, freqs, include_quadratic: bool = True
) -> np.ndarray:
    """Symmetrized PSD of x_j = z_j / Z_HO,j for both oscillators, shape (2, n_freq).

    The integral over all frequencies (dω/2π) equals 2n_j + 1.
    """
    model = linear_model(osc_pair, drive, include_quadratic)
    check_stable(model)
    T = _transfer(model, np.atleast_1d(np.asarray(freqs, float)))
    out = []
    for j in range(2):
        # x = b + b† = √2 q
        resp = np.sqrt(2.0) * T[:, 2 + 2 * j, :]
        out.append(np.einsum("fj,j->f", np.abs(resp) ** 2, model.sigma))
    return np.array(out)


def occupations(osc_pair: Sequence[OscillatorParams], drive: CavityDrive, include_quadratic: bool = True) -> np.ndarray:
    """Steady-state phonon numbers from the Lyapunov equation A V + V Aᵀ + D = 0."""
    model = linear_model(osc_pair, drive, include_quadratic)
    check_stable(model)
    D = model.Bin @ np.diag(model.sigma) @ model.Bin.T
    V = scipy.linalg.solve_continuous_lyapunov(model.A, -D)
    n = [0.5 * (V[2 + 2 * j, 2 + 2 * j] + V[3 + 2 * j, 3 + 2 * j]) - 0.5 for j in range(2)]
    return np.array(n)


def peak_area_occupations(
    osc_pair: Sequence[OscillatorParams], drive: CavityDrive, include_quadratic: bool = True
) -> np.ndarray:
    """Occupations from the area of each oscillator's positive-frequency peak.

    The positive-frequency area of the symmetrized x_j spectrum is n_j + 1/2.
    """
    res = []
    model = linear_model(osc_pair, drive, include_quadratic)
    check_stable(model)
    wmax = 50 * max(o.omega for o in osc_pair) + 50 * drive.kappa
    for j in range(2):
        def f(w, j=j):
            return displacement_spectra(osc_pair, drive, [w], include_quadratic)[j, 0]

        centers = sorted({abs(o.omega + o.omega_q * drive.nbar * include_quadratic) for o in osc_pair})
        pts = [c + s * o.gamma for c in centers for o in osc_pair for s in (-3, -1, 0, 1, 3)]
        pts = sorted(p for p in pts if 0 < p < 4 * max(centers))
        lo_hi = [0.0] + pts + [4 * max(centers)]
        area = 0.0
        for a, b in zip(lo_hi[:-1], lo_hi[1:]):
            area += scipy.integrate.quad(f, a, b, limit=200, epsabs=0, epsrel=1e-10)[0]
        area += scipy.integrate.quad(f, 4 * max(centers), wmax, limit=200, epsrel=1e-10)[0]
        area += scipy.integrate.quad(f, wmax, np.inf, limit=200)[0]
        res.append(area / TWO_PI - 0.5)
    return np.array(res)


# --------------------------------------------------------------------------
# Cooperativity and thermometry
# --------------------------------------------------------------------------


def forward_peak_height(osc: OscillatorParams, drive: CavityDrive, s_sn: float = 2.0) -> float:
    """On-resonance peak height implied by the cooperativity relation.

    Inverse of :func:`peak_to_cooperativity`: with C the cooperativity and
    ν the bath occupation, 2P/S_SN - 1 = 4εC(C + 2ν + 1).
    """
    C = 4 * drive.nbar * osc.g ** 2 / (drive.kappa * osc.gamma)
    return 0.5 * s_sn * (1.0 + 4 * drive.epsilon * C * (C + 2 * osc.nu_th + 1))


def peak_to_cooperativity(peak_height: float, osc: OscillatorParams, drive: CavityDrive, s_sn: float = 2.0) -> float:
    """Cooperativity from the height of a mechanical peak.

    ``peak_height`` is the detected PSD at the oscillator frequency in
    shot-noise units (floor = 1) and ``s_sn`` the total shot-noise PSD in
    the same units, summed over both sidebands, hence 2 by default.

    Raises
    ------
    BelowFloor
        If ``peak_height`` is below the shot-noise floor.
    """
    if peak_height < 1.0:
        raise BelowFloor(f"peak height {peak_height} is below the shot-noise floor")
    nu = osc.nu_th + 0.5
    excess = max(2.0 * peak_height / s_sn - 1.0, 0.0)
    return float(-nu + np.sqrt(nu * nu + excess / (4.0 * drive.epsilon)))


def occupation_from_sidebands(sb: SidebandPair) -> float:
    """Phonon number ν = P₊ / (P₋ - P₊) from sideband asymmetry.

    Raises
    ------
    DegenerateSidebands
        If the red sideband is not stronger than the blue one.
    """
    if not sb.p_minus > sb.p_plus:
        raise DegenerateSidebands("red sideband must exceed blue sideband")
    return float(sb.p_plus / (sb.p_minus - sb.p_plus))


def sidebands_from_occupation(n: float, weight: float = 1.0) -> SidebandPair:
    """Sideband powers of a thermal state: blue ∝ n, red ∝ n + 1."""
    return SidebandPair(weight * n, weight * (n + 1.0))


# --------------------------------------------------------------------------
# Spectral analysis
# --------------------------------------------------------------------------


def welch_psd(trace: np.ndarray, dt: float, resolution_bw: float = DEFAULT_RBW) -> SpectrumGrid:
    """Two-sided-normalized PSD of a real trace by Welch averaging with Hann windows.

    White noise of per-sample variance 1/dt maps to a flat PSD of one.
    """
    fs = 1.0 / dt
    nperseg = int(round(fs / (resolution_bw / TWO_PI)))
    nperseg = min(nperseg, len(trace))
    f, p = scipy.signal.welch(trace, fs=fs, window="hann", nperseg=nperseg, return_onesided=True, detrend=False)
    return SpectrumGrid(TWO_PI * f, 0.5 * p, TWO_PI * fs / nperseg)


def _lorentz(w, c, hw, h, floor):
    return floor + h / (1 + ((w - c) / hw) ** 2)


def fit_peaks(spec: SpectrumGrid, guess_centers: Sequence[float], guess_width: float) -> dict:
    """Locate and fit the two mechanical peaks.

    Each peak is taken as the largest local maximum within three
    ``guess_width`` of its guess and refined by a Lorentzian fit over half a
    ``guess_width`` on either side.  Peaks of two modes driven by common
    noise are not exactly Lorentzian, so only the vicinity of each maximum
    is fitted.  Returns centers (rad/s, ascending), heights above the
    floor, half widths and the floor (taken as one).
    """
    f, p = spec.freqs, spec.psd
    out = []
    for c in sorted(guess_centers):
        win = np.abs(f - c) <= 3 * guess_width
        if not np.any(win):
            raise ValueError("guess center outside the frequency grid")
        i = np.flatnonzero(win)[np.argmax(p[win])]
        fit = np.abs(f - f[i]) <= 0.5 * guess_width
        p0 = [f[i], guess_width, max(p[i] - 1.0, 1e-6)]
        try:
            popt, _ = scipy.optimize.curve_fit(
                lambda w, c0, hw, h: _lorentz(w, c0, hw, h, 1.0), f[fit], p[fit], p0=p0, maxfev=20000
            )
        except (RuntimeError, TypeError):
            popt = p0
        out.append((popt[0], popt[2], abs(popt[1])))
    return {
        "centers": np.array([o[0] for o in out]),
        "heights": np.array([o[1] for o in out]),
        "half_widths": np.array([o[2] for o in out]),
        "floor": 1.0,
    }


def resonances(osc_pair: Sequence[OscillatorParams], drive: CavityDrive, include_quadratic: bool = True) -> np.ndarray:
    """Mechanical pole frequencies (rad/s, ascending) of the linear model."""
    ev = np.linalg.eigvals(linear_model(osc_pair, drive, include_quadratic).A)
    mech = sorted(ev[ev.imag > 0], key=lambda z: z.real)[-2:]
    return np.sort(np.array([z.imag for z in mech]))


def default_grid(osc_pair: Sequence[OscillatorParams], span: float = TWO_PI * 20e3, step: float = TWO_PI * 10.0) -> np.ndarray:
    lo = osc_pair[0].omega - span
    hi = osc_pair[1].omega + span
    return np.arange(lo, hi + 0.5 * step, step)


def fig2_series(
    osc_pair: Sequence[OscillatorParams],
    drive: CavityDrive,
    deltas: Sequence[float],
    nbar: float = 5.0,
    freqs: np.ndarray | None = None,
) -> list[dict]:
    """Spectra and fitted peaks over a detuning ladder at fixed n̄."""
    from .spring import normal_modes, spring_constants

    if freqs is None:
        freqs = default_grid(osc_pair)
    out = []
    for d in deltas:
        dr = drive.with_(nbar=nbar, delta_pc=float(d))
        spec = steady_spectrum((osc_pair, dr), freqs)
        nm = normal_modes(spring_constants(osc_pair, dr), osc_pair)
        fit = fit_peaks(spec, [nm.omega_minus, nm.omega_plus], 0.5 * osc_pair[0].gamma)
        out.append({"delta_pc": float(d), "spectrum": spec, "fit": fit, "modes": nm})
    return out
