"""Matched-filter quadrature estimation and ensemble statistics.

A ring-down trace s(t) is expanded in damped complex exponentials
e_j(t) = exp((iω_j - Γ_j/2)(t - t₀)), one per oscillator, together with their
complex conjugates so that a real trace is represented exactly.  With the
inner product ⟨e, s⟩ = ∫ e*(t) s(t) dt the optimal coefficients are
α = E⁻¹⟨e, s⟩ where E is the Gram matrix of the templates.  Dividing α_j by
√(ε S_SN C_j Γ_j) yields the dimensionless phasor Z_j.

:class:`MatchedFilter` wraps the estimator as a scikit-learn transformer
for batches of traces; everything else is functional.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ampmodel import SidebandPair, occupation_from_sidebands, sidebands_from_occupation
from .errors import IllConditioned, InsufficientSamples, NegativeCorrectedVariance
from .model import TWO_PI, CavityDrive, SystemConfig, cooperativity, readout_start, rng_streams, with_tau_c

S_SN = 2.0
COND_LIMIT = 1e8
REFERENCE_OFFSET = TWO_PI * 20e3
DECAY_TIMES = 5


# --------------------------------------------------------------------------
# Templates
# --------------------------------------------------------------------------


def _trapz_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


@dataclass(frozen=True)
class TemplateBank:
    """Damped-exponential templates on a uniform readout grid.

    Attributes
    ----------
    t : ndarray
        Sample times relative to the window start t₀.
    templates : ndarray of complex, shape (2, n)
        e_j(t) = exp((iω_j - Γ_j/2) t).
    gram : ndarray of complex, shape (2, 2)
        E_kj = ⟨e_k, e_j⟩.
    omegas, gammas : ndarray, shape (2,)
        Template frequencies (rad/s) and energy decay rates Γ_j (1/s).
    scale : ndarray, shape (2,)
        Per-oscillator factors √(ε S_SN C_j Γ_j) (sign included).
    """

    t: np.ndarray
    templates: np.ndarray
    gram: np.ndarray
    omegas: np.ndarray
    gammas: np.ndarray
    scale: np.ndarray
    _basis: np.ndarray = field(repr=False)
    _solver: np.ndarray = field(repr=False)

    @classmethod
    def from_params(cls, t, omegas, gammas, scale=(1.0, 1.0)) -> "TemplateBank":
        """Build a bank on the uniform grid ``t`` (starting at the window origin).

        Raises
        ------
        IllConditioned
            If the Gram matrix of the augmented basis has condition number
            above 1e8.
        """
        t = np.asarray(t, dtype=float)
        if t.size < 2:
            raise ValueError("readout window must contain at least two samples")
        dt = float(t[1] - t[0])
        omegas = np.asarray(omegas, dtype=float)
        gammas = np.asarray(gammas, dtype=float)
        tt = t - t[0]
        e = np.exp((1j * omegas[:, None] - 0.5 * gammas[:, None]) * tt[None, :])
        basis = np.concatenate([e, e.conj()])
        w = _trapz_weights(t.size, dt)
        full = (basis.conj() * w) @ basis.T
        cond = np.linalg.cond(full)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise IllConditioned(f"template Gram matrix condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
        # rows of ``solver`` map a real or complex trace directly to the four
        # coefficients: α = E⁻¹ (conj(basis)·w) s
        solver = np.linalg.solve(full, basis.conj() * w)
        return cls(tt, e, full[:2, :2].copy(), omegas, gammas, np.asarray(scale, float), basis, solver)

    @classmethod
    def for_config(cls, config: SystemConfig, t, readout_time: float | None = None, signs=(1.0, 1.0)) -> "TemplateBank":
        """Templates matched to the readout probe of ``config``.

        Frequencies include the quadratic shift at the probe photon number
        and the damping correction √(ω² - Γ²/4); ``readout_time`` truncates
        the window (default: five amplitude decay times 2/Γ of the faster
        decaying oscillator, or the whole of ``t`` if shorter).
        """
        probe = readout_drive(config)
        t = np.asarray(t, dtype=float)
        omegas = []
        for o in config.osc:
            w_eff = o.omega + o.omega_q * probe.nbar
            omegas.append(np.sqrt(w_eff * w_eff - 0.25 * o.gamma * o.gamma))
        gammas = np.array([o.gamma for o in config.osc])
        if readout_time is None:
            readout_time = DECAY_TIMES * 2.0 / gammas.max()
        t = t[t - t[0] <= readout_time + 1e-12]
        return cls.from_params(t, omegas, gammas, readout_scale(config, signs))

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def coefficients(self, s: np.ndarray) -> np.ndarray:
        """Raw coefficients α (shape (..., 2)) of the non-conjugated templates."""
        s = np.asarray(s)
        if s.shape[-1] < self.t.size:
            raise ValueError("trace is shorter than the template window")
        s = s[..., : self.t.size]
        return s @ self._solver[:2].T

    def full_coefficients(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s)[..., : self.t.size]
        return s @ self._solver.T

    def reconstruct(self, coeffs4: np.ndarray) -> np.ndarray:
        return coeffs4 @ self._basis

    def shifted(self, offset: float) -> "TemplateBank":
        """Copy with every template frequency moved by ``offset`` (rad/s)."""
        return TemplateBank.from_params(self.t, self.omegas + offset, self.gammas, self.scale)

    def noise_covariance(self) -> np.ndarray:
        """Covariance E[α α†] of the scaled phasors for unit-PSD white noise.

        With P the solver rows mapping samples to α and white noise of
        per-sample variance 1/dt, Cov(α) = P Pᴴ / dt.
        """
        P = self._solver[:2] / self.scale[:, None]
        # ξ has per-sample variance 1/dt
        return (P * (1.0 / self.dt)) @ P.conj().T


def readout_drive(config: SystemConfig) -> CavityDrive:
    """Probe drive of the readout segment (or of the first segment)."""
    sch = config.schedule
    seg = next((s for s in sch.segments if s.label == "readout"), sch.segments[-1])
    return config.drive.with_(nbar=seg.nbar, delta_pc=seg.delta_pc)


def readout_scale(config: SystemConfig, signs=(1.0, 1.0)) -> np.ndarray:
    """√(ε S_SN C_j Γ_j) · s_j · κ²/(κ²+Δ²), the phasor normalization."""
    d = readout_drive(config)
    k2 = d.kappa ** 2
    out = []
    for o, s in zip(config.osc, signs):
        C = cooperativity(o, d)
        out.append(s * np.sqrt(d.epsilon * S_SN * C * o.gamma) * k2 / (k2 + d.delta_pc ** 2))
    return np.array(out)


# --------------------------------------------------------------------------
# Per-shot estimation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRecord:
    """Filter output of one shot.

    ``z`` are the phasors Z₁, Z₂ and ``shot_ref`` the same estimator applied
    off mechanical resonance.
    """

    z: np.ndarray
    shot_ref: np.ndarray
    shot_id: int = 0

    def __post_init__(self) -> None:
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.shot_ref))):
            raise ValueError("non-finite filter output")


def _window(trace, bank: TemplateBank) -> np.ndarray:
    if hasattr(trace, "readout"):
        _, s = trace.readout()
    else:
        s = np.asarray(trace)
    if s.shape[-1] < bank.t.size:
        raise ValueError("readout window is shorter than the template bank")
    return s[..., : bank.t.size]


def shot_reference(trace, bank: TemplateBank, offset: float = REFERENCE_OFFSET) -> np.ndarray:
    """Phasors of frequency-shifted templates, the shot-noise-only estimate.

    The on-resonance expansion is first subtracted so that the mechanical
    signal does not leak into the shifted filters; the +offset and -offset
    results are then averaged, with a √2 correction that restores the
    single-filter noise level of uncorrelated sidebands.

    Raises
    ------
    ValueError
        If the offset is closer than ten linewidths to a template frequency.
    """
    if abs(offset) < 10 * bank.gammas.max():
        raise ValueError("reference offset must be at least ten linewidths")
    s = _window(trace, bank)
    resid = s - np.real(bank.reconstruct(bank.full_coefficients(s)))
    out = 0.0
    for sign in (1.0, -1.0):
        sb = bank.shifted(sign * offset)
        out = out + sb.coefficients(resid) / sb.scale
    return out / np.sqrt(2.0)


def match(trace, bank: TemplateBank, shot_id: int = 0, offset: float = REFERENCE_OFFSET) -> QuadratureRecord:
    """Estimate both phasors of one trace.

    ``trace`` is a :class:`~optospring.dynamics.TraceSet` (its readout
    window is used) or a sampled signal starting at the window origin.
    """
    s = _window(trace, bank)
    z = bank.coefficients(s) / bank.scale
    return QuadratureRecord(np.asarray(z), np.asarray(shot_reference(s, bank, offset)), shot_id)


def match_many(signals: np.ndarray, bank: TemplateBank, offset: float = REFERENCE_OFFSET) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`match` over rows of ``signals``; returns (z, shot_ref) arrays."""
    s = _window(np.atleast_2d(signals), bank)
    z = bank.coefficients(s) / bank.scale
    return z, shot_reference(s, bank, offset)


class MatchedFilter(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer mapping ring-down traces to phasor features.

    ``fit`` builds the template bank for the sample spacing and window length
    of the input; ``transform`` returns columns
    (Re Z₁, Im Z₁, Re Z₂, Im Z₂), plus the same for the shot-noise reference
    when ``with_reference`` is set.

    Parameters
    ----------
    omegas, gammas : pair of float
        Template frequencies and energy decay rates (rad/s, 1/s).
    dt : float
        Sample spacing of the traces (s).
    scale : pair of float
        Phasor normalization √(ε S_SN C_j Γ_j).
    offset : float
        Frequency offset of the shot-noise reference filters (rad/s).
    with_reference : bool
        Append the reference phasors to the output.
    """

    def __init__(self, omegas=(1.0, 2.0), gammas=(0.1, 0.1), dt=1.0, scale=(1.0, 1.0), offset=REFERENCE_OFFSET, with_reference=False):
        self.omegas = omegas
        self.gammas = gammas
        self.dt = dt
        self.scale = scale
        self.offset = offset
        self.with_reference = with_reference

    @classmethod
    def for_config(cls, config: SystemConfig, dt: float, **kwargs) -> "MatchedFilter":
        probe = readout_drive(config)
        omegas = []
        for o in config.osc:
            w = o.omega + o.omega_q * probe.nbar
            omegas.append(float(np.sqrt(w * w - 0.25 * o.gamma ** 2)))
        return cls(
            omegas=tuple(omegas),
            gammas=tuple(o.gamma for o in config.osc),
            dt=dt,
            scale=tuple(readout_scale(config)),
            **kwargs,
        )

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("expected a 2-D array of traces (n_shots, n_samples)")
        t = self.dt * np.arange(X.shape[1])
        self.bank_ = TemplateBank.from_params(t, self.omegas, self.gammas, self.scale)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "bank_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected traces with {self.n_features_in_} samples")
        z = self.bank_.coefficients(X) / self.bank_.scale
        cols = [z[:, 0].real, z[:, 0].imag, z[:, 1].real, z[:, 1].imag]
        if self.with_reference:
            r = shot_reference(X, self.bank_, self.offset)
            cols += [r[:, 0].real, r[:, 0].imag, r[:, 1].real, r[:, 1].imag]
        return np.stack(cols, axis=1)


# --------------------------------------------------------------------------
# Ensemble statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleStats:
    """Summary statistics of a shot ensemble.

    Ellipses are stored as 2x2 covariances of (Re Z, Im Z) per oscillator;
    ``a_rd`` and ``a_ref`` are the shot-subtracted 1σ ellipse areas of the
    coupled and reference ensembles.  ``r_interval`` is the 1σ interval from
    the Fisher transformation, mapped through the reference and shot-noise
    corrections.
    """

    n: int
    mean: np.ndarray
    ellipse_signal: np.ndarray
    ellipse_shot: np.ndarray
    a_rd: np.ndarray
    a_ref: np.ndarray
    delta_nu: np.ndarray
    delta_nu_se: np.ndarray
    r: float
    r_interval: tuple[float, float]
    r_re: float
    r_im: float
    control: np.ndarray
    control_band: float


def _as_arrays(records) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(records, tuple) and len(records) == 2 and isinstance(records[0], np.ndarray):
        return np.asarray(records[0], complex), np.asarray(records[1], complex)
    z = np.array([r.z for r in records], dtype=complex)
    s = np.array([r.shot_ref for r in records], dtype=complex)
    return z, s


def _cov2(z: np.ndarray) -> np.ndarray:
    """(Re, Im) covariance of each column of complex ``z``: shape (2, 2, 2)."""
    out = np.empty((z.shape[1], 2, 2))
    for j in range(z.shape[1]):
        out[j] = np.cov(np.stack([z[:, j].real, z[:, j].imag]))
    return out


def _area(c: np.ndarray) -> np.ndarray:
    return np.pi * np.sqrt(np.clip(np.linalg.det(c), 0.0, None))


def _corrected(z, s):
    """Shot-subtracted ellipses and areas; raises on negative variances."""
    sig = _cov2(z)
    shot = _cov2(s)
    corr = sig - shot
    diag = np.stack([corr[:, 0, 0], corr[:, 1, 1]])
    if np.any(diag < 0):
        raise NegativeCorrectedVariance("shot-noise variance exceeds the signal variance")
    return sig, shot, corr, _area(corr)


def _cross(z):
    """Cross-oscillator covariances of the Re and Im quadratures."""
    zr = z - z.mean(axis=0)
    n = z.shape[0]
    c_re = np.sum(zr[:, 0].real * zr[:, 1].real) / (n - 1)
    c_im = np.sum(zr[:, 0].imag * zr[:, 1].imag) / (n - 1)
    return c_re, c_im


def _dnu(a_rd, a_ref, sidebands):
    nu = np.array([occupation_from_sidebands(sb) for sb in sidebands])
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(a_ref > 0, (a_rd - a_ref) / np.where(a_ref > 0, a_ref, 1.0), 0.0)
    return frac * nu


def ensemble_stats(
    records,
    sidebands: SidebandPair | Sequence[SidebandPair],
    reference=None,
    n_blocks: int = 20,
) -> EnsembleStats:
    """Ellipses, added phonons and correlation of a shot ensemble.

    ``records`` (and the optional uncoupled ``reference`` ensemble) are
    lists of :class:`QuadratureRecord` or a pair of arrays (z, shot_ref)
    with shape (n_shots, 2).  ``sidebands`` gives the reference sideband
    powers per oscillator (a single pair is used for both).

    Added phonons follow Δν = (A_rd - A_ref)/A_ref · P₊/(P₋ - P₊) with
    shot-subtracted areas; the standard error comes from a block jackknife.
    The correlation uses the cross covariance of each quadrature minus that
    of the reference ensemble, divided by the shot-subtracted standard
    deviations, averaged over the two quadratures.

    Raises
    ------
    InsufficientSamples
        With fewer than two records (or fewer than four for the interval).
    NegativeCorrectedVariance
        When shot subtraction leaves a negative variance.
    """
    z, s = _as_arrays(records)
    n = z.shape[0]
    if n < 2:
        raise InsufficientSamples("at least two records are required")
    if isinstance(sidebands, SidebandPair):
        sidebands = (sidebands, sidebands)
    sidebands = tuple(sidebands)
    if reference is None:
        zr, sr = z, s
    else:
        zr, sr = _as_arrays(reference)
        if zr.shape[0] < 2:
            raise InsufficientSamples("reference ensemble needs at least two records")

    sig, shot, corr, a_rd = _corrected(z, s)
    _, _, corr_ref, a_ref = _corrected(zr, sr)
    dnu = _dnu(a_rd, a_ref, sidebands)

    # block jackknife, dropping the same block from the coupled and the
    # reference ensembles so that both sampling errors are propagated
    nb = min(n_blocks, n, zr.shape[0])
    if nb >= 2:
        edges = np.linspace(0, n, nb + 1).astype(int)
        edges_r = np.linspace(0, zr.shape[0], nb + 1).astype(int)
        reps = []
        for b in range(nb):
            keep = np.r_[0 : edges[b], edges[b + 1] : n]
            if reference is None:
                keep_r = keep
            else:
                keep_r = np.r_[0 : edges_r[b], edges_r[b + 1] : zr.shape[0]]
            if keep.size < 2 or keep_r.size < 2:
                continue
            a1 = _area(_cov2(z[keep]) - _cov2(s[keep]))
            a0 = _area(_cov2(zr[keep_r]) - _cov2(sr[keep_r]))
            reps.append(_dnu(a1, a0, sidebands))
        reps = np.array(reps)
        m = reps.shape[0]
        se = np.sqrt((m - 1) / m * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    else:
        se = np.full(2, np.nan)

    # correlation
    c_re, c_im = _cross(z)
    if reference is None:
        ref_re = ref_im = 0.0
    else:
        ref_re, ref_im = _cross(zr)
    d_re = np.sqrt(corr[0, 0, 0] * corr[1, 0, 0])
    d_im = np.sqrt(corr[0, 1, 1] * corr[1, 1, 1])
    if d_re == 0 or d_im == 0:
        r_re = r_im = 0.0
    else:
        r_re = (c_re - ref_re) / d_re
        r_im = (c_im - ref_im) / d_im
    r = 0.5 * (r_re + r_im)

    # Fisher interval of the raw correlation mapped through the corrections
    if n > 3 and d_re > 0 and d_im > 0:
        raw_sd_re = np.sqrt(sig[0, 0, 0] * sig[1, 0, 0])
        raw_sd_im = np.sqrt(sig[0, 1, 1] * sig[1, 1, 1])
        rho = 0.5 * (c_re / raw_sd_re + c_im / raw_sd_im)
        zf = np.arctanh(np.clip(rho, -0.999999, 0.999999))
        # two quadratures are nearly independent samples of the same correlation
        h = 1.0 / np.sqrt(2.0 * (n - 3))
        gain = 0.5 * (raw_sd_re / d_re + raw_sd_im / d_im)
        lo = (np.tanh(zf - h) - rho) * gain
        hi = (np.tanh(zf + h) - rho) * gain
        if reference is not None and zr.shape[0] > 3:
            sig_r = _cov2(zr)
            rr_sd = 0.5 * (np.sqrt(sig_r[0, 0, 0] * sig_r[1, 0, 0]) / d_re + np.sqrt(sig_r[0, 1, 1] * sig_r[1, 1, 1]) / d_im)
            rho_r = 0.5 * (ref_re / np.sqrt(sig_r[0, 0, 0] * sig_r[1, 0, 0]) + ref_im / np.sqrt(sig_r[0, 1, 1] * sig_r[1, 1, 1]))
            ref_h = (1.0 - rho_r ** 2) / np.sqrt(2.0 * (zr.shape[0] - 3)) * rr_sd
            lo = -np.hypot(lo, ref_h)
            hi = np.hypot(hi, ref_h)
        interval = (float(r + lo), float(r + hi))
    else:
        interval = (float("-inf"), float("inf"))

    # control statistic: Re/Im correlation within each oscillator
    zc = z - z.mean(axis=0)
    control = np.empty(2)
    for j in range(2):
        den = np.sqrt(np.sum(zc[:, j].real ** 2) * np.sum(zc[:, j].imag ** 2))
        control[j] = np.sum(zc[:, j].real * zc[:, j].imag) / den if den > 0 else 0.0
    band = 1.0 / np.sqrt(max(n - 3, 1))

    return EnsembleStats(
        n=n,
        mean=z.mean(axis=0),
        ellipse_signal=sig,
        ellipse_shot=shot,
        a_rd=a_rd,
        a_ref=a_ref,
        delta_nu=dnu,
        delta_nu_se=se,
        r=float(r),
        r_interval=interval,
        r_re=float(r_re),
        r_im=float(r_im),
        control=control,
        control_band=float(band),
    )


# --------------------------------------------------------------------------
# Synthetic measurement
# --------------------------------------------------------------------------


def sample_incoherent(N: np.ndarray, M: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Complex Gaussian amplitudes δβ with ⟨δβᵢ*δβⱼ⟩ = Nᵢⱼ and ⟨δβᵢδβⱼ⟩ = Mᵢⱼ.

    This is the Glauber-Sudarshan P distribution of a Gaussian state, which
    is a proper distribution whenever the state is classical (the case for
    thermal occupations well above the vacuum).
    """
    # real vector u = (Re β₁, Re β₂, Im β₁, Im β₂)
    rr = 0.5 * np.real(N + M)
    ss = 0.5 * np.real(N - M)
    rs = 0.5 * (np.imag(M) + np.imag(N))
    cov = np.block([[rr, rs], [rs.T, ss]])
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-9 * max(vals.max(), 1.0):
        raise ValueError("state has no positive P representation")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    u = rng.standard_normal((n, 4)) @ root.T
    return u[:, :2] + 1j * u[:, 2:]


@dataclass(frozen=True)
class SyntheticRun:
    """Simulated shot ensemble for one τ_c together with the model prediction."""

    tau_c: float
    z: np.ndarray
    shot_ref: np.ndarray
    z_reference: np.ndarray
    shot_reference: np.ndarray
    sidebands: tuple
    stats: EnsembleStats
    predicted_dnu: np.ndarray
    predicted_r: float


def _readout_responses(config: SystemConfig, dt: float, n: int) -> np.ndarray:
    """Heterodyne responses to the four unit initial states, shape (4, n)."""
    from .dynamics import BatchParams, integrate, readout_weights

    probe = readout_drive(config)
    p = BatchParams.from_oscillators([config.osc] * 4, [config.drive.kappa] * 4)
    nb = np.full((1, 2 * n - 1), probe.nbar)
    de = np.full((1, 2 * n - 1), probe.delta_pc)
    ys = integrate(p, nb, de, np.zeros((1, 2, 2 * n - 1)), np.eye(4), dt)
    w = readout_weights(config.osc, config.drive, probe.nbar, probe.delta_pc)[:, 0]
    return w[0] * ys[:, :, 0] + w[1] * ys[:, :, 1]


def synthetic_measurement(
    config: SystemConfig,
    tau_c: float,
    n_shots: int = 10000,
    seed: int | None = None,
    dt: float | None = None,
    readout_time: float | None = None,
    chunk: int = 500,
    moment_dt: float = 50e-9,
) -> SyntheticRun:
    """Simulate the measured phasor ensembles of a coupling pulse and its reference.

    Per shot, the oscillator amplitudes at the start of the readout are the
    deterministic coherent amplitude from :func:`~optospring.dynamics.simulate`
    plus an incoherent part drawn from the Gaussian state predicted by
    :mod:`optospring.moments`.  The ring-down is the linear superposition of
    integrated basis responses, shot noise of unit PSD is added, and the
    trace goes through the matched filter.  The reference ensemble has no
    coupling pulse.
    """
    from .dynamics import amplitude_state, default_dt, simulate
    from .moments import pulse_series

    seed = config.rng_seed if seed is None else seed
    cfg_c = with_tau_c(config, tau_c)
    cfg_0 = with_tau_c(config, 0.0)
    if dt is None:
        dt = min(default_dt(cfg_c.schedule, config.osc), default_dt(cfg_0.schedule, config.osc))
    bank = TemplateBank.for_config(config, dt * np.arange(int(round(cfg_c.schedule.segments[-1].duration / dt)) + 1), readout_time)
    n = bank.t.size
    resp = _readout_responses(config, dt, n)
    probe = readout_drive(config)
    w_eff = np.array([o.omega + o.omega_q * probe.nbar for o in config.osc])
    gam = np.array([o.gamma for o in config.osc])

    res = pulse_series(config.osc, config.drive.kappa, [cfg_c.schedule, cfg_0.schedule], [tau_c, 0.0], dt=moment_dt)
    rng_c, rng_0, rng_nc, rng_n0 = rng_streams(seed, 4, key=(3, int(round(tau_c * 1e9))))

    def run(cfg, state, rng_state, rng_noise):
        tr = simulate(cfg, dt=dt, noise=False)
        i0 = int(round(tr.readout_start / dt))
        beta_coh = np.array([tr.x[0, i0], tr.x[1, i0]]), np.array([tr.v[0, i0], tr.v[1, i0]])
        N, M = state.incoherent()
        zs, refs = [], []
        done = 0
        while done < n_shots:
            m = min(chunk, n_shots - done)
            db = sample_incoherent(N, M, m, rng_state)
            x, v = amplitude_state(db, w_eff, gam)
            y = np.column_stack([x[:, 0] + beta_coh[0][0], x[:, 1] + beta_coh[0][1], v[:, 0] + beta_coh[1][0], v[:, 1] + beta_coh[1][1]])
            sig = y @ resp + rng_noise.standard_normal((m, n)) / np.sqrt(dt)
            z, r = match_many(sig, bank)
            zs.append(z)
            refs.append(r)
            done += m
        return np.concatenate(zs), np.concatenate(refs)

    z_c, s_c = run(cfg_c, res[0].state, rng_c, rng_nc)
    z_0, s_0 = run(cfg_0, res[1].state, rng_0, rng_n0)
    n_ref = res[0].reference.incoherent_occupation()
    sbs = tuple(sidebands_from_occupation(float(v)) for v in n_ref)
    stats = ensemble_stats((z_c, s_c), sbs, reference=(z_0, s_0))
    return SyntheticRun(float(tau_c), z_c, s_c, z_0, s_0, sbs, stats, res[0].dnu, res[0].r)
