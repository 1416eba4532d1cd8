"""Classical time-domain simulation of the excite, couple and read-out protocol.

Displacements are integrated in zero-point units x_i = z_i / Z_HO,i, where
the equations of motion read

    ẍ_i = -ω_eff,i² x_i - Γ_i ẋ_i - Σ_j R_ij(t) x_j + a_i(t) / Z_HO,i

with ω_eff,i = ω_i + ω_q,i n̄(t), R_ij = 2 ω_i g_i g_j · 2n̄Δ/(κ²+Δ²) the
optical spring and a_i the excitation acceleration.  Within each step the
conservative flow of the full stiffness matrix diag(ω_eff²) + R, frozen at
the step midpoint, is propagated exactly and the remainder (damping, drive
and the variation of the stiffness across the step) is handled by a
fourth-order Runge-Kutta step in the rotating frame (Lawson's
integrating-factor method).  This keeps the phase error of the fast
oscillation out of the step-size budget.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.integrate
import scipy.signal

from .errors import ScheduleGap, Unstable
from .model import (
    HBAR,
    TWO_PI,
    CavityDrive,
    Excitation,
    OscillatorParams,
    PulseSchedule,
    SystemConfig,
    UNCERTAIN_PARAMS,
    readout_start,
    rng_streams,
    with_tau_c,
    zho,
)

STEPS_PER_PERIOD = 64


# --------------------------------------------------------------------------
# Excitation
# --------------------------------------------------------------------------


def envelope(kind: str, n: int) -> np.ndarray:
    """Sampled envelope of ``n`` points spanning the pulse (endpoints included)."""
    if n < 2:
        return np.ones(n)
    if kind == "rect":
        return np.ones(n)
    if kind == "blackman":
        s = np.linspace(0.0, 1.0, n)
        return 0.42 - 0.5 * np.cos(TWO_PI * s) + 0.08 * np.cos(2 * TWO_PI * s)
    raise ValueError(f"unknown envelope {kind!r}")


def excitation_pulse(
    envelope_kind: str, omega_excite: float, n_cycles: float, dt: float, amplitude: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Acceleration waveform (m/s²) of a shaped resonant drive.

    Returns sample times and the waveform env(t)·sin(ω t) over the pulse.
    The scale is chosen so that an undamped oscillator at ``omega_excite``
    starting at rest is left with displacement amplitude ``amplitude`` (m).
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    T = TWO_PI * n_cycles / omega_excite
    n = int(math.floor(T / dt + 1e-9)) + 1
    t = dt * np.arange(n)
    env = envelope(envelope_kind, n)
    if amplitude == 0:
        return t, np.zeros(n)
    weight = scipy.integrate.trapezoid(env, dx=dt)
    a0 = 2.0 * omega_excite * amplitude / weight
    return t, a0 * env * np.sin(omega_excite * t)


def pulse_spectrum(t: np.ndarray, wave: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """|∫ wave(t) e^{iωt} dt| on ``omegas`` by direct quadrature."""
    ph = np.exp(1j * np.outer(omegas, t))
    return np.abs(scipy.integrate.trapezoid(ph * wave[None, :], t, axis=1))


def spectral_width(t: np.ndarray, wave: np.ndarray, omega_c: float) -> float:
    """Half distance between the first spectral nulls around ``omega_c`` (rad/s).

    For a rectangular pulse of length T this is 2π/T.
    """
    T = t[-1] - t[0]
    grid = omega_c + np.linspace(-4, 4, 8001) * TWO_PI / T
    amp = pulse_spectrum(t, wave, grid)
    near = np.abs(grid - omega_c) < 0.5 * TWO_PI / T
    i0 = int(np.flatnonzero(near)[np.argmax(amp[near])])
    hi = i0
    while hi + 1 < len(amp) and amp[hi + 1] < amp[hi]:
        hi += 1
    lo = i0
    while lo - 1 >= 0 and amp[lo - 1] < amp[lo]:
        lo -= 1
    return 0.5 * (grid[hi] - grid[lo])


# --------------------------------------------------------------------------
# Trace container
# --------------------------------------------------------------------------


@dataclass
class TraceSet:
    """Simulated displacements and detected signal on a uniform grid.

    ``x`` and ``v`` hold the state in zero-point units (v = dx/dt);
    ``z1``/``z2`` are the displacements in metres.  ``schedule_applied``
    records the sampled drive waveforms.
    """

    t: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    het: np.ndarray
    schedule_applied: dict
    dt: float
    readout_start: float
    x: np.ndarray = field(repr=False, default=None)
    v: np.ndarray = field(repr=False, default=None)

    def readout(self) -> tuple[np.ndarray, np.ndarray]:
        """(t, het) restricted to the readout window."""
        i0 = int(round(self.readout_start / self.dt))
        return self.t[i0:], self.het[i0:]

    def state_at(self, time: float) -> tuple[np.ndarray, np.ndarray]:
        i = int(round(time / self.dt))
        return self.x[:, i].copy(), self.v[:, i].copy()


# --------------------------------------------------------------------------
# Batched integrator
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchParams:
    """Per-member constants, each of shape (B, 2) except ``kappa`` (B,)."""

    omega: np.ndarray
    gamma: np.ndarray
    g: np.ndarray
    omega_q: np.ndarray
    mass: np.ndarray
    kappa: np.ndarray

    @classmethod
    def from_oscillators(cls, osc_sets: Sequence[Sequence[OscillatorParams]], kappas: Sequence[float]) -> "BatchParams":
        def col(name):
            return np.array([[getattr(o, name) for o in pair] for pair in osc_sets], dtype=float)

        return cls(col("omega"), col("gamma"), col("g"), col("omega_q"), col("mass"), np.asarray(kappas, float))

    @property
    def zho(self) -> np.ndarray:
        return np.sqrt(HBAR / (2.0 * self.mass * self.omega))


def _propagator(k11, k12, k21, k22, h):
    """Exact flow of ẍ = -K x over a step h for a batch of 2x2 matrices K.

    Returns (C, S, W) as tuples of the four entries, with
    x' = C x + S v and v' = W x + C v, C = cos(√K h), S = sin(√K h)/√K and
    W = -√K sin(√K h).  Matrix functions use the two-point divided
    difference f(K) = f(λ₋) + f[λ₊, λ₋] (K - λ₋).
    """
    half_tr = 0.5 * (k11 + k22)
    disc = np.sqrt(0.25 * (k11 - k22) ** 2 + k12 * k21)
    lp, lm = half_tr + disc, half_tr - disc
    if np.any(lm <= 0):
        raise Unstable("the instantaneous stiffness matrix is not positive definite")

    def funcs(lam):
        r = np.sqrt(lam)
        c, sn = np.cos(r * h), np.sin(r * h)
        return c, sn / r, -r * sn

    def derivs(lam):
        r = np.sqrt(lam)
        c, sn = np.cos(r * h), np.sin(r * h)
        dc = -h * sn / (2 * r)
        ds = (h * c / r - sn / lam) / (2 * r)
        dw = -(sn / r + h * c) / 2
        return dc, ds, dw

    fp, fm = funcs(lp), funcs(lm)
    gap = lp - lm
    close = gap <= 1e-9 * lp
    safe = np.where(close, 1.0, gap)
    dd = [(a - b) / safe for a, b in zip(fp, fm)]
    if np.any(close):
        der = derivs(0.5 * (lp + lm))
        dd = [np.where(close, d2, d1) for d1, d2 in zip(dd, der)]
    out = []
    for f0, d in zip(fm, dd):
        out.append((f0 + d * (k11 - lm), d * k12, d * k21, f0 + d * (k22 - lm)))
    return tuple(out)


def _apply(m, x1, x2):
    return m[0] * x1 + m[1] * x2, m[2] * x1 + m[3] * x2


def _flow(P, y):
    C, S, W = P
    x1, x2, v1, v2 = y[:, 0], y[:, 1], y[:, 2], y[:, 3]
    a1, a2 = _apply(C, x1, x2)
    b1, b2 = _apply(S, v1, v2)
    c1, c2 = _apply(W, x1, x2)
    d1, d2 = _apply(C, v1, v2)
    return np.stack([a1 + b1, a2 + b2, c1 + d1, c2 + d2], axis=1)


def integrate(
    p: BatchParams,
    nbar: np.ndarray,
    delta: np.ndarray,
    accel: np.ndarray,
    y0: np.ndarray,
    dt: float,
    record: bool = True,
    dc_force: bool = False,
    nbar_ref: np.ndarray | None = None,
    include_quadratic: bool = True,
) -> np.ndarray:
    """Integrate a batch of oscillator pairs on a uniform grid.

    ``nbar`` and ``delta`` have shape (B or 1, 2n+1): the drive sampled at
    every half step.  ``accel`` is the excitation acceleration in zero-point
    units with shape (B or 1, 2, 2n+1).  Returns states (B, n+1, 4) if
    ``record`` else the final states (B, 4).

    With ``dc_force`` the static radiation-pressure force relative to its
    value at ``nbar_ref`` is included; it displaces the equilibrium and is
    off by default because a constant force does not affect the
    oscillation.
    """
    n_steps = (nbar.shape[-1] - 1) // 2
    B = y0.shape[0]
    w = p.omega
    y = np.array(y0, dtype=float)
    out = np.empty((B, n_steps + 1, 4)) if record else None
    if record:
        out[:, 0] = y
    gg = p.g[:, 0] * p.g[:, 1]
    g2 = p.g * p.g
    k2 = (p.kappa * p.kappa)[:, None]
    if nbar_ref is None:
        nbar_ref = nbar[:, :1]
    nbar_ref = np.broadcast_to(np.asarray(nbar_ref, float).reshape(-1, 1), (B, 1))

    # Per-half-step coefficients: detuning factor and quadratic shift.
    X = 2.0 * nbar * delta / (k2 + delta * delta)  # (B, 2n+1)
    X = np.broadcast_to(X, (B, X.shape[1]))
    nb = np.broadcast_to(nbar, (B, nbar.shape[1]))
    acc = np.broadcast_to(accel, (B, 2, accel.shape[-1]))
    if dc_force:
        dcf = -2.0 * w[:, :, None] * p.g[:, :, None] * (nb - nbar_ref)[:, None, :]
        acc = acc + dcf

    # Stiffness matrix at every half step.  The integrating factor of each
    # step is the exact conservative flow at the midpoint value, so only the
    # variation across the step, damping and drive enter the stages.
    diag = np.empty((B, 2, X.shape[1]))
    for j in range(2):
        d = w[:, j : j + 1] ** 2 + 2.0 * w[:, j : j + 1] * g2[:, j : j + 1] * X
        if include_quadratic:
            sh_ = p.omega_q[:, j : j + 1] * nb
            d = d + 2.0 * w[:, j : j + 1] * sh_ + sh_ * sh_
        diag[:, j] = d
    r12 = 2.0 * w[:, 0:1] * gg[:, None] * X
    r21 = 2.0 * w[:, 1:2] * gg[:, None] * X
    gam = p.gamma

    def force(i, yy, m):
        x1, x2, v1, v2 = yy[:, 0], yy[:, 1], yy[:, 2], yy[:, 3]
        a1 = -(diag[:, 0, i] - diag[:, 0, m]) * x1 - (r12[:, i] - r12[:, m]) * x2 - gam[:, 0] * v1 + acc[:, 0, i]
        a2 = -(r21[:, i] - r21[:, m]) * x1 - (diag[:, 1, i] - diag[:, 1, m]) * x2 - gam[:, 1] * v2 + acc[:, 1, i]
        z = np.zeros_like(a1)
        return np.stack([z, z, a1, a2], axis=1)

    h = dt
    cache = None
    for s in range(n_steps):
        i0, i1, i2 = 2 * s, 2 * s + 1, 2 * s + 2
        key = (diag[:, :, i1].tobytes(), r12[:, i1].tobytes())
        if cache is None or cache[0] != key:
            Kf = (diag[:, 0, i1], r12[:, i1], r21[:, i1], diag[:, 1, i1])
            cache = (key, _propagator(*Kf, h), _propagator(*Kf, 0.5 * h))
        Pf, Ph = cache[1], cache[2]
        k1 = force(i0, y, i1)
        k2 = force(i1, _flow(Ph, y + 0.5 * h * k1), i1)
        k3 = force(i1, _flow(Ph, y) + 0.5 * h * k2, i1)
        k4 = force(i2, _flow(Pf, y) + h * _flow(Ph, k3), i1)
        y = _flow(Pf, y + (h / 6.0) * k1) + _flow(Ph, (h / 3.0) * (k2 + k3)) + (h / 6.0) * k4
        if record:
            out[:, s + 1] = y
    return out if record else y


# --------------------------------------------------------------------------
# Single simulation
# --------------------------------------------------------------------------


def default_dt(schedule: PulseSchedule, osc_pair: Sequence[OscillatorParams]) -> float:
    """Grid step not above 1/(64 f₂) that divides every schedule segment."""
    f2 = max(o.omega for o in osc_pair) / TWO_PI
    return schedule.grid_step(1.0 / (STEPS_PER_PERIOD * f2))


def _check_grid(schedule: PulseSchedule, dt: float) -> int:
    total = 0
    for i, s in enumerate(schedule.segments):
        n = s.duration / dt
        if abs(n - round(n)) > 1e-6:
            raise ScheduleGap(f"dt={dt:.6e} s does not divide segment {i} ({s.label or 'unlabeled'})")
        total += int(round(n))
    return total


def check_schedule_stable(osc_pair: Sequence[OscillatorParams], kappa: float, schedule: PulseSchedule) -> None:
    """Raise :class:`Unstable` if any segment's drive settings are linearly unstable."""
    from .moments import drift_matrix

    prev = (schedule.nbar0, schedule.delta0)
    for i, s in enumerate(schedule.segments):
        points = [(s.nbar, s.delta_pc)]
        if s.ramp == "linear":
            points += [prev, (0.5 * (prev[0] + s.nbar), 0.5 * (prev[1] + s.delta_pc))]
        for nb, de in points:
            D = drift_matrix(osc_pair, CavityDrive(kappa=kappa, nbar=nb, delta_pc=de))
            if np.max(np.linalg.eigvals(D).real) > 0:
                raise Unstable(f"segment {i} ({s.label or 'unlabeled'}) is beyond the stability boundary")
        prev = (s.nbar, s.delta_pc)


def _excitation_wave(ex: Excitation | None, n_half: int, dt: float, zh: np.ndarray) -> np.ndarray:
    """Excitation acceleration in zero-point units at half steps, shape (1, 2, n_half)."""
    acc = np.zeros((1, 2, n_half))
    if ex is None or ex.amplitude == 0:
        return acc
    t, a = excitation_pulse(ex.envelope, ex.omega, ex.n_cycles, 0.5 * dt, ex.amplitude)
    m = min(len(a), n_half)
    for j in range(2):
        acc[0, j, :m] = a[:m] / zh[j]
    return acc


def readout_weights(osc_pair: Sequence[OscillatorParams], drive: CavityDrive, nbar, delta, signs=(1.0, 1.0)) -> np.ndarray:
    """Heterodyne weights of x_i, shape (2, len(nbar)).

    w_i = s_i √(2 ε C_i Γ_i) · κ²/(κ²+Δ²), with C_i at the instantaneous n̄.
    On resonance a coherent amplitude ⟨b⟩ then produces filter output
    conj(⟨b⟩) after the scaling of :mod:`optospring.filter`.
    """
    nbar = np.atleast_1d(np.asarray(nbar, float))
    delta = np.atleast_1d(np.asarray(delta, float))
    k2 = drive.kappa ** 2
    out = []
    for o, s in zip(osc_pair, signs):
        C = 4.0 * nbar * o.g ** 2 / (drive.kappa * o.gamma)
        out.append(s * np.sqrt(2.0 * drive.epsilon * C * o.gamma) * k2 / (k2 + delta * delta))
    return np.array(out)


def simulate(
    config: SystemConfig,
    dt: float | None = None,
    rng: np.random.Generator | None = None,
    noise: bool = True,
    readout_signs: Sequence[float] = (1.0, 1.0),
    initial: tuple[np.ndarray, np.ndarray] | None = None,
    dc_force: bool = False,
    include_quadratic: bool = True,
    check_stability: bool = True,
) -> TraceSet:
    """Integrate the pulse protocol of ``config`` and synthesize the detected trace.

    ``initial`` is an optional (x, v) starting state in zero-point units.
    Shot noise with unit two-sided PSD is added to ``het`` when ``noise``
    is set, drawn from ``rng`` (default: a stream derived from the config
    seed).

    Raises
    ------
    Unstable
        If a schedule segment is beyond the stability boundary.
    ScheduleGap
        If ``dt`` does not divide the schedule segments.
    """
    osc = config.osc
    sch = config.schedule
    if dt is None:
        dt = default_dt(sch, osc)
    n = _check_grid(sch, dt)
    if check_stability:
        check_schedule_stable(osc, config.drive.kappa, sch)
    p = BatchParams.from_oscillators([osc], [config.drive.kappa])
    zh = p.zho[0]
    t_half = 0.5 * dt * np.arange(2 * n + 1)
    nbar, delta = sch.drive_at(t_half)
    acc = _excitation_wave(sch.excitation, 2 * n + 1, dt, zh)
    y0 = np.zeros((1, 4))
    if initial is not None:
        y0[0, :2], y0[0, 2:] = initial
    ys = integrate(
        p, nbar[None], delta[None], acc, y0, dt, record=True, dc_force=dc_force,
        nbar_ref=sch.nbar0, include_quadratic=include_quadratic,
    )[0]
    t = t_half[::2]
    x = ys[:, :2].T
    v = ys[:, 2:].T
    w = readout_weights(osc, config.drive, nbar[::2], delta[::2], readout_signs)
    het = np.sum(w * x, axis=0)
    if noise:
        if rng is None:
            rng = rng_streams(config.rng_seed, 1, key=(1,))[0]
        het = het + rng.standard_normal(het.shape) / np.sqrt(dt)
    try:
        t_ro = readout_start(sch)
    except KeyError:
        t_ro = 0.0
    return TraceSet(
        t=t,
        z1=x[0] * zh[0],
        z2=x[1] * zh[1],
        het=het,
        schedule_applied={"nbar": nbar[::2], "delta_pc": delta[::2]},
        dt=dt,
        readout_start=t_ro,
        x=x,
        v=v,
    )


# --------------------------------------------------------------------------
# Analysis helpers
# --------------------------------------------------------------------------


def mode_amplitudes(x: np.ndarray, v: np.ndarray, omega: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Complex ring-down amplitudes of free damped oscillators.

    A free oscillator with x(t) = a e^{(-γ-iω_d)t} + c.c., γ = Γ/2 and
    ω_d = √(ω² - γ²), has amplitude a, the quantity a matched filter started
    at the same instant estimates (up to conjugation).
    """
    gam = 0.5 * gamma
    wd = np.sqrt(omega * omega - gam * gam)
    # x = 2 Re a ; v = 2 Re((-γ - i ω_d) a) = -2γ Re a + 2 ω_d Im a
    re = 0.5 * x
    im = (0.5 * v + gam * re) / wd
    return re + 1j * im


def amplitude_state(a: np.ndarray, omega: np.ndarray, gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`mode_amplitudes`: (x, v) from complex amplitudes."""
    gam = 0.5 * gamma
    wd = np.sqrt(omega * omega - gam * gam)
    x = 2.0 * a.real
    v = -2.0 * gam * a.real + 2.0 * wd * a.imag
    return x, v


def energies(x: np.ndarray, v: np.ndarray, omega_eff: np.ndarray) -> np.ndarray:
    """Oscillator energies in units of ħω/4 per zero-point unit squared, x² + v²/ω²."""
    return x * x + (v / omega_eff) ** 2


def transfer_fraction(x: np.ndarray, v: np.ndarray, omega_eff: np.ndarray) -> float:
    """A₂² / (A₁² + A₂²) from the instantaneous state."""
    e = energies(np.asarray(x), np.asarray(v), np.asarray(omega_eff))
    return float(e[1] / (e[0] + e[1]))


def total_energy(osc_pair, x, v, nbar, delta, kappa, include_quadratic=True) -> np.ndarray:
    """Mechanical plus optical-spring energy (J) along a trajectory.

    Conserved for Γ = 0 and a static drive.
    """
    w = np.array([o.omega for o in osc_pair])
    wq = np.array([o.omega_q for o in osc_pair])
    m = np.array([o.mass for o in osc_pair])
    zh = np.array([zho(o) for o in osc_pair])
    weff = w + (wq * nbar if include_quadratic else 0.0)
    z = x * zh[:, None]
    zd = v * zh[:, None]
    e = 0.5 * np.sum(m[:, None] * (zd * zd + (weff ** 2)[:, None] * z * z), axis=0)
    from .spring import spring_constants

    k = spring_constants(osc_pair, CavityDrive(kappa=kappa, nbar=nbar, delta_pc=delta)).k
    stiff = -k
    e += 0.5 * np.einsum("it,ij,jt->t", z, stiff, z)
    return e


def display_filter(het: np.ndarray, dt: float, center: float, bandwidth: float = TWO_PI * 40e3) -> np.ndarray:
    """Zero-phase 2nd-order Butterworth band-pass for display traces.

    ``center`` and ``bandwidth`` are angular frequencies.
    """
    fs = 1.0 / dt
    lo = (center - 0.5 * bandwidth) / TWO_PI
    hi = (center + 0.5 * bandwidth) / TWO_PI
    sos = scipy.signal.butter(2, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return scipy.signal.sosfiltfilt(sos, het)


def envelope_period(t: np.ndarray, signal: np.ndarray, dt: float, band: tuple[float, float]) -> float:
    """Period of the amplitude modulation of a beating signal.

    The envelope is the magnitude of the analytic signal; its dominant
    frequency inside ``band`` (rad/s) is refined by parabolic interpolation
    of a zero-padded spectrum.
    """
    env = np.abs(scipy.signal.hilbert(signal))
    env = env - env.mean()
    env = env * np.hanning(len(env))
    nfft = 16 * len(env)
    spec = np.abs(np.fft.rfft(env, nfft))
    freqs = TWO_PI * np.fft.rfftfreq(nfft, dt)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    idx = np.flatnonzero(sel)
    i = idx[np.argmax(spec[idx])]
    a, b, c = np.log(spec[i - 1 : i + 2])
    shift = 0.5 * (a - c) / (a - 2 * b + c)
    f = freqs[i] + shift * (freqs[1] - freqs[0])
    return TWO_PI / f


def exchange_ladder(
    config: SystemConfig, tau_cs: Sequence[float], dt: float | None = None, readout_time: float = 1e-6
) -> dict:
    """Coherent state at the end of each coupling pulse for a τ_c ladder.

    Runs one batched integration with every ladder member ending its
    coupling pulse at the same instant.  Returns the per-τ_c states at the
    readout start (zero-point units) and transfer fractions.
    """
    cfgs = [with_tau_c(config, tc, readout_time=readout_time) for tc in tau_cs]
    ends = [readout_start(c.schedule) for c in cfgs]
    span_end = max(ends)
    osc = config.osc
    # align: each member starts earlier by (span_end - its own end)
    if dt is None:
        dt = min(default_dt(c.schedule, osc) for c in cfgs)
    shifts = [span_end - e for e in ends]
    for c in cfgs:
        _check_grid(c.schedule, dt)
        check_schedule_stable(osc, config.drive.kappa, c.schedule)
    n = int(round(span_end / dt))
    t_half = 0.5 * dt * np.arange(2 * n + 1)
    nb = []
    de = []
    acc = []
    p = BatchParams.from_oscillators([osc] * len(cfgs), [config.drive.kappa] * len(cfgs))
    zh = p.zho[0]
    for c, sft in zip(cfgs, shifts):
        a, b = c.schedule.drive_at(t_half - sft)
        nb.append(a)
        de.append(b)
        ex = _excitation_wave(c.schedule.excitation, 2 * n + 1, dt, zh)[0]
        k = int(round(2 * sft / dt))
        shifted = np.zeros_like(ex)
        shifted[:, k:] = ex[:, : ex.shape[1] - k]
        acc.append(shifted)
    y = integrate(p, np.array(nb), np.array(de), np.array(acc), np.zeros((len(cfgs), 4)), dt, record=False)
    nbar_ro = cfgs[0].schedule.drive_at(span_end + dt)[0]
    weff = np.array([o.omega + o.omega_q * float(nbar_ro) for o in osc])
    frac = [transfer_fraction(yy[:2], yy[2:], weff) for yy in y]
    return {"tau_c": np.asarray(tau_cs, float), "x": y[:, :2], "v": y[:, 2:], "transfer": np.array(frac), "dt": dt}


def fit_exchange(tau_cs: np.ndarray, transfer: np.ndarray) -> dict:
    """Fit transfer(τ) = b + a·sin²(π(τ - τ₀)/T) and return T, the peak value and parameters."""
    import scipy.optimize

    tau = np.asarray(tau_cs, float)
    y = np.asarray(transfer, float)

    def model(tt, a, T, t0, b):
        return b + a * np.sin(np.pi * (tt - t0) / T) ** 2

    best = None
    for T0 in np.linspace(60e-6, 160e-6, 11):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.optimize.OptimizeWarning)
                popt, _ = scipy.optimize.curve_fit(model, tau, y, p0=[y.max() - y.min(), T0, 0.0, y.min()], maxfev=20000)
        except RuntimeError:
            continue
        res = np.sum((model(tau, *popt) - y) ** 2)
        if best is None or res < best[0]:
            best = (res, popt)
    a, T, t0, b = best[1]
    return {"period": abs(T), "amplitude": a, "t0": t0, "offset": b, "peak": b + max(a, 0.0)}


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleResult:
    """Monte-Carlo endpoint clouds of the filter phasors.

    ``endpoints`` has shape (n_tau, n_kept, 2) (complex Z₁, Z₂ per sample);
    ``mean_trajectory`` shape (n_tau, 2); ``covariance`` shape
    (n_tau, 2, 2, 2): per τ_c and oscillator the covariance of
    (Re Z, Im Z); ``area`` the 1σ ellipse areas π√det, shape (n_tau, 2).
    """

    tau_c: np.ndarray
    endpoints: np.ndarray
    mean_trajectory: np.ndarray
    covariance: np.ndarray
    area: np.ndarray
    discard_fraction: float


def perturbed_config(config: SystemConfig, rng: np.random.Generator) -> SystemConfig:
    """Draw one Gaussian-perturbed copy of ``config``.

    Each uncertain parameter is multiplied by (1 + σ·N(0,1)) with σ from
    ``config.ensemble.rel_sigma``; oscillator parameters are drawn per
    oscillator, n̄ and Δ_pc scale every schedule segment together.  Draws are
    taken in a fixed order so that the stream consumption does not depend
    on which σ are zero.
    """
    rel = config.ensemble.rel_sigma
    draws = {k: rng.standard_normal(2) for k in UNCERTAIN_PARAMS}

    def f(name, j=0):
        return 1.0 + rel.get(name, 0.0) * draws[name][j]

    new_osc = []
    for j, o in enumerate(config.osc):
        new_osc.append(
            replace(
                o,
                g=o.g * f("g", j),
                omega=o.omega * f("omega", j),
                nu_th=max(o.nu_th * f("nu_th", j), 0.0),
                gamma=abs(o.gamma * f("gamma", j)),
                mass=abs(o.mass * f("mass", j)),
            )
        )
    sn, sd = f("nbar"), f("delta_pc")
    sch = config.schedule
    segs = tuple(replace(s, nbar=max(s.nbar * sn, 0.0), delta_pc=s.delta_pc * sd) for s in sch.segments)
    new_s = PulseSchedule(segs, sch.excitation, max(sch.nbar0 * sn, 0.0), sch.delta0 * sd)
    if new_osc[0].omega >= new_osc[1].omega:
        new_osc = [new_osc[0], replace(new_osc[1], omega=new_osc[0].omega * (1 + 1e-9))]
    return config.replace(osc=tuple(new_osc), schedule=new_s)


def _worker_count() -> int:
    env = os.environ.get("OPTOSPRING_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(4, os.cpu_count() or 1))


MC_CHUNK = 32


def batch_readout_phasors(cfgs: Sequence[SystemConfig], bank, dt: float) -> np.ndarray:
    """Noiseless filter phasors for configurations sharing one schedule layout.

    All members are integrated together; each uses its own parameters and
    readout weights, while the filter ``bank`` is the nominal one, as in an
    experiment whose templates come from independent calibrations.
    Returns complex phasors of shape (len(cfgs), 2).
    """
    n = _check_grid(cfgs[0].schedule, dt)
    t_half = 0.5 * dt * np.arange(2 * n + 1)
    p = BatchParams.from_oscillators([c.osc for c in cfgs], [c.drive.kappa for c in cfgs])
    nb = np.empty((len(cfgs), 2 * n + 1))
    de = np.empty_like(nb)
    acc = np.empty((len(cfgs), 2, 2 * n + 1))
    for i, c in enumerate(cfgs):
        nb[i], de[i] = c.schedule.drive_at(t_half)
        acc[i] = _excitation_wave(c.schedule.excitation, 2 * n + 1, dt, p.zho[i])[0]
    ys = integrate(p, nb, de, acc, np.zeros((len(cfgs), 4)), dt, record=True)
    i0 = int(round(readout_start(cfgs[0].schedule) / dt))
    m = bank.t.size
    het = np.empty((len(cfgs), m))
    for i, c in enumerate(cfgs):
        w = readout_weights(c.osc, c.drive, nb[i, 2 * i0 : 2 * (i0 + m) : 2], de[i, 2 * i0 : 2 * (i0 + m) : 2])
        het[i] = w[0] * ys[i, i0 : i0 + m, 0] + w[1] * ys[i, i0 : i0 + m, 1]
    return bank.coefficients(het) / bank.scale


def monte_carlo(
    config: SystemConfig,
    tau_cs: Sequence[float] | None = None,
    n_samples: int | None = None,
    workers: int | None = None,
    dt: float | None = None,
    readout_time: float = 400e-6,
) -> EnsembleResult:
    """Propagate parameter uncertainties to the post-coupling phasors.

    Every sample draws its parameters from its own random stream derived
    from the config seed and its index.  Samples are integrated in chunks of
    fixed membership and collected by index, so the outcome does not depend
    on the number of workers (``OPTOSPRING_THREADS`` by default).  Samples
    whose schedule is unstable are discarded and counted.
    """
    from .filter import TemplateBank

    n = int(n_samples if n_samples is not None else config.ensemble.n_samples)
    if n < 2:
        raise ValueError("n_samples must be >= 2")
    if tau_cs is None:
        tau_cs = [s.duration for s in config.schedule.segments if s.label == "couple"] or [0.0]
    tau_cs = [float(t) for t in tau_cs]
    streams = rng_streams(config.rng_seed, n, key=(2,))
    samples = [perturbed_config(config, r) for r in streams]
    nominals = [with_tau_c(config, tc, readout_time=readout_time) for tc in tau_cs]
    if dt is None:
        dt = min(default_dt(c.schedule, config.osc) for c in nominals)

    stable = np.ones(n, dtype=bool)
    for i, smp in enumerate(samples):
        for nom in nominals:
            try:
                sch = with_tau_c(smp, _tau_of(nom), readout_time=readout_time).schedule
                check_schedule_stable(smp.osc, smp.drive.kappa, sch)
            except Unstable:
                stable[i] = False
                break
    kept = np.flatnonzero(stable)
    if kept.size < 2:
        raise Unstable("fewer than two Monte-Carlo samples are stable")

    banks = []
    for nom in nominals:
        n_ro = int(round(readout_time / dt)) + 1
        banks.append(TemplateBank.for_config(nom, dt * np.arange(n_ro), readout_time))

    chunks = [kept[i : i + MC_CHUNK] for i in range(0, kept.size, MC_CHUNK)]
    jobs = [(k, c) for k in range(len(tau_cs)) for c in range(len(chunks))]

    def run(job):
        k, c = job
        cfgs = [with_tau_c(samples[i], tau_cs[k], readout_time=readout_time) for i in chunks[c]]
        return batch_readout_phasors(cfgs, banks[k], dt)

    nw = workers if workers is not None else _worker_count()
    if nw > 1:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            outs = list(pool.map(run, jobs))
    else:
        outs = [run(j) for j in jobs]
    pts = np.empty((len(tau_cs), kept.size, 2), dtype=complex)
    for (k, c), o in zip(jobs, outs):
        start = c * MC_CHUNK
        pts[k, start : start + o.shape[0]] = o
    mean = pts.mean(axis=1)
    cov = np.empty((len(tau_cs), 2, 2, 2))
    area = np.empty((len(tau_cs), 2))
    for i in range(len(tau_cs)):
        for j in range(2):
            c = np.cov(np.stack([pts[i, :, j].real, pts[i, :, j].imag]))
            cov[i, j] = c
            area[i, j] = np.pi * np.sqrt(max(np.linalg.det(c), 0.0))
    return EnsembleResult(np.array(tau_cs), pts, mean, cov, area, 1.0 - kept.size / n)


def _tau_of(cfg: SystemConfig) -> float:
    for s in cfg.schedule.segments:
        if s.label == "couple":
            return s.duration
    return 0.0


def ramp_excitation(config: SystemConfig, ramp_time: float | None = None) -> dict:
    """Energy deposited by switching the coupling on, linear ramp versus step.

    Starting at rest in the probe equilibrium, the drive is taken to the
    coupling setting either linearly over ``ramp_time`` or at once, with
    the static radiation-pressure force included.  The energy
    x² + v²/ω_eff² about the new equilibrium is evaluated when the ramp
    ends.  Returns per-oscillator energies and their ratios.
    """
    sch = with_tau_c(config, 30e-6).schedule
    probe = next(s for s in sch.segments if s.label == "excite")
    couple = next(s for s in sch.segments if s.label == "couple")
    if ramp_time is None:
        ramp_time = next(s.duration for s in sch.segments if s.label == "ramp_up")
    osc = config.osc
    w = np.array([o.omega for o in osc])
    g = np.array([o.g for o in osc])
    X = 2.0 * couple.nbar * couple.delta_pc / (config.drive.kappa ** 2 + couple.delta_pc ** 2)
    weff = w + np.array([o.omega_q for o in osc]) * couple.nbar
    K = np.diag(weff ** 2) + 2.0 * w[:, None] * np.outer(g, g) * X
    x_eq = np.linalg.solve(K, -2.0 * w * g * (couple.nbar - probe.nbar))
    out = {}
    for kind in ("linear", "step"):
        segs = (
            replace(couple, duration=ramp_time, ramp=kind, label="ramp_up"),
            replace(couple, duration=ramp_time, ramp="step", label="hold"),
        )
        s = PulseSchedule(segs, None, probe.nbar, probe.delta_pc)
        tr = simulate(config.replace(schedule=s), noise=False, dc_force=True, include_quadratic=True)
        x, v = tr.state_at(ramp_time)
        out[kind] = (x - x_eq) ** 2 + (v / weff) ** 2
    out["ratio"] = out["linear"] / out["step"]
    out["ratio_total"] = float(out["linear"].sum() / out["step"].sum())
    return out
