"""First and second moments of the two phonon modes under the reduced master equation.

After the cavity field is eliminated, the two modes obey a quadratic Lindblad
equation.  In a frame co-rotating with each bare oscillator frequency the
dynamics is described by three 2x2 matrices:

* ``H``: the coherent part.  Diagonal entries are the optical frequency
  shifts δΩ_i and the off-diagonal entries are the exchange coupling J,
  carrying the phase e^{∓i(ω₁-ω₂)τ}.
* ``A``: decay of lowering operators, the bath and optical cooling rates
  Γ_i(ν_i+1) + Γ₋^(i) with correlated off-diagonal decay Γ₋.
* ``B``: the matching heating rates Γ_iν_i + Γ₊^(i) and the correlated
  heating Γ₊.

For quadratic Lindbladians first and second moments close exactly.  With
N_kl = ⟨b_k† b_l⟩, M_kl = ⟨b_k b_l⟩ and β = ⟨b⟩ they obey

    dβ/dt = -iHβ - ½Aᵀβ + ½Bβ
    dN/dt = i(H*N - NH*) - ½(AN + NA) + ½(NBᵀ + BᵀN) + Bᵀ
    dM/dt = -i(HM + MHᵀ) - ½(AᵀM + MA) + ½(BM + MBᵀ)

The phase origin τ = 0 of the rotating frame is a caller-chosen reference
time, normally the start of the readout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DegenerateVariance, StepTooCoarse
from .model import CavityDrive, OscillatorParams, PulseSchedule

DEFAULT_DT = 50e-9
RWA_MIN_RATIO = 50.0


# --------------------------------------------------------------------------
# State
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentState:
    """All first and second moments of the two modes.

    Attributes
    ----------
    mean : ndarray of complex, shape (2,)
        ⟨b₁⟩, ⟨b₂⟩ in the co-rotating frame.
    occ : ndarray, shape (2,)
        ⟨b₁†b₁⟩, ⟨b₂†b₂⟩ (phonons, coherent part included).
    cross : complex
        ⟨b₁†b₂⟩.
    anomalous : ndarray of complex, shape (3,)
        ⟨b₁b₁⟩, ⟨b₂b₂⟩, ⟨b₁b₂⟩.
    """

    mean: np.ndarray
    occ: np.ndarray
    cross: complex
    anomalous: np.ndarray

    @classmethod
    def from_arrays(cls, beta, N, M) -> "MomentState":
        beta = np.asarray(beta, dtype=complex)
        N = np.asarray(N, dtype=complex)
        M = np.asarray(M, dtype=complex)
        return cls(
            mean=beta.copy(),
            occ=np.real(np.diag(N)).copy(),
            cross=complex(0.5 * (N[0, 1] + np.conj(N[1, 0]))),
            anomalous=np.array([M[0, 0], M[1, 1], 0.5 * (M[0, 1] + M[1, 0])]),
        )

    @classmethod
    def thermal(cls, occ1: float, occ2: float) -> "MomentState":
        return cls(np.zeros(2, complex), np.array([occ1, occ2], float), 0j, np.zeros(3, complex))

    @classmethod
    def coherent(cls, beta, occ_incoherent=(0.0, 0.0)) -> "MomentState":
        """Displaced thermal states with incoherent occupations ``occ_incoherent``."""
        beta = np.asarray(beta, dtype=complex)
        N = np.outer(beta.conj(), beta) + np.diag(occ_incoherent)
        M = np.outer(beta, beta)
        return cls.from_arrays(beta, N, M)

    @property
    def N(self) -> np.ndarray:
        n = np.diag(self.occ).astype(complex)
        n[0, 1] = self.cross
        n[1, 0] = np.conj(self.cross)
        return n

    @property
    def M(self) -> np.ndarray:
        a = self.anomalous
        return np.array([[a[0], a[2]], [a[2], a[1]]], dtype=complex)

    def incoherent(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean-subtracted (N, M)."""
        b = self.mean
        return self.N - np.outer(b.conj(), b), self.M - np.outer(b, b)

    def incoherent_occupation(self) -> np.ndarray:
        return self.occ - np.abs(self.mean) ** 2

    def quadrature_covariance(self) -> np.ndarray:
        """Symmetrized covariance of (X₁, X₂, P₁, P₂), X = (b+b†)/√2.

        The vacuum has covariance I/2.
        """
        N, M = self.incoherent()
        S = np.block([[M, N.T + np.eye(2)], [N, M.conj()]])
        r2 = 1.0 / np.sqrt(2.0)
        T = np.block([[r2 * np.eye(2), r2 * np.eye(2)], [-1j * r2 * np.eye(2), 1j * r2 * np.eye(2)]])
        return np.real(T @ S @ T.T)

    def symplectic_eigenvalues(self) -> np.ndarray:
        V = self.quadrature_covariance()
        omega = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
        ev = np.abs(np.linalg.eigvals(1j * omega @ V))
        return np.sort(ev)[::2]

    def is_physical(self, tol: float = 1e-9) -> bool:
        """Whether the uncertainty relation holds (symplectic eigenvalues ≥ 1/2)."""
        if np.any(self.incoherent_occupation() < -tol):
            return False
        return bool(np.all(self.symplectic_eigenvalues() >= 0.5 - tol))


# --------------------------------------------------------------------------
# Rates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingRates:
    """Optically induced rates for a static drive (all rad/s)."""

    gamma_plus: np.ndarray
    gamma_minus: np.ndarray
    gamma_plus_cross: float
    gamma_minus_cross: float
    delta_omega: np.ndarray
    j_coupling: float


def _rate_arrays(omega, g, nbar, delta, kappa):
    """Vectorized rates; ``nbar`` and ``delta`` broadcast, oscillator axis last."""
    nbar = np.asarray(nbar, dtype=float)[..., None]
    delta = np.asarray(delta, dtype=float)[..., None]
    k2 = kappa * kappa
    gp = 2.0 * g * g * nbar * kappa / (k2 + (-delta + omega) ** 2)
    gm = 2.0 * g * g * nbar * kappa / (k2 + (-delta - omega) ** 2)
    # Response of the cavity at the two sidebands of oscillator i.  The
    # overall sign is fixed so that a blue-detuned pump stiffens.
    lor = (delta + omega) / (k2 + (delta + omega) ** 2) + (delta - omega) / (k2 + (delta - omega) ** 2)
    dom = g * g * nbar * lor
    jc = g[0] * g[1] * nbar[..., 0] * lor[..., 1]
    return gp, gm, dom, jc


def coupling_rates(osc_pair: Sequence[OscillatorParams], drive: CavityDrive) -> CouplingRates:
    """Optical damping, heating, frequency shifts and exchange coupling."""
    w = np.array([o.omega for o in osc_pair])
    g = np.array([o.g for o in osc_pair])
    gp, gm, dom, jc = _rate_arrays(w, g, drive.nbar, drive.delta_pc, drive.kappa)
    return CouplingRates(
        gamma_plus=gp,
        gamma_minus=gm,
        gamma_plus_cross=float(0.5 * (gp[0] + gp[1])),
        gamma_minus_cross=float(0.5 * (gm[0] + gm[1])),
        delta_omega=dom,
        j_coupling=float(jc),
    )


def _matrices(osc_pair, nbar, delta, kappa, tau, include_quadratic=False):
    """H, A, B with a leading broadcast shape taken from ``nbar``/``delta``/``tau``."""
    w = np.array([o.omega for o in osc_pair])
    g = np.array([o.g for o in osc_pair])
    gam = np.array([o.gamma for o in osc_pair])
    nu = np.array([o.nu_th for o in osc_pair])
    wq = np.array([o.omega_q for o in osc_pair])
    nbar, delta, tau = np.broadcast_arrays(
        np.asarray(nbar, float), np.asarray(delta, float), np.asarray(tau, float)
    )
    gp, gm, dom, jc = _rate_arrays(w, g, nbar, delta, kappa)
    if include_quadratic:
        dom = dom + wq * nbar[..., None]
    ph = np.exp(-1j * (w[0] - w[1]) * tau)
    shape = nbar.shape + (2, 2)
    H = np.empty(shape, complex)
    A = np.empty(shape, complex)
    B = np.empty(shape, complex)
    H[..., 0, 0] = dom[..., 0]
    H[..., 1, 1] = dom[..., 1]
    H[..., 0, 1] = jc * np.conj(ph)
    H[..., 1, 0] = jc * ph
    gmc = 0.5 * (gm[..., 0] + gm[..., 1])
    gpc = 0.5 * (gp[..., 0] + gp[..., 1])
    A[..., 0, 0] = gm[..., 0] + gam[0] * (nu[0] + 1)
    A[..., 1, 1] = gm[..., 1] + gam[1] * (nu[1] + 1)
    A[..., 0, 1] = gmc * ph
    A[..., 1, 0] = gmc * np.conj(ph)
    B[..., 0, 0] = gp[..., 0] + gam[0] * nu[0]
    B[..., 1, 1] = gp[..., 1] + gam[1] * nu[1]
    B[..., 0, 1] = gpc * np.conj(ph)
    B[..., 1, 0] = gpc * ph
    return H, A, B


def drift_matrix(
    osc_pair: Sequence[OscillatorParams], drive: CavityDrive, include_quadratic: bool = False
) -> np.ndarray:
    """Time-independent first-moment drift in the non-rotating frame.

    d⟨b⟩/dt = D ⟨b⟩ with D = -i(diag ω + H) - ½Aᵀ + ½B evaluated at zero
    phase.  The system is linearly stable iff every eigenvalue of D has a
    negative real part.
    """
    w = np.array([o.omega for o in osc_pair])
    H, A, B = _matrices(osc_pair, drive.nbar, drive.delta_pc, drive.kappa, 0.0, include_quadratic)
    return -1j * (np.diag(w) + H) - 0.5 * A.T + 0.5 * B


def first_moment_rhs(
    osc_pair: Sequence[OscillatorParams],
    drive: CavityDrive,
    tau: float,
    beta: np.ndarray,
    include_quadratic: bool = False,
) -> np.ndarray:
    """Right-hand side of the first-moment equation in the rotating frame."""
    H, A, B = _matrices(osc_pair, drive.nbar, drive.delta_pc, drive.kappa, tau, include_quadratic)
    return -1j * H @ beta - 0.5 * A.T @ beta + 0.5 * B @ beta


def rwa_ratio(osc_pair: Sequence[OscillatorParams], drive: CavityDrive) -> float:
    """(ω₁+ω₂) / max(|J|, Γ±) for a static drive."""
    r = coupling_rates(osc_pair, drive)
    fastest = max(abs(r.j_coupling), r.gamma_plus_cross, r.gamma_minus_cross, 1e-300)
    return (osc_pair[0].omega + osc_pair[1].omega) / fastest


# --------------------------------------------------------------------------
# Integration
# --------------------------------------------------------------------------


def _rhs(H, A, B, beta, N, M):
    Hs = H.conj()
    Bt = np.swapaxes(B, -1, -2)
    At = np.swapaxes(A, -1, -2)
    Ht = np.swapaxes(H, -1, -2)
    db = np.einsum("...ij,...j->...i", -1j * H - 0.5 * At + 0.5 * B, beta)
    dN = 1j * (Hs @ N - N @ Hs) - 0.5 * (A @ N + N @ A) + 0.5 * (N @ Bt + Bt @ N) + Bt
    dM = -1j * (H @ M + M @ Ht) - 0.5 * (At @ M + M @ A) + 0.5 * (B @ M + M @ Bt)
    return db, dN, dM


def _check_step(osc_pair, H, A, B, dt):
    w = np.array([o.omega for o in osc_pair])
    fastest = max(
        float(np.max(np.abs(H))),
        float(np.max(np.abs(A))),
        float(np.max(np.abs(B))),
        abs(w[0] - w[1]),
    )
    if dt * fastest >= 0.05:
        raise StepTooCoarse(f"dt={dt:.3e} s with fastest rate {fastest:.3e} 1/s (dt*rate >= 0.05)")
    slow = max(float(np.max(np.abs(H[..., 0, 1]))), float(np.max(np.abs(A[..., 0, 1]))), float(np.max(np.abs(B[..., 0, 1]))), 1e-300)
    ratio = (w[0] + w[1]) / slow
    if ratio <= RWA_MIN_RATIO:
        warnings.warn(
            f"rotating-wave approximation questionable: (w1+w2)/max(J, Gamma) = {ratio:.1f}",
            RuntimeWarning,
            stacklevel=3,
        )


def evolve_batch(
    osc_pair: Sequence[OscillatorParams],
    kappa: float,
    beta: np.ndarray,
    N: np.ndarray,
    M: np.ndarray,
    nbar_fn,
    delta_fn,
    t0: float,
    duration: float,
    dt: float = DEFAULT_DT,
    t_ref: float = 0.0,
    include_quadratic: bool = False,
    check: bool = True,
):
    """Integrate a batch of moment sets with classical RK4.

    ``beta`` has shape (n, 2), ``N`` and ``M`` shape (n, 2, 2).
    ``nbar_fn(t)`` and ``delta_fn(t)`` map a 1-D time array to arrays of
    shape (n, len(t)).  Returns the final (beta, N, M) at ``t0 + duration``.
    """
    n_steps = int(round(duration / dt))
    if n_steps < 0 or abs(n_steps * dt - duration) > 1e-9 * max(duration, dt):
        raise ValueError("duration must be a nonnegative multiple of dt")
    beta = np.array(beta, dtype=complex)
    N = np.array(N, dtype=complex)
    M = np.array(M, dtype=complex)
    if n_steps == 0:
        return beta, N, M
    t_half = t0 + 0.5 * dt * np.arange(2 * n_steps + 1)
    nb = np.atleast_2d(nbar_fn(t_half))
    de = np.atleast_2d(delta_fn(t_half))
    H, A, B = _matrices(osc_pair, nb, de, kappa, t_half[None, :] - t_ref, include_quadratic)
    if check:
        _check_step(osc_pair, H, A, B, dt)
    # time axis first for cheap slicing
    H = np.moveaxis(H, 1, 0)
    A = np.moveaxis(A, 1, 0)
    B = np.moveaxis(B, 1, 0)
    h2 = 0.5 * dt
    for s in range(n_steps):
        i0, i1, i2 = 2 * s, 2 * s + 1, 2 * s + 2
        k1 = _rhs(H[i0], A[i0], B[i0], beta, N, M)
        k2 = _rhs(H[i1], A[i1], B[i1], beta + h2 * k1[0], N + h2 * k1[1], M + h2 * k1[2])
        k3 = _rhs(H[i1], A[i1], B[i1], beta + h2 * k2[0], N + h2 * k2[1], M + h2 * k2[2])
        k4 = _rhs(H[i2], A[i2], B[i2], beta + dt * k3[0], N + dt * k3[1], M + dt * k3[2])
        beta = beta + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        N = N + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        M = M + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return beta, N, M


def evolve(
    state: MomentState,
    osc_pair: Sequence[OscillatorParams],
    drive: CavityDrive,
    duration: float,
    dt: float = DEFAULT_DT,
    schedule: PulseSchedule | None = None,
    t0: float = 0.0,
    t_ref: float = 0.0,
    include_quadratic: bool = False,
) -> MomentState:
    """Advance ``state`` from ``t0`` by ``duration``.

    The drive is static (``drive.nbar``, ``drive.delta_pc``) unless a
    ``schedule`` supplies n̄(t) and Δ_pc(t); κ always comes from ``drive``.

    Raises
    ------
    StepTooCoarse
        If ``dt`` times the fastest rate is 0.05 or more.
    """
    if schedule is None:
        nbar_fn = lambda t: np.full((1, t.size), drive.nbar)  # noqa: E731
        delta_fn = lambda t: np.full((1, t.size), drive.delta_pc)  # noqa: E731
    else:
        nbar_fn = lambda t: schedule.drive_at(t)[0][None, :]  # noqa: E731
        delta_fn = lambda t: schedule.drive_at(t)[1][None, :]  # noqa: E731
    beta, N, M = evolve_batch(
        osc_pair,
        drive.kappa,
        state.mean[None],
        state.N[None],
        state.M[None],
        nbar_fn,
        delta_fn,
        t0,
        duration,
        dt,
        t_ref,
        include_quadratic,
    )
    return MomentState.from_arrays(beta[0], N[0], M[0])


def steady_state(
    osc_pair: Sequence[OscillatorParams],
    drive: CavityDrive,
    tau: float = 0.0,
    include_quadratic: bool = False,
) -> MomentState:
    """Stationary moments for a static drive, expressed at rotating-frame time ``tau``.

    Solved as a Sylvester equation in the non-rotating frame, where the
    generator is time independent.  Means and anomalous moments vanish.
    """
    w = np.array([o.omega for o in osc_pair])
    H, A, B = _matrices(osc_pair, drive.nbar, drive.delta_pc, drive.kappa, 0.0, include_quadratic)
    Hl = np.diag(w) + H
    Hs = Hl.conj()
    Bt = B.T
    P = 1j * Hs - 0.5 * A + 0.5 * Bt
    Q = -1j * Hs - 0.5 * A + 0.5 * Bt
    N = scipy.linalg.solve_sylvester(P, Q, -Bt)
    N = 0.5 * (N + N.conj().T)
    rot = np.exp(1j * w * tau)
    N = np.conj(rot)[:, None] * N * rot[None, :]
    return MomentState.from_arrays(np.zeros(2), N, np.zeros((2, 2)))


# --------------------------------------------------------------------------
# Observables
# --------------------------------------------------------------------------


def added_phonons(before: MomentState, after: MomentState) -> np.ndarray:
    """Change of the incoherent occupation of each oscillator."""
    return after.incoherent_occupation() - before.incoherent_occupation()


def correlation_components(state: MomentState, reference: MomentState | None = None) -> tuple[float, float]:
    """(r_Re, r_Im) of the incoherent, normally ordered quadrature moments.

    With Z_i the complex amplitude, the real-quadrature covariance is
    ½Re(N₁₂ + M₁₂) and its variances ½(n_i + Re M_ii); the imaginary
    quadrature uses N - M instead.  When ``reference`` is given its
    covariances are subtracted from the numerators, removing correlations
    that are present without the coupling pulse.
    """
    N, M = state.incoherent()
    num_re = np.real(N[0, 1] + M[0, 1])
    num_im = np.real(N[0, 1] - M[0, 1])
    if reference is not None:
        Nr, Mr = reference.incoherent()
        num_re -= np.real(Nr[0, 1] + Mr[0, 1])
        num_im -= np.real(Nr[0, 1] - Mr[0, 1])
    var_re = np.real(np.diag(N) + np.diag(M))
    var_im = np.real(np.diag(N) - np.diag(M))
    if np.any(var_re <= 1e-15) or np.any(var_im <= 1e-15):
        raise DegenerateVariance("incoherent quadrature variance is not positive")
    return float(num_re / np.sqrt(var_re.prod())), float(num_im / np.sqrt(var_im.prod()))


def correlation(state: MomentState, reference: MomentState | None = None, tol: float = 1e-6) -> float:
    """Cross-oscillator noise correlation r, the mean of r_Re and r_Im.

    A warning is issued if the two quadratures disagree by more than ``tol``.
    """
    r_re, r_im = correlation_components(state, reference)
    if abs(r_re - r_im) > tol:
        warnings.warn(f"r_Re={r_re:.6g} and r_Im={r_im:.6g} differ", RuntimeWarning, stacklevel=2)
    return 0.5 * (r_re + r_im)


# --------------------------------------------------------------------------
# Coupling-pulse series
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PulseResult:
    """Moments at the start of the readout after one coupling pulse."""

    tau_c: float
    state: MomentState
    reference: MomentState
    dnu: np.ndarray
    r: float


def pulse_series(
    osc_pair: Sequence[OscillatorParams],
    kappa: float,
    schedules: Sequence[PulseSchedule],
    tau_cs: Sequence[float],
    dt: float = DEFAULT_DT,
    include_quadratic: bool = False,
    initial_mean: np.ndarray | None = None,
) -> list[PulseResult]:
    """Backaction and correlations accumulated by coupling pulses.

    Each schedule must contain an ``excite`` segment (the probe setting the
    oscillators equilibrate under) followed at some point by a ``readout``
    segment.  All moments start in the probe steady state and are integrated
    up to the start of the readout, which is also the rotating-frame phase
    origin.  The reference is the probe steady state at that time, i.e. the
    same window with no coupling pulse.
    """
    schedules = list(schedules)
    if not schedules:
        return []
    probe = []
    windows = []
    for sch in schedules:
        ex = next(s for s in sch.segments if s.label == "excite")
        probe.append((ex.nbar, ex.delta_pc))
        windows.append(sch.start_of("readout") - sch.end_of("excite"))
    if len(set(probe)) != 1:
        raise ValueError("all schedules must share the same probe setting")
    drive = CavityDrive(kappa=kappa, nbar=probe[0][0], delta_pc=probe[0][1])
    ref = steady_state(osc_pair, drive, 0.0, include_quadratic)
    span = max(windows)
    span = dt * np.ceil(span / dt - 1e-9)
    start_state = steady_state(osc_pair, drive, -span, include_quadratic)
    n = len(schedules)
    beta0 = np.zeros((n, 2), complex) if initial_mean is None else np.tile(np.asarray(initial_mean, complex), (n, 1))
    N0 = np.repeat(start_state.N[None], n, axis=0)
    M0 = np.repeat(start_state.M[None], n, axis=0)
    starts = np.array([sch.start_of("readout") for sch in schedules])

    def nbar_fn(tau):
        return np.stack([sch.drive_at(s + tau)[0] for sch, s in zip(schedules, starts)])

    def delta_fn(tau):
        return np.stack([sch.drive_at(s + tau)[1] for sch, s in zip(schedules, starts)])

    beta, N, M = evolve_batch(
        osc_pair, kappa, beta0, N0, M0, nbar_fn, delta_fn, -span, span, dt, 0.0, include_quadratic
    )
    out = []
    for i, tc in enumerate(tau_cs):
        st = MomentState.from_arrays(beta[i], N[i], M[i])
        dnu = added_phonons(ref, st)
        out.append(PulseResult(float(tc), st, ref, dnu, correlation(st, ref)))
    return out
