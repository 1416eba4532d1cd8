"""Optical spring constants, normal modes and the linear stability boundary.

Spring constants follow the force-gradient convention: the optical force on
oscillator i is F_i = sum_j k_ij z_j.  A blue-detuned pump (Δ_pc > 0) gives
negative k_ij, which is a restoring force and therefore stiffens the
oscillators.  Equations of motion use the stiffness ``-k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NoBoundaryInRange, Unstable
from .model import HBAR, CavityDrive, OscillatorParams, zho


@dataclass(frozen=True)
class SpringMatrix:
    """Optical spring constants and summary coupling data.

    Attributes
    ----------
    k : ndarray, shape (2, 2)
        Spring constants k_ij (N/m), symmetric.
    omega_coupling : float
        Coupling strength Ω = (|k_12| / M̄) / ω̄ (rad/s), M̄ the mean mass.
    delta : float
        Natural splitting ω₂ - ω₁ (rad/s).
    omega_bar : float
        Mean bare frequency (rad/s).
    nbar : float
        Photon number the constants were evaluated at; used to apply the
        quadratic-coupling shift in :func:`normal_modes`.
    """

    k: np.ndarray
    omega_coupling: float
    delta: float
    omega_bar: float
    nbar: float = 0.0


@dataclass(frozen=True)
class NormalModes:
    """Normal-mode frequencies and composition of the coupled pair.

    ``weights`` has one row per mode (plus first) and one column per bare
    oscillator, in mass-weighted coordinates so that rows are orthonormal.
    """

    omega_plus: float
    omega_minus: float
    weights: np.ndarray
    regime: str


def detuning_factor(nbar, delta_pc, kappa):
    """2 n̄ Δ / (κ² + Δ²), the common drive factor of every spring constant."""
    nbar = np.asarray(nbar, dtype=float)
    delta_pc = np.asarray(delta_pc, dtype=float)
    return 2.0 * nbar * delta_pc / (kappa * kappa + delta_pc * delta_pc)


def spring_constants(osc_pair: Sequence[OscillatorParams], drive: CavityDrive) -> SpringMatrix:
    """Evaluate the 2x2 optical spring matrix for a static drive."""
    g = np.array([o.g for o in osc_pair])
    z = np.array([zho(o) for o in osc_pair])
    x = float(detuning_factor(drive.nbar, drive.delta_pc, drive.kappa))
    gz = g / z
    k = -HBAR * np.outer(gz, gz) * x
    # enforce exact symmetry against rounding in the outer product
    k = 0.5 * (k + k.T)
    m_bar = 0.5 * (osc_pair[0].mass + osc_pair[1].mass)
    w_bar = 0.5 * (osc_pair[0].omega + osc_pair[1].omega)
    omega_c = abs(k[0, 1]) / m_bar / w_bar
    return SpringMatrix(
        k=k,
        omega_coupling=float(omega_c),
        delta=float(osc_pair[1].omega - osc_pair[0].omega),
        omega_bar=float(w_bar),
        nbar=float(drive.nbar),
    )


def stiffness_rates(osc_pair: Sequence[OscillatorParams], nbar, delta_pc, kappa: float) -> np.ndarray:
    """Coupling rates of the equations of motion in zero-point units.

    With x_i = z_i / Z_HO,i the optical spring adds ``-R[..., i, j] x_j`` to
    the acceleration of oscillator i, where R_ij = 2 ω_i g_i g_j X and X is
    :func:`detuning_factor`.  Broadcasts over array-valued ``nbar`` and
    ``delta_pc``; the result has shape ``nbar.shape + (2, 2)``.
    """
    w = np.array([o.omega for o in osc_pair])
    g = np.array([o.g for o in osc_pair])
    x = detuning_factor(nbar, delta_pc, kappa)
    base = 2.0 * w[:, None] * np.outer(g, g)
    return x[..., None, None] * base


def effective_omegas(osc_pair: Sequence[OscillatorParams], nbar: float) -> np.ndarray:
    """Bare frequencies shifted by the quadratic coupling ω_q n̄."""
    return np.array([o.omega + o.omega_q * nbar for o in osc_pair])


def normal_modes(spring: SpringMatrix, osc_pair: Sequence[OscillatorParams]) -> NormalModes:
    """Solve the unequal-mass coupled-oscillator eigenproblem.

    The dynamical matrix M^-1/2 (diag(M ω²) - k) M^-1/2 is diagonalized,
    with ω including the quadratic-coupling shift at ``spring.nbar``.

    Raises
    ------
    Unstable
        If a squared eigenfrequency is not positive.
    """
    m = np.array([o.mass for o in osc_pair])
    w = effective_omegas(osc_pair, spring.nbar)
    dyn = np.diag(m * w * w) - spring.k
    s = 1.0 / np.sqrt(m)
    dyn = s[:, None] * dyn * s[None, :]
    vals, vecs = np.linalg.eigh(dyn)
    if vals[0] <= 0:
        raise Unstable(f"squared normal-mode frequency {vals[0]:.3e} is not positive")
    omegas = np.sqrt(vals)
    weights = vecs.T[::-1].copy()
    for row in weights:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    split = omegas[1] - omegas[0]
    increase = split - abs(w[1] - w[0])
    regime = "strong" if increase > abs(spring.delta) else "weak"
    return NormalModes(float(omegas[1]), float(omegas[0]), weights, regime)


def simplified_matrix(omega_bar: float, delta: float, k_over_m: float) -> np.ndarray:
    """Dynamical matrix of the equal-mass, equal-spring model.

    ``k_over_m`` is the stiffness per unit mass (positive stiffens).
    """
    return np.array(
        [
            [(omega_bar + delta / 2) ** 2 + k_over_m, k_over_m],
            [k_over_m, (omega_bar - delta / 2) ** 2 + k_over_m],
        ]
    )


def closed_form_eigenfrequencies(omega_bar: float, delta: float, k_over_m: float) -> tuple[float, float]:
    """Closed-form (ω₊, ω₋) of :func:`simplified_matrix`.

    Raises :class:`Unstable` when ω₋² is not positive.
    """
    root = np.hypot(k_over_m, delta * omega_bar)
    base = delta * delta / 4 + k_over_m + omega_bar * omega_bar
    wp2 = base + root
    # the difference of two nearly equal numbers is formed as a quotient
    # to keep full relative precision
    wm2 = (base * base - root * root) / wp2
    if wm2 <= 0:
        raise Unstable("squared normal-mode frequency is not positive")
    return float(np.sqrt(wp2)), float(np.sqrt(wm2))


def max_growth_rate(osc_pair: Sequence[OscillatorParams], drive: CavityDrive) -> float:
    """Largest real part of the first-moment drift eigenvalues (1/s)."""
    from .moments import drift_matrix

    return float(np.max(np.linalg.eigvals(drift_matrix(osc_pair, drive)).real))


def stability_boundary(
    osc_pair: Sequence[OscillatorParams],
    drive: CavityDrive,
    param: str = "nbar",
    lo: float = 0.0,
    hi: float = 100.0,
    n_grid: int = 201,
    rtol: float = 1e-10,
) -> float:
    """Locate where the linear dynamics first becomes unstable.

    ``param`` (``"nbar"`` or ``"delta_pc"``) is swept monotonically from
    ``lo`` to ``hi`` with the other drive settings fixed.  The first grid
    interval where the maximal real drift eigenvalue changes sign is refined
    by bisection.

    Raises
    ------
    NoBoundaryInRange
        If the system is stable over the whole range.
    """
    if param not in ("nbar", "delta_pc"):
        raise ValueError("param must be 'nbar' or 'delta_pc'")

    def rate(v: float) -> float:
        return max_growth_rate(osc_pair, drive.with_(**{param: v}))

    grid = np.linspace(lo, hi, n_grid)
    prev_v, prev_r = grid[0], rate(grid[0])
    if prev_r > 0:
        return float(prev_v)
    for v in grid[1:]:
        r = rate(v)
        if r > 0:
            a, b = prev_v, v
            while abs(b - a) > rtol * max(abs(a), abs(b), 1e-300):
                mid = 0.5 * (a + b)
                if rate(mid) > 0:
                    b = mid
                else:
                    a = mid
            return float(0.5 * (a + b))
        prev_v, prev_r = v, r
    raise NoBoundaryInRange(f"{param} in [{lo}, {hi}] is stable throughout")


def sweep(osc_pair: Sequence[OscillatorParams], drive: CavityDrive, deltas, nbars) -> list[dict]:
    """Spring constants and normal modes over a detuning / photon-number grid.

    Returns one row per (Δ_pc, n̄) pair with frequencies in Hz.
    """
    rows = []
    for nb in np.atleast_1d(nbars):
        for d in np.atleast_1d(deltas):
            sp = spring_constants(osc_pair, drive.with_(nbar=float(nb), delta_pc=float(d)))
            nm = normal_modes(sp, osc_pair)
            rows.append(
                {
                    "delta_pc_hz": float(d) / (2 * np.pi),
                    "nbar": float(nb),
                    "k11": sp.k[0, 0],
                    "k12": sp.k[0, 1],
                    "k22": sp.k[1, 1],
                    "omega_plus_hz": nm.omega_plus / (2 * np.pi),
                    "omega_minus_hz": nm.omega_minus / (2 * np.pi),
                    "w_plus_1": nm.weights[0, 0],
                    "w_plus_2": nm.weights[0, 1],
                    "w_minus_1": nm.weights[1, 0],
                    "w_minus_2": nm.weights[1, 1],
                }
            )
    return rows
