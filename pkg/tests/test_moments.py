from dataclasses import replace

import numpy as np
import pytest
from scipy.sparse.linalg import expm_multiply

from optospring import model, moments
from optospring.errors import DegenerateVariance, StepTooCoarse
from optospring.model import TWO_PI

FIG4_TAUS = np.arange(10e-6, 201e-6, 10e-6)


def _rk4_moments(H, A, B, beta, N, M, T, n):
    dt = T / n
    for _ in range(n):
        y = (beta, N, M)
        k1 = moments._rhs(H, A, B, *y)
        k2 = moments._rhs(H, A, B, *[u + dt / 2 * k for u, k in zip(y, k1)])
        k3 = moments._rhs(H, A, B, *[u + dt / 2 * k for u, k in zip(y, k2)])
        k4 = moments._rhs(H, A, B, *[u + dt * k for u, k in zip(y, k3)])
        beta, N, M = [u + dt / 6 * (a + 2 * b + 2 * c + d) for u, a, b, c, d in zip(y, k1, k2, k3, k4)]
    return beta, N, M


def _fock_oracle(H, A, B, alpha, T, nf=7):
    """Evolve a two-mode coherent state with the full Lindbladian in a truncated Fock space."""
    a = np.diag(np.sqrt(np.arange(1, nf)), 1)
    eye = np.eye(nf)
    b = [np.kron(a, eye), np.kron(eye, a)]
    bd = [x.conj().T for x in b]
    hop = sum(H[k, l] * bd[k] @ b[l] for k in range(2) for l in range(2))
    c = b + bd
    h = np.zeros((4, 4), complex)
    h[:2, :2] = A
    h[2:, 2:] = B
    d = nf * nf
    idd = np.eye(d)
    # row-major vectorization: vec(X r Y) = kron(X, Y.T) vec(r)
    L = -1j * (np.kron(hop, idd) - np.kron(idd, hop.T))
    for i in range(4):
        for j in range(4):
            if h[i, j] == 0:
                continue
            cc = c[j].conj().T @ c[i]
            L += h[i, j] * (np.kron(c[i], c[j].conj()) - 0.5 * np.kron(cc, idd) - 0.5 * np.kron(idd, cc.T))

    def coh(al):
        v = np.array([al ** n / np.sqrt(float(np.prod(range(1, n + 1)))) for n in range(nf)])
        return v / np.linalg.norm(v)

    psi = np.kron(coh(alpha[0]), coh(alpha[1]))
    rho = expm_multiply(L * T, np.outer(psi, psi.conj()).reshape(-1)).reshape(d, d)
    ex = lambda op: np.trace(op @ rho)  # noqa: E731
    beta = np.array([ex(x) for x in b])
    N = np.array([[ex(bd[k] @ b[l]) for l in range(2)] for k in range(2)])
    M = np.array([[ex(b[k] @ b[l]) for l in range(2)] for k in range(2)])
    return beta, N, M


def test_moment_equations_match_fock_space():
    rng = np.random.default_rng(1)

    def herm(psd=False):
        x = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        return x @ x.conj().T * 0.1 if psd else (x + x.conj().T) / 2

    H, A, B = herm(), herm(True), herm(True) * 0.3
    alpha = np.array([0.3 + 0.2j, -0.2j])
    T = 0.3
    got = _rk4_moments(H, A, B, alpha, np.outer(alpha.conj(), alpha), np.outer(alpha, alpha), T, 3000)
    ref = _fock_oracle(H, A, B, alpha, T)
    for g, r in zip(got, ref):
        # truncation at 7 Fock levels limits agreement
        assert np.allclose(g, r, atol=2e-4)


def test_thermal_relaxation_exact(cfg):
    osc = tuple(replace(o, g=0.0) for o in cfg.osc)
    start = moments.MomentState.thermal(5.0, 0.2)
    ts = np.linspace(0, 400e-6, 9)
    worst = 0.0
    state = start
    for t0, t1 in zip(ts[:-1], ts[1:]):
        state = moments.evolve(state, osc, cfg.drive, t1 - t0, t0=t0)
        exact = np.array(
            [o.nu_th + (n0 - o.nu_th) * np.exp(-o.gamma * t1) for o, n0 in zip(osc, start.occ)]
        )
        worst = max(worst, float(np.max(np.abs(state.occ - exact))))
    assert worst < 1e-6


def test_steady_state_is_fixed_point(osc, couple_drive):
    ss = moments.steady_state(osc, couple_drive)
    later = moments.evolve(ss, osc, couple_drive, 20e-6)
    # the cross moment rotates at ω₁-ω₂ in the co-rotating frame
    expect = moments.steady_state(osc, couple_drive, tau=20e-6)
    assert np.allclose(later.N, expect.N, atol=1e-8)
    assert ss.is_physical()


def test_steady_state_without_coupling_is_thermal(cfg):
    ss = moments.steady_state(cfg.osc, cfg.drive.with_(nbar=0.0))
    assert np.allclose(ss.occ, [o.nu_th for o in cfg.osc])
    assert abs(ss.cross) < 1e-12


def test_uncertainty_bound():
    assert moments.MomentState.thermal(0.0, 0.0).is_physical()
    bad = moments.MomentState.from_arrays(np.zeros(2), np.diag([0.1, 0.1]), np.array([[0.5, 0], [0, 0.5]]))
    assert not bad.is_physical()
    assert not moments.MomentState.thermal(-0.1, 0.0).is_physical()


def test_coherent_state_mean_subtraction():
    st = moments.MomentState.coherent([1 + 1j, 0.5], occ_incoherent=(0.3, 0.7))
    assert np.allclose(st.incoherent_occupation(), [0.3, 0.7])
    assert st.is_physical()


def test_step_too_coarse(osc, couple_drive):
    with pytest.raises(StepTooCoarse):
        moments.evolve(moments.MomentState.thermal(1, 1), osc, couple_drive, 20e-6, dt=10e-6)


def test_zero_pulse_gives_nothing(cfg):
    sch = model.with_tau_c(cfg, 0.0).schedule
    (res,) = moments.pulse_series(cfg.osc, cfg.drive.kappa, [sch], [0.0])
    assert np.allclose(res.dnu, 0.0, atol=1e-12)
    assert abs(res.r) < 1e-10


@pytest.fixture(scope="module")
def fig4(cfg):
    taus = [30e-6, *FIG4_TAUS]
    return moments.pulse_series(cfg.osc, cfg.drive.kappa, [model.with_tau_c(cfg, t).schedule for t in taus], taus)


def test_fig4_frozen_numbers(fig4):
    assert fig4[0].dnu == pytest.approx([0.389645, 1.308419], rel=1e-4)
    assert fig4[0].r == pytest.approx(0.112907, rel=1e-4)
    assert np.mean([r.r for r in fig4[1:]]) == pytest.approx(0.174392, rel=1e-4)


def test_fig4_physical_and_ordered(fig4):
    for res in fig4:
        assert res.state.is_physical()
        assert res.dnu[1] > res.dnu[0]


def test_fig4_dt_convergence(cfg, fig4):
    taus = [30e-6, 200e-6]
    half = moments.pulse_series(
        cfg.osc, cfg.drive.kappa, [model.with_tau_c(cfg, t).schedule for t in taus], taus, dt=25e-9
    )
    assert half[0].dnu == pytest.approx(fig4[0].dnu, rel=5e-3)
    assert half[1].r == pytest.approx(fig4[-1].r, rel=5e-3)


def test_correlation_degenerate():
    with pytest.raises(DegenerateVariance):
        moments.correlation(moments.MomentState.thermal(0.0, 1.0))


def test_drift_stable_for_probe(cfg):
    d = moments.drift_matrix(cfg.osc, cfg.drive)
    assert np.all(np.linalg.eigvals(d).real < 0)
    assert moments.rwa_ratio(cfg.osc, cfg.drive.with_(nbar=8.0, delta_pc=TWO_PI * 1.4e6)) > 50
