import numpy as np
import pytest

from optospring import model, spring
from optospring.errors import NoBoundaryInRange, Unstable
from optospring.model import TWO_PI


@pytest.fixture(scope="module")
def drive5(cfg):
    return cfg.drive.with_(nbar=5.0, delta_pc=TWO_PI * 1.4e6)


def test_spring_constants_frozen(osc, drive5):
    sp = spring.spring_constants(osc, drive5)
    assert sp.k[0, 1] == pytest.approx(-1.7760e-12, rel=1e-3)
    assert sp.k[0, 1] == sp.k[1, 0]
    assert np.all(sp.k < 0)


def test_blue_detuning_stiffens(osc, cfg):
    blue = spring.spring_constants(osc, cfg.drive.with_(nbar=5.0, delta_pc=TWO_PI * 1e6))
    red = spring.spring_constants(osc, cfg.drive.with_(nbar=5.0, delta_pc=-TWO_PI * 1e6))
    assert np.allclose(blue.k, -red.k)
    nm0 = spring.normal_modes(spring.spring_constants(osc, cfg.drive.with_(nbar=0.0)), osc)
    nm = spring.normal_modes(blue, osc)
    assert nm.omega_plus > nm0.omega_plus
    assert nm.omega_plus - nm.omega_minus > nm0.omega_plus - nm0.omega_minus


def test_detuning_factor_peaks_at_kappa():
    kappa = 1.0
    d = np.linspace(0.01, 5, 2001)
    x = spring.detuning_factor(1.0, d, kappa)
    assert d[np.argmax(x)] == pytest.approx(kappa, abs=5e-3)
    assert spring.detuning_factor(1.0, 0.0, kappa) == 0.0


def test_normal_modes_weights_orthonormal(osc, couple_drive):
    nm = spring.normal_modes(spring.spring_constants(osc, couple_drive), osc)
    assert np.allclose(nm.weights @ nm.weights.T, np.eye(2), atol=1e-12)
    assert nm.omega_plus > nm.omega_minus


def test_closed_form_matches_eigh(rng):
    worst = 0.0
    count = 0
    while count < 1000:
        wbar = TWO_PI * rng.uniform(20e3, 500e3)
        delta = TWO_PI * rng.uniform(-30e3, 30e3)
        kom = rng.uniform(-0.3, 0.3) * wbar ** 2
        mat = spring.simplified_matrix(wbar, delta, kom)
        vals = np.linalg.eigvalsh(mat)
        if vals[0] <= 0:
            continue
        wp, wm = spring.closed_form_eigenfrequencies(wbar, delta, kom)
        ref = np.sqrt(vals)
        worst = max(worst, abs(wp - ref[1]) / ref[1], abs(wm - ref[0]) / ref[0])
        count += 1
    assert worst < 1e-9


def test_zero_spring_gives_bare_split():
    wbar, delta = TWO_PI * 113.2e3, TWO_PI * 6.4e3
    wp, wm = spring.closed_form_eigenfrequencies(wbar, delta, 0.0)
    assert wp == wbar + abs(delta) / 2
    assert wm == wbar - abs(delta) / 2


def test_closed_form_unstable():
    with pytest.raises(Unstable):
        spring.closed_form_eigenfrequencies(1.0, 0.0, -0.6)


def test_normal_modes_unstable(osc, cfg):
    sp = spring.spring_constants(osc, cfg.drive.with_(nbar=5.0, delta_pc=TWO_PI * 1.4e6))
    huge = spring.SpringMatrix(k=-sp.k * 1e12, omega_coupling=0.0, delta=sp.delta, omega_bar=sp.omega_bar)
    with pytest.raises(Unstable):
        spring.normal_modes(huge, osc)


def test_stability_boundary(osc, couple_drive):
    nb = spring.stability_boundary(osc, couple_drive, "nbar", 0.0, 40.0)
    assert nb == pytest.approx(16.85, abs=0.02)
    assert spring.max_growth_rate(osc, couple_drive.with_(nbar=nb * 0.99)) < 0
    assert spring.max_growth_rate(osc, couple_drive.with_(nbar=nb * 1.01)) > 0


def test_no_boundary_in_range(osc, couple_drive):
    with pytest.raises(NoBoundaryInRange):
        spring.stability_boundary(osc, couple_drive, "nbar", 0.0, 5.0, n_grid=11)
    with pytest.raises(ValueError):
        spring.stability_boundary(osc, couple_drive, "kappa")


def test_stiffness_rates_broadcast(osc, cfg):
    nb = np.array([1.0, 2.0, 4.0])
    r = spring.stiffness_rates(osc, nb, TWO_PI * 1e6, cfg.drive.kappa)
    assert r.shape == (3, 2, 2)
    assert np.allclose(r[2], 4 * r[0])
    # rates are k / (M ω-scaled) in zero-point units
    sp = spring.spring_constants(osc, cfg.drive.with_(nbar=1.0, delta_pc=TWO_PI * 1e6))
    z = np.array([model.zho(o) for o in osc])
    m = np.array([o.mass for o in osc])
    expect = -sp.k * z[None, :] / (m[:, None] * z[:, None])
    assert np.allclose(r[0], expect, rtol=1e-10)


def test_sweep_rows(osc, cfg):
    rows = spring.sweep(osc, cfg.drive, TWO_PI * np.array([0.0, 1e6]), [2.0, 5.0])
    assert len(rows) == 4
    assert rows[0]["k12"] == 0.0
    assert rows[-1]["omega_plus_hz"] > rows[0]["omega_plus_hz"]
