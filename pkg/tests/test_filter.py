import numpy as np
import pytest
import scipy.optimize
from sklearn.base import clone
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler

from optospring import filter as mf
from optospring.ampmodel import sidebands_from_occupation
from optospring.errors import IllConditioned, InsufficientSamples, NegativeCorrectedVariance
from optospring.model import TWO_PI

OMEGAS = TWO_PI * np.array([110.2e3, 116.6e3])
GAMMAS = TWO_PI * np.array([1.5e3, 1.5e3])
DT = 130e-9


@pytest.fixture(scope="module")
def bank():
    return mf.TemplateBank.from_params(DT * np.arange(8000), OMEGAS, GAMMAS, scale=(2.0, 3.0))


def _signal(bank, a):
    return 2.0 * np.real(a @ bank.templates)


def test_exact_recovery(bank):
    a = np.array([0.7 - 0.2j, -0.3 + 0.45j])
    s = _signal(bank, a)
    full = bank.full_coefficients(s)
    assert np.allclose(full, np.r_[a, a.conj()], rtol=0, atol=1e-10)
    design = np.concatenate([bank.templates, bank.templates.conj()]).T
    ls, *_ = np.linalg.lstsq(design, s.astype(complex), rcond=None)
    # trapezoid and uniform weights agree on a noiseless, exactly representable trace
    assert np.allclose(ls, full, atol=1e-10)
    assert np.allclose(bank.coefficients(s) / bank.scale, a / bank.scale, atol=1e-10)


def test_gram_correction_needed(bank):
    a = np.array([1.0, 0.5j])
    s = _signal(bank, a)
    w = np.full(bank.t.size, DT)
    naive = (bank.templates.conj() * w) @ s / np.real(np.diag(bank.gram))
    assert np.max(np.abs(naive - a)) > 1e-3


def test_ill_conditioned():
    t = DT * np.arange(2000)
    with pytest.raises(IllConditioned):
        mf.TemplateBank.from_params(t, [OMEGAS[0], OMEGAS[0]], GAMMAS)
    with pytest.raises(ValueError):
        mf.TemplateBank.from_params(t[:1], OMEGAS, GAMMAS)


def test_agrees_with_time_domain_fit(bank):
    amps, phases = np.array([1.3, 0.6]), np.array([0.4, -2.1])
    t = bank.t
    s = sum(A * np.exp(-0.5 * g * t) * np.cos(w * t + p) for A, g, w, p in zip(amps, GAMMAS, OMEGAS, phases))

    def model(tt, A1, p1, w1, g1, A2, p2, w2, g2):
        return A1 * np.exp(-0.5 * g1 * tt) * np.cos(w1 * tt + p1) + A2 * np.exp(-0.5 * g2 * tt) * np.cos(w2 * tt + p2)

    guess = [1.2, 0.3, OMEGAS[0] * (1 + 1e-4), GAMMAS[0] * 1.05, 0.7, -2.0, OMEGAS[1] * (1 - 1e-4), GAMMAS[1] * 0.95]
    popt, _ = scipy.optimize.curve_fit(model, t, s, p0=guess, maxfev=20000)
    fit_a = np.array([popt[0], popt[4]]) * np.exp(1j * np.array([popt[1], popt[5]])) / 2
    alpha = bank.coefficients(s)
    assert np.abs(alpha) == pytest.approx(np.abs(fit_a), rel=1e-3)
    assert np.angle(alpha) == pytest.approx(np.angle(fit_a), abs=1e-3)


def test_noiseless_reference_vanishes(bank):
    s = _signal(bank, np.array([2.0 + 1j, -1.5j]))
    assert np.max(np.abs(mf.shot_reference(s, bank))) < 1e-8
    with pytest.raises(ValueError):
        mf.shot_reference(s, bank, offset=GAMMAS[0])


@pytest.fixture(scope="module")
def noise_only(bank):
    rng = np.random.default_rng(5)
    return rng.standard_normal((4000, bank.t.size)) / np.sqrt(DT)


def test_noise_covariance_and_reference_level(bank, noise_only):
    z, ref = mf.match_many(noise_only, bank)
    pred = np.real(np.diag(bank.noise_covariance()))
    emp = np.mean(np.abs(z) ** 2, axis=0)
    assert emp == pytest.approx(pred, rel=0.06)
    emp_ref = np.mean(np.abs(ref) ** 2, axis=0)
    assert emp_ref == pytest.approx(pred, rel=0.06)
    # each quadrature carries half of the variance
    assert np.var(z.real, axis=0) == pytest.approx(0.5 * pred, rel=0.08)


def test_noise_variance_scales_with_window():
    # undamped templates: estimator variance falls as 1/T
    g = np.array([1e-3, 1e-3])
    v = []
    for n in (4000, 8000):
        b = mf.TemplateBank.from_params(DT * np.arange(n), OMEGAS, g)
        v.append(np.real(np.diag(b.noise_covariance())))
    assert v[0] / v[1] == pytest.approx(np.full(2, 8000 / 4000), rel=0.02)


def test_unbiased_and_additive(bank):
    rng = np.random.default_rng(11)
    n = 4000
    a0 = np.array([1.0 + 0.5j, -0.4j])
    sig_var = np.array([0.3, 0.8])
    inc = (rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))) * np.sqrt(sig_var / 2)
    amps = (a0 + inc) * bank.scale
    s = 2.0 * np.real(amps @ bank.templates) + rng.standard_normal((n, bank.t.size)) / np.sqrt(DT)
    z, ref = mf.match_many(s, bank)
    noise = np.real(np.diag(bank.noise_covariance()))
    se = np.sqrt((sig_var + noise) / n)
    assert np.all(np.abs(z.mean(axis=0) - a0) < 4 * se)
    total = np.mean(np.abs(z - z.mean(axis=0)) ** 2, axis=0)
    assert total == pytest.approx(sig_var + noise, rel=0.06)


def _correlated_ensemble(rng, n, r, var=(1.0, 2.0), shot=0.5):
    cov = np.array([[var[0], r * np.sqrt(var[0] * var[1])], [r * np.sqrt(var[0] * var[1]), var[1]]])
    L = np.linalg.cholesky(cov)
    re = rng.standard_normal((n, 2)) @ L.T
    im = rng.standard_normal((n, 2)) @ L.T
    z = np.sqrt(0.5) * (re + 1j * im)
    noise = np.sqrt(0.5 * shot) * (rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2)))
    ref = np.sqrt(0.5 * shot) * (rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2)))
    return z + noise, ref


def test_correlation_injection_recovered():
    rng = np.random.default_rng(2)
    z, s = _correlated_ensemble(rng, 10000, 0.176)
    zr, sr = _correlated_ensemble(rng, 10000, 0.0)
    st = mf.ensemble_stats((z, s), sidebands_from_occupation(2.0), reference=(zr, sr))
    lo, hi = st.r_interval
    assert lo < st.r < hi
    assert abs(st.r - 0.176) < 2 * (hi - lo) / 2
    assert np.all(np.abs(st.control) < 3 * st.control_band)


def test_no_added_phonons_without_change():
    rng = np.random.default_rng(8)
    z, s = _correlated_ensemble(rng, 5000, 0.0)
    zr, sr = _correlated_ensemble(rng, 5000, 0.0)
    st = mf.ensemble_stats((z, s), sidebands_from_occupation(2.0), reference=(zr, sr))
    assert np.all(np.abs(st.delta_nu) < 3 * st.delta_nu_se)


def test_added_phonons_from_area_ratio():
    rng = np.random.default_rng(9)
    z, s = _correlated_ensemble(rng, 20000, 0.0, var=(1.5, 3.0))
    zr, sr = _correlated_ensemble(rng, 20000, 0.0, var=(1.0, 2.0))
    st = mf.ensemble_stats((z, s), sidebands_from_occupation(2.0), reference=(zr, sr))
    assert st.delta_nu == pytest.approx([1.0, 1.0], abs=4 * st.delta_nu_se.max())


def test_ensemble_stats_errors():
    rng = np.random.default_rng(1)
    z, s = _correlated_ensemble(rng, 50, 0.0)
    with pytest.raises(InsufficientSamples):
        mf.ensemble_stats((z[:1], s[:1]), sidebands_from_occupation(1.0))
    with pytest.raises(NegativeCorrectedVariance):
        mf.ensemble_stats((z, 10 * s), sidebands_from_occupation(1.0))
    recs = [mf.QuadratureRecord(zz, ss, i) for i, (zz, ss) in enumerate(zip(z, s))]
    a = mf.ensemble_stats(recs, sidebands_from_occupation(1.0))
    b = mf.ensemble_stats((z, s), sidebands_from_occupation(1.0))
    assert a.r == b.r
    with pytest.raises(ValueError):
        mf.QuadratureRecord(np.array([np.nan, 0]), np.zeros(2))


def test_transformer_interface(bank):
    est = mf.MatchedFilter(omegas=tuple(OMEGAS), gammas=tuple(GAMMAS), dt=DT, scale=(2.0, 3.0))
    assert clone(est).get_params() == est.get_params()
    a = np.array([0.7 - 0.2j, -0.3 + 0.45j])
    X = np.stack([_signal(bank, a), _signal(bank, 2 * a)])
    out = est.fit_transform(X)
    assert out.shape == (2, 4)
    z = a / bank.scale
    assert np.allclose(out[0], [z[0].real, z[0].imag, z[1].real, z[1].imag], atol=1e-10)
    pipe = Pipeline([("mf", clone(est).set_params(with_reference=True)), ("scale", StandardScaler())])
    assert pipe.fit_transform(X).shape == (2, 8)
    with pytest.raises(ValueError):
        est.transform(X[:, :100])


def test_bank_for_config_window(cfg):
    b = mf.TemplateBank.for_config(cfg, 100e-9 * np.arange(20000))
    assert b.duration == pytest.approx(5 * 2 / max(o.gamma for o in cfg.osc), abs=1e-7)
    assert np.all(b.scale > 0)


def test_sample_incoherent_moments(rng):
    N = np.array([[2.0, 0.5 + 0.2j], [0.5 - 0.2j, 3.0]])
    M = np.zeros((2, 2), complex)
    db = mf.sample_incoherent(N, M, 200000, rng)
    emp = np.einsum("ni,nj->ij", db.conj(), db) / db.shape[0]
    assert np.allclose(emp, N, atol=0.03)
