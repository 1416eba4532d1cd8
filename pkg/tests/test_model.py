import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optospring import model
from optospring.errors import ConfigError, ScheduleGap

ROOT = Path(__file__).resolve().parents[1]


def test_packaged_defaults_match_configs_copy():
    packaged = model.paper_defaults_dict()
    on_disk = json.loads((ROOT / "configs" / "paper_defaults.json").read_text())
    assert packaged == on_disk


def test_paper_defaults_values(cfg):
    o1, o2 = cfg.osc
    assert o1.omega == pytest.approx(model.TWO_PI * 110e3)
    assert o2.omega == pytest.approx(model.TWO_PI * 116.4e3)
    assert o1.mass == pytest.approx(1.30e-22)
    assert o2.omega_q == pytest.approx(model.TWO_PI * 208)
    assert cfg.drive.kappa == pytest.approx(model.TWO_PI * 1.82e6)
    assert cfg.drive.epsilon == 0.05


def test_roundtrip_exact(cfg, tmp_path):
    path = tmp_path / "c.json"
    model.save_config(cfg, path)
    back = model.load_config(path)
    a, b = model.config_to_dict(cfg), model.config_to_dict(back)
    assert a.keys() == b.keys()
    for o_a, o_b in zip(cfg.osc, back.osc):
        for name in ("omega", "gamma", "g", "mass", "nu_th", "omega_q"):
            assert getattr(o_b, name) == pytest.approx(getattr(o_a, name), rel=1e-12)
    assert back.drive.kappa == pytest.approx(cfg.drive.kappa, rel=1e-12)
    assert back.schedule.total == pytest.approx(cfg.schedule.total, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    f1=st.floats(50e3, 150e3),
    df=st.floats(1e3, 20e3),
    gamma=st.floats(100.0, 5e3),
    g=st.floats(1e3, 50e3),
    nbar=st.floats(0.0, 20.0),
    delta=st.floats(-3e6, 3e6),
)
def test_roundtrip_property(cfg, f1, df, gamma, g, nbar, delta):
    d = model.paper_defaults_dict()
    d["oscillators"][0].update(freq_hz=f1, gamma_hz=gamma, g_hz=g)
    d["oscillators"][1].update(freq_hz=f1 + df)
    d["drive"].update(nbar=nbar, delta_pc_hz=delta)
    c = model.config_from_dict(d)
    again = model.config_from_dict(model.config_to_dict(c))
    assert again.osc[0].omega == pytest.approx(c.osc[0].omega, rel=1e-12)
    assert again.osc[0].g == pytest.approx(c.osc[0].g, rel=1e-12)
    assert again.drive.delta_pc == pytest.approx(c.drive.delta_pc, rel=1e-12, abs=1e-9)


def test_field_level_errors_collected():
    d = model.paper_defaults_dict()
    d["oscillators"][0]["gamma_hz"] = -1.0
    d["drive"]["kappa_hz"] = 0.0
    with pytest.raises(ConfigError) as exc:
        model.config_from_dict(d)
    fields = [f for f, _ in exc.value.errors]
    assert any(f.startswith("oscillators[0].gamma") for f in fields)
    assert any(f.startswith("drive.kappa") for f in fields)


def test_oscillator_order_enforced(cfg):
    o1, o2 = cfg.osc
    with pytest.raises(ConfigError):
        cfg.replace(osc=(o2, o1))


def test_parameter_validation():
    with pytest.raises(ConfigError):
        model.OscillatorParams(omega=1.0, gamma=0.0, g=1.0, mass=1.0)
    with pytest.raises(ConfigError):
        model.CavityDrive(kappa=1.0, nbar=-1.0)
    with pytest.raises(ConfigError):
        model.CavityDrive(kappa=1.0, nbar=1.0, epsilon=1.5)


def test_schedule_drive_and_labels():
    sch = model.three_step_schedule(30e-6, excitation=None, excite_time=10e-6, readout_time=50e-6)
    labels = [s.label for s in sch.segments]
    assert labels == ["excite", "ramp_up", "couple", "ramp_down", "readout"]
    n, d = sch.drive_at(np.array([5e-6, 20e-6, 40e-6, 65e-6, 100e-6]))
    assert n[0] == 2.0 and d[0] == 0.0
    assert n[1] == pytest.approx(5.0)  # halfway up the ramp
    assert n[2] == 8.0 and d[2] == pytest.approx(model.TWO_PI * 1.4e6)
    assert n[4] == 2.0
    assert model.readout_start(sch) == pytest.approx(80e-6)


def test_tau_zero_has_no_pulse():
    sch = model.three_step_schedule(0.0, excite_time=10e-6, readout_time=50e-6)
    assert [s.label for s in sch.segments] == ["excite", "readout"]
    n, d = sch.drive_at(np.linspace(0, 60e-6, 50))
    assert np.all(n == 2.0) and np.all(d == 0.0)


def test_grid_step_divides_segments(cfg):
    dt = cfg.schedule.grid_step(1e-7)
    assert dt <= 1e-7 * (1 + 1e-12)
    for s in cfg.schedule.segments:
        assert abs(s.duration / dt - round(s.duration / dt)) < 1e-6


def test_grid_step_gap():
    sch = model.PulseSchedule((model.Segment(10.0005e-6, 1.0, 0.0),))
    with pytest.raises(ScheduleGap):
        sch.grid_step(1e-7)


def test_with_tau_c_preserves_settings(cfg):
    c = model.with_tau_c(cfg, 70e-6)
    couple = next(s for s in c.schedule.segments if s.label == "couple")
    assert couple.duration == pytest.approx(70e-6)
    assert couple.nbar == 8.0
    assert c.schedule.excitation == cfg.schedule.excitation


def test_cooperativity_and_zho(cfg):
    o = cfg.osc[0]
    d = cfg.drive
    assert model.cooperativity(o, d) == pytest.approx(4 * d.nbar * o.g ** 2 / (d.kappa * o.gamma))
    assert model.zho(o) == pytest.approx(np.sqrt(model.HBAR / (2 * o.mass * o.omega)))


def test_atom_number_helpers():
    n = model.atom_number_from_shift(model.cavity_shift_from_atoms(900.0, 1e7, 1e9), 1e7, 1e9)
    assert n == pytest.approx(900.0)
    with pytest.raises(ValueError):
        model.atom_number_from_shift(1.0, 0.0, 1e9)
    assert model.mass_from_atoms(900) == pytest.approx(900 * model.M_RB87)


def test_rng_streams_deterministic():
    a = [r.standard_normal(3) for r in model.rng_streams(5, 3, key=(1,))]
    b = [r.standard_normal(3) for r in model.rng_streams(5, 3, key=(1,))]
    c = [r.standard_normal(3) for r in model.rng_streams(5, 3, key=(2,))]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_ensemble_settings_validation(cfg):
    with pytest.raises(ConfigError):
        cfg.replace(ensemble=replace(cfg.ensemble, n_samples=0))
