import csv
import json

import numpy as np
import pytest

from optospring import cli, model


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_spring_command(tmp_path):
    assert cli.main(["spring", "--out", str(tmp_path), "--nbar", "5"]) == cli.EXIT_OK
    rows = _rows(tmp_path / "spring_sweep.csv")
    assert len(rows) == 41
    bound = json.loads((tmp_path / "stability.json").read_text())
    assert bound["nbar_boundary"] == pytest.approx(16.85, abs=0.02)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "spring"
    assert man["config_sha256"] == cli.config_hash(model.paper_defaults())
    assert set(man["files"]) == {"spring_sweep.csv", "stability.json"}


def test_fig2_peak_table(tmp_path):
    assert cli.main(["run", "fig2", "--out", str(tmp_path), "--format", "json"]) == cli.EXIT_OK
    rows = json.loads((tmp_path / "fig2_peaks.json").read_text())
    sep = [r["separation_hz"] for r in rows]
    assert np.all(np.diff(sep) > 0)
    assert all(r["height_high"] > r["height_low"] for r in rows if r["delta_pc_hz"] > 0)


def test_backaction_zero_pulse(tmp_path):
    assert cli.main(["backaction", "--out", str(tmp_path), "--tau-c", "0,30"]) == cli.EXIT_OK
    rows = _rows(tmp_path / "backaction.csv")
    assert abs(float(rows[0]["dnu1"])) < 1e-9 and abs(float(rows[0]["r"])) < 1e-9
    assert float(rows[1]["dnu2"]) > float(rows[1]["dnu1"])


def test_fig4_zero_coupling(tmp_path):
    assert cli.main(["run", "fig4", "--out", str(tmp_path), "--tau-c", "0", "--shots", "0"]) == cli.EXIT_OK
    (row,) = _rows(tmp_path / "fig4.csv")
    assert abs(float(row["theory_dnu1"])) < 1e-9
    assert abs(float(row["theory_r"])) < 1e-9


def test_pulse_endpoints(tmp_path):
    assert cli.main(["pulse", "--out", str(tmp_path), "--tau-c", "30,50"]) == cli.EXIT_OK
    data = json.loads((tmp_path / "endpoints.json").read_text())
    assert [r["tau_c"] for r in data["records"]] == pytest.approx([30e-6, 50e-6])
    assert len(_rows(tmp_path / "trace_tau_30us.csv")) > 1000


def test_analyze_endpoint_file(tmp_path):
    rng = np.random.default_rng(4)
    n = 800

    def cplx(scale):
        return [{"re": float(a), "im": float(b)} for a, b in scale * rng.standard_normal((2, 2))]

    recs = [{"z": cplx(2.0), "shot_ref": cplx(1.0)} for _ in range(n)]
    src = tmp_path / "endpoints.json"
    src.write_text(json.dumps({"records": recs}))
    assert cli.main(["analyze", str(src), "--out", str(tmp_path / "a")]) == cli.EXIT_OK
    st = json.loads((tmp_path / "a" / "ensemble_stats.json").read_text())
    assert st["n"] == n
    assert abs(st["r"]) < 4 / np.sqrt(n)
    assert len(_rows(tmp_path / "a" / "scatter.csv")) == n


def test_validate_reports(tmp_path, capsys):
    good = tmp_path / "good.json"
    model.save_config(model.paper_defaults(), good)
    assert cli.main(["validate", str(good)]) == cli.EXIT_OK
    assert json.loads(capsys.readouterr().out)["status"] == "valid"

    d = model.paper_defaults_dict()
    d["oscillators"][0]["gamma_hz"] = -5.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    assert cli.main(["validate", str(bad)]) == cli.EXIT_VALIDATION
    rep = json.loads(capsys.readouterr().out)
    assert any(e["field"] == "oscillators[0].gamma_hz" for e in rep["errors"])

    code, rep = cli.validate_report(_with_couple_nbar(30.0))
    assert code == cli.EXIT_OK
    assert rep["status"] == "valid_with_warnings"
    assert rep["warnings"][0]["field"].startswith("schedule.segments[")

    assert cli.main(["validate", str(tmp_path / "missing.json")]) == cli.EXIT_IO
    (tmp_path / "junk.json").write_text("{not json")
    assert cli.main(["validate", str(tmp_path / "junk.json")]) == cli.EXIT_VALIDATION


def _with_couple_nbar(nbar):
    d = model.paper_defaults_dict()
    for seg in d["schedule"]["segments"]:
        if seg.get("label") == "couple":
            seg["nbar"] = nbar
    return d


def test_exit_codes(tmp_path):
    bad = tmp_path / "unstable.json"
    bad.write_text(json.dumps(_with_couple_nbar(30.0)))
    assert cli.main(["pulse", "--config", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_UNSTABLE
    assert cli.main(["pulse", "--tau-c", "x", "--out", str(tmp_path / "o")]) == cli.EXIT_VALIDATION
    assert cli.main(["run", "custom", "--out", str(tmp_path / "o")]) == cli.EXIT_VALIDATION
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["spring", "--out", str(blocker / "sub")]) == cli.EXIT_IO


def test_run_is_deterministic(tmp_path, monkeypatch):
    outs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("OPTOSPRING_THREADS", threads)
        out = tmp_path / f"t{threads}"
        args = ["run", "fig3", "--out", str(out), "--tau-c", "0,30", "--samples", "8", "--seed", "7"]
        assert cli.main(args) == cli.EXIT_OK
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    for name in names:
        if name == "manifest.json":
            continue
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
