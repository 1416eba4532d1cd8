"""Command-line entry point.

Every command reads a configuration (built-in defaults unless ``--config`` is
given), writes plot-ready CSV or JSON files into ``--out`` and records a
``manifest.json`` next to them.  Exit codes: 0 success, 1 invalid input,
2 unstable configuration, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, OptospringError, Unstable
from .model import (
    TWO_PI,
    SystemConfig,
    config_from_dict,
    config_to_dict,
    paper_defaults,
    readout_start,
    with_tau_c,
)

log = logging.getLogger("optospring")

EXIT_OK, EXIT_VALIDATION, EXIT_UNSTABLE, EXIT_IO = 0, 1, 2, 3

FIG2_DELTAS_HZ = 0.2e6 * np.arange(8)
FIG2_NBAR = 5.0
FIG3_TAUS = np.arange(0.0, 111e-6, 10e-6)
FIG4_TAUS = np.arange(10e-6, 201e-6, 10e-6)
SERIES_OFFSET = 3.0


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def write_table(path: Path, rows: list[dict], fmt: str) -> Path:
    """Write rows as CSV or JSON (the suffix of ``path`` is replaced)."""
    path = path.with_suffix("." + fmt)
    if fmt == "json":
        return write_json(path, rows)
    with path.open("w", newline="") as fh:
        if not rows:
            return path
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def config_hash(cfg: SystemConfig) -> str:
    text = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(out: Path, command: str, cfg: SystemConfig, started: float, files: Sequence[Path], extra=None) -> Path:
    import scipy
    import sklearn

    data = {
        "command": command,
        "config_sha256": config_hash(cfg),
        "seed": cfg.rng_seed,
        "versions": {
            "optospring": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
        },
        "wall_time_s": round(time.time() - started, 3),
        "files": sorted(p.name for p in files),
    }
    if extra:
        data.update(extra)
    return write_json(out / "manifest.json", data)


def _parse_taus(text: str | None, default) -> list[float]:
    """Comma list of τ_c in microseconds."""
    if text is None:
        return [float(t) for t in default]
    try:
        vals = [float(x) * 1e-6 for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError([("--tau-c", f"not a comma-separated list of numbers: {text!r}")]) from exc
    if not vals or any(v < 0 for v in vals):
        raise ConfigError([("--tau-c", "values must be non-negative")])
    return vals


def _load(args) -> SystemConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except OSError:
            raise
        except json.JSONDecodeError as exc:
            raise ConfigError([("<file>", f"invalid JSON: {exc}")]) from exc
        cfg = config_from_dict(data)
    else:
        cfg = paper_defaults()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(rng_seed=int(args.seed))
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_spring(args, cfg, out) -> list[Path]:
    from .spring import stability_boundary, sweep

    deltas = TWO_PI * np.linspace(-2.0e6, 2.0e6, 41)
    nbars = [float(x) for x in (args.nbar.split(",") if args.nbar else ["2", "5", "8"])]
    rows = []
    for nb in nbars:
        for d in deltas:
            try:
                rows.extend(sweep(cfg.osc, cfg.drive, [d], [nb]))
            except Unstable:
                log.info("skipping unstable point nbar=%g delta=%g Hz", nb, d / TWO_PI)
    files = [write_table(out / "spring_sweep", rows, args.format)]
    bound = stability_boundary(cfg.osc, cfg.drive.with_(delta_pc=TWO_PI * 1.4e6), "nbar", 0.0, 100.0)
    files.append(write_json(out / "stability.json", {"delta_pc_hz": 1.4e6, "nbar_boundary": bound}))
    return files


def fig2_outputs(cfg, out, fmt, series: bool = True) -> list[Path]:
    from .ampmodel import default_grid, fig2_series

    freqs = default_grid(cfg.osc)
    res = fig2_series(cfg.osc, cfg.drive, TWO_PI * FIG2_DELTAS_HZ, nbar=FIG2_NBAR, freqs=freqs)
    spec_rows = []
    for i, f in enumerate(freqs):
        row = {"freq_hz": f / TWO_PI}
        for k, r in enumerate(res):
            off = SERIES_OFFSET * k if series else 0.0
            row[f"psd_{r['delta_pc'] / TWO_PI / 1e3:.0f}khz"] = r["spectrum"].psd[i] + off
        spec_rows.append(row)
    peak_rows = []
    for r in res:
        fit = r["fit"]
        lo, hi = sorted(fit["centers"])
        peak_rows.append(
            {
                "delta_pc_hz": r["delta_pc"] / TWO_PI,
                "peak_low_hz": lo / TWO_PI,
                "peak_high_hz": hi / TWO_PI,
                "separation_hz": (hi - lo) / TWO_PI,
                "height_low": fit["heights"][int(np.argmin(fit["centers"]))],
                "height_high": fit["heights"][int(np.argmax(fit["centers"]))],
                "mode_minus_hz": r["modes"].omega_minus / TWO_PI,
                "mode_plus_hz": r["modes"].omega_plus / TWO_PI,
            }
        )
    return [write_table(out / "fig2_spectra", spec_rows, fmt), write_table(out / "fig2_peaks", peak_rows, fmt)]


def cmd_spectrum(args, cfg, out) -> list[Path]:
    if args.series:
        return fig2_outputs(cfg, out, args.format, series=True)
    from .ampmodel import default_grid, steady_spectrum

    freqs = default_grid(cfg.osc)
    spec = steady_spectrum(cfg, freqs)
    rows = [{"freq_hz": f / TWO_PI, "psd": p} for f, p in zip(freqs, spec.psd)]
    return [write_table(out / "spectrum", rows, args.format)]


def pulse_outputs(cfg, out, fmt, taus) -> tuple[list[Path], dict]:
    from .dynamics import display_filter, simulate
    from .filter import TemplateBank, match

    files = []
    endpoints = []
    streams = np.random.SeedSequence(cfg.rng_seed).spawn(len(taus))
    for tc, ss in zip(taus, streams):
        c = with_tau_c(cfg, tc)
        tr = simulate(c, rng=np.random.default_rng(ss))
        center = 0.5 * (c.osc[0].omega + c.osc[1].omega)
        disp = display_filter(tr.het, tr.dt, center)
        tag = f"{tc * 1e6:.0f}us"
        rows = [
            {"t": t, "z1": a, "z2": b, "het": h, "het_display": d}
            for t, a, b, h, d in zip(tr.t, tr.z1, tr.z2, tr.het, disp)
        ]
        files.append(write_table(out / f"trace_tau_{tag}", rows, fmt))
        t_ro, _ = tr.readout()
        bank = TemplateBank.for_config(c, t_ro - tr.readout_start)
        rec = match(tr, bank)
        endpoints.append({"tau_c": tc, "z": rec.z, "shot_ref": rec.shot_ref, "readout_start": tr.readout_start})
    data = {"records": endpoints, "dt": tr.dt}
    files.append(write_json(out / "endpoints.json", data))
    return files, data


def cmd_pulse(args, cfg, out) -> list[Path]:
    taus = _parse_taus(args.tau_c, [_couple_tau(cfg)])
    files, _ = pulse_outputs(cfg, out, args.format, taus)
    return files


def _couple_tau(cfg) -> float:
    for s in cfg.schedule.segments:
        if s.label == "couple":
            return s.duration
    return 0.0


def backaction_rows(cfg, taus) -> list[dict]:
    from .moments import pulse_series

    schedules = [with_tau_c(cfg, t).schedule for t in taus]
    res = pulse_series(cfg.osc, cfg.drive.kappa, schedules, taus)
    return [
        {"tau_c_us": r.tau_c * 1e6, "dnu1": r.dnu[0], "dnu2": r.dnu[1], "r": r.r, "physical": r.state.is_physical()}
        for r in res
    ]


def cmd_backaction(args, cfg, out) -> list[Path]:
    default = FIG4_TAUS if args.fig4 else [_couple_tau(cfg)]
    rows = backaction_rows(cfg, _parse_taus(args.tau_c, default))
    files = [write_table(out / "backaction", rows, args.format)]
    rs = [r["r"] for r in rows]
    files.append(write_json(out / "backaction_summary.json", {"mean_r": float(np.mean(rs)), "n_tau": len(rows)}))
    return files


def _read_trace_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with path.open() as fh:
        rd = csv.DictReader(fh)
        t, h = [], []
        for row in rd:
            t.append(float(row["t"]))
            h.append(float(row["het"]))
    return np.array(t), np.array(h)


def cmd_analyze(args, cfg, out) -> list[Path]:
    from .ampmodel import sidebands_from_occupation
    from .filter import QuadratureRecord, TemplateBank, ensemble_stats, match
    from .filter import readout_drive
    from .moments import steady_state

    records = []
    for k, name in enumerate(args.inputs):
        path = Path(name)
        if path.suffix == ".json":
            data = json.loads(path.read_text())
            for i, r in enumerate(data["records"]):
                z = np.array([complex(v["re"], v["im"]) for v in r["z"]])
                s = np.array([complex(v["re"], v["im"]) for v in r["shot_ref"]])
                records.append(QuadratureRecord(z, s, len(records)))
        else:
            t, h = _read_trace_csv(path)
            t0 = readout_start(cfg.schedule)
            sel = t >= t0 - 0.5 * (t[1] - t[0])
            bank = TemplateBank.for_config(cfg, t[sel] - t[sel][0])
            records.append(match(h[sel], bank, shot_id=len(records)))
    n_ref = steady_state(cfg.osc, readout_drive(cfg)).incoherent_occupation()
    sbs = tuple(sidebands_from_occupation(float(v)) for v in n_ref)
    st = ensemble_stats(records, sbs)
    summary = {
        "n": st.n,
        "mean": st.mean,
        "ellipse_signal": st.ellipse_signal,
        "ellipse_shot": st.ellipse_shot,
        "a_rd": st.a_rd,
        "a_ref": st.a_ref,
        "delta_nu": st.delta_nu,
        "r": st.r,
        "r_interval": st.r_interval,
        "control": st.control,
        "control_band": st.control_band,
    }
    rows = [
        {"shot_id": r.shot_id, "re_z1": r.z[0].real, "im_z1": r.z[0].imag, "re_z2": r.z[1].real, "im_z2": r.z[1].imag}
        for r in records
    ]
    return [write_json(out / "ensemble_stats.json", summary), write_table(out / "scatter", rows, "csv")]


def fig3_outputs(cfg, out, fmt, taus, n_samples=None) -> list[Path]:
    from .dynamics import exchange_ladder, fit_exchange, monte_carlo

    lad = exchange_ladder(cfg, taus)
    rows = [{"tau_c_us": t * 1e6, "transfer": f} for t, f in zip(lad["tau_c"], lad["transfer"])]
    files = [write_table(out / "fig3_transfer", rows, fmt)]
    if len(taus) >= 4:
        files.append(write_json(out / "fig3_exchange_fit.json", fit_exchange(lad["tau_c"], lad["transfer"])))
    files += pulse_outputs(cfg, out, fmt, taus)[0]
    mc = monte_carlo(cfg, taus, n_samples=n_samples)
    band_rows = []
    for i, t in enumerate(mc.tau_c):
        for j in range(2):
            c = mc.covariance[i, j]
            band_rows.append(
                {
                    "tau_c_us": t * 1e6,
                    "oscillator": j + 1,
                    "mean_re": mc.mean_trajectory[i, j].real,
                    "mean_im": mc.mean_trajectory[i, j].imag,
                    "cov_re_re": c[0, 0],
                    "cov_re_im": c[0, 1],
                    "cov_im_im": c[1, 1],
                    "area": mc.area[i, j],
                }
            )
    files.append(write_table(out / "fig3_montecarlo", band_rows, fmt))
    files.append(write_json(out / "fig3_montecarlo_meta.json", {"discard_fraction": mc.discard_fraction, "n_samples": mc.endpoints.shape[1]}))
    return files


def fig4_outputs(cfg, out, fmt, taus, shots) -> list[Path]:
    from .filter import synthetic_measurement

    theory = backaction_rows(cfg, taus)
    rows = []
    for th in theory:
        tc = th["tau_c_us"] * 1e-6
        row = {"tau_c_us": th["tau_c_us"], "theory_dnu1": th["dnu1"], "theory_dnu2": th["dnu2"], "theory_r": th["r"]}
        if shots > 0:
            run = synthetic_measurement(cfg, tc, n_shots=shots)
            s = run.stats
            row.update(
                {
                    "synthetic_dnu1": s.delta_nu[0],
                    "synthetic_dnu2": s.delta_nu[1],
                    "synthetic_dnu1_se": s.delta_nu_se[0],
                    "synthetic_dnu2_se": s.delta_nu_se[1],
                    "synthetic_r": s.r,
                    "synthetic_r_lo": s.r_interval[0],
                    "synthetic_r_hi": s.r_interval[1],
                }
            )
        rows.append(row)
    files = [write_table(out / "fig4", rows, fmt)]
    files.append(write_json(out / "fig4_summary.json", {"mean_theory_r": float(np.mean([r["theory_r"] for r in rows])), "shots": shots}))
    return files


def cmd_run(args, cfg, out) -> list[Path]:
    name = args.scenario
    if name == "custom" and not args.config:
        raise ConfigError([("--config", "the custom scenario requires an explicit configuration")])
    if name == "fig2":
        return fig2_outputs(cfg, out, args.format)
    if name == "fig3":
        return fig3_outputs(cfg, out, args.format, _parse_taus(args.tau_c, FIG3_TAUS), args.samples)
    if name == "fig4":
        taus = _parse_taus(args.tau_c, FIG4_TAUS)
        return fig4_outputs(cfg, out, args.format, taus, args.shots)
    taus = _parse_taus(args.tau_c, [_couple_tau(cfg)])
    files = pulse_outputs(cfg, out, args.format, taus)[0]
    files.append(write_table(out / "backaction", backaction_rows(cfg, taus), args.format))
    return files


def validate_report(data: dict) -> tuple[int, dict]:
    """Structured validation report of a raw configuration dictionary."""
    from .dynamics import check_schedule_stable

    try:
        cfg = config_from_dict(data)
    except ConfigError as exc:
        return EXIT_VALIDATION, {"status": "invalid", "errors": [{"field": f, "message": m} for f, m in exc.errors]}
    warnings = []
    sch = cfg.schedule
    for i, seg in enumerate(sch.segments):
        sub = type(sch)((seg,), None, seg.nbar, seg.delta_pc)
        try:
            check_schedule_stable(cfg.osc, cfg.drive.kappa, sub)
        except Unstable:
            warnings.append(
                {"field": f"schedule.segments[{i}]", "message": f"segment {seg.label or i} exceeds the stability boundary"}
            )
    return EXIT_OK, {"status": "valid" if not warnings else "valid_with_warnings", "errors": [], "warnings": warnings}


def cmd_validate(args) -> int:
    path = Path(args.path)
    try:
        text = path.read_text()
    except OSError as exc:
        print(json.dumps({"status": "io_error", "message": str(exc)}))
        return EXIT_IO
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        print(json.dumps({"status": "invalid", "errors": [{"field": "<file>", "message": str(exc)}]}))
        return EXIT_VALIDATION
    code, report = validate_report(data)
    print(json.dumps(report, indent=2))
    return code


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration JSON (default: built-in defaults)")
    common.add_argument("--seed", type=int, help="override the configuration seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="format of tabular outputs")
    common.add_argument("--tau-c", dest="tau_c", help="comma list of coupling durations in microseconds")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="optospring", description="Optical-spring coupling of two mechanical oscillators.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spring", parents=[common], help="spring constants and normal modes versus detuning")
    s.add_argument("--nbar", help="comma list of photon numbers (default 2,5,8)")
    s = sub.add_parser("spectrum", parents=[common], help="steady-state heterodyne spectra")
    s.add_argument("--series", action="store_true", help="detuning series with offset traces")
    sub.add_parser("pulse", parents=[common], help="simulate the pulse protocol and filter the readout")
    s = sub.add_parser("backaction", parents=[common], help="moment predictions of heating and correlations")
    s.add_argument("--fig4", action="store_true", help="use the 10-200 us coupling ladder")
    s = sub.add_parser("analyze", parents=[common], help="ensemble statistics of traces or endpoint files")
    s.add_argument("inputs", nargs="+", help="trace CSV files or endpoint JSON files")
    s = sub.add_parser("run", parents=[common], help="run a figure scenario")
    s.add_argument("scenario", choices=("fig2", "fig3", "fig4", "custom"))
    s.add_argument("--samples", type=int, default=None, help="Monte-Carlo samples for fig3")
    s.add_argument("--shots", type=int, default=2000, help="synthetic shots per coupling duration for fig4 (0 disables)")
    s = sub.add_parser("validate", help="check a configuration file")
    s.add_argument("path")
    return p


COMMANDS = {
    "spring": cmd_spring,
    "spectrum": cmd_spectrum,
    "pulse": cmd_pulse,
    "backaction": cmd_backaction,
    "analyze": cmd_analyze,
    "run": cmd_run,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "validate":
        return cmd_validate(args)
    started = time.time()
    try:
        cfg = _load(args)
        out = _outdir(args)
        files = COMMANDS[args.command](args, cfg, out)
        name = args.command + (" " + args.scenario if args.command == "run" else "")
        write_manifest(out, name, cfg, started, files)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Unstable as exc:
        print(f"unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OptospringError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
