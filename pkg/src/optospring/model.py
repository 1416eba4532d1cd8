"""Physical parameters, unit conventions, pulse schedules and calibration helpers.

All frequencies held by the types in this module are angular (rad/s).  The
JSON configuration format stores ordinary frequencies in Hz; conversion
happens exactly once, in :func:`config_from_dict` and :func:`config_to_dict`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, ScheduleGap

HBAR = 1.054571817e-34
"""Reduced Planck constant (J s)."""

M_RB87 = 1.443e-25
"""Mass of a single rubidium-87 atom (kg)."""

TWO_PI = 2.0 * math.pi

DEFAULT_RAMP = 20e-6
"""Default duration of a linear drive ramp (s)."""


# --------------------------------------------------------------------------
# Parameter types
# --------------------------------------------------------------------------


def _finite(x: float) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) and math.isfinite(x)


@dataclass(frozen=True)
class OscillatorParams:
    """Constants of one mechanical oscillator.

    Attributes
    ----------
    omega : float
        Angular frequency (rad/s).
    gamma : float
        Energy damping rate, full width (rad/s).
    g : float
        Single-photon, single-phonon coupling rate (rad/s).
    mass : float
        Total oscillating mass (kg).
    nu_th : float
        Bath occupation (phonons).
    omega_q : float
        Quadratic-coupling frequency shift per intracavity photon (rad/s).
    """

    omega: float
    gamma: float
    g: float
    mass: float
    nu_th: float = 0.0
    omega_q: float = 0.0

    def __post_init__(self) -> None:
        errors = _oscillator_errors(self, "")
        if errors:
            raise ConfigError(errors)


def _oscillator_errors(osc: OscillatorParams, prefix: str) -> list[tuple[str, str]]:
    errs = []
    for name in ("omega", "gamma", "g", "mass", "nu_th", "omega_q"):
        if not _finite(getattr(osc, name)):
            errs.append((prefix + name, "must be a finite number"))
    if errs:
        return errs
    if osc.omega <= 0:
        errs.append((prefix + "omega", "must be > 0"))
    if osc.gamma <= 0:
        errs.append((prefix + "gamma", "must be > 0"))
    if osc.mass <= 0:
        errs.append((prefix + "mass", "must be > 0"))
    if osc.nu_th < 0:
        errs.append((prefix + "nu_th", "must be >= 0"))
    if not errs:
        z = math.sqrt(HBAR / (2.0 * osc.mass * osc.omega))
        if not (math.isfinite(z) and z > 0):
            errs.append((prefix + "mass", "zero-point length is not finite and positive"))
    return errs


@dataclass(frozen=True)
class CavityDrive:
    """Static cavity drive settings.

    ``kappa`` is the cavity half-linewidth and ``delta_pc`` the pump-cavity
    detuning, positive when the pump is blue of the cavity resonance.
    """

    kappa: float
    nbar: float
    delta_pc: float = 0.0
    epsilon: float = 1.0

    def __post_init__(self) -> None:
        errors = _drive_errors(self, "")
        if errors:
            raise ConfigError(errors)

    def with_(self, **changes: float) -> "CavityDrive":
        return replace(self, **changes)


def _drive_errors(drive: CavityDrive, prefix: str) -> list[tuple[str, str]]:
    errs = []
    for name in ("kappa", "nbar", "delta_pc", "epsilon"):
        if not _finite(getattr(drive, name)):
            errs.append((prefix + name, "must be a finite number"))
    if errs:
        return errs
    if drive.kappa <= 0:
        errs.append((prefix + "kappa", "must be > 0"))
    if drive.nbar < 0:
        errs.append((prefix + "nbar", "must be >= 0"))
    if not 0 < drive.epsilon <= 1:
        errs.append((prefix + "epsilon", "must satisfy 0 < epsilon <= 1"))
    return errs


RAMPS = ("step", "linear")
ENVELOPES = ("rect", "blackman")


@dataclass(frozen=True)
class Segment:
    """One piece of a drive schedule.

    During a ``linear`` segment n̄ and Δ_pc move linearly from the values at
    the end of the previous segment to the targets; a ``step`` segment holds
    the targets for its whole duration.
    """

    duration: float
    nbar: float
    delta_pc: float
    ramp: str = "step"
    label: str = ""


@dataclass(frozen=True)
class Excitation:
    """Coherent excitation pulse applied at the start of the schedule."""

    omega: float
    n_cycles: float
    envelope: str = "blackman"
    amplitude: float = 0.0

    @property
    def duration(self) -> float:
        return TWO_PI * self.n_cycles / self.omega


@dataclass(frozen=True)
class PulseSchedule:
    """Piecewise drive program starting at t = 0.

    ``nbar0`` and ``delta0`` are the drive values before the first segment,
    the starting point of a leading linear ramp.
    """

    segments: tuple[Segment, ...]
    excitation: Excitation | None = None
    nbar0: float = 0.0
    delta0: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))
        errors = _schedule_errors(self, "")
        if errors:
            raise ConfigError(errors)

    @property
    def boundaries(self) -> np.ndarray:
        """Segment start times followed by the total duration."""
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    @property
    def total(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def start_of(self, label: str) -> float:
        """Start time of the first segment with ``label``."""
        for s, t0 in zip(self.segments, self.boundaries):
            if s.label == label:
                return float(t0)
        raise KeyError(label)

    def end_of(self, label: str) -> float:
        """End time of the last segment with ``label``."""
        end = None
        for s, t1 in zip(self.segments, self.boundaries[1:]):
            if s.label == label:
                end = float(t1)
        if end is None:
            raise KeyError(label)
        return end

    def drive_at(self, t: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
        """Return the scheduled (n̄, Δ_pc) at time(s) ``t``.

        Times before zero get the initial values and times past the end hold
        the last segment's targets.
        """
        t = np.asarray(t, dtype=float)
        nbar = np.full(t.shape, float(self.nbar0))
        delta = np.full(t.shape, float(self.delta0))
        prev_n, prev_d = self.nbar0, self.delta0
        t0 = 0.0
        for seg in self.segments:
            t1 = t0 + seg.duration
            mask = t >= t0
            if seg.ramp == "linear":
                f = np.clip((t - t0) / seg.duration, 0.0, 1.0)
                n_here = prev_n + (seg.nbar - prev_n) * f
                d_here = prev_d + (seg.delta_pc - prev_d) * f
            else:
                n_here = np.full(t.shape, float(seg.nbar))
                d_here = np.full(t.shape, float(seg.delta_pc))
            nbar = np.where(mask, n_here, nbar)
            delta = np.where(mask, d_here, delta)
            prev_n, prev_d = seg.nbar, seg.delta_pc
            t0 = t1
        return nbar, delta

    def grid_step(self, dt_max: float) -> float:
        """Largest step not exceeding ``dt_max`` that divides every segment.

        Segment durations are resolved on a 1 ns lattice; anything finer
        raises :class:`ScheduleGap`.
        """
        ticks = []
        for i, s in enumerate(self.segments):
            n = round(s.duration * 1e9)
            if n <= 0 or abs(n - s.duration * 1e9) > 1e-6 * max(1.0, n):
                raise ScheduleGap(
                    f"segment {i} duration {s.duration!r} s is not a whole number of ns"
                )
            ticks.append(n)
        common = 0
        for n in ticks:
            common = math.gcd(common, n)
        unit = common * 1e-9
        return unit / math.ceil(unit / dt_max - 1e-9)


def _schedule_errors(sch: PulseSchedule, prefix: str) -> list[tuple[str, str]]:
    errs = []
    if len(sch.segments) == 0:
        errs.append((prefix + "segments", "schedule needs at least one segment"))
    for i, s in enumerate(sch.segments):
        p = f"{prefix}segments[{i}]."
        if not (_finite(s.duration) and s.duration > 0):
            errs.append((p + "duration", "must be > 0"))
        if not (_finite(s.nbar) and s.nbar >= 0):
            errs.append((p + "nbar", "must be >= 0"))
        if not _finite(s.delta_pc):
            errs.append((p + "delta_pc", "must be a finite number"))
        if s.ramp not in RAMPS:
            errs.append((p + "ramp", f"must be one of {RAMPS}"))
    ex = sch.excitation
    if ex is not None:
        p = prefix + "excitation."
        if not (_finite(ex.omega) and ex.omega > 0):
            errs.append((p + "omega", "must be > 0"))
        if not (_finite(ex.n_cycles) and ex.n_cycles >= 1):
            errs.append((p + "n_cycles", "must be >= 1"))
        if ex.envelope not in ENVELOPES:
            errs.append((p + "envelope", f"must be one of {ENVELOPES}"))
        if not _finite(ex.amplitude):
            errs.append((p + "amplitude", "must be a finite number"))
        if not errs and sch.segments and ex.duration > sch.segments[0].duration * (1 + 1e-9):
            errs.append((p + "n_cycles", "excitation pulse is longer than the first segment"))
    if not (_finite(sch.nbar0) and sch.nbar0 >= 0):
        errs.append((prefix + "nbar0", "must be >= 0"))
    return errs


@dataclass(frozen=True)
class EnsembleSettings:
    """Monte-Carlo settings: sample count and relative 1-sigma uncertainties.

    ``rel_sigma`` maps parameter names (``g``, ``nbar``, ``omega``,
    ``delta_pc``, ``nu_th``, ``gamma``, ``mass``) to relative standard
    deviations.
    """

    n_samples: int = 300
    rel_sigma: dict = field(default_factory=dict)


UNCERTAIN_PARAMS = ("g", "nbar", "omega", "delta_pc", "nu_th", "gamma", "mass")


@dataclass(frozen=True)
class SystemConfig:
    """Everything needed to run one scenario."""

    osc: tuple[OscillatorParams, OscillatorParams]
    drive: CavityDrive
    schedule: PulseSchedule
    rng_seed: int = 0
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)

    def __post_init__(self) -> None:
        object.__setattr__(self, "osc", tuple(self.osc))
        errs = []
        if len(self.osc) != 2:
            errs.append(("oscillators", "exactly two oscillators are required"))
        elif not self.osc[0].omega < self.osc[1].omega:
            errs.append(("oscillators[1].omega", "oscillator 2 must have the higher frequency"))
        errs.extend(_ensemble_errors(self.ensemble, "ensemble."))
        if errs:
            raise ConfigError(errs)

    def replace(self, **changes: Any) -> "SystemConfig":
        return replace(self, **changes)


def _ensemble_errors(ens: EnsembleSettings, prefix: str) -> list[tuple[str, str]]:
    errs = []
    if not isinstance(ens.n_samples, (int, np.integer)) or ens.n_samples < 1:
        errs.append((prefix + "n_samples", "must be a positive integer"))
    for k, v in ens.rel_sigma.items():
        if k not in UNCERTAIN_PARAMS:
            errs.append((f"{prefix}rel_sigma.{k}", f"unknown parameter, expected one of {UNCERTAIN_PARAMS}"))
        elif not (_finite(v) and v >= 0):
            errs.append((f"{prefix}rel_sigma.{k}", "must be >= 0"))
    return errs


# --------------------------------------------------------------------------
# Calibration helpers
# --------------------------------------------------------------------------


def zho(osc: OscillatorParams) -> float:
    """Zero-point length sqrt(ħ / (2 M ω)) in metres."""
    return math.sqrt(HBAR / (2.0 * osc.mass * osc.omega))


def mass_from_atoms(n_atoms: float, atom_mass: float = M_RB87) -> float:
    """Total mass of ``n_atoms`` atoms (kg)."""
    return n_atoms * atom_mass


def atom_number_from_shift(delta_omega_c: float, g0: float, delta_ca: float) -> float:
    """Atom number from the dispersive cavity shift Δω_c = N g0² / (2 Δ_ca)."""
    if g0 == 0 or delta_ca == 0:
        raise ValueError("g0 and delta_ca must be nonzero")
    return 2.0 * delta_omega_c * delta_ca / (g0 * g0)


def cavity_shift_from_atoms(n_atoms: float, g0: float, delta_ca: float) -> float:
    """Forward model of :func:`atom_number_from_shift`."""
    if delta_ca == 0:
        raise ValueError("delta_ca must be nonzero")
    return n_atoms * g0 * g0 / (2.0 * delta_ca)


def cooperativity(osc: OscillatorParams, drive: CavityDrive) -> float:
    """Optomechanical cooperativity 4 n̄ g² / (κ Γ)."""
    return 4.0 * drive.nbar * osc.g * osc.g / (drive.kappa * osc.gamma)


# --------------------------------------------------------------------------
# Schedules
# --------------------------------------------------------------------------


def three_step_schedule(
    tau_c: float,
    *,
    probe: tuple[float, float] = (2.0, 0.0),
    couple: tuple[float, float] = (8.0, TWO_PI * 1.4e6),
    excitation: Excitation | None = None,
    excite_time: float | None = None,
    readout_time: float = 1e-3,
    ramp_time: float = DEFAULT_RAMP,
) -> PulseSchedule:
    """Excite, couple for ``tau_c`` and read out.

    The coupling pulse consists of a linear ramp up, a hold of length
    ``tau_c`` and a linear ramp down, all inside the ``ramp_up``,
    ``couple`` and ``ramp_down`` segments.  ``tau_c = 0`` means that no
    coupling pulse is applied at all: the readout follows the excitation
    directly.

    The excite segment is the excitation pulse rounded up to a whole
    microsecond, or ``excite_time`` when given.
    """
    if tau_c < 0:
        raise ConfigError([("schedule.tau_c", "must be >= 0")])
    if excite_time is None:
        pulse = excitation.duration if excitation is not None else 0.0
        excite_time = max(1e-6, math.ceil(pulse * 1e6 - 1e-6) * 1e-6)
    n_p, d_p = probe
    n_c, d_c = couple
    segs = [Segment(excite_time, n_p, d_p, "step", "excite")]
    if tau_c > 0:
        segs += [
            Segment(ramp_time, n_c, d_c, "linear", "ramp_up"),
            Segment(tau_c, n_c, d_c, "step", "couple"),
            Segment(ramp_time, n_p, d_p, "linear", "ramp_down"),
        ]
    segs.append(Segment(readout_time, n_p, d_p, "step", "readout"))
    return PulseSchedule(tuple(segs), excitation, nbar0=n_p, delta0=d_p)


def readout_start(schedule: PulseSchedule) -> float:
    """Start of the readout segment, the time origin of quadrature estimates."""
    return schedule.start_of("readout")


# --------------------------------------------------------------------------
# JSON configuration
# --------------------------------------------------------------------------


def _hz(x: float) -> float:
    return x / TWO_PI


def _rad(x: float) -> float:
    return x * TWO_PI


_OSC_KEYS = {
    "freq_hz": ("omega", True),
    "gamma_hz": ("gamma", True),
    "g_hz": ("g", True),
    "mass_kg": ("mass", False),
    "nu_th": ("nu_th", False),
    "omega_q_hz": ("omega_q", True),
}
_DRIVE_KEYS = {
    "kappa_hz": ("kappa", True),
    "nbar": ("nbar", False),
    "delta_pc_hz": ("delta_pc", True),
    "epsilon": ("epsilon", False),
}


def _read_fields(raw: Any, keys: dict, prefix: str, errs: list, optional=()) -> dict:
    out = {}
    if not isinstance(raw, dict):
        errs.append((prefix.rstrip("."), "must be an object"))
        return out
    for key, (name, is_freq) in keys.items():
        if key not in raw:
            if key not in optional:
                errs.append((prefix + key, "missing"))
            continue
        v = raw[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            errs.append((prefix + key, "must be a finite number"))
            continue
        out[name] = _rad(float(v)) if is_freq else float(v)
    for key in raw:
        if key not in keys:
            errs.append((prefix + key, "unknown field"))
    return out


def _renamed(errors, mapping: dict, prefix: str):
    """Translate internal field names back to config keys in error paths."""
    out = []
    for f, msg in errors:
        head, _, name = f.rpartition(".")
        key = mapping.get(name, name)
        out.append((prefix + key if not head else f"{prefix}{head}.{key}", msg))
    return out


_OSC_REV = {v[0]: k for k, v in _OSC_KEYS.items()}
_DRIVE_REV = {v[0]: k for k, v in _DRIVE_KEYS.items()}


def config_from_dict(data: dict) -> SystemConfig:
    """Build and validate a :class:`SystemConfig` from parsed JSON.

    All violated invariants are collected and reported together in one
    :class:`ConfigError`, each tagged with its field path.
    """
    errs: list[tuple[str, str]] = []
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "config must be a JSON object")])
    for key in data:
        if key not in ("oscillators", "drive", "schedule", "ensemble", "seed"):
            errs.append((key, "unknown section"))

    oscs = []
    raw_oscs = data.get("oscillators")
    if not isinstance(raw_oscs, list) or len(raw_oscs) != 2:
        errs.append(("oscillators", "must be a list of exactly two oscillators"))
        raw_oscs = raw_oscs if isinstance(raw_oscs, list) else []
    for i, ro in enumerate(raw_oscs[:2]):
        p = f"oscillators[{i}]."
        vals = _read_fields(ro, _OSC_KEYS, p, errs, optional=("nu_th", "omega_q_hz"))
        if len(vals) >= 4 and all(k in vals for k in ("omega", "gamma", "g", "mass")):
            o = object.__new__(OscillatorParams)
            full = {"nu_th": 0.0, "omega_q": 0.0, **vals}
            for k, v in full.items():
                object.__setattr__(o, k, v)
            e = _oscillator_errors(o, "")
            errs.extend(_renamed(e, _OSC_REV, p))
            if not e:
                oscs.append(OscillatorParams(**full))

    drive = None
    raw_drive = data.get("drive")
    if raw_drive is None:
        errs.append(("drive", "missing"))
    else:
        vals = _read_fields(raw_drive, _DRIVE_KEYS, "drive.", errs, optional=("delta_pc_hz", "epsilon"))
        if "kappa" in vals and "nbar" in vals:
            full = {"delta_pc": 0.0, "epsilon": 1.0, **vals}
            d = object.__new__(CavityDrive)
            for k, v in full.items():
                object.__setattr__(d, k, v)
            e = _drive_errors(d, "")
            errs.extend(_renamed(e, _DRIVE_REV, "drive."))
            if not e:
                drive = CavityDrive(**full)

    schedule = None
    raw_s = data.get("schedule")
    if raw_s is None:
        errs.append(("schedule", "missing"))
    else:
        schedule = _schedule_from_dict(raw_s, errs)

    ens = EnsembleSettings()
    raw_e = data.get("ensemble", {})
    if not isinstance(raw_e, dict):
        errs.append(("ensemble", "must be an object"))
    else:
        n = raw_e.get("n_samples", 300)
        rel = raw_e.get("rel_sigma", {})
        if not isinstance(rel, dict):
            errs.append(("ensemble.rel_sigma", "must be an object"))
            rel = {}
        for key in raw_e:
            if key not in ("n_samples", "rel_sigma"):
                errs.append((f"ensemble.{key}", "unknown field"))
        ens = EnsembleSettings(n_samples=n, rel_sigma=dict(rel))
        errs.extend(_ensemble_errors(ens, "ensemble."))

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errs.append(("seed", "must be a nonnegative integer"))

    if len(oscs) == 2 and not oscs[0].omega < oscs[1].omega:
        errs.append(("oscillators[1].freq_hz", "oscillator 2 must have the higher frequency"))
    if errs:
        raise ConfigError(errs)
    return SystemConfig(tuple(oscs), drive, schedule, seed, ens)


def _schedule_from_dict(raw: Any, errs: list) -> PulseSchedule | None:
    if not isinstance(raw, dict):
        errs.append(("schedule", "must be an object"))
        return None
    segs = []
    raw_segs = raw.get("segments")
    n_before = len(errs)
    if not isinstance(raw_segs, list) or not raw_segs:
        errs.append(("schedule.segments", "must be a nonempty list"))
        raw_segs = []
    for i, rs in enumerate(raw_segs):
        p = f"schedule.segments[{i}]."
        if not isinstance(rs, dict):
            errs.append((p.rstrip("."), "must be an object"))
            continue
        try:
            seg = Segment(
                duration=float(rs.get("duration", float("nan"))),
                nbar=float(rs.get("nbar", float("nan"))),
                delta_pc=_rad(float(rs.get("delta_pc_hz", 0.0))),
                ramp=str(rs.get("ramp", "step")),
                label=str(rs.get("label", "")),
            )
        except (TypeError, ValueError):
            errs.append((p.rstrip("."), "fields must be numbers"))
            continue
        segs.append(seg)
    ex = None
    rex = raw.get("excitation")
    if rex is not None:
        try:
            ex = Excitation(
                omega=_rad(float(rex["freq_hz"])),
                n_cycles=float(rex["n_cycles"]),
                envelope=str(rex.get("envelope", "blackman")),
                amplitude=float(rex.get("amplitude", 0.0)),
            )
        except (KeyError, TypeError, ValueError):
            errs.append(("schedule.excitation", "needs numeric freq_hz and n_cycles"))
    nbar0 = raw.get("nbar0", segs[0].nbar if segs else 0.0)
    delta0 = _rad(raw.get("delta0_hz", _hz(segs[0].delta_pc) if segs else 0.0))
    sch = object.__new__(PulseSchedule)
    object.__setattr__(sch, "segments", tuple(segs))
    object.__setattr__(sch, "excitation", ex)
    object.__setattr__(sch, "nbar0", nbar0)
    object.__setattr__(sch, "delta0", delta0)
    e = _schedule_errors(sch, "schedule.")
    e = [(f.replace(".delta_pc", ".delta_pc_hz").replace("excitation.omega", "excitation.freq_hz"), m) for f, m in e]
    errs.extend(e)
    if len(errs) > n_before:
        return None
    return PulseSchedule(tuple(segs), ex, nbar0, delta0)


def config_to_dict(cfg: SystemConfig) -> dict:
    """Inverse of :func:`config_from_dict` (angular frequencies back to Hz)."""
    oscs = []
    for o in cfg.osc:
        oscs.append(
            {
                "freq_hz": _hz(o.omega),
                "gamma_hz": _hz(o.gamma),
                "g_hz": _hz(o.g),
                "mass_kg": o.mass,
                "nu_th": o.nu_th,
                "omega_q_hz": _hz(o.omega_q),
            }
        )
    d = cfg.drive
    sch = cfg.schedule
    sched: dict[str, Any] = {
        "nbar0": sch.nbar0,
        "delta0_hz": _hz(sch.delta0),
        "segments": [
            {
                "duration": s.duration,
                "nbar": s.nbar,
                "delta_pc_hz": _hz(s.delta_pc),
                "ramp": s.ramp,
                "label": s.label,
            }
            for s in sch.segments
        ],
    }
    if sch.excitation is not None:
        ex = sch.excitation
        sched["excitation"] = {
            "freq_hz": _hz(ex.omega),
            "n_cycles": ex.n_cycles,
            "envelope": ex.envelope,
            "amplitude": ex.amplitude,
        }
    return {
        "oscillators": oscs,
        "drive": {
            "kappa_hz": _hz(d.kappa),
            "nbar": d.nbar,
            "delta_pc_hz": _hz(d.delta_pc),
            "epsilon": d.epsilon,
        },
        "schedule": sched,
        "ensemble": {
            "n_samples": int(cfg.ensemble.n_samples),
            "rel_sigma": dict(cfg.ensemble.rel_sigma),
        },
        "seed": int(cfg.rng_seed),
    }


def load_config(path: str | Path) -> SystemConfig:
    """Read a JSON config file."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return config_from_dict(data)


def save_config(cfg: SystemConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2)
        fh.write("\n")


def paper_defaults_dict() -> dict:
    """Parsed contents of the shipped default configuration."""
    text = resources.files("optospring").joinpath("data/paper_defaults.json").read_text("utf-8")
    return json.loads(text)


def paper_defaults() -> SystemConfig:
    """Default parameter set of the two-oscillator experiment."""
    return config_from_dict(paper_defaults_dict())


def default_excitation(osc: OscillatorParams, amplitude_zho: float = 3.0) -> Excitation:
    """Blackman pulse of 50 cycles resonant with ``osc``, ``amplitude_zho`` zero-point lengths."""
    return Excitation(osc.omega, 50, "blackman", amplitude_zho * zho(osc))


def with_tau_c(cfg: SystemConfig, tau_c: float, readout_time: float | None = None) -> SystemConfig:
    """Copy of ``cfg`` whose schedule is a three-step protocol with the given τ_c.

    Probe and coupling settings, the excitation and the readout length are
    taken from the existing schedule when it has the standard labels.
    """
    sch = cfg.schedule
    labels = {s.label: s for s in sch.segments}
    probe = (labels["excite"].nbar, labels["excite"].delta_pc) if "excite" in labels else (sch.nbar0, sch.delta0)
    couple = (labels["couple"].nbar, labels["couple"].delta_pc) if "couple" in labels else (8.0, TWO_PI * 1.4e6)
    ramp = labels["ramp_up"].duration if "ramp_up" in labels else DEFAULT_RAMP
    if readout_time is None:
        readout_time = labels["readout"].duration if "readout" in labels else 1e-3
    excite_time = labels["excite"].duration if "excite" in labels else None
    new = three_step_schedule(
        tau_c,
        probe=probe,
        couple=couple,
        excitation=sch.excitation,
        excite_time=excite_time,
        readout_time=readout_time,
        ramp_time=ramp,
    )
    return cfg.replace(schedule=new)


def coupling_settings(schedule: PulseSchedule) -> tuple[float, float]:
    """(n̄, Δ_pc) of the ``couple`` segment, or of the strongest segment if unlabeled."""
    for s in schedule.segments:
        if s.label == "couple":
            return s.nbar, s.delta_pc
    s = max(schedule.segments, key=lambda s: abs(s.delta_pc))
    return s.nbar, s.delta_pc


# --------------------------------------------------------------------------
# Random streams
# --------------------------------------------------------------------------


def rng_streams(seed: int, n: int, *, key: Sequence[int] = ()) -> list[np.random.Generator]:
    """Independent generators derived from a master seed.

    ``key`` selects a named sub-tree so that separate stochastic stages of a
    run never share draws.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return [np.random.default_rng(c) for c in ss.spawn(n)]
