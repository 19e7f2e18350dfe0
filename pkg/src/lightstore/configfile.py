"""Human-readable experiment configuration files.

INI-style key/value sections (configparser syntax) covering every
ExperimentConfig field plus the pulse sequence, study grids and analysis
windows.  Unknown sections or keys are hard errors.  ``default_config``
returns the calibrated defaults; ``write_default_config`` emits them as an
annotated template.

Sections and keys (defaults in parentheses):

[level_scheme]   gamma_e_rad (2pi*5.75e6), gamma_gg_rad (2pi*500),
                 ground_minus_label, ground_plus_label, excited_label,
                 second_excited_label (empty disables the fourth level),
                 second_excited_offset_hz (814.5e6)
[clebsch_weights] one key per transition, "<ground>/<excited>/<polarization>"
[control]        intensity, power_w, one_photon_detuning_rad, polarization,
                 angle_alpha_rad, readout_intensity (empty = same as intensity)
[signal]         intensity, power_w, one_photon_detuning_rad, polarization,
                 angle_alpha_rad
[magnetic]       b0_gauss, g_f, mu_b_over_h_hz_per_gauss
[experiment]     delta_r_hz, sample_rate_hz, trace_noise_sigma,
                 control_leak_fraction, storage_efficiency,
                 retrieval_decay_time_s, rng_seed, kappa_rad2, od_eff,
                 coupling_gn_rad, include_second_excited
[light_shift]    linewidth_rad, couplings (one "detuning_rad cg_sq" per line)
[pulse_sequence] preparation_s, input_s, storage_s, readout_s
[study]          delta_r_grid_hz, dark_resonance_grid_hz,
                 control_intensity_grid, signal_intensity_grid,
                 repetitions, average_mode (average-traces|fit-then-average)
[analysis]       guard_s, input_window_s (optional "t_a,t_b"),
                 retrieved_window_s (optional "t_a,t_b")
[plan]           written into run snapshots only: kind, seed_base

Grids accept either comma-separated values or "lin:start:stop:n".
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (
    TWO_PI,
    ConfigurationError,
    ExperimentConfig,
    FieldConfig,
    LevelScheme,
    LightShiftModel,
    MagneticEnvironment,
    PulseSequence,
    ShiftCoupling,
    SIGMA_MINUS,
    SIGMA_PLUS,
    make_field,
    rabi_from_intensity,
)

AVERAGE_TRACES = "average-traces"
FIT_THEN_AVERAGE = "fit-then-average"

# Calibrated defaults: the reference drive of I_C = 10.5 I_sat (~300 uW over
# a 0.9 mm beam) maps to a 2pi*375 kHz control coupling, reproducing a
# ~20 kHz dark-resonance window; the single effective shift coupling is then
# scaled so the same drive produces a +7 kHz differential light shift.
DEFAULT_CONTROL_INTENSITY = 10.5
DEFAULT_SIGNAL_INTENSITY = 3.5
DEFAULT_KAPPA_RAD2 = (TWO_PI * 375e3) ** 2 / DEFAULT_CONTROL_INTENSITY
DEFAULT_SHIFT_DETUNING_RAD = TWO_PI * 814.5e6
DEFAULT_SHIFT_AT_REFERENCE_HZ = 7000.0


@dataclass(frozen=True)
class StudyDefaults:
    """Grids, repetition count and analysis windows for the canned studies."""

    delta_r_grid_hz: tuple[float, ...]
    dark_resonance_grid_hz: tuple[float, ...]
    control_intensity_grid: tuple[float, ...]
    signal_intensity_grid: tuple[float, ...]
    repetitions: int = 10
    average_mode: str = AVERAGE_TRACES
    guard_s: float = 2.0e-6
    input_window_s: tuple[float, float] | None = None
    retrieved_window_s: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be >= 1")
        if self.average_mode not in (AVERAGE_TRACES, FIT_THEN_AVERAGE):
            raise ConfigurationError(f"unknown average_mode {self.average_mode!r}")
        if self.guard_s < 0.0:
            raise ConfigurationError("guard_s must be >= 0")
        for name in ("delta_r_grid_hz", "dark_resonance_grid_hz",
                     "control_intensity_grid", "signal_intensity_grid"):
            grid = getattr(self, name)
            if len(grid) == 0:
                raise ConfigurationError(f"{name} is empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigurationError(f"{name} must be strictly increasing")


@dataclass(frozen=True)
class LoadedExperiment:
    """Everything a run needs: physics config, sequence and study settings."""

    config: ExperimentConfig
    sequence: PulseSequence
    study: StudyDefaults
    plan_kind: str | None = None
    plan_seed_base: int | None = None


def _as_floats(values) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


def default_shift_weight(kappa_rad2: float, linewidth_rad: float) -> float:
    """Effective cg^2 making the reference drive produce the calibrated shift."""
    d = DEFAULT_SHIFT_DETUNING_RAD
    slope_target = DEFAULT_SHIFT_AT_REFERENCE_HZ / DEFAULT_CONTROL_INTENSITY
    per_weight = kappa_rad2 * d / (4.0 * d**2 + linewidth_rad**2) / TWO_PI
    return slope_target / per_weight


def default_config() -> LoadedExperiment:
    """Calibrated default experiment (see module docstring for the anchors)."""
    scheme = LevelScheme()
    kappa = DEFAULT_KAPPA_RAD2
    control = make_field(
        "control", DEFAULT_CONTROL_INTENSITY, 1.0, kappa, SIGMA_MINUS, power_w=300e-6
    )
    signal = make_field(
        "signal", DEFAULT_SIGNAL_INTENSITY, 1.0, kappa, SIGMA_PLUS, power_w=100e-6
    )
    shift = LightShiftModel(
        couplings=(
            ShiftCoupling(
                DEFAULT_SHIFT_DETUNING_RAD,
                default_shift_weight(kappa, scheme.gamma_e_rad),
            ),
        ),
        linewidth_rad=scheme.gamma_e_rad,
        kappa_rad2=kappa,
    )
    config = ExperimentConfig(
        level_scheme=scheme,
        control=control,
        signal=signal,
        magnetic=MagneticEnvironment(b0_gauss=0.49),
        light_shift=shift,
        kappa_rad2=kappa,
    )
    sequence = PulseSequence.standard(
        preparation_s=30e-6, input_s=50e-6, storage_s=5e-6, readout_s=60e-6
    )
    study = StudyDefaults(
        delta_r_grid_hz=_as_floats(np.linspace(-15e3, 15e3, 9)),
        dark_resonance_grid_hz=_as_floats(np.linspace(-60e3, 60e3, 241)),
        control_intensity_grid=_as_floats(
            np.linspace(0.5 * DEFAULT_CONTROL_INTENSITY, 2.0 * DEFAULT_CONTROL_INTENSITY, 6)
        ),
        signal_intensity_grid=_as_floats(
            np.linspace(0.1 * DEFAULT_CONTROL_INTENSITY, 3.0 * DEFAULT_CONTROL_INTENSITY, 8)
        ),
    )
    return LoadedExperiment(config=config, sequence=sequence, study=study)


# -- parsing ---------------------------------------------------------------

def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_grid(raw: str) -> tuple[float, ...]:
    raw = raw.strip()
    if raw.startswith("lin:"):
        parts = raw[4:].split(":")
        if len(parts) != 3:
            raise ValueError(f"grid shorthand must be lin:start:stop:n, got {raw!r}")
        start, stop, n = float(parts[0]), float(parts[1]), int(parts[2])
        return tuple(np.linspace(start, stop, n))
    return tuple(float(tok) for tok in raw.replace(",", " ").split())


def _parse_window(raw: str) -> tuple[float, float] | None:
    raw = raw.strip()
    if not raw:
        return None
    values = [float(tok) for tok in raw.replace(",", " ").split()]
    if len(values) != 2:
        raise ValueError(f"window needs two times, got {raw!r}")
    return (values[0], values[1])


def _parse_couplings(raw: str) -> tuple[ShiftCoupling, ...]:
    couplings = []
    for line in raw.splitlines():
        line = line.strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 2:
            raise ValueError(f"coupling line needs 'detuning_rad cg_sq', got {line!r}")
        couplings.append(ShiftCoupling(float(toks[0]), float(toks[1])))
    return tuple(couplings)


_SCHEMA: dict[str, tuple[str, ...]] = {
    "level_scheme": (
        "gamma_e_rad", "gamma_gg_rad", "ground_minus_label", "ground_plus_label",
        "excited_label", "second_excited_label", "second_excited_offset_hz",
    ),
    "clebsch_weights": (),  # free-form transition keys
    "control": (
        "intensity", "power_w", "one_photon_detuning_rad", "polarization",
        "angle_alpha_rad", "readout_intensity",
    ),
    "signal": (
        "intensity", "power_w", "one_photon_detuning_rad", "polarization",
        "angle_alpha_rad",
    ),
    "magnetic": ("b0_gauss", "g_f", "mu_b_over_h_hz_per_gauss"),
    "experiment": (
        "delta_r_hz", "sample_rate_hz", "trace_noise_sigma", "control_leak_fraction",
        "storage_efficiency", "retrieval_decay_time_s", "rng_seed", "kappa_rad2",
        "od_eff", "coupling_gn_rad", "include_second_excited",
    ),
    "light_shift": ("linewidth_rad", "couplings"),
    "pulse_sequence": ("preparation_s", "input_s", "storage_s", "readout_s"),
    "study": (
        "delta_r_grid_hz", "dark_resonance_grid_hz", "control_intensity_grid",
        "signal_intensity_grid", "repetitions", "average_mode",
    ),
    "analysis": ("guard_s", "input_window_s", "retrieved_window_s"),
    "plan": ("kind", "seed_base"),
}


def _make_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    return parser


def _validate_keys(parser: configparser.ConfigParser) -> None:
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]")
        if section == "clebsch_weights":
            continue
        allowed = _SCHEMA[section]
        for key in parser[section]:
            if key not in allowed:
                raise ConfigurationError(f"unknown key {key!r} in section [{section}]")


def load_config(path: "str | Path") -> LoadedExperiment:
    """Parse a config file; missing keys fall back to the calibrated defaults."""
    parser = _make_parser()
    read = parser.read(str(path))
    if not read:
        raise ConfigurationError(f"cannot read config file {path}")
    _validate_keys(parser)
    base = default_config()

    def get(section: str, key: str, conv, fallback):
        if parser.has_section(section) and key in parser[section]:
            raw = parser[section][key]
            try:
                return conv(raw)
            except ValueError as exc:
                raise ConfigurationError(f"[{section}] {key}: {exc}") from exc
        return fallback

    def get_optional_str(section: str, key: str, fallback):
        if parser.has_section(section) and key in parser[section]:
            raw = parser[section][key].strip()
            return raw or None
        return fallback

    scheme_base = base.config.level_scheme
    weights: tuple[tuple[tuple[str, str, str], float], ...] = ()
    if parser.has_section("clebsch_weights"):
        entries = []
        for key, raw in parser["clebsch_weights"].items():
            parts = key.split("/")
            if len(parts) != 3:
                raise ConfigurationError(
                    f"clebsch_weights key must be ground/excited/polarization, got {key!r}"
                )
            try:
                entries.append(((parts[0], parts[1], parts[2]), float(raw)))
            except ValueError as exc:
                raise ConfigurationError(f"[clebsch_weights] {key}: {exc}") from exc
        weights = tuple(entries)

    scheme = LevelScheme(
        gamma_e_rad=get("level_scheme", "gamma_e_rad", float, scheme_base.gamma_e_rad),
        gamma_gg_rad=get("level_scheme", "gamma_gg_rad", float, scheme_base.gamma_gg_rad),
        ground_minus_label=get(
            "level_scheme", "ground_minus_label", str, scheme_base.ground_minus_label
        ),
        ground_plus_label=get(
            "level_scheme", "ground_plus_label", str, scheme_base.ground_plus_label
        ),
        excited_label=get("level_scheme", "excited_label", str, scheme_base.excited_label),
        second_excited_label=get_optional_str(
            "level_scheme", "second_excited_label", scheme_base.second_excited_label
        ),
        second_excited_offset_hz=get(
            "level_scheme", "second_excited_offset_hz", float,
            scheme_base.second_excited_offset_hz,
        ),
        clebsch_weights=weights,
    )

    kappa = get("experiment", "kappa_rad2", float, base.config.kappa_rad2)

    def field_from(section: str, role: str, fallback: FieldConfig) -> FieldConfig:
        intensity = get(section, "intensity", float, fallback.intensity)
        polarization = get(section, "polarization", str, fallback.polarization)
        if role == "control":
            cg = scheme.weight(scheme.ground_plus_label, scheme.excited_label, polarization)
        else:
            cg = scheme.weight(scheme.ground_minus_label, scheme.excited_label, polarization)
        kwargs = {}
        if role == "control":
            raw_readout = get_optional_str(section, "readout_intensity", "keep")
            if raw_readout == "keep":
                kwargs["readout_intensity"] = fallback.readout_intensity
            elif raw_readout is None:
                kwargs["readout_intensity"] = None
            else:
                kwargs["readout_intensity"] = float(raw_readout)
        return FieldConfig(
            role=role,
            intensity=intensity,
            rabi_frequency_rad=rabi_from_intensity(intensity, cg, kappa),
            polarization=polarization,
            power_w=get(section, "power_w", float, fallback.power_w),
            one_photon_detuning_rad=get(
                section, "one_photon_detuning_rad", float, fallback.one_photon_detuning_rad
            ),
            angle_alpha_rad=get(section, "angle_alpha_rad", float, fallback.angle_alpha_rad),
            **kwargs,
        )

    control = field_from("control", "control", base.config.control)
    signal = field_from("signal", "signal", base.config.signal)

    magnetic = MagneticEnvironment(
        b0_gauss=get("magnetic", "b0_gauss", float, base.config.magnetic.b0_gauss),
        g_f=get("magnetic", "g_f", float, base.config.magnetic.g_f),
        mu_b_over_h_hz_per_gauss=get(
            "magnetic", "mu_b_over_h_hz_per_gauss", float,
            base.config.magnetic.mu_b_over_h_hz_per_gauss,
        ),
    )

    linewidth = get("light_shift", "linewidth_rad", float, base.config.light_shift.linewidth_rad)
    if parser.has_section("light_shift") and "couplings" in parser["light_shift"]:
        try:
            couplings = _parse_couplings(parser["light_shift"]["couplings"])
        except ValueError as exc:
            raise ConfigurationError(f"[light_shift] couplings: {exc}") from exc
    else:
        couplings = base.config.light_shift.couplings
    shift = LightShiftModel(couplings=couplings, linewidth_rad=linewidth, kappa_rad2=kappa)

    config = ExperimentConfig(
        level_scheme=scheme,
        control=control,
        signal=signal,
        magnetic=magnetic,
        light_shift=shift,
        delta_r_hz=get("experiment", "delta_r_hz", float, base.config.delta_r_hz),
        sample_rate_hz=get("experiment", "sample_rate_hz", float, base.config.sample_rate_hz),
        trace_noise_sigma=get(
            "experiment", "trace_noise_sigma", float, base.config.trace_noise_sigma
        ),
        control_leak_fraction=get(
            "experiment", "control_leak_fraction", float, base.config.control_leak_fraction
        ),
        storage_efficiency=get(
            "experiment", "storage_efficiency", float, base.config.storage_efficiency
        ),
        retrieval_decay_time_s=get(
            "experiment", "retrieval_decay_time_s", float, base.config.retrieval_decay_time_s
        ),
        rng_seed=get("experiment", "rng_seed", int, base.config.rng_seed),
        kappa_rad2=kappa,
        od_eff=get("experiment", "od_eff", float, base.config.od_eff),
        coupling_gn_rad=get(
            "experiment", "coupling_gn_rad", float, base.config.coupling_gn_rad
        ),
        include_second_excited=get(
            "experiment", "include_second_excited", _parse_bool,
            base.config.include_second_excited,
        ),
    )

    sequence = PulseSequence.standard(
        preparation_s=get("pulse_sequence", "preparation_s", float, 30e-6),
        input_s=get("pulse_sequence", "input_s", float, 50e-6),
        storage_s=get("pulse_sequence", "storage_s", float, 5e-6),
        readout_s=get("pulse_sequence", "readout_s", float, 60e-6),
    )

    study = StudyDefaults(
        delta_r_grid_hz=get("study", "delta_r_grid_hz", _parse_grid, base.study.delta_r_grid_hz),
        dark_resonance_grid_hz=get(
            "study", "dark_resonance_grid_hz", _parse_grid, base.study.dark_resonance_grid_hz
        ),
        control_intensity_grid=get(
            "study", "control_intensity_grid", _parse_grid, base.study.control_intensity_grid
        ),
        signal_intensity_grid=get(
            "study", "signal_intensity_grid", _parse_grid, base.study.signal_intensity_grid
        ),
        repetitions=get("study", "repetitions", int, base.study.repetitions),
        average_mode=get("study", "average_mode", str, base.study.average_mode),
        guard_s=get("analysis", "guard_s", float, base.study.guard_s),
        input_window_s=get("analysis", "input_window_s", _parse_window, None),
        retrieved_window_s=get("analysis", "retrieved_window_s", _parse_window, None),
    )

    plan_kind = get_optional_str("plan", "kind", None)
    plan_seed = get("plan", "seed_base", int, None)
    return LoadedExperiment(
        config=config, sequence=sequence, study=study,
        plan_kind=plan_kind, plan_seed_base=plan_seed,
    )


# -- writing ---------------------------------------------------------------

def _grid_str(grid: tuple[float, ...]) -> str:
    return ", ".join(repr(float(v)) for v in grid)


def dump_config(
    loaded: LoadedExperiment,
    path: "str | Path",
    plan_kind: str | None = None,
    plan_seed_base: int | None = None,
) -> None:
    """Write every field explicitly so the file reloads to the same values."""
    cfg = loaded.config
    scheme = cfg.level_scheme
    parser = _make_parser()
    parser["level_scheme"] = {
        "gamma_e_rad": repr(scheme.gamma_e_rad),
        "gamma_gg_rad": repr(scheme.gamma_gg_rad),
        "ground_minus_label": scheme.ground_minus_label,
        "ground_plus_label": scheme.ground_plus_label,
        "excited_label": scheme.excited_label,
        "second_excited_label": scheme.second_excited_label or "",
        "second_excited_offset_hz": repr(scheme.second_excited_offset_hz),
    }
    parser["clebsch_weights"] = {
        f"{g}/{e}/{pol}": repr(w) for (g, e, pol), w in scheme.clebsch_weights
    }
    parser["control"] = {
        "intensity": repr(cfg.control.intensity),
        "power_w": repr(cfg.control.power_w),
        "one_photon_detuning_rad": repr(cfg.control.one_photon_detuning_rad),
        "polarization": cfg.control.polarization,
        "angle_alpha_rad": repr(cfg.control.angle_alpha_rad),
        "readout_intensity": (
            "" if cfg.control.readout_intensity is None else repr(cfg.control.readout_intensity)
        ),
    }
    parser["signal"] = {
        "intensity": repr(cfg.signal.intensity),
        "power_w": repr(cfg.signal.power_w),
        "one_photon_detuning_rad": repr(cfg.signal.one_photon_detuning_rad),
        "polarization": cfg.signal.polarization,
        "angle_alpha_rad": repr(cfg.signal.angle_alpha_rad),
    }
    parser["magnetic"] = {
        "b0_gauss": repr(cfg.magnetic.b0_gauss),
        "g_f": repr(cfg.magnetic.g_f),
        "mu_b_over_h_hz_per_gauss": repr(cfg.magnetic.mu_b_over_h_hz_per_gauss),
    }
    parser["experiment"] = {
        "delta_r_hz": repr(cfg.delta_r_hz),
        "sample_rate_hz": repr(cfg.sample_rate_hz),
        "trace_noise_sigma": repr(cfg.trace_noise_sigma),
        "control_leak_fraction": repr(cfg.control_leak_fraction),
        "storage_efficiency": repr(cfg.storage_efficiency),
        "retrieval_decay_time_s": repr(cfg.retrieval_decay_time_s),
        "rng_seed": str(cfg.rng_seed),
        "kappa_rad2": repr(cfg.kappa_rad2),
        "od_eff": repr(cfg.od_eff),
        "coupling_gn_rad": repr(cfg.coupling_gn_rad),
        "include_second_excited": str(cfg.include_second_excited).lower(),
    }
    coupling_lines = "\n" + "\n".join(
        f"{c.detuning_rad!r} {c.cg_sq!r}" for c in cfg.light_shift.couplings
    )
    parser["light_shift"] = {
        "linewidth_rad": repr(cfg.light_shift.linewidth_rad),
        "couplings": coupling_lines if cfg.light_shift.couplings else "",
    }
    seq = loaded.sequence
    parser["pulse_sequence"] = {
        "preparation_s": repr(seq.phase("preparation").duration),
        "input_s": repr(seq.phase("input").duration),
        "storage_s": repr(seq.phase("storage").duration),
        "readout_s": repr(seq.phase("readout").duration),
    }
    study = loaded.study
    parser["study"] = {
        "delta_r_grid_hz": _grid_str(study.delta_r_grid_hz),
        "dark_resonance_grid_hz": _grid_str(study.dark_resonance_grid_hz),
        "control_intensity_grid": _grid_str(study.control_intensity_grid),
        "signal_intensity_grid": _grid_str(study.signal_intensity_grid),
        "repetitions": str(study.repetitions),
        "average_mode": study.average_mode,
    }
    parser["analysis"] = {
        "guard_s": repr(study.guard_s),
        "input_window_s": (
            "" if study.input_window_s is None
            else f"{study.input_window_s[0]!r}, {study.input_window_s[1]!r}"
        ),
        "retrieved_window_s": (
            "" if study.retrieved_window_s is None
            else f"{study.retrieved_window_s[0]!r}, {study.retrieved_window_s[1]!r}"
        ),
    }
    if plan_kind is not None or plan_seed_base is not None:
        plan: dict[str, str] = {}
        if plan_kind is not None:
            plan["kind"] = plan_kind
        if plan_seed_base is not None:
            plan["seed_base"] = str(plan_seed_base)
        parser["plan"] = plan
    with open(path, "w") as fh:
        parser.write(fh)


def write_default_config(path: "str | Path") -> None:
    dump_config(default_config(), path)
