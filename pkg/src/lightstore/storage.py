"""Light-storage protocol and photodiode-trace synthesis.

Storage is modeled at the polariton level: the input beat's phase is handed
to the ground-state spin wave when the fields switch off, advances at the
bare Zeeman splitting while stored, and re-emerges on readout at the
retrieved beat frequency (splitting + differential light shift of the
retrieval drive + geometric pulling).  No spatial propagation is computed;
the observables of interest are carried entirely by this phase bookkeeping.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .atom import ac_stark_shift
from .model import (
    TWO_PI,
    ConfigurationError,
    ExperimentConfig,
    LightShiftModel,
    MagneticEnvironment,
    PulseSequence,
    PHASE_INPUT,
    PHASE_READOUT,
)

__all__ = [
    "PolaritonState",
    "PhotodiodeTrace",
    "TraceParseError",
    "mixing_angle",
    "frequency_pulling",
    "retrieved_beat_frequency",
    "storage_round_trip",
    "simulate_storage",
    "input_beat_frequency",
    "write_trace_csv",
    "read_trace_csv",
]


class TraceParseError(ValueError):
    """Trace file does not conform to the CSV trace format."""


def mixing_angle(g_rad: float, n_density: float, omega_c_rad: float) -> float:
    """Polariton mixing angle, tan(theta) = g sqrt(N) / Omega_C, in [0, pi/2].

    theta -> 0 is fully photonic (strong control), theta = pi/2 is a pure
    spin wave (control off).
    """
    if g_rad < 0.0 or n_density < 0.0:
        raise ValueError("coupling and density must be >= 0")
    if omega_c_rad < 0.0:
        raise ValueError("control Rabi frequency must be >= 0")
    numerator = g_rad * math.sqrt(n_density)
    if numerator == 0.0 and omega_c_rad == 0.0:
        raise ValueError("mixing angle undefined: g sqrt(N) and Omega_C both zero")
    return math.atan2(numerator, omega_c_rad)


@dataclass(frozen=True)
class PolaritonState:
    """Photon/spin-wave superposition amplitude and its stored phase."""

    theta_rad: float
    stored_phase_rad: float = 0.0
    stored_amplitude: float = 0.0

    @property
    def photonic_amplitude(self) -> float:
        return math.cos(self.theta_rad)

    @property
    def spin_amplitude(self) -> float:
        return math.sin(self.theta_rad)

    @classmethod
    def from_couplings(
        cls,
        g_rad: float,
        n_density: float,
        omega_c_rad: float,
        stored_phase_rad: float = 0.0,
        stored_amplitude: float = 0.0,
    ) -> "PolaritonState":
        return cls(mixing_angle(g_rad, n_density, omega_c_rad), stored_phase_rad, stored_amplitude)


def frequency_pulling(delta_r_hz: float, alpha_rad: float, theta_rad: float) -> float:
    """Residual detuning dependence delta_R (1 - cos alpha) cos^2(theta), Hz.

    Vanishes for collinear beams (alpha = 0) and for a pure spin wave
    (theta = pi/2).
    """
    return delta_r_hz * (1.0 - math.cos(alpha_rad)) * math.cos(theta_rad) ** 2


def retrieved_beat_frequency(
    magnetic: MagneticEnvironment,
    readout_intensity: float,
    shift_model: LightShiftModel,
    alpha_rad: float,
    theta_rad: float,
    delta_r_hz: float,
) -> float:
    """Beat frequency of the retrieved signal against the readout control (Hz).

    Locks to the atomic splitting plus the light shift of the retrieval
    drive; the input detuning enters only through the geometric pulling term
    and drops out entirely for collinear beams.
    """
    return (
        magnetic.zeeman_splitting()
        + ac_stark_shift(readout_intensity, shift_model)
        + frequency_pulling(delta_r_hz, alpha_rad, theta_rad)
    )


def input_beat_frequency(config: ExperimentConfig) -> float:
    """Beat of the input signal against the control: splitting + delta_R (Hz)."""
    return config.magnetic.zeeman_splitting() + config.delta_r_hz


def storage_round_trip(
    theta_in: float,
    theta_out: float,
    input_amplitude: float,
    efficiency: float = 1.0,
    stored_phase_rad: float = 0.0,
) -> tuple[float, float]:
    """Retrieved field amplitude and phase after one store/retrieve cycle.

    The polariton amplitude survives the rotation to and from the spin wave,
    so the photonic amplitude maps as cos(theta_out)/cos(theta_in) scaled by
    sqrt(efficiency); the phase rides on the spin wave unchanged.  The
    result is linear in the input amplitude and carries no dependence on the
    input intensity beyond it.
    """
    if input_amplitude < 0.0:
        raise ValueError("input amplitude must be >= 0")
    if not 0.0 <= efficiency <= 1.0:
        raise ValueError("efficiency must be in [0, 1]")
    cos_in = math.cos(theta_in)
    if abs(cos_in) < 1e-12:
        raise ValueError("input polariton has no photonic component (theta_in = pi/2)")
    amplitude = input_amplitude * math.sqrt(efficiency) * math.cos(theta_out) / cos_in
    return amplitude, stored_phase_rad


@dataclass(frozen=True)
class PhotodiodeTrace:
    """Uniformly sampled detector record of the full pulse sequence."""

    t0_s: float
    sample_rate_hz: float
    samples: np.ndarray
    phase_markers: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        arr = np.array(self.samples, dtype=float)
        if arr.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples contain non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if self.sample_rate_hz <= 0.0:
            raise ValueError("sample_rate must be > 0")

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(self.n_samples) / self.sample_rate_hz

    def index_range(self, t_a: float, t_b: float) -> tuple[int, int]:
        """Sample index span [i_a, i_b) for the half-open window [t_a, t_b).

        Boundaries within a millionth of a sample of a grid point count as
        on-grid, so 1-ulp wobble in stored segment times cannot shift the
        selection; a window ending exactly on a segment edge excludes the
        first sample of the next segment.
        """
        eps = 1e-6
        i_a = max(0, int(math.ceil((t_a - self.t0_s) * self.sample_rate_hz - eps)))
        i_b = min(self.n_samples, int(math.ceil((t_b - self.t0_s) * self.sample_rate_hz - eps)))
        return i_a, i_b


def _readout_mixing_angle(config: ExperimentConfig) -> float:
    omega_read = config.readout_rabi_rad()
    if config.coupling_gn_rad == 0.0 and omega_read == 0.0:
        return 0.5 * math.pi  # no retrieval drive: pure spin wave, nothing read out
    return mixing_angle(config.coupling_gn_rad, 1.0, omega_read)


def simulate_storage(config: ExperimentConfig, sequence: PulseSequence) -> PhotodiodeTrace:
    """Synthesize the photodiode record of one storage/retrieval cycle.

    Per segment: control-only phases carry the leaked-control DC level;
    the input phase beats at splitting + delta_R with amplitude
    2 sqrt(leak I_C I_S); the storage gap is dark; the readout phase beats
    at the retrieved frequency with an exponential envelope whose initial
    amplitude is scaled by sqrt(storage_efficiency).  White Gaussian noise
    of width trace_noise_sigma is added throughout; identical seeds give
    bit-identical traces.
    """
    fs = config.sample_rate_hz
    f_in = input_beat_frequency(config)
    theta_out = _readout_mixing_angle(config)
    f_ret = retrieved_beat_frequency(
        config.magnetic,
        config.readout_intensity(),
        config.light_shift,
        config.signal.angle_alpha_rad,
        theta_out,
        config.delta_r_hz,
    )
    if 2.0 * max(abs(f_in), abs(f_ret)) >= fs:
        raise ConfigurationError(
            f"beat frequencies ({f_in:.3e}, {f_ret:.3e} Hz) violate Nyquist at {fs:.3e} Hz"
        )

    t0 = sequence.t_start
    n_total = int(round((sequence.t_end - t0) * fs))
    edges = [int(round((b - t0) * fs)) for b in sequence.boundaries]
    edges[-1] = n_total
    signal = np.zeros(n_total)

    leak = config.control_leak_fraction
    i_s = config.signal.intensity
    zeeman = config.magnetic.zeeman_splitting()

    stored = False
    input_end_phase = 0.0
    input_end_time = 0.0
    for seg, i_a, i_b in zip(sequence.segments, edges[:-1], edges[1:]):
        if i_b <= i_a:
            continue
        t = t0 + np.arange(i_a, i_b) / fs
        i_c = config.readout_intensity() if seg.name == PHASE_READOUT else config.control.intensity
        dc = (leak * i_c if seg.control_on else 0.0) + (i_s if seg.signal_on else 0.0)
        chunk = np.full(t.size, dc)
        if seg.control_on and seg.signal_on:
            amp = 2.0 * math.sqrt(leak * i_c * i_s)
            chunk += amp * np.sin(TWO_PI * f_in * (t - seg.t_start))
            if seg.name == PHASE_INPUT:
                stored = True
                input_end_time = seg.t_end
                input_end_phase = TWO_PI * f_in * (seg.t_end - seg.t_start)
        elif seg.name == PHASE_READOUT and stored and config.storage_efficiency > 0.0:
            # spin-wave phase advances at the bare splitting while dark
            phase0 = input_end_phase + TWO_PI * zeeman * (seg.t_start - input_end_time)
            amp = 2.0 * math.sqrt(
                config.storage_efficiency * leak * config.readout_intensity() * i_s
            )
            envelope = np.exp(-(t - seg.t_start) / config.retrieval_decay_time_s)
            chunk += amp * envelope * np.sin(phase0 + TWO_PI * f_ret * (t - seg.t_start))
        signal[i_a:i_b] = chunk

    if config.trace_noise_sigma > 0.0:
        rng = np.random.default_rng(config.rng_seed)
        signal = signal + rng.normal(0.0, config.trace_noise_sigma, n_total)

    return PhotodiodeTrace(
        t0_s=t0,
        sample_rate_hz=fs,
        samples=signal,
        phase_markers=sequence.boundaries,
    )


# -- trace file format -------------------------------------------------------

_HEADER_RE = re.compile(r"^#\s*sample_rate_hz=(\S+)\s+t0_s=(\S+)\s*$")


def write_trace_csv(trace: PhotodiodeTrace, path: "str | Path") -> None:
    """Trace CSV: one comment header with the sampling metadata, then rows."""
    times = trace.times()
    with open(path, "w", newline="") as fh:
        fh.write(f"# sample_rate_hz={trace.sample_rate_hz!r} t0_s={trace.t0_s!r}\n")
        writer = csv.writer(fh)
        for t, v in zip(times, trace.samples):
            writer.writerow([repr(float(t)), repr(float(v))])


def read_trace_csv(path: "str | Path") -> PhotodiodeTrace:
    """Parse a trace CSV; raises TraceParseError naming the offending line."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceParseError("line 1: empty trace file")
    match = _HEADER_RE.match(lines[0])
    if not match:
        raise TraceParseError(
            "line 1: expected header '# sample_rate_hz=<v> t0_s=<v>', got "
            f"{lines[0][:60]!r}"
        )
    try:
        fs = float(match.group(1))
        t0 = float(match.group(2))
    except ValueError as exc:
        raise TraceParseError(f"line 1: bad header value: {exc}") from exc
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TraceParseError(f"line {lineno}: expected 'time_s,signal', got {line[:60]!r}")
        try:
            values.append(float(parts[1]))
        except ValueError as exc:
            raise TraceParseError(f"line {lineno}: bad signal value: {exc}") from exc
    if not values:
        raise TraceParseError("line 2: trace has no samples")
    try:
        return PhotodiodeTrace(t0_s=t0, sample_rate_hz=fs, samples=np.array(values))
    except ValueError as exc:
        raise TraceParseError(f"line 1: {exc}") from exc
