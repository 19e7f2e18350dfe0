"""Experiment driver: canned studies, persistence, and re-analysis.

Runs the four canonical studies (dark resonance spectrum, beat-frequency
spectroscopy over a Raman-detuning grid, retrieval-intensity sweep, input
signal-intensity sweep) plus stand-alone fitting of trace files.  Every run
writes the same layout: a plan.cfg snapshot that reloads to the exact
configuration, per-point traces and fit tables, a summary.csv, a result.csv
of scalar outcomes, and two-column plotdata files.  Identical seeds yield
byte-identical summary CSVs whether points are evaluated serially or in a
process pool.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    BeatFitResult,
    FitError,
    LineFit,
    SIGMA_FLOOR_HZ,
    SpectroscopyPoint,
    SpectroscopyResult,
    fit_beat,
    linear_fit,
    slope_significance,
    write_fits_csv,
)
from .atom import spectrum_fwhm, transmission_spectrum, write_spectrum_csv
from .configfile import (
    AVERAGE_TRACES,
    LoadedExperiment,
    StudyDefaults,
    dump_config,
    load_config,
)
from .model import (
    ConfigurationError,
    ExperimentConfig,
    PulseSequence,
    TWO_PI,
    with_readout_intensity,
    with_signal_intensity,
)
from .storage import PhotodiodeTrace, read_trace_csv, simulate_storage, write_trace_csv

__all__ = [
    "StudyPlan",
    "RunRecord",
    "OrchestrationError",
    "point_seed",
    "run_spectroscopy",
    "run_control_sweep",
    "run_signal_sweep",
    "run_dark_resonance",
    "fit_only",
    "reanalyze_spectroscopy",
    "STUDY_KINDS",
]

STUDY_KINDS = ("dark_resonance", "spectroscopy", "control_sweep", "signal_sweep", "fit_only")


class OrchestrationError(RuntimeError):
    """A study could not produce a usable result."""


_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    """splitmix64 finalizer; stable across processes and interpreter runs."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def point_seed(seed_base: int, index: int, rep: int = 0) -> int:
    """Per-point RNG seed: base XOR a mix of the point and repetition index."""
    return (seed_base ^ _mix64(((index + 1) << 20) | rep)) & ((1 << 63) - 1)


@dataclass(frozen=True)
class StudyPlan:
    """One study: kind, base configuration, grids and execution knobs."""

    kind: str
    config: ExperimentConfig
    sequence: PulseSequence
    study: StudyDefaults
    seed_base: int
    out_dir: Path | None = None
    jobs: int = 1
    persist_traces: bool = True

    def __post_init__(self) -> None:
        if self.kind not in STUDY_KINDS:
            raise ConfigurationError(f"unknown study kind {self.kind!r}")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")

    @classmethod
    def from_loaded(
        cls,
        loaded: LoadedExperiment,
        kind: str,
        seed_base: int | None = None,
        out_dir: "Path | str | None" = None,
        jobs: int = 1,
        persist_traces: bool = True,
    ) -> "StudyPlan":
        if seed_base is None:
            seed_base = loaded.config.rng_seed
        return cls(
            kind=kind,
            config=loaded.config,
            sequence=loaded.sequence,
            study=loaded.study,
            seed_base=int(seed_base),
            out_dir=None if out_dir is None else Path(out_dir),
            jobs=jobs,
            persist_traces=persist_traces,
        )

    @property
    def grid(self) -> tuple[float, ...]:
        return {
            "spectroscopy": self.study.delta_r_grid_hz,
            "dark_resonance": self.study.dark_resonance_grid_hz,
            "control_sweep": self.study.control_intensity_grid,
            "signal_sweep": self.study.signal_intensity_grid,
        }[self.kind]

    def loaded(self) -> LoadedExperiment:
        return LoadedExperiment(config=self.config, sequence=self.sequence, study=self.study)


@dataclass(frozen=True)
class PointRecord:
    """Outcome of one grid point (excluded points carry the error message)."""

    index: int
    x: float
    values: tuple[tuple[str, float], ...] = ()
    error: str | None = None
    fits: tuple[tuple[str, BeatFitResult], ...] = ()
    trace_arrays: tuple[np.ndarray, ...] = ()

    @property
    def excluded(self) -> bool:
        return self.error is not None

    def value(self, key: str) -> float:
        for k, v in self.values:
            if k == key:
                return v
        raise KeyError(key)


@dataclass(frozen=True)
class RunRecord:
    """Everything a finished study persisted, plus in-memory results."""

    kind: str
    seed_base: int
    out_dir: Path | None
    points: tuple[PointRecord, ...]
    summary: tuple[tuple[str, float], ...]
    version: str
    started_at: str
    elapsed_s: float
    trace_paths: tuple[str, ...] = ()


def default_windows(
    sequence: PulseSequence, study: StudyDefaults
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Fit windows: full input/readout epochs minus the post-edge guard."""
    if study.input_window_s is not None:
        w_in = study.input_window_s
    else:
        seg = sequence.phase("input")
        w_in = (seg.t_start + study.guard_s, seg.t_end)
    if study.retrieved_window_s is not None:
        w_ret = study.retrieved_window_s
    else:
        seg = sequence.phase("readout")
        w_ret = (seg.t_start + study.guard_s, seg.t_end)
    return w_in, w_ret


def _weighted_mean(values: np.ndarray, sigmas: np.ndarray) -> tuple[float, float]:
    w = 1.0 / np.maximum(sigmas, SIGMA_FLOOR_HZ) ** 2
    mean = float(np.sum(w * values) / np.sum(w))
    return mean, float(1.0 / math.sqrt(np.sum(w)))


def _measure_point(args: tuple) -> PointRecord:
    """Synthesize the repetitions of one detuning point and fit both epochs.

    Module-level so a process pool can pickle it; returns everything the
    parent needs (including trace arrays for persistence).
    """
    (index, delta_r, config, sequence, study, seed_base, keep_traces) = args
    try:
        traces = []
        for rep in range(study.repetitions):
            cfg = replace(
                config, delta_r_hz=delta_r, rng_seed=point_seed(seed_base, index, rep)
            )
            traces.append(simulate_storage(cfg, sequence))
        w_in, w_ret = default_windows(sequence, study)
        fits: list[tuple[str, BeatFitResult]] = []
        if study.average_mode == AVERAGE_TRACES:
            averaged = PhotodiodeTrace(
                t0_s=traces[0].t0_s,
                sample_rate_hz=traces[0].sample_rate_hz,
                samples=np.mean([tr.samples for tr in traces], axis=0),
                phase_markers=traces[0].phase_markers,
            )
            fit_in = fit_beat(averaged, w_in, with_envelope=False)
            fit_ret = fit_beat(averaged, w_ret, with_envelope=True)
            fits = [("input", fit_in), ("retrieved", fit_ret)]
            f_in, f_in_err = fit_in.f_b_hz, fit_in.f_b_err_hz
            f_ret, f_ret_err = fit_ret.f_b_hz, fit_ret.f_b_err_hz
            arrays = (averaged.samples,) if keep_traces else ()
        else:
            per_in, per_ret = [], []
            for rep, tr in enumerate(traces):
                fi = fit_beat(tr, w_in, with_envelope=False)
                fr = fit_beat(tr, w_ret, with_envelope=True)
                fits += [(f"input_rep{rep}", fi), (f"retrieved_rep{rep}", fr)]
                per_in.append((fi.f_b_hz, fi.f_b_err_hz))
                per_ret.append((fr.f_b_hz, fr.f_b_err_hz))
            f_in, f_in_err = _weighted_mean(*map(np.array, zip(*per_in)))
            f_ret, f_ret_err = _weighted_mean(*map(np.array, zip(*per_ret)))
            arrays = tuple(tr.samples for tr in traces) if keep_traces else ()
        return PointRecord(
            index=index,
            x=delta_r,
            values=(
                ("f_input_hz", f_in),
                ("f_input_err_hz", f_in_err),
                ("f_retrieved_hz", f_ret),
                ("f_retrieved_err_hz", f_ret_err),
            ),
            fits=tuple(fits),
            trace_arrays=arrays,
        )
    except FitError as exc:
        return PointRecord(index=index, x=delta_r, error=f"{type(exc).__name__}: {exc}")


def _map_points(plan: StudyPlan, tasks: list[tuple]) -> list[PointRecord]:
    if plan.jobs > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
            return list(pool.map(_measure_point, tasks))
    return [_measure_point(t) for t in tasks]


def _eit_window_estimate_hz(config: ExperimentConfig) -> float:
    """Rough transparency-window FWHM: power-broadened term plus dephasing."""
    gamma_e = config.level_scheme.gamma_e_rad
    if gamma_e <= 0.0:
        return math.inf
    omega_c = config.control.rabi_frequency_rad
    return (omega_c**2 / gamma_e + 2.0 * config.level_scheme.gamma_gg_rad) / TWO_PI


# -- persistence helpers -----------------------------------------------------


def _write_rows_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_result_csv(path: Path, entries: "tuple[tuple[str, float], ...]") -> None:
    _write_rows_csv(path, ["key", "value"], [[k, _fmt(v)] for k, v in entries])


def _write_plot_xy(path: Path, xs, ys) -> None:
    _write_rows_csv(path, ["x", "y"], [[_fmt(x), _fmt(y)] for x, y in zip(xs, ys)])


def _line_endpoints(fit: LineFit, xs) -> tuple[list, list]:
    lo, hi = float(min(xs)), float(max(xs))
    return [lo, hi], [float(fit.predict(lo)), float(fit.predict(hi))]


def _persist_point(point: PointRecord, point_dir: Path, plan: StudyPlan) -> list[str]:
    point_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if point.fits:
        write_fits_csv(list(point.fits), point_dir / "fits.csv")
    if plan.persist_traces and point.trace_arrays:
        single = len(point.trace_arrays) == 1
        for k, samples in enumerate(point.trace_arrays):
            name = "trace.csv" if single else f"trace_rep{k}.csv"
            trace = PhotodiodeTrace(
                t0_s=plan.sequence.t_start,
                sample_rate_hz=plan.config.sample_rate_hz,
                samples=samples,
                phase_markers=plan.sequence.boundaries,
            )
            write_trace_csv(trace, point_dir / name)
            paths.append(str(point_dir / name))
    return paths


def _start_run(plan: StudyPlan) -> tuple[StudyPlan, float, str]:
    """Persist the plan snapshot and canonicalize the plan through it.

    Running from the reloaded snapshot makes re-analysis of the persisted
    run bit-identical to the original: both paths see exactly the values
    plan.cfg encodes (the config file round trip is a fixed point).
    """
    if plan.out_dir is not None:
        plan.out_dir.mkdir(parents=True, exist_ok=True)
        (plan.out_dir / "plotdata").mkdir(exist_ok=True)
        dump_config(
            plan.loaded(), plan.out_dir / "plan.cfg",
            plan_kind=plan.kind, plan_seed_base=plan.seed_base,
        )
        reloaded = load_config(plan.out_dir / "plan.cfg")
        plan = replace(
            plan, config=reloaded.config, sequence=reloaded.sequence, study=reloaded.study
        )
    return plan, time.monotonic(), time.strftime("%Y-%m-%dT%H:%M:%S")


def _finish_run(
    plan: StudyPlan,
    points: tuple[PointRecord, ...],
    summary: tuple[tuple[str, float], ...],
    t_start: float,
    started_at: str,
    trace_paths: tuple[str, ...],
) -> RunRecord:
    record = RunRecord(
        kind=plan.kind,
        seed_base=plan.seed_base,
        out_dir=plan.out_dir,
        points=points,
        summary=summary,
        version=__version__,
        started_at=started_at,
        elapsed_s=time.monotonic() - t_start,
        trace_paths=trace_paths,
    )
    if plan.out_dir is not None:
        meta = {
            "kind": record.kind,
            "version": record.version,
            "seed_base": record.seed_base,
            "started_at": record.started_at,
            "elapsed_s": record.elapsed_s,
            "n_points": len(record.points),
            "n_excluded": sum(p.excluded for p in record.points),
            "trace_paths": list(record.trace_paths),
        }
        with open(plan.out_dir / "run.json", "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")
    return record


# -- studies -----------------------------------------------------------------


def run_spectroscopy(plan: StudyPlan) -> tuple[SpectroscopyResult, RunRecord]:
    """Synthesize and fit one trace pair per Raman detuning, then intersect.

    Per-point fit failures exclude the point and are reported in the
    summary; fewer than three surviving points aborts the study.
    """
    if plan.kind != "spectroscopy":
        raise ConfigurationError(f"plan kind {plan.kind!r} is not spectroscopy")
    grid = plan.study.delta_r_grid_hz
    window_est = _eit_window_estimate_hz(plan.config)
    if max(abs(d) for d in grid) > window_est:
        warnings.warn(
            f"detuning grid extends past the estimated transparency window "
            f"({window_est:.0f} Hz)",
            stacklevel=2,
        )
    plan, t0, started = _start_run(plan)
    tasks = [
        (i, float(d), plan.config, plan.sequence, plan.study, plan.seed_base,
         plan.out_dir is not None and plan.persist_traces)
        for i, d in enumerate(grid)
    ]
    points = tuple(_map_points(plan, tasks))

    surviving = [p for p in points if not p.excluded]
    if len(surviving) < 3:
        raise OrchestrationError(
            f"only {len(surviving)} of {len(points)} points usable; need >= 3"
        )
    result = SpectroscopyResult.from_points(
        [
            SpectroscopyPoint(
                delta_r_hz=p.x,
                f_input_hz=p.value("f_input_hz"),
                f_input_err_hz=p.value("f_input_err_hz"),
                f_retrieved_hz=p.value("f_retrieved_hz"),
                f_retrieved_err_hz=p.value("f_retrieved_err_hz"),
            )
            for p in surviving
        ]
    )
    summary = (
        ("input_slope", result.input_fit.slope),
        ("input_slope_err", result.input_fit.slope_err),
        ("input_intercept_hz", result.input_fit.intercept),
        ("input_intercept_err_hz", result.input_fit.intercept_err),
        ("input_chi2_per_dof", result.input_fit.chi2_per_dof),
        ("retrieved_slope", result.retrieved_fit.slope),
        ("retrieved_slope_err", result.retrieved_fit.slope_err),
        ("retrieved_intercept_hz", result.retrieved_fit.intercept),
        ("retrieved_intercept_err_hz", result.retrieved_fit.intercept_err),
        ("retrieved_chi2_per_dof", result.retrieved_fit.chi2_per_dof),
        ("delta_f_ac_hz", result.delta_f_ac_hz),
        ("delta_f_ac_err_hz", result.delta_f_ac_err_hz),
    )

    trace_paths: list[str] = []
    if plan.out_dir is not None:
        rows = []
        for p in points:
            if p.excluded:
                rows.append([str(p.index), _fmt(p.x), "", "", "", "", "1", p.error])
            else:
                rows.append([
                    str(p.index), _fmt(p.x),
                    _fmt(p.value("f_input_hz")), _fmt(p.value("f_input_err_hz")),
                    _fmt(p.value("f_retrieved_hz")), _fmt(p.value("f_retrieved_err_hz")),
                    "0", "",
                ])
            trace_paths += _persist_point(p, plan.out_dir / "points" / str(p.index), plan)
        _write_rows_csv(
            plan.out_dir / "summary.csv",
            ["index", "delta_r_hz", "f_input_hz", "f_input_err_hz",
             "f_retrieved_hz", "f_retrieved_err_hz", "excluded", "error"],
            rows,
        )
        _write_result_csv(plan.out_dir / "result.csv", summary)
        xs = [p.delta_r_hz for p in result.points]
        _write_plot_xy(plan.out_dir / "plotdata" / "input_points.csv",
                       xs, [p.f_input_hz for p in result.points])
        _write_plot_xy(plan.out_dir / "plotdata" / "retrieved_points.csv",
                       xs, [p.f_retrieved_hz for p in result.points])
        _write_plot_xy(plan.out_dir / "plotdata" / "input_line.csv",
                       *_line_endpoints(result.input_fit, xs))
        _write_plot_xy(plan.out_dir / "plotdata" / "retrieved_line.csv",
                       *_line_endpoints(result.retrieved_fit, xs))

    record = _finish_run(plan, points, summary, t0, started, tuple(trace_paths))
    return result, record


def _run_shift_sweep(
    plan: StudyPlan, vary: str
) -> tuple[list[tuple[float, float, float]], dict[str, LineFit], RunRecord]:
    """Shared driver for the control/signal intensity sweeps.

    Runs a nested spectroscopy per grid intensity and regresses the
    extracted shift against intensity.  Returns the surviving
    (intensity, shift, sigma) triples and the line fits.
    """
    plan, t0, started = _start_run(plan)
    grid = plan.grid
    sweep_points: list[PointRecord] = []
    for i, intensity in enumerate(grid):
        if vary == "control":
            cfg = with_readout_intensity(plan.config, float(intensity))
        else:
            cfg = with_signal_intensity(plan.config, float(intensity))
        inner = StudyPlan(
            kind="spectroscopy",
            config=cfg,
            sequence=plan.sequence,
            study=plan.study,
            seed_base=point_seed(plan.seed_base, i),
            out_dir=None if plan.out_dir is None else plan.out_dir / "points" / str(i),
            jobs=plan.jobs,
            persist_traces=plan.persist_traces,
        )
        try:
            result, _ = run_spectroscopy(inner)
            if math.isnan(result.delta_f_ac_hz):
                raise OrchestrationError("intersection ill-conditioned")
            sweep_points.append(PointRecord(
                index=i, x=float(intensity),
                values=(
                    ("delta_f_ac_hz", result.delta_f_ac_hz),
                    ("delta_f_ac_err_hz", result.delta_f_ac_err_hz),
                ),
            ))
        except (FitError, OrchestrationError) as exc:
            sweep_points.append(PointRecord(
                index=i, x=float(intensity), error=f"{type(exc).__name__}: {exc}"
            ))

    surviving = [p for p in sweep_points if not p.excluded]
    if len(surviving) < 3:
        raise OrchestrationError(
            f"only {len(surviving)} of {len(sweep_points)} sweep points usable; need >= 3"
        )
    xs = np.array([p.x for p in surviving])
    ys = np.array([p.value("delta_f_ac_hz") for p in surviving])
    sigmas = np.array(
        [max(p.value("delta_f_ac_err_hz"), SIGMA_FLOOR_HZ) for p in surviving]
    )
    fits = {"full": linear_fit(xs, ys, sigmas)}
    if vary == "signal":
        limit = plan.config.control.intensity
        keep = xs <= limit
        if int(np.sum(keep)) >= 3:
            fits["restricted"] = linear_fit(xs[keep], ys[keep], sigmas[keep])

    if plan.out_dir is not None:
        rows = []
        for p in sweep_points:
            if p.excluded:
                rows.append([str(p.index), _fmt(p.x), "", "", "1", p.error])
            else:
                rows.append([
                    str(p.index), _fmt(p.x),
                    _fmt(p.value("delta_f_ac_hz")), _fmt(p.value("delta_f_ac_err_hz")),
                    "0", "",
                ])
        _write_rows_csv(
            plan.out_dir / "summary.csv",
            ["index", "intensity", "delta_f_ac_hz", "delta_f_ac_err_hz",
             "excluded", "error"],
            rows,
        )
        _write_plot_xy(plan.out_dir / "plotdata" / "shift_points.csv", xs, ys)
        _write_plot_xy(plan.out_dir / "plotdata" / "shift_line.csv",
                       *_line_endpoints(fits["full"], xs))
        if "restricted" in fits:
            keep_xs = xs[xs <= plan.config.control.intensity]
            _write_plot_xy(plan.out_dir / "plotdata" / "shift_line_restricted.csv",
                           *_line_endpoints(fits["restricted"], keep_xs))

    triples = [(p.x, p.value("delta_f_ac_hz"), p.value("delta_f_ac_err_hz"))
               for p in surviving]
    record = _finish_run(plan, tuple(sweep_points), (), t0, started, ())
    return triples, fits, record


def _weighted_r_squared(fit: LineFit, xs, ys, sigmas) -> float:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    w = 1.0 / np.asarray(sigmas, dtype=float) ** 2
    y_bar = float(np.sum(w * ys) / np.sum(w))
    ss_res = float(np.sum(w * (ys - fit.predict(xs)) ** 2))
    ss_tot = float(np.sum(w * (ys - y_bar) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0.0 else math.nan


def run_control_sweep(plan: StudyPlan) -> tuple[list[tuple[float, float, float]], LineFit, RunRecord]:
    """Extract the shift for each retrieval intensity and fit its linearity."""
    if plan.kind != "control_sweep":
        raise ConfigurationError(f"plan kind {plan.kind!r} is not control_sweep")
    triples, fits, record = _run_shift_sweep(plan, vary="control")
    fit = fits["full"]
    xs = [t[0] for t in triples]
    ys = [t[1] for t in triples]
    sigmas = [max(t[2], SIGMA_FLOOR_HZ) for t in triples]
    cg_sq = plan.config.control_cg() ** 2
    summary = (
        ("slope_hz_per_intensity", fit.slope),
        ("slope_err_hz_per_intensity", fit.slope_err),
        ("slope_t_statistic", slope_significance(fit)),
        ("slope_hz_per_cg2_intensity", fit.slope / cg_sq if cg_sq else math.nan),
        ("intercept_hz", fit.intercept),
        ("intercept_err_hz", fit.intercept_err),
        ("intercept_t_statistic",
         fit.intercept / fit.intercept_err if fit.intercept_err > 0.0 else math.nan),
        ("r_squared", _weighted_r_squared(fit, xs, ys, sigmas)),
        ("chi2_per_dof", fit.chi2_per_dof),
        ("model_slope_hz_per_intensity", plan.config.light_shift.slope_per_intensity_hz),
    )
    record = replace(record, summary=summary)
    if plan.out_dir is not None:
        _write_result_csv(plan.out_dir / "result.csv", summary)
    return triples, fit, record


def run_signal_sweep(plan: StudyPlan) -> tuple[list[tuple[float, float, float]], dict[str, LineFit], RunRecord]:
    """Vary the input signal intensity; report full and restricted-range fits.

    The restricted fit covers I_S <= I_C (the preparation control
    intensity), mirroring the regime where the weak-signal picture holds.
    """
    if plan.kind != "signal_sweep":
        raise ConfigurationError(f"plan kind {plan.kind!r} is not signal_sweep")
    triples, fits, record = _run_shift_sweep(plan, vary="signal")
    full = fits["full"]
    cg_sq = plan.config.signal_cg() ** 2
    summary = [
        ("full_slope_hz_per_intensity", full.slope),
        ("full_slope_err_hz_per_intensity", full.slope_err),
        ("full_slope_t_statistic", slope_significance(full)),
        ("full_slope_hz_per_cg2_intensity", full.slope / cg_sq if cg_sq else math.nan),
        ("control_intensity_limit", plan.config.control.intensity),
    ]
    if "restricted" in fits:
        restricted = fits["restricted"]
        summary += [
            ("restricted_slope_hz_per_intensity", restricted.slope),
            ("restricted_slope_err_hz_per_intensity", restricted.slope_err),
            ("restricted_slope_t_statistic", slope_significance(restricted)),
            ("restricted_n_points",
             float(sum(1 for t in triples if t[0] <= plan.config.control.intensity))),
        ]
    summary_t = tuple(summary)
    record = replace(record, summary=summary_t)
    if plan.out_dir is not None:
        _write_result_csv(plan.out_dir / "result.csv", summary_t)
    return triples, fits, record


def run_dark_resonance(plan: StudyPlan) -> tuple[list, RunRecord]:
    """Steady-state transmission spectrum over the configured detuning grid."""
    if plan.kind != "dark_resonance":
        raise ConfigurationError(f"plan kind {plan.kind!r} is not dark_resonance")
    plan, t0, started = _start_run(plan)
    points = transmission_spectrum(plan.config, np.array(plan.study.dark_resonance_grid_hz))
    transmissions = [p.transmission for p in points]
    i_peak = int(np.argmax(transmissions))
    try:
        fwhm = spectrum_fwhm(points)
    except ValueError:
        fwhm = math.nan
    summary = (
        ("fwhm_hz", fwhm),
        ("peak_delta_r_hz", points[i_peak].delta_r_hz),
        ("peak_transmission", points[i_peak].transmission),
        ("background_transmission", float(min(transmissions))),
    )
    if plan.out_dir is not None:
        write_spectrum_csv(points, plan.out_dir / "summary.csv")
        _write_result_csv(plan.out_dir / "result.csv", summary)
        xs = [p.delta_r_hz for p in points]
        _write_plot_xy(plan.out_dir / "plotdata" / "transmission.csv", xs, transmissions)
        _write_plot_xy(plan.out_dir / "plotdata" / "absorption_proxy.csv",
                       xs, [p.absorption_proxy for p in points])
    record = _finish_run(plan, (), summary, t0, started, ())
    return points, record


def fit_only(
    trace_path: "Path | str",
    window: tuple[float, float] | None = None,
    f_guess: float | None = None,
    with_envelope: bool = False,
    out_dir: "Path | str | None" = None,
    window_id: str = "fit",
) -> BeatFitResult:
    """Fit an externally recorded (or exported) trace file.

    The output fits.csv uses the same schema as the synthetic studies.
    """
    trace = read_trace_csv(trace_path)
    if window is None:
        window = (trace.t0_s, trace.t0_s + trace.duration_s)
    fit = fit_beat(trace, window, f_guess=f_guess, with_envelope=with_envelope)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_fits_csv([(window_id, fit)], out / "fits.csv")
    return fit


def reanalyze_spectroscopy(run_dir: "Path | str") -> SpectroscopyResult:
    """Rebuild a spectroscopy result from persisted traces and plan.cfg alone."""
    run_dir = Path(run_dir)
    loaded = load_config(run_dir / "plan.cfg")
    if loaded.plan_kind != "spectroscopy":
        raise ConfigurationError(
            f"run directory holds a {loaded.plan_kind!r} study, not spectroscopy"
        )
    w_in, w_ret = default_windows(loaded.sequence, loaded.study)
    grid = loaded.study.delta_r_grid_hz
    points = []
    for i, delta_r in enumerate(grid):
        point_dir = run_dir / "points" / str(i)
        if not point_dir.exists():
            continue
        single = point_dir / "trace.csv"
        if single.exists():
            trace = read_trace_csv(single)
            fit_in = fit_beat(trace, w_in, with_envelope=False)
            fit_ret = fit_beat(trace, w_ret, with_envelope=True)
            f_in, f_in_err = fit_in.f_b_hz, fit_in.f_b_err_hz
            f_ret, f_ret_err = fit_ret.f_b_hz, fit_ret.f_b_err_hz
        else:
            rep_paths = sorted(
                point_dir.glob("trace_rep*.csv"),
                key=lambda p: int(p.stem.replace("trace_rep", "")),
            )
            if not rep_paths:
                continue
            per_in, per_ret = [], []
            for path in rep_paths:
                trace = read_trace_csv(path)
                fi = fit_beat(trace, w_in, with_envelope=False)
                fr = fit_beat(trace, w_ret, with_envelope=True)
                per_in.append((fi.f_b_hz, fi.f_b_err_hz))
                per_ret.append((fr.f_b_hz, fr.f_b_err_hz))
            f_in, f_in_err = _weighted_mean(*map(np.array, zip(*per_in)))
            f_ret, f_ret_err = _weighted_mean(*map(np.array, zip(*per_ret)))
        points.append(SpectroscopyPoint(
            delta_r_hz=float(grid[i]),
            f_input_hz=f_in, f_input_err_hz=f_in_err,
            f_retrieved_hz=f_ret, f_retrieved_err_hz=f_ret_err,
        ))
    if len(points) < 3:
        raise OrchestrationError("fewer than 3 persisted points to re-analyze")
    return SpectroscopyResult.from_points(points)
