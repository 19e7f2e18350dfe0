"""Acceptance suite: one test per release criterion, tolerances pinned.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion.  The statistical criteria use fixed seed blocks and are
deterministic.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from lightstore.analysis import LineFit, fit_beat, intersection, linear_fit
from lightstore.atom import (
    DensityMatrix,
    evolve,
    optical_coherence_rate,
    signal_coherence,
    steady_state,
    steady_state_residual,
)
from lightstore.configfile import default_config
from lightstore.model import PulseSequence, TWO_PI, with_signal_intensity
from lightstore.orchestrator import (
    StudyPlan,
    run_control_sweep,
    run_dark_resonance,
    run_signal_sweep,
    run_spectroscopy,
)
from lightstore.storage import PhotodiodeTrace

INJECTED_SHIFT_HZ = 7000.0


@pytest.fixture(scope="module")
def loaded():
    return default_config()


def test_criterion_1_frequency_matching(loaded):
    """Input line slope 1.00 +- 0.02; retrieved line |slope| < 0.02; < 60 s."""
    t0 = time.monotonic()
    plan = StudyPlan.from_loaded(loaded, "spectroscopy", seed_base=1)
    result, _ = run_spectroscopy(plan)
    elapsed = time.monotonic() - t0
    assert abs(result.input_fit.slope - 1.0) <= 0.02
    assert abs(result.retrieved_fit.slope) < 0.02
    assert elapsed < 60.0
    print(f"\n[PASS] criterion 1: frequency matching "
          f"(input slope {result.input_fit.slope:+.5f}, "
          f"retrieved slope {result.retrieved_fit.slope:+.5f}, {elapsed:.1f} s)")


def test_criterion_2_closed_loop_shift_recovery(loaded):
    """Injected 7 kHz shift inside quoted sigma >= 68% / 3 sigma >= 99% of 200 trials."""
    t0 = time.monotonic()
    n_trials = 200
    hits_1 = hits_3 = 0
    for seed in range(n_trials):
        plan = StudyPlan.from_loaded(loaded, "spectroscopy", seed_base=seed)
        result, _ = run_spectroscopy(plan)
        deviation = abs(result.delta_f_ac_hz - INJECTED_SHIFT_HZ)
        hits_1 += deviation <= result.delta_f_ac_err_hz
        hits_3 += deviation <= 3.0 * result.delta_f_ac_err_hz
    elapsed = time.monotonic() - t0
    assert hits_1 >= math.ceil(0.68 * n_trials)
    assert hits_3 >= math.ceil(0.99 * n_trials)
    assert elapsed < 600.0
    print(f"\n[PASS] criterion 2: closed-loop shift recovery "
          f"({hits_1}/{n_trials} within 1 sigma, {hits_3}/{n_trials} within 3 sigma, "
          f"{elapsed:.0f} s)")


def test_criterion_3_control_intensity_linearity(loaded):
    """Slope within 5% of model, R^2 >= 0.99, intercept zero at 2 sigma."""
    plan = StudyPlan.from_loaded(loaded, "control_sweep", seed_base=3)
    triples, fit, record = run_control_sweep(plan)
    summary = dict(record.summary)
    model_slope = summary["model_slope_hz_per_intensity"]
    assert len(triples) == 6
    assert abs(fit.slope - model_slope) / model_slope <= 0.05
    assert summary["r_squared"] >= 0.99
    assert abs(fit.intercept) <= 2.0 * fit.intercept_err
    print(f"\n[PASS] criterion 3: control linearity "
          f"(slope {fit.slope:.2f} vs model {model_slope:.2f} Hz/I, "
          f"R^2 {summary['r_squared']:.6f}, intercept |t| "
          f"{abs(summary['intercept_t_statistic']):.2f})")


def test_criterion_4_signal_intensity_insensitivity(loaded):
    """Restricted-range |t| < 2 in >= 95% of 100 trials; slope ratio bound 30."""
    control_plan = StudyPlan.from_loaded(loaded, "control_sweep", seed_base=3)
    _, control_fit, control_record = run_control_sweep(control_plan)
    control_slope_norm = dict(control_record.summary)["slope_hz_per_cg2_intensity"]

    n_trials = 100
    t_ok = 0
    worst_ratio = 0.0
    for seed in range(n_trials):
        plan = StudyPlan.from_loaded(loaded, "signal_sweep", seed_base=seed)
        _, fits, record = run_signal_sweep(plan)
        summary = dict(record.summary)
        t_ok += abs(summary["restricted_slope_t_statistic"]) < 2.0
        signal_slope_norm = abs(summary["full_slope_hz_per_cg2_intensity"])
        worst_ratio = max(worst_ratio, signal_slope_norm / abs(control_slope_norm))
    assert t_ok >= math.ceil(0.95 * n_trials)
    assert worst_ratio <= 1.0 / 30.0
    print(f"\n[PASS] criterion 4: signal insensitivity "
          f"({t_ok}/{n_trials} trials with |t| < 2; worst slope ratio "
          f"{worst_ratio:.2e} <= 1/30)")


def test_criterion_5_dark_resonance_calibration(loaded):
    """Calibrated FWHM in [10, 40] kHz, peak at zero detuning, symmetric."""
    plan = StudyPlan.from_loaded(loaded, "dark_resonance", seed_base=1)
    points, record = run_dark_resonance(plan)
    summary = dict(record.summary)
    assert 10e3 <= summary["fwhm_hz"] <= 40e3
    assert summary["peak_delta_r_hz"] == pytest.approx(0.0, abs=1e-9)
    transmission = np.array([p.transmission for p in points])
    assert np.max(np.abs(transmission - transmission[::-1])) < 1e-10
    print(f"\n[PASS] criterion 5: dark resonance "
          f"(FWHM {summary['fwhm_hz'] / 1e3:.2f} kHz, peak at "
          f"{summary['peak_delta_r_hz']:.2f} Hz, symmetric to 1e-10)")


def test_criterion_6_master_equation_integrity(loaded):
    """Trace, Hermiticity, positivity along trajectories; steady state checks."""
    config = loaded.config
    sequence = PulseSequence.standard(8e-6, 8e-6, 2e-6, 8e-6)
    rho0 = DensityMatrix(np.diag([0.4, 0.6, 0.0]).astype(complex))
    trajectory = evolve(rho0, config, sequence, samples_per_segment=8)
    worst_trace = max(s.trace_deviation for s in trajectory)
    worst_herm = max(s.hermiticity_deviation for s in trajectory)
    worst_eig = min(s.min_eigenvalue for s in trajectory)
    assert worst_trace < 1e-9
    assert worst_herm < 1e-12
    assert worst_eig > -1e-9

    fixed = steady_state(config)
    residual = steady_state_residual(config, fixed)
    assert residual < 1e-10

    weak = with_signal_intensity(config, config.signal.intensity * 1e-8)
    worst_rel = 0.0
    for delta_r in (0.0, 3e3, -7e3, 12e3):
        cfg = replace(weak, delta_r_hz=delta_r)
        numeric = signal_coherence(steady_state(cfg))
        om_s = cfg.signal.rabi_frequency_rad
        om_c = cfg.control.rabi_frequency_rad
        g13 = optical_coherence_rate(cfg.level_scheme)
        gam = cfg.level_scheme.gamma_gg_rad
        dlt = TWO_PI * delta_r
        analytic = (1j * om_s / 2.0) * (gam - 1j * dlt) / (
            g13 * (gam - 1j * dlt) + om_c**2 / 4.0
        )
        worst_rel = max(worst_rel, abs(numeric - analytic) / abs(analytic))
    assert worst_rel < 1e-6
    print(f"\n[PASS] criterion 6: master-equation integrity "
          f"(trace {worst_trace:.1e}, herm {worst_herm:.1e}, eig {worst_eig:+.1e}, "
          f"steady residual {residual:.1e}, weak-probe rel {worst_rel:.1e})")


def test_criterion_7_estimator_oracles(loaded):
    """fit_beat exact on its own model; linear_fit closed form; intersection."""
    fs = loaded.config.sample_rate_hz
    n = int(round(50e-6 * fs))
    t = np.arange(n) / fs
    truth = dict(c0=1.5, c1=2e3, a=3.8, f=685815.76, phi=0.7, tau=12e-6)
    v = truth["c0"] + truth["c1"] * t + truth["a"] * np.exp(-t / truth["tau"]) * np.sin(
        2.0 * np.pi * truth["f"] * t + truth["phi"]
    )
    trace = PhotodiodeTrace(t0_s=0.0, sample_rate_hz=fs, samples=v)
    fit = fit_beat(trace, (0.0, n / fs), with_envelope=True)
    recovered = dict(c0=fit.dc_offset, c1=fit.dc_slope, a=fit.amplitude,
                     f=fit.f_b_hz, phi=fit.phase_rad, tau=fit.envelope_decay_time_s)
    worst = max(abs(recovered[k] - truth[k]) / abs(truth[k]) for k in truth)
    assert worst <= 1e-6

    # closed-form normal equations, hand-computed: slope 2, intercept 0,
    # var_m = 12/324, var_b = 102/324, cov = -30/324, chi2 = 0.4
    line = linear_fit(
        [1.0, 1.0, 1.0, 4.0, 4.0, 4.0],
        [2.0, 2.2, 1.8, 8.0, 8.4, 7.6],
        [0.5, 1.0, 1.0, 0.5, 1.0, 1.0],
    )
    assert line.slope == pytest.approx(2.0, abs=1e-12)
    assert line.intercept == pytest.approx(0.0, abs=1e-12)
    assert line.slope_err == pytest.approx(math.sqrt(12.0 / 324.0), rel=1e-12)
    assert line.covariance[0, 1] == pytest.approx(-30.0 / 324.0, rel=1e-12)

    exact = lambda m, b: LineFit(m, b, 0.0, 0.0, np.zeros((2, 2)), 0.0, 3)
    x_star, sigma = intersection(exact(1.0, 0.0), exact(0.0, 7.0))
    assert x_star == 7.0 and sigma == 0.0
    print(f"\n[PASS] criterion 7: estimator oracles "
          f"(beat-fit worst rel {worst:.1e}; normal equations and "
          f"intersection exact)")


def test_criterion_8_determinism(loaded, tmp_path):
    """Byte-identical summary CSVs: serial vs parallel and across re-runs."""
    out = {name: tmp_path / name for name in ("serial", "parallel", "rerun")}
    for name, jobs in (("serial", 1), ("parallel", 3), ("rerun", 1)):
        plan = StudyPlan.from_loaded(
            loaded, "spectroscopy", seed_base=21, out_dir=out[name], jobs=jobs
        )
        run_spectroscopy(plan)
    for name in ("summary.csv", "result.csv"):
        serial = (out["serial"] / name).read_bytes()
        assert serial == (out["parallel"] / name).read_bytes()
        assert serial == (out["rerun"] / name).read_bytes()
    print("\n[PASS] criterion 8: determinism (serial == parallel == re-run, "
          "byte-identical summaries)")
