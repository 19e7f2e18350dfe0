import math
from dataclasses import replace

import numpy as np
import pytest

from lightstore.atom import (
    DegenerateSteadyStateError,
    DensityMatrix,
    ac_stark_shift,
    build_hamiltonian,
    evolve,
    optical_coherence_rate,
    signal_coherence,
    spectrum_fwhm,
    steady_state,
    steady_state_residual,
    transmission_spectrum,
    write_spectrum_csv,
    read_spectrum_csv,
)
from lightstore.model import (
    ConfigurationError,
    PulseSequence,
    Segment,
    TWO_PI,
    with_signal_intensity,
)

TRACE_TOL = 1e-9
HERM_TOL = 1e-12
POS_TOL = 1e-9


def _with_rabis(config, omega_c, omega_s):
    return replace(
        config,
        control=replace(config.control, rabi_frequency_rad=omega_c),
        signal=replace(config.signal, rabi_frequency_rad=omega_s),
    )


class TestHamiltonian:
    def test_diagonal_when_dark(self, config):
        cfg = _with_rabis(config, 0.0, 0.0)
        h = build_hamiltonian(cfg.level_scheme, cfg.control, cfg.signal, 1234.0)
        off = h - np.diag(np.diag(h))
        assert np.max(np.abs(off)) == 0.0

    def test_dark_state_is_null_eigenvector(self, config):
        # at two-photon resonance (Omega_C |g-> - Omega_S |g+>) is dark
        h = build_hamiltonian(config.level_scheme, config.control, config.signal, 0.0)
        om_c = config.control.rabi_frequency_rad
        om_s = config.signal.rabi_frequency_rad
        dark = np.array([om_c, -om_s, 0.0]) / math.hypot(om_c, om_s)
        assert np.max(np.abs(h @ dark)) < 1e-12 * max(om_c, om_s)

    def test_hermitian(self, config):
        h = build_hamiltonian(config.level_scheme, config.control, config.signal, 5e3)
        assert np.max(np.abs(h - h.conj().T)) == 0.0

    def test_matches_independent_matrix(self, config):
        # hand-built matrix for Omega_C = 2pi 1 MHz, Omega_S = 2pi 0.1 MHz,
        # delta_R = 5 kHz, one-photon resonance
        om_c, om_s = TWO_PI * 1e6, TWO_PI * 0.1e6
        cfg = _with_rabis(config, om_c, om_s)
        h = build_hamiltonian(cfg.level_scheme, cfg.control, cfg.signal, 5e3)
        expected = np.array([
            [0.0, 0.0, -om_s / 2.0],
            [0.0, -TWO_PI * 5e3, -om_c / 2.0],
            [-om_s / 2.0, -om_c / 2.0, 0.0],
        ], dtype=complex)
        assert np.allclose(h, expected, atol=0.0, rtol=0.0)
        assert np.allclose(
            np.linalg.eigvalsh(h), np.linalg.eigvalsh(expected), rtol=1e-12, atol=1e-6
        )

    def test_wrong_leg_assignment_rejected(self, config):
        scheme = replace(
            config.level_scheme,
            clebsch_weights=((("g_minus", "e", "sigma_plus"), 1.0),),
        )
        # control (sigma_minus on g_plus leg) now has zero amplitude
        with pytest.raises(ConfigurationError, match="control"):
            build_hamiltonian(scheme, config.control, config.signal, 0.0)

    def test_second_level_flag(self, config):
        h = build_hamiltonian(
            config.level_scheme, config.control, config.signal, 0.0,
            include_second_excited=True,
        )
        assert h.shape == (4, 4)
        assert h[3, 3] == pytest.approx(TWO_PI * config.level_scheme.second_excited_offset_hz)


class TestEvolve:
    def test_dark_ground_state_is_stationary(self, config):
        seq = PulseSequence(segments=(Segment("storage", 0.0, 2e-6, False, False),))
        rho0 = DensityMatrix.pure(3, 0)
        states = evolve(rho0, config, seq, samples_per_segment=5)
        for s in states:
            assert np.max(np.abs(s.matrix - rho0.matrix)) < 1e-12

    def test_excited_state_decays_exponentially(self, config):
        gamma = config.level_scheme.gamma_e_rad
        seq = PulseSequence(segments=(Segment("storage", 0.0, 1.0 / gamma, False, False),))
        states = evolve(DensityMatrix.pure(3, 2), config, seq, samples_per_segment=3)
        assert states[-1].populations[2] == pytest.approx(math.exp(-1.0), abs=1e-6)

    def test_optical_pumping_prepares_g_minus(self, config):
        seq = PulseSequence(segments=(Segment("preparation", 0.0, 150e-6, True, False),))
        rho0 = DensityMatrix(np.diag([0.5, 0.5, 0.0]).astype(complex))
        states = evolve(rho0, config, seq, samples_per_segment=3)
        assert states[-1].populations[0] > 0.99

    def test_invariants_along_full_sequence(self, config, sequence):
        rho0 = DensityMatrix(np.diag([0.4, 0.6, 0.0]).astype(complex))
        short = PulseSequence.standard(8e-6, 8e-6, 2e-6, 8e-6)
        states = evolve(rho0, config, short, samples_per_segment=8)
        assert len(states) > 20
        for s in states:
            assert s.trace_deviation < TRACE_TOL
            assert s.hermiticity_deviation < HERM_TOL
            assert s.min_eigenvalue > -POS_TOL

    def test_dark_state_population_conserved(self, config):
        scheme = replace(config.level_scheme, gamma_gg_rad=0.0)
        cfg = replace(config, level_scheme=scheme, delta_r_hz=0.0)
        om_c, om_s = cfg.control.rabi_frequency_rad, cfg.signal.rabi_frequency_rad
        dark = np.array([om_c, -om_s, 0.0]) / math.hypot(om_c, om_s)
        rho0 = DensityMatrix(np.outer(dark, dark).astype(complex))
        seq = PulseSequence(segments=(Segment("input", 0.0, 20e-6, True, True),))
        states = evolve(rho0, cfg, seq, samples_per_segment=5)
        for s in states:
            population = float(np.real(dark @ s.matrix @ dark))
            assert population == pytest.approx(1.0, abs=1e-8)

    def test_bad_dt_max_rejected(self, config, sequence):
        with pytest.raises(ValueError):
            evolve(DensityMatrix.pure(3, 0), config, sequence, dt_max=-1.0)

    def test_dimension_mismatch_rejected(self, config, sequence):
        with pytest.raises(ConfigurationError):
            evolve(DensityMatrix.pure(4, 0), config, sequence)


class TestSteadyState:
    def test_control_only_pumps_g_minus(self, config):
        cfg = with_signal_intensity(config, 0.0)
        state = steady_state(cfg)
        assert state.populations[0] > 0.999

    def test_weak_probe_matches_analytic_susceptibility(self, config):
        # independent oracle: first-order coherence of the driven lambda
        # system, rho_eg = (i W_s/2)(g - i d)/[(G13 - i D)(g - i d) + W_c^2/4]
        weak = with_signal_intensity(config, config.signal.intensity * 1e-8)
        for delta_r in (0.0, 3e3, -7e3, 12e3):
            cfg = replace(weak, delta_r_hz=delta_r)
            numeric = signal_coherence(steady_state(cfg))
            om_s = cfg.signal.rabi_frequency_rad
            om_c = cfg.control.rabi_frequency_rad
            g13 = optical_coherence_rate(cfg.level_scheme)
            gam = cfg.level_scheme.gamma_gg_rad
            dlt = TWO_PI * delta_r
            dop = cfg.signal.one_photon_detuning_rad
            analytic = (
                (1j * om_s / 2.0) * (gam - 1j * dlt)
                / ((g13 - 1j * dop) * (gam - 1j * dlt) + om_c**2 / 4.0)
            )
            assert abs(numeric - analytic) / abs(analytic) < 1e-6

    def test_absorption_minimum_at_resonance(self, config):
        grid = np.linspace(-20e3, 20e3, 9)
        points = transmission_spectrum(config, grid)
        proxies = [p.absorption_proxy for p in points]
        assert int(np.argmin(proxies)) == 4

    def test_residual_and_invariants(self, config):
        state = steady_state(config)
        state.check()
        assert steady_state_residual(config, state) < 1e-10

    def test_fixed_point_of_evolve(self, config):
        state = steady_state(config)
        horizon = 10.0 / config.level_scheme.gamma_e_rad
        seq = PulseSequence(segments=(Segment("input", 0.0, horizon, True, True),))
        states = evolve(state, config, seq, samples_per_segment=6)
        for s in states:
            assert np.max(np.abs(s.matrix - state.matrix)) < 1e-8

    def test_no_decay_is_degenerate(self, config):
        scheme = replace(config.level_scheme, gamma_e_rad=0.0, gamma_gg_rad=0.0)
        with pytest.raises(DegenerateSteadyStateError):
            steady_state(replace(config, level_scheme=scheme))

    def test_4_level_flag(self, config):
        state = steady_state(replace(config, include_second_excited=True))
        assert state.matrix.shape == (4, 4)
        state.check()


class TestTransmissionSpectrum:
    def test_default_window_near_20_khz(self, config):
        grid = np.linspace(-60e3, 60e3, 241)
        points = transmission_spectrum(config, grid)
        fwhm = spectrum_fwhm(points)
        assert 18e3 < fwhm < 22e3

    def test_power_broadening_monotone(self, config):
        grid = np.linspace(-60e3, 60e3, 121)
        narrow = spectrum_fwhm(transmission_spectrum(config, grid))
        doubled = _with_rabis(
            config, 2.0 * config.control.rabi_frequency_rad, config.signal.rabi_frequency_rad
        )
        wide = spectrum_fwhm(transmission_spectrum(doubled, grid))
        assert wide > narrow

    def test_ideal_limit_reaches_full_transmission(self, config):
        scheme = replace(config.level_scheme, gamma_gg_rad=0.0)
        weak = with_signal_intensity(
            replace(config, level_scheme=scheme), config.signal.intensity * 1e-6
        )
        points = transmission_spectrum(weak, np.linspace(-5e3, 5e3, 5))
        peak = max(p.transmission for p in points)
        assert peak > 1.0 - 1e-3

    def test_symmetric_spectrum(self, config):
        grid = np.linspace(-30e3, 30e3, 31)
        points = transmission_spectrum(config, grid)
        t = np.array([p.transmission for p in points])
        assert np.max(np.abs(t - t[::-1])) < 1e-10

    def test_peak_at_grid_point_nearest_zero(self, config):
        grid = np.linspace(-25e3, 25e3, 26)  # even count: nearest-to-zero wins
        points = transmission_spectrum(config, grid)
        i_peak = int(np.argmax([p.transmission for p in points]))
        assert abs(points[i_peak].delta_r_hz) == min(abs(d) for d in grid)

    def test_grid_validation(self, config):
        with pytest.raises(ValueError):
            transmission_spectrum(config, [])
        with pytest.raises(ValueError):
            transmission_spectrum(config, [1.0, -1.0])

    def test_csv_round_trip(self, config, tmp_path):
        points = transmission_spectrum(config, np.linspace(-5e3, 5e3, 5))
        path = tmp_path / "spectrum.csv"
        write_spectrum_csv(points, path)
        back = read_spectrum_csv(path)
        assert back == points


class TestAcStarkShift:
    def test_zero_intensity(self, config):
        assert ac_stark_shift(0.0, config.light_shift) == 0.0

    def test_linearity(self, config):
        one = ac_stark_shift(1.7, config.light_shift)
        assert ac_stark_shift(3.4, config.light_shift) == pytest.approx(2.0 * one, rel=1e-12)

    def test_calibrated_default_shift(self, config):
        shift = ac_stark_shift(config.control.intensity, config.light_shift)
        assert shift == pytest.approx(7000.0, abs=1e-6)

    def test_sign_flip(self, config):
        flipped = replace(
            config.light_shift,
            couplings=tuple(replace(c, detuning_rad=-c.detuning_rad)
                            for c in config.light_shift.couplings),
        )
        assert ac_stark_shift(2.0, flipped) == pytest.approx(
            -ac_stark_shift(2.0, config.light_shift), rel=1e-12
        )


class TestDensityMatrix:
    def test_check_rejects_bad_trace(self):
        with pytest.raises(ValueError, match="trace"):
            DensityMatrix(np.diag([0.6, 0.6, 0.0]).astype(complex)).check()

    def test_check_rejects_non_hermitian(self):
        m = np.diag([1.0, 0.0, 0.0]).astype(complex)
        m[0, 1] = 1e-6
        with pytest.raises(ValueError, match="hermiticity"):
            DensityMatrix(m).check()

    def test_check_rejects_negative_eigenvalue(self):
        m = np.diag([1.1, -0.1, 0.0]).astype(complex)
        with pytest.raises(ValueError, match="eigenvalue"):
            DensityMatrix(m).check()

    def test_matrix_is_read_only(self):
        state = DensityMatrix.pure(3, 0)
        with pytest.raises(ValueError):
            state.matrix[0, 0] = 0.5
