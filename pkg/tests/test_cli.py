import numpy as np
import pytest

from lightstore.cli import JOBS_ENV_VAR, main
from lightstore.configfile import default_config, dump_config
from lightstore.storage import PhotodiodeTrace, write_trace_csv


@pytest.fixture()
def small_config(tmp_path):
    """Config file with a reduced grid so CLI runs stay fast."""
    loaded = default_config()
    path = tmp_path / "exp.cfg"
    dump_config(loaded, path)
    text = path.read_text().replace(
        "repetitions = 10", "repetitions = 3"
    )
    path.write_text(text)
    return path


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_usage_error_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["spectroscopy"])  # missing --out
    assert exc.value.code == 1


def test_unknown_subcommand_exits_1():
    with pytest.raises(SystemExit) as exc:
        main(["resonate", "--out", "/tmp/x"])
    assert exc.value.code == 1


def test_init_config_and_spectroscopy_run(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    code = main(["spectroscopy", "--config", str(small_config),
                 "--out", str(out), "--seed", "4"])
    assert code == 0
    assert (out / "summary.csv").is_file()
    stdout = capsys.readouterr().out
    assert "delta_f_ac" in stdout


def test_init_config(tmp_path):
    target = tmp_path / "default.cfg"
    assert main(["init-config", str(target)]) == 0
    assert target.is_file()


def test_dark_resonance_run(tmp_path, capsys):
    # narrow grid keeps the steady-state scan quick
    loaded = default_config()
    cfg = tmp_path / "exp.cfg"
    dump_config(loaded, cfg)
    text = cfg.read_text()
    grids = ", ".join(repr(float(v)) for v in np.linspace(-40e3, 40e3, 81))
    start = text.index("dark_resonance_grid_hz = ")
    end = text.index("\n", start)
    cfg.write_text(text[:start] + f"dark_resonance_grid_hz = {grids}" + text[end:])
    out = tmp_path / "dark"
    assert main(["dark-resonance", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "result.csv").is_file()
    assert "FWHM" in capsys.readouterr().out


def test_bad_config_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[experiment]\nnot_a_key = 3\n")
    code = main(["spectroscopy", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "configuration error" in capsys.readouterr().err


def test_numerical_failure_exits_2(tmp_path, small_config, capsys):
    # zero storage efficiency kills every retrieved fit
    text = small_config.read_text().replace(
        "storage_efficiency = 0.25", "storage_efficiency = 0.0"
    )
    cfg = tmp_path / "dead.cfg"
    cfg.write_text(text)
    code = main(["spectroscopy", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "numerical failure" in capsys.readouterr().err


def test_trace_parse_error_exits_3(tmp_path, capsys):
    bad = tmp_path / "trace.csv"
    bad.write_text("no header here\n")
    code = main(["fit", str(bad), "--out", str(tmp_path / "o")])
    assert code == 3
    assert "parse error" in capsys.readouterr().err


def test_fit_subcommand(tmp_path, capsys):
    fs = 2.0e7
    n = 1200
    t = np.arange(n) / fs
    rng = np.random.default_rng(1)
    v = 1.0 + 2.5 * np.sin(2 * np.pi * 685.8e3 * t + 0.3) + rng.normal(0, 0.05, n)
    path = tmp_path / "tone.csv"
    write_trace_csv(PhotodiodeTrace(0.0, fs, v), path)
    out = tmp_path / "fitout"
    code = main(["fit", str(path), "--out", str(out), "--f-guess", "686e3"])
    assert code == 0
    assert (out / "fits.csv").is_file()
    assert "f_b" in capsys.readouterr().out


def test_no_traces_flag(tmp_path, small_config):
    out = tmp_path / "run"
    code = main(["spectroscopy", "--config", str(small_config),
                 "--out", str(out), "--no-traces"])
    assert code == 0
    assert not list(out.glob("points/*/trace*.csv"))


def test_jobs_env_var_used_when_flag_absent(tmp_path, small_config, monkeypatch):
    out_env = tmp_path / "env"
    monkeypatch.setenv(JOBS_ENV_VAR, "2")
    assert main(["spectroscopy", "--config", str(small_config),
                 "--out", str(out_env), "--seed", "9"]) == 0
    out_flag = tmp_path / "flag"
    monkeypatch.setenv(JOBS_ENV_VAR, "junk")  # --jobs wins; env never parsed
    assert main(["spectroscopy", "--config", str(small_config),
                 "--out", str(out_flag), "--seed", "9", "--jobs", "1"]) == 0
    assert (out_env / "summary.csv").read_bytes() == (out_flag / "summary.csv").read_bytes()


def test_bad_jobs_env_var_rejected(tmp_path, small_config, monkeypatch, capsys):
    monkeypatch.setenv(JOBS_ENV_VAR, "many")
    code = main(["spectroscopy", "--config", str(small_config),
                 "--out", str(tmp_path / "o")])
    assert code == 1
