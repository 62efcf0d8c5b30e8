import json

import pytest
from hypothesis import given, settings, strategies as st

from bbmpe import cli
from bbmpe.config import ExperimentConfig, SCHEMA, parse
from bbmpe.errors import ConfigError, SimulationError

finite = st.floats(-1e6, 1e6, allow_nan=False)


@st.composite
def configs(draw):
    sections = {
        "experiment": {"module": draw(st.sampled_from(["spectral", "speed", "simulate", "spine", "pde"])),
                       "seed": draw(st.integers(0, 2**64 - 1)), "threads": draw(st.integers(1, 8))},
        "environment": {"preset": draw(st.sampled_from(["constant", "sinusoidal"])), "amplitude": draw(finite),
                        "samples": tuple(draw(st.lists(finite, max_size=5)))},
        "offspring": {"probs": tuple(draw(st.lists(st.floats(0, 1), max_size=4)))},
        "simulate": {"barrier_x": draw(st.none() | finite), "n_replicates": draw(st.integers(1, 10**6))},
        "validate": {"criteria": tuple(draw(st.lists(st.integers(1, 14), min_size=1, max_size=14)))},
    }
    return ExperimentConfig(sections)


@given(configs())
def test_round_trip(cfg):
    again = parse(cfg.emit())
    assert again.sections == cfg.sections
    assert again.digest() == cfg.digest()


def test_defaults_fill_schema():
    cfg = ExperimentConfig({})
    for name, keys in SCHEMA.items():
        assert set(cfg[name]) == set(keys)
    assert cfg.module == "validate" and cfg.seed == 0


def test_unknown_key_reports_line():
    text = "[experiment]\nmodule = speed\n\n[environment]\nbogus = 1\n"
    with pytest.raises(ConfigError) as exc:
        parse(text)
    assert exc.value.key == "environment.bogus" and exc.value.line == 5


def test_bad_value_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse("[experiment]\nseed = seven\n")
    assert exc.value.key == "experiment.seed" and exc.value.line == 2


def test_bad_module_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse("# comment\n[experiment]\nmodule = nonsense\n")
    assert exc.value.key == "experiment.module" and exc.value.line == 3


def test_unknown_section_and_malformed_text():
    with pytest.raises(ConfigError) as exc:
        parse("[nope]\na = 1\n")
    assert exc.value.line == 1
    with pytest.raises(ConfigError):
        parse("key without section = 1\n")


def test_presets():
    cfg = parse("[environment]\npreset = sinusoidal\namplitude = 0.1\n[offspring]\npreset = probs\nprobs = 0.2, 0.3, 0.5\n")
    assert cfg.environment().beta == pytest.approx(0.6, rel=1e-6)
    assert cfg.offspring().mean == pytest.approx(1.3)
    with pytest.raises(ConfigError):
        parse("[environment]\npreset = weird\n").environment()
    with pytest.raises(ConfigError):
        parse("[offspring]\npreset = probs\nprobs = 0.5, 0.1\n").offspring()


def _write(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return str(p)


def test_cli_speed_writes_manifest(tmp_path, capsys):
    cfg = _write(tmp_path, "[speed]\nn_grid = 128\n")
    out = tmp_path / "out"
    assert cli.main(["speed", "--config", cfg, "--out", str(out), "--seed", "3"]) == cli.EXIT_PASS
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3
    files = {e["file"]: e for e in manifest["files"]}
    assert files["f_curve.dat"]["x"] == "lambda"
    assert all(e["config_sha256"] == manifest["config_sha256"] for e in files.values())
    assert parse((out / "config.ini").read_text()).digest() == manifest["config_sha256"]
    assert "PASS" in capsys.readouterr().out


def test_cli_usage_errors(tmp_path):
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE
    assert cli.main(["speed", "--config", str(tmp_path / "missing.ini")]) == cli.EXIT_USAGE
    bad = _write(tmp_path, "[environment]\nbogus = 1\n")
    assert cli.main(["speed", "--config", bad]) == cli.EXIT_USAGE
    out_of_range = _write(tmp_path, "[speed]\nn_grid = 16\n")
    assert cli.main(["speed", "--config", out_of_range, "--out", str(tmp_path / "o")]) == cli.EXIT_USAGE
    assert cli.main(["speed", "--threads", "0"]) == cli.EXIT_USAGE


def test_cli_failing_check_and_error(tmp_path, monkeypatch):
    monkeypatch.setitem(cli.RUNNERS, "speed", lambda cfg, out, threads: ({}, [cli._check("x", False, 1.0, "< 0")]))
    assert cli.main(["speed", "--out", str(tmp_path / "a")]) == cli.EXIT_FAIL

    def boom(cfg, out, threads):
        raise SimulationError("population cap hit")

    monkeypatch.setitem(cli.RUNNERS, "speed", boom)
    assert cli.main(["speed", "--out", str(tmp_path / "b")]) == cli.EXIT_FAIL


def test_cli_simulate_single_replicate_tree(tmp_path):
    cfg = _write(tmp_path, "[simulate]\nhorizon = 1.0\n")
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == cli.EXIT_PASS
    assert (out / "tree.ndjson").exists()


def test_empty_plot_data(tmp_path):
    out = cli.Output(str(tmp_path), ExperimentConfig({}))
    cli.emit_plot_data(out, "empty.dat", [], [], "x", "y")
    assert (tmp_path / "empty.dat").read_text() == ""
    assert out.entries[0]["rows"] == 0
    with pytest.raises(ValueError):
        cli.emit_plot_data(out, "bad.dat", [1.0], [], "x", "y")
