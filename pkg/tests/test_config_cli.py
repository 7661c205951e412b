import os

import pytest

from ipva import cli, config, experiments
from ipva.errors import ConfigError


# -- config parsing ------------------------------------------------------------------

def test_parse_text_handles_comments_and_dashes():
    vals = config.parse_text("# header\nexperiment = psd\n\nsl-samples = 5000  # trailing\n")
    assert vals == {"experiment": "psd", "sl_samples": "5000"}


def test_parse_text_reports_line():
    with pytest.raises(ConfigError, match="cfg:2"):
        config.parse_text("a = 1\nnot a pair\n", "cfg")
    with pytest.raises(ConfigError):
        config.parse_text(" = 3\n")


@pytest.mark.parametrize("text, seeds", [("7", [7]), ("1,2,5", [1, 2, 5]), ("0-3,10", [0, 1, 2, 3, 10]),
                                         (" 2 - 4 ", [2, 3, 4])])
def test_parse_seeds(text, seeds):
    assert config.parse_seeds(text) == seeds


@pytest.mark.parametrize("text", ["", "a", "5-2", "1,,x"])
def test_parse_seeds_errors_name_the_field(text):
    with pytest.raises(ConfigError) as exc:
        config.parse_seeds(text)
    assert exc.value.field == "seeds"


def test_parse_bool():
    assert config.parse_bool("Yes") and config.parse_bool("1")
    assert not config.parse_bool("off")
    with pytest.raises(ValueError):
        config.parse_bool("maybe")


def test_resolve_validates_names():
    spec = config.resolve({"experiment": "psd", "seeds": "0-2", "ce": "0.1"})
    assert spec.experiment == "psd" and spec.seeds == [0, 1, 2] and spec.out == "out/psd"
    for values, field in (({}, "experiment"), ({"experiment": "nope"}, "experiment"),
                          ({"experiment": "psd", "preset": "nope"}, "preset")):
        with pytest.raises(ConfigError) as exc:
            config.resolve(values)
        assert exc.value.field == field


def test_resolve_rejects_bad_parameter_value():
    with pytest.raises(ConfigError) as exc:
        config.resolve({"experiment": "simulate", "Ms": "-5"})
    assert exc.value.field == "Ms"


def test_spec_get_names_field_on_bad_cast():
    spec = config.resolve({"experiment": "simulate", "duration": "long"})
    with pytest.raises(ConfigError) as exc:
        spec.get("duration", 1.0)
    assert exc.value.field == "duration"


def test_digest_ignores_output_location():
    a = config.resolve({"experiment": "simulate"}, out="x")
    b = config.resolve({"experiment": "simulate"}, out="y")
    c = config.resolve({"experiment": "simulate", "duration": "3"}, out="x")
    assert a.digest() == b.digest() != c.digest()


# -- command line -------------------------------------------------------------------

def _manifest(path):
    return config.load(os.path.join(path, experiments.MANIFEST))


def _file_hashes(path):
    return {k: v for k, v in _manifest(path).items() if k.startswith("manifest.file.")}


def test_simulate_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--out", str(out), "--duration", "5", "--seeds", "0,1"]) == 0
    assert capsys.readouterr().out.strip() == str(out)
    rows = experiments.read_rows(out / "metrics.csv")
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert (out / "trajectory_seed1.csv").exists()
    m = _manifest(out)
    assert m["experiment"] == "simulate" and m["duration"] == "5"
    assert set(_file_hashes(out)) == {"manifest.file.metrics.csv", "manifest.file.trajectory_seed0.csv",
                                      "manifest.file.trajectory_seed1.csv"}


@pytest.mark.parametrize("argv", [
    ["simulate", "--duration", "4", "--seeds", "3"],
    ["psd", "--duration", "120", "--seeds", "0,1", "--set", "nperseg=2048"],
])
def test_reruns_are_byte_identical(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(argv + ["--out", str(a)]) == 0
    assert cli.main(argv + ["--out", str(b)]) == 0
    ha, hb = _file_hashes(a), _file_hashes(b)
    assert ha and ha == hb
    for key in ha:
        name = key[len("manifest.file."):]
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_reproduces_from_manifest(tmp_path):
    first = tmp_path / "first"
    assert cli.main(["simulate", "--out", str(first), "--duration", "3", "--set", "model=benchmark"]) == 0
    again = tmp_path / "again"
    assert cli.main(["run", str(first / experiments.MANIFEST), "--out", str(again)]) == 0
    assert _file_hashes(first) == _file_hashes(again)
    assert _manifest(first)["manifest.config_sha256"] == _manifest(again)["manifest.config_sha256"]


def test_config_file_and_flags_combine(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("experiment = simulate\nduration = 2\nseeds = 4\nwrite_trajectories = 0\n")
    out = tmp_path / "o"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 0
    assert not (out / "trajectory_seed4.csv").exists()
    out2 = tmp_path / "o2"
    assert cli.main(["simulate", "--config", str(cfg), "--seeds", "5", "--out", str(out2)]) == 0
    assert experiments.read_rows(out2 / "metrics.csv")[0]["seed"] == "5"


@pytest.mark.parametrize("argv", [
    ["simulate", "--set", "model=quantum"],
    ["simulate", "--duration", "soon"],
    ["simulate", "--seeds", "9-1"],
    ["simulate", "--set", "novalue"],
    ["simulate", "--preset", "unknown"],
    ["mpc", "--set", "experiment=psd"],
    ["psd", "--duration", "10"],                     # shorter than one PSD segment
])
def test_configuration_errors_exit_2(tmp_path, capsys, argv):
    assert cli.main(argv + ["--out", str(tmp_path / "x")]) == 2
    assert capsys.readouterr().err


def test_unknown_experiment_in_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("experiment = teleport\n")
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == 2


def test_unconverged_linearization_exits_3(tmp_path, capsys):
    argv = ["linearize", "--out", str(tmp_path / "l"), "--set", "sl_samples=5000"]
    assert cli.main(argv) == 3
    assert "NotConverged" in capsys.readouterr().err


def test_argparse_rejects_unknown_choice():
    with pytest.raises(SystemExit) as exc:
        cli.main(["mpc", "--experiment", "teleport"])
    assert exc.value.code == 2


def test_report_renders_figures(tmp_path, capsys):
    out = tmp_path / "psd"
    assert cli.main(["psd", "--out", str(out), "--duration", "120", "--seeds", "0",
                     "--set", "nperseg=2048"]) == 0
    capsys.readouterr()
    assert cli.main(["report", str(out)]) == 0
    printed = capsys.readouterr().out.split()
    assert sorted(os.path.basename(f) for f in printed) == ["psd_accel.png", "psd_power.png"]
    assert all(os.path.getsize(f) > 1000 for f in printed)
    assert cli.main(["report", str(tmp_path / "nowhere")]) == 2
