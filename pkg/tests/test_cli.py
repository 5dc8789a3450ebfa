import csv
import json

import pytest

from phi4expand.cli import EXIT_CONFIG, ConfigError, ExperimentConfig, main, read_config


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_constants_table(tmp_path):
    assert main(["constants", "--nmax", "4", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "constants.csv")
    assert rows[0] == ["N", "c_N", "c_wN", "d_N"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2", "3", "4"]
    assert [float(x) for x in rows[1][1:]] == [1.0, 0.5, 0.5]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["nmax"] == 4 and "constants.csv" in man["outputs"]


def test_determinant_N0(tmp_path):
    assert main(["determinant", "--nmax", "0", "--eps", "0", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "determinant.csv")
    assert rows[0] == ["N", "log_fredholm", "log_theta", "tail_bound"]
    assert float(rows[1][2]) == pytest.approx(0.153426, abs=1e-6)


def test_floats_have_17_digits(tmp_path):
    main(["constants", "--nmax", "2", "--out", str(tmp_path)])
    c = _rows(tmp_path / "constants.csv")[3][1]  # c_2
    assert float(c) == float(f"{float(c):.17g}") and len(c.replace(".", "").lstrip("0")) >= 16


def test_unknown_key_exit_code(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("N = 2\nbogus_key = 1\n")
    assert main(["constants", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "bogus_key" in capsys.readouterr().err


@pytest.mark.parametrize("flag,value,name", [("--n-mc", "1", "n_mc"), ("--dt", "-0.1", "dt"),
                                             ("--eps-grid", "0.1,x", "eps_grid"), ("--N", "two", "N")])
def test_invalid_value_names_field(tmp_path, capsys, flag, value, name):
    code = main(["verify-expansion", flag, value, "--out", str(tmp_path)])
    assert code != 0
    assert name in capsys.readouterr().err


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nN = 3\nk = 2  # trailing\neps-grid = 0.2,0.1\n")
    vals = read_config(str(cfg))
    assert vals == {"N": 3, "k": 2, "eps_grid": "0.2,0.1"}
    with pytest.raises(ConfigError):
        ExperimentConfig(command="nope").validate()


def test_manifest_replay_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["coeffs", "--N", "2", "--k", "2", "--n-mc", "300", "--observable", "mean2", "--seed", "7"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(["coeffs", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "coeffs.csv").read_bytes() == (b / "coeffs.csv").read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["seeds"] == mb["seeds"] and ma["outputs"] == mb["outputs"]


def test_sample_writes_snapshots(tmp_path):
    args = ["sample", "--N", "2", "--eps", "0.5", "--dt", "0.05", "--steps", "40", "--burnin", "0",
            "--thin", "10", "--chains", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = _rows(tmp_path / "samples.csv")
    assert rows[0] == ["chain", "step", "mean", "wick2"] and len(rows) == 1 + 2 * 4
    assert (tmp_path / "chain000.phi4").exists() and (tmp_path / "chain001.phi4").exists()


def test_verify_commands_small(tmp_path):
    base = ["--N", "1", "--n-mc", "200", "--n-is", "100", "--eps-grid", "0.5,0.25", "--proposal", "wells"]
    assert main(["verify-expansion", *base, "--k", "0", "--out", str(tmp_path)]) == 0
    assert _rows(tmp_path / "verify_expansion.csv")[0] == ["eps", "I", "expansion", "remainder", "I_stderr"]
    lln = ["verify-lln-clt", "--N", "1", "--eps-grid", "0.5", "--dt", "0.05", "--steps", "200", "--burnin", "10",
           "--thin", "2", "--chains", "2", "--observable", "mean2", "--out", str(tmp_path)]
    assert main(lln) == 0
    assert len(_rows(tmp_path / "lln_clt.csv")) == 2
