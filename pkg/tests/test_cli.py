import pytest

from leobh import cli

SMALL = """
J = 3
S = 1
[sweep]
heights = [1200]
n_pos = [4]
"""


@pytest.fixture()
def config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def test_validate_config(config, capsys):
    assert cli.main(["validate-config", "--config", str(config)]) == 0
    assert "J=3" in capsys.readouterr().out


def test_height_sweep_writes_outputs(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["height-sweep", "--config", str(config), "--out", str(out),
                     "--seed", "4"]) == 0
    assert (out / "height_sweep.csv").read_text().startswith(
        "sweep_value,algorithm,n_pos,avg_crlb_m,covered_users\n")
    assert (out / "height_sweep_timing.csv").exists()
    assert (out / "plot_height_sweep.py").exists()
    assert "FBHCA" in capsys.readouterr().out


def test_snapshot_sweep_and_table2(config, tmp_path):
    out = tmp_path / "o"
    assert cli.main(["snapshot-sweep", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "snapshot_sweep.csv").exists()
    first = (out / "snr_table.csv").read_text()
    assert first.startswith("algorithm,sat1_snr_db")
    assert cli.main(["table2", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "snr_table.csv").read_text() == first


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[algo]\nP_tot_sat = -1\n")
    assert cli.main(["validate-config", "--config", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err


def test_negative_seed_rejected(config, capsys):
    assert cli.main(["validate-config", "--config", str(config), "--seed", "-1"]) == 2
    assert "seed" in capsys.readouterr().err


def test_low_altitude_warning(tmp_path, capsys):
    path = tmp_path / "low.toml"
    path.write_text("[sweep]\nheights = [700]\n")
    assert cli.main(["validate-config", "--config", str(path)]) == 0
    assert "coverage" in capsys.readouterr().err


def test_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["fly"])
