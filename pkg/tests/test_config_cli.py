import numpy as np
import pytest

from hgfpf.cli import _specs, build_parser, main
from hgfpf.config import ConfigError, load_config, parse_seeds


def write(tmp_path, text):
    path = tmp_path / "exp.ini"
    path.write_text(text)
    return path


class TestSeeds:
    def test_ranges_and_lists(self):
        assert parse_seeds("0-3,7") == [0, 1, 2, 3, 7]
        assert parse_seeds(" 5 ") == [5]

    @pytest.mark.parametrize("text", ["", "a", "3-1", "1-x"])
    def test_bad(self, text):
        with pytest.raises(ConfigError):
            parse_seeds(text)


class TestLoadConfig:
    def test_full_file(self, tmp_path):
        path = write(tmp_path, """
[experiment]
kind = benchmark   ; the filter comparison
seeds = 0-4
output_dir = results
workers = 1

[parameters]
T = 20
Np = 12
""")
        spec = load_config(path)
        assert spec.kind == "benchmark" and spec.seeds == [0, 1, 2, 3, 4]
        assert spec.param("T") == 20.0 and spec.param("Np") == 12
        assert str(spec.output_dir) == "results"

    @pytest.mark.parametrize("text,match", [
        ("[experiment]\nkind = benchmark\ncolour = red\n", "unknown key"),
        ("[experiment]\nkind = benchmark\n[extras]\na = 1\n", "unknown section"),
        ("[experiment]\nkind = benchmark\n[parameters]\nNP = 10\n", "unknown parameter"),
        ("[experiment]\nseeds = 1\n", "needs a kind"),
        ("[parameters]\nT = 1\n", "missing"),
        ("no header\n", "exp.ini"),
    ])
    def test_rejects(self, tmp_path, text, match):
        with pytest.raises(ConfigError, match=match):
            load_config(write(tmp_path, text))


class TestCli:
    def test_full_flag(self):
        specs = _specs(build_parser().parse_args(["benchmark", "--full"]))
        assert specs[0].param("T") == 400.0 and specs[0].seeds == list(range(100))
        specs = _specs(build_parser().parse_args(["benchmark", "--full", "--seeds", "0-2"]))
        assert specs[0].seeds == [0, 1, 2]

    def test_convergence_runs_both_kinds(self):
        kinds = [s.kind for s in _specs(build_parser().parse_args(["convergence"]))]
        assert kinds == ["convergence_M", "convergence_Np"]

    def test_config_kind_must_match(self, tmp_path, capsys):
        path = write(tmp_path, "[experiment]\nkind = benchmark\n")
        assert main(["gain-compare", "--config", str(path)]) == 1
        assert "does not belong" in capsys.readouterr().err

    def test_runs_and_writes(self, tmp_path, capsys):
        path = write(tmp_path, "[experiment]\nkind = gain_compare\n[parameters]\ngrid_n = 101\n")
        assert main(["gain-compare", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
        assert "M=7" in capsys.readouterr().out
        data = np.loadtxt(tmp_path / "o" / "gain_hermite_M7.csv", delimiter=",", skiprows=1)
        assert data.shape == (101, 2)

    def test_error_exit_code(self, capsys):
        assert main(["benchmark", "--seeds", "x"]) == 1
        assert "error" in capsys.readouterr().err

    def test_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["unknown"])
        assert err.value.code == 2
