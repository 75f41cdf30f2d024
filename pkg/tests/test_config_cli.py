import subprocess
import sys

import pytest
import yaml

from spdcsim.cli import SCENARIOS, main, run_scenario
from spdcsim.config import CONFIG_ENV, config_from_dict, load_config, validate_config
from spdcsim.errors import ConfigError


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def summary(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


FAST = ["--pulses", "200000", "--mc-runs", "3"]


class TestValidation:
    def test_defaults_are_valid(self):
        report = validate_config()
        assert report.ok, str(report)

    def test_partial_override_merges(self, tmp_path):
        cfg = load_config(write(tmp_path, "seed: 5\nfringe:\n  duration_s: 2.0\n"))
        assert cfg.seed == 5 and cfg["fringe"]["duration_s"] == 2.0
        assert cfg["fringe"]["rate_hz"] == 1500.0

    def test_errors_carry_line_numbers(self, tmp_path):
        text = "seed: 1\ncalibration:\n  bandwidth_nm: -3.0\nfringe:\n  colour: red\n"
        report = validate_config(write(tmp_path, text))
        messages = str(report)
        assert not report.ok and len(report.errors) == 2
        assert "line 3" in messages and "bandwidth_nm" in messages
        assert "line 5" in messages and "colour" in messages

    def test_energy_gate(self, tmp_path):
        report = validate_config(write(tmp_path, "optics:\n  pump_nm: 380.0\n"))
        assert not report.ok and "energy" in str(report)

    def test_missing_dispersion_file(self, tmp_path):
        report = validate_config(write(tmp_path, "optics:\n  crystal_dispersion: nowhere.yaml\n"))
        assert not report.ok and "nowhere.yaml" in str(report)

    def test_infeasible_noise_pair(self, tmp_path):
        text = "source:\n  noise_model: dephasing_white\n  visibility_diag: 0.96\n  fidelity: 0.958\n"
        report = validate_config(write(tmp_path, text))
        assert not report.ok and "[0.97, 0.98]" in str(report)

    def test_yaml_syntax(self, tmp_path):
        report = validate_config(write(tmp_path, "seed: [\n"))
        assert not report.ok and "line" in str(report)

    def test_load_raises_first_error(self, tmp_path):
        with pytest.raises(ConfigError, match="bandwidth_nm"):
            load_config(write(tmp_path, "calibration:\n  bandwidth_nm: 0\n"))

    def test_environment_variable(self, tmp_path, monkeypatch):
        monkeypatch.setenv(CONFIG_ENV, str(write(tmp_path, "seed: 77\n")))
        assert load_config().seed == 77
        assert validate_config().source.endswith("cfg.yaml")

    def test_dict_overrides(self):
        cfg = config_from_dict({"seed": 3, "spectral": {"grid_n": 128}})
        assert cfg.seed == 3 and cfg["spectral"]["grid_n"] == 128


class TestCli:
    def test_validate_exit_codes(self, tmp_path, capsys):
        assert main(["validate"]) == 0
        assert main(["validate", "--config", str(write(tmp_path, "seed: -1.5\n"))]) == 3
        assert "line 1" in capsys.readouterr().out

    def test_usage_errors(self, capsys):
        assert main(["teleport"]) == 2
        assert main(["chsh", "--pulses", "0"]) == 2
        assert main(["chsh", "--seed", "-4"]) == 2

    def test_config_error_exit(self, tmp_path):
        cfg = write(tmp_path, "optics:\n  signal_nm: 10000.0\n")
        assert main(["qpm", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3

    def test_sampled_needs_seed(self, tmp_path, capsys):
        cfg = write(tmp_path, "seed: null\n")
        assert main(["fringe", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
        assert "seed" in capsys.readouterr().err
        assert main(["fringe", "--config", str(cfg), "--exact", "--out", str(tmp_path / "o")]) == 0

    def test_chsh_exact_summary(self, tmp_path):
        assert main(["chsh", "--exact", "--out", str(tmp_path)]) == 0
        s = summary(tmp_path / "chsh" / "summary.txt")
        assert s["mode"] == "exact"
        assert float(s["S_exact"]) == pytest.approx(2.71529, abs=1e-5)

    def test_qpm_summary(self, tmp_path):
        assert main(["qpm", "--out", str(tmp_path)]) == 0
        s = summary(tmp_path / "qpm" / "summary.txt")
        assert s["mode"] == "deterministic"
        assert 7.6 <= float(s["period_um"]) <= 8.2
        assert (tmp_path / "qpm" / "group_indices.tsv").read_text().startswith("wave\tlambda_nm")

    def test_snapshot_is_loadable(self, tmp_path):
        main(["compensation", "--out", str(tmp_path)])
        snap = tmp_path / "compensation" / "config_snapshot.yaml"
        assert yaml.safe_load(snap.read_text())["optics"]["compensation_convention"] == "crossed_crystal"
        assert validate_config(snap).ok

    @pytest.mark.parametrize("scenario", SCENARIOS)
    def test_repeat_runs_are_byte_identical(self, tmp_path, scenario):
        outs = []
        for k in range(2):
            out = tmp_path / str(k)
            assert main([scenario, "--out", str(out), *FAST]) == 0
            outs.append(sorted((p.name, p.read_bytes()) for p in (out / scenario).iterdir()))
        assert outs[0] == outs[1]

    def test_seed_changes_sampled_output(self, tmp_path):
        for seed in (1, 2):
            main(["fringe", "--seed", str(seed), "--out", str(tmp_path / str(seed))])
        a = (tmp_path / "1" / "fringe" / "fringe_idler45.tsv").read_text()
        b = (tmp_path / "2" / "fringe" / "fringe_idler45.tsv").read_text()
        assert a != b

    def test_console_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "spdcsim.cli", "validate"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "valid" in proc.stdout

    def test_run_scenario_api(self, tmp_path):
        r = run_scenario("brightness", load_config(), tmp_path, exact=True)
        assert float(r.summary["spectral_brightness"]) == pytest.approx(15000 / 90, rel=1e-9)
