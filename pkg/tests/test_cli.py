"""Command-line interface and exit codes."""
import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from srocomp import cli
from srocomp.config import bundled_config_path
from srocomp.errors import (AlignmentError, ConfigError, DataError, NumericError,
                            ValidityError)

QUICK = ["--duration", "20"]


def write_config(tmp_path, extra):
    with open(bundled_config_path(), encoding="utf-8") as f:
        text = f.read()
    p = tmp_path / "scene.cfg"
    p.write_text(text.replace("rir_length = none", "rir_length = 2400") + extra)
    return str(p)


def test_run_reference(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", "--condition", "reference", "--output-dir", str(out)] + QUICK)
    assert code == 0
    manifest = json.loads((out / "reference" / "manifest.json").read_text())
    assert manifest["condition"] == "reference"
    assert "mean|dIC|=0.0000" in capsys.readouterr().out


def test_seed_and_sro_overrides(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--condition", "uncompensated", "--seed", "5", "--sro", "10,-50",
                     "--output-dir", str(out)] + QUICK) == 0
    m = json.loads((out / "uncompensated" / "manifest.json").read_text())
    assert m["seeds"] == {"playback": 5, "sensor_noise": 5}
    assert m["sro_ppm"] == {"eps0": 0.0, "eps1": 10.0, "eps2": -50.0}


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, "\n[bogus]\nkey = 1\n")
    assert cli.main(["run", "--config", cfg, "--output-dir", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_short_estimated_run_is_a_config_error(tmp_path):
    assert cli.main(["run", "--output-dir", str(tmp_path)] + QUICK) == 2


def test_domain_error_exit_code(tmp_path):
    assert cli.main(["run", "--condition", "reference", "--sro", "10,-5000",
                     "--output-dir", str(tmp_path)] + QUICK) == 3


def test_missing_config_is_an_io_error(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "none.cfg")]) == 4


def test_unwritable_output_is_an_io_error():
    assert cli.main(["run", "--condition", "reference", "--output-dir", "/proc/srocomp"]
                    + QUICK) == 4


@pytest.mark.parametrize("exc, code", [(ConfigError("x"), 2), (ValidityError("x"), 3),
                                       (NumericError("x"), 3), (OSError("x"), 4),
                                       (DataError("x"), 4), (AlignmentError("x"), 4)])
def test_exit_code_mapping(exc, code):
    assert cli.exit_code(exc) == code


def test_unexpected_errors_propagate():
    with pytest.raises(KeyError):
        cli.exit_code(KeyError("bug"))


def test_bad_sro_argument():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["run", "--sro", "10"])


def test_grid_writes_summary(tmp_path):
    cfg = write_config(tmp_path, "")
    out = tmp_path / "grid"
    code = cli.main(["grid", "--config", cfg, "--output-dir", str(out), "--condition",
                     "reference", "--condition", "oracle_comp", "--seeds", "1,2"] + QUICK)
    assert code == 0
    with open(out / "grid_summary.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 3 * 2 * 2
    assert {r["condition"] for r in rows} == {"reference", "oracle_comp"}
    assert (out / "sro_p10_m100" / "seed2" / "oracle_comp" / "manifest.json").exists()
    summary = json.loads((out / "grid_manifest.json").read_text())
    assert summary["seeds"] == [1, 2]
    assert "seeds" in summary["averaging"]
    assert summary["means"]["sro_p10_m10/reference"]["mean_abs_dic"] == 0.0


def test_metrics_and_compare(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--condition", "uncompensated", "--output-dir", str(out)]
                    + QUICK) == 0
    assert cli.main(["run", "--condition", "reference", "--output-dir", str(out)]
                    + QUICK) == 0
    capsys.readouterr()
    unc, ref = out / "uncompensated", out / "reference"
    assert cli.main(["metrics", str(unc / "ears.wav"), "--reference", str(ref / "ears.wav"),
                     "--output-dir", str(tmp_path / "m")]) == 0
    text = capsys.readouterr().out
    assert "mean IC=" in text and "mean|dIC|=" in text
    assert (tmp_path / "m" / "cue_diff.csv").exists()
    assert cli.main(["compare", str(unc), str(ref), "--output-dir", str(tmp_path / "c")]) == 0
    manifest = json.loads((unc / "manifest.json").read_text())
    expect = manifest["summary"]["mean_abs_dic"]
    assert f"mean|dIC|={expect:.4f}" in capsys.readouterr().out
    with open(tmp_path / "c" / "cue_diff.csv") as a, open(unc / "cue_diff.csv") as b:
        assert a.read() == b.read()


def test_metrics_rejects_mono(tmp_path):
    from srocomp.pipeline import write_wav
    p = str(tmp_path / "mono.wav")
    write_wav(p, np.zeros(16000), 16000)
    assert cli.main(["metrics", p]) == 4


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "srocomp.cli", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.startswith("srocomp ")
