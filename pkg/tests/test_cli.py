import re
import subprocess
import sys

import pytest

from hyperback.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from hyperback.config import BUNDLED, bundled_config, load_config, validate_config
from hyperback.errors import DegenerateRates, ExpressionSyntaxError, MissingField


def write_variant(tmp_path, name, edits, drop=()):
    """Copy a bundled config with some ``key = value`` lines replaced or removed."""
    lines = []
    for line in bundled_config(name).read_text().splitlines():
        key = line.split("=")[0].strip()
        if key in drop:
            continue
        if key in edits:
            line = f"{key} = {edits[key]}"
        lines.append(line)
    path = tmp_path / f"variant_{name}"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_configs_validate(name):
    assert validate_config(bundled_config(name)) == []


def test_degenerate_rates_reported(tmp_path):
    path = write_variant(tmp_path, "quasilinear_bench.cfg", {"d2": "1"})
    diags = validate_config(path)
    assert [d.kind for d in diags] == ["DegenerateRates"]
    with pytest.raises(DegenerateRates):
        load_config(path)


def test_missing_field_reported(tmp_path):
    path = write_variant(tmp_path, "linear_const.cfg", {}, drop=("eps2",))
    diags = validate_config(path)
    assert diags[0].kind == "MissingField" and diags[0].field == "system.eps2"
    with pytest.raises(MissingField) as info:
        load_config(path)
    assert info.value.name == "system.eps2"


def test_syntax_error_reported(tmp_path):
    path = write_variant(tmp_path, "linear_const.cfg", {"c1": "1+*2"})
    with pytest.raises(ExpressionSyntaxError):
        load_config(path)
    assert main(["validate", str(path)]) == EXIT_CONFIG


def test_validate_negative_speed(tmp_path):
    path = write_variant(tmp_path, "linear_const.cfg", {"eps1": "x-0.5"})
    assert [d.kind for d in validate_config(path)] == ["NonPositiveSpeed"]


def test_simulate_linear_const(tmp_path, capsys):
    assert main(["simulate", "linear_const.cfg", "--out-dir", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert re.search(r"^t_F: 2$", out, re.M)
    for f in ("kernels.csv", "gains.csv", "trace.csv", "diagnostics.csv", "state_final.csv"):
        assert (tmp_path / f).exists()


def test_simulate_quasilinear_bench(tmp_path, capsys):
    assert main(["simulate", "quasilinear_bench.cfg", "--out-dir", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    rate = float(re.search(r"fitted H2 decay rate .*: (\S+) ", out).group(1))
    assert rate > 0


def test_negative_speed_fails_at_kernel_assembly(tmp_path, capsys):
    path = write_variant(tmp_path, "linear_const.cfg", {"eps1": "x-0.5"})
    code = main(["simulate", str(path), "--out-dir", str(tmp_path / "o")])
    assert code != EXIT_OK
    err = capsys.readouterr().err.strip()
    assert "stage=kernel-assembly" in err and "kind=NonPositiveSpeed" in err


def test_numerical_failure_exit_code(tmp_path, capsys):
    path = write_variant(tmp_path, "linear_const.cfg", {"max_iter": "2"})
    assert main(["solve-kernels", str(path), "--out-dir", str(tmp_path)]) == EXIT_NUMERIC
    assert "kind=NoConvergence" in capsys.readouterr().err


def test_solve_kernels_and_grid_override(tmp_path, capsys):
    assert main(["solve-kernels", "linear_const.cfg", "--grid-n", "21", "--quiet",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out == ""
    rows = (tmp_path / "kernels.csv").read_text().splitlines()
    assert len(rows) == 1 + 21 * 22 // 2


def test_outputs_are_deterministic(tmp_path):
    path = write_variant(tmp_path, "linear_const.cfg", {"m": "80", "n": "21"})
    for run in ("a", "b"):
        assert main(["simulate", str(path), "--quiet", "--out-dir", str(tmp_path / run)]) == EXIT_OK
    for f in ("kernels.csv", "gains.csv", "trace.csv", "diagnostics.csv", "state_final.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_target_exact_and_report(tmp_path, capsys):
    assert main(["simulate", "target_exact.cfg", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert "t_F: 1.5" in capsys.readouterr().out
    assert main(["report", str(tmp_path / "trace.csv"), "--t-end", "1.4"]) == EXIT_OK
    assert "fitted L2 decay rate" in capsys.readouterr().out
    assert main(["report", str(tmp_path / "missing.csv")]) == EXIT_CONFIG


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hyperback", "validate", "target_exact.cfg"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
