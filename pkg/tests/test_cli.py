import csv
import io
import subprocess
import sys

import pytest

from beamkit.cli import CDF_COLUMNS, SWEEP_COLUMNS, main
from beamkit.config import parse_config

SMALL = """\
[scenario]
mode = su_sweep_snr
seed = 5
trials = 3
methods = fully_digital, hybrid_pc, asymptotic

[architecture]
nt = 8
nr = 4
n_rf = 2
ns = 2
subcarriers = 4

[channel]
clusters = 2
scatterers = 3

[sweep]
axis = 0, 10
"""

SMALL_CDF = """\
[scenario]
mode = mu_cdf
seed = 2
trials = 4
methods = fully_digital, hybrid_nrf2

[architecture]
nt = 8
subcarriers = 2

[multiuser]
users = 2
population = 4
weights = adaptive

[sweep]
axis = -45
"""


def read_csv(text):
    lines = text.splitlines()
    assert lines[0] == "# format_version: 1"
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_preset_fig3a_short_run(tmp_path, capsys):
    out = tmp_path / "fig3a.csv"
    code, _, _ = run(["--preset", "fig3a", "--trials", 2, "--out", out], capsys)
    assert code == 0
    rows = read_csv(out.read_text())
    assert tuple(rows[0]) == SWEEP_COLUMNS
    assert {r["method"] for r in rows} == {"asymptotic", "fully_digital"}
    assert [r["axis"] for r in rows[::2]] == ["16", "32", "64", "128", "256"]
    assert all(r["trials"] == "2" for r in rows)


def test_repeat_runs_are_byte_identical(small, capsys):
    _, a, _ = run(["--config", small], capsys)
    _, b, _ = run(["--config", small, "--threads", 3], capsys)
    assert a == b
    rows = read_csv(a)
    assert len(rows) == 6
    assert [r["method"] for r in rows[:3]] == ["asymptotic", "fully_digital", "hybrid_pc"]


def test_seed_precedence(small, capsys, monkeypatch):
    _, base, _ = run(["--config", small], capsys)
    monkeypatch.setenv("BEAMKIT_SEED", "5")
    _, same, _ = run(["--config", small], capsys)
    assert same == base
    monkeypatch.setenv("BEAMKIT_SEED", "6")
    _, env, _ = run(["--config", small], capsys)
    assert env != base
    _, flag, _ = run(["--config", small, "--seed", 5], capsys)
    assert flag == base


def test_bad_env_seed_is_config_error(small, capsys, monkeypatch):
    monkeypatch.setenv("BEAMKIT_SEED", "minus one")
    code, out, err = run(["--config", small], capsys)
    assert code == 2 and out == "" and "BEAMKIT_SEED" in err


def test_emit_config_round_trips(small, capsys):
    code, out, _ = run(["--config", small, "--emit-config", "--trials", 7], capsys)
    assert code == 0
    s = parse_config(out)
    assert s.trials == 7 and s.nt == 8


def test_cdf_output(tmp_path, capsys):
    p = tmp_path / "cdf.ini"
    p.write_text(SMALL_CDF)
    code, out, _ = run(["--config", p], capsys)
    assert code == 0
    rows = read_csv(out)
    assert tuple(rows[0]) == CDF_COLUMNS
    for method in ("fully_digital", "hybrid_nrf2"):
        cdf = [float(r["cdf"]) for r in rows if r["method"] == method]
        rates = [float(r["rate"]) for r in rows if r["method"] == method]
        assert cdf[-1] == 1.0 and rates == sorted(rates)


def test_invalid_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text(SMALL.replace("nt = 8", "nt = 0"))
    code, out, err = run(["--config", p], capsys)
    assert code == 2 and out == ""
    assert "line 8" in err and "nt must be positive" in err


def test_missing_file_exit_code(tmp_path, capsys):
    code, _, err = run(["--config", tmp_path / "nope.ini"], capsys)
    assert code == 2 and "nope.ini" in err


def test_config_and_preset_are_exclusive(small):
    with pytest.raises(SystemExit) as info:
        main(["--config", str(small), "--preset", "fig4"])
    assert info.value.code == 2


def test_seed_range_checked(small):
    with pytest.raises(SystemExit):
        main(["--config", str(small), "--seed", str(2**64)])


def test_console_module_runs(small):
    proc = subprocess.run(
        [sys.executable, "-m", "beamkit.cli", "--config", str(small), "--trials", "1"],
        capture_output=True, text=True, check=True,
    )
    assert proc.stdout.startswith("# format_version: 1\n")
