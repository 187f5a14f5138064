import csv

import pytest

from lastlook import __version__
from lastlook.cli import main
from lastlook.config import config_text, default_grid, preset


def read_rows(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


def test_solve_table_row(tmp_path):
    code = main(["solve", "--preset", "table1_tau1s", "--protocol", "unconstrained", "--rho_g", "0",
                 "--out", str(tmp_path)])
    assert code == 0
    comment, rows = read_rows(tmp_path / "metrics.csv")
    assert comment.startswith(f"# lastlook {__version__} command=solve config_hash=")
    assert "seed=0" in comment
    m = rows[0]
    assert float(m["spread_bp"]) == pytest.approx(0.53, abs=0.03)
    assert float(m["threshold_bp"]) == pytest.approx(0.25, abs=0.03)
    assert float(m["rejection"]) == pytest.approx(0.33, abs=0.02)
    assert (tmp_path / "value.csv").exists() and (tmp_path / "policy.csv").exists()


def test_solve_clean_spread(tmp_path):
    assert main(["solve", "--preset", "base", "--protocol", "none", "--theta", "0", "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "metrics.csv")
    assert float(rows[0]["spread_bp"]) == pytest.approx(0.69, abs=0.01)
    assert rows[0]["threshold_bp"] == "inf"


def test_solve_from_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(config_text(preset("table1_tau1s"), default_grid()))
    assert main(["solve", "--config", str(cfg), "--set", "protocol=none", "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "metrics.csv")
    assert float(rows[0]["spread_bp"]) == pytest.approx(0.89, abs=0.03)


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["solve", "--out", str(tmp_path)]) == 2
    assert main(["solve", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path)]) == 2
    cfg = tmp_path / "partial.cfg"
    cfg.write_text("\n".join(ln for ln in config_text(preset("base"), default_grid()).splitlines()
                             if not ln.startswith("sigma_bp")))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "sigma_bp" in capsys.readouterr().err


def test_bad_inputs_exit_2(tmp_path):
    assert main(["solve", "--preset", "nope", "--out", str(tmp_path)]) == 2
    assert main(["solve", "--preset", "base", "--set", "rho=1.2", "--out", str(tmp_path)]) == 2
    assert main(["figures", "nope", "--preset", "base", "--out", str(tmp_path)]) == 2


def test_approx(tmp_path):
    assert main(["approx", "--preset", "feedback_rho01", "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "approx_summary.csv")
    assert float(rows[0]["R_star"]) == pytest.approx(0.03, abs=0.005)


def test_simulate_byte_identical(tmp_path):
    args = ["simulate", "--preset", "simulation_fair", "--engine", "adiabatic", "--paths", "12",
            "--sim-horizon", "0.003", "--bins", "4", "--seed", "9", "--set", "q_max=60"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    for name in ("paths.csv", "reputation_relaxation.csv", "utility_vs_rejection.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    comment, rows = read_rows(a / "paths.csv")
    assert "seed=9" in comment and len(rows) == 12


def test_figure_csv(tmp_path):
    assert main(["figures", "thresholds_vs_q", "--out", str(tmp_path)]) == 0
    comment, rows = read_rows(tmp_path / "thresholds_vs_q.csv")
    assert comment.startswith("# lastlook")
    assert list(rows[0]) == ["q", "bid_threshold_bp", "ask_threshold_bp"]


def test_validate_quick_and_mutation(tmp_path):
    assert main(["validate", "--quick", "--out", str(tmp_path)]) == 0
    assert main(["validate", "--quick", "--mutate", "psi", "--out", str(tmp_path)]) == 3
