import json

import pytest

from vlasov_cutoff.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_OK, main, read_report

SMOKE_TINY_MASS = """
[physics]
c0 = 1e-200
[sampling]
r_max = 2
[run]
cutoffs = 3, 4
t_final = 0.125
"""


def test_params_direct(capsys):
    assert main(["params", "--epsilon", "0.8"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Direct" in out
    assert "gamma in (0.26667, 0.45000)" in out
    assert "alpha in (0.46667, 0.66667)" in out


def test_params_rejects_epsilon(capsys):
    assert main(["params", "--epsilon", "1.2"]) == EXIT_CONFIG
    assert "1/15 < epsilon < 1" in capsys.readouterr().err


def test_params_rejects_delta(capsys):
    assert main(["params", "--epsilon", "0.5", "--delta", "0.6"]) == EXIT_CONFIG
    assert "(0.00000, 0.54167)" in capsys.readouterr().err


def test_usage_error_exit_code():
    assert main(["params"]) == EXIT_CONFIG
    assert main(["no-such-command"]) == EXIT_CONFIG


def test_sums(capsys, tmp_path):
    code = main(["sums", "--epsilon", "0.5", "--radii", "4", "8", "16", "--mu-samples", "3",
                 "--mu-range", "3", "--out", str(tmp_path)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "ratio band" in out and "VIOLATED" not in out
    assert (tmp_path / "sums.txt").exists()


def test_unknown_config_key(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nbogus = 1\n")
    assert main(["converge", "--config", str(bad)]) == EXIT_CONFIG


def test_singular_field_aborts(tmp_path, capsys):
    # lattice sampling stacks several velocity cells on every site
    code = main(["converge", "--config", "smoke", "--softening", "0", "--method", "direct",
                 "--out", str(tmp_path)])
    assert code == EXIT_ABORT
    assert "numerical abort" in capsys.readouterr().err


def test_smoke_simulate_is_deterministic(tmp_path):
    bodies = []
    out = tmp_path / "run0"
    for _ in range(2):
        assert main(["simulate", "--config", "smoke", "--out", str(out)]) == EXIT_OK
        text = (out / "report.json").read_text().splitlines()
        assert text[0].startswith("# generated ")
        bodies.append(text[1:])
        assert (out / "cutoffs.txt").exists() and (out / "snapshots_n3.txt").exists()
    assert bodies[0] == bodies[1]
    rep = read_report(tmp_path / "run0" / "report.json")
    assert set(rep["cutoffs"]) == {"3", "4"}
    assert main(["report", str(tmp_path / "run0")]) == EXIT_OK


def test_tiny_mass_is_free_streaming(tmp_path):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(SMOKE_TINY_MASS)
    assert main(["converge", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    with open(tmp_path / "converge.json") as fh:
        fh.readline()
        body = json.load(fh)
    # trajectories differ between cutoffs only through fields of size ~c0
    assert all(row[3] < 1e-150 for row in body["rows"])


def test_probe_smoke(tmp_path, capsys):
    code = main(["probe", "--config", "smoke", "--pairs", "16", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "quasi-Lipschitz sup ratio" in capsys.readouterr().out
    assert (tmp_path / "probe.json").exists()


def test_report_missing_run(tmp_path):
    assert main(["report", str(tmp_path / "missing")]) != EXIT_OK
