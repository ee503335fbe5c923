import json

import pytest

from carleman_lab.cli import main


def test_constants_laplacian(capsys):
    assert main(["constants", "--config", "configs/laplacian_d2.cfg", "--format", "text"]) == 0
    out = capsys.readouterr().out
    assert "tildeC" in out and "overall: PASS" in out


def test_constants_json(capsys):
    assert main(["constants", "--format", "json"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["passed"] is True
    names = [c["name"] for c in rec["checks"]]
    assert "laplacian_bounds" in names and "remark_upper_bounds" in names
    for c in rec["checks"]:
        assert "tolerance" in c


def test_sweep_inadmissible_exits_one(capsys):
    assert main(["sweep", "--config", "configs/inadmissible.cfg", "--format", "text"]) == 1
    cap = capsys.readouterr()
    assert "33 d theta1^(11/2) theta2 rho" in cap.out
    assert "admissibility" in cap.err
    assert "SKIP" in cap.out


def test_fault_injected_C_names_failing_check(tmp_path, capsys):
    cfg = tmp_path / "weak.cfg"
    cfg.write_text("[params]\nd = 1\n[bump radial]\nr0 = 0.3\nr1 = 0.7\n"
                   "[sweep]\npoints = 1\nC_scale = 1e-12\n")
    assert main(["sweep", "--config", str(cfg), "--format", "json"]) == 1
    rec = json.loads(capsys.readouterr().out)
    assert rec["failing"] and rec["failing"][0].startswith("carleman[radial")


@pytest.mark.parametrize("argv", [[], ["bogus"], ["suite", "--format", "xml"],
                                  ["suite", "--jobs", "x"]])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert "error" in capsys.readouterr().err


def test_bad_jobs_and_missing_config(capsys):
    assert main(["suite", "--jobs", "0"]) == 2
    assert main(["suite", "--config", "does/not/exist.cfg"]) == 2


def test_config_error_exit_two(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[field]\nA0 = [[1, 0.5], [0, 1]]\n")
    assert main(["constants", "--config", str(cfg)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_out_dir_files(tmp_path, capsys):
    cfg = tmp_path / "d1.cfg"
    cfg.write_text("[params]\nd = 1\n[bump radial]\nr0 = 0.3\nr1 = 0.7\n"
                   "[sweep]\npoints = 2\n")
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--format", "csv"]) == 0
    assert (out / "report.csv").read_text().startswith("stage,name,passed")
    sweep = (out / "sweep_radial.csv").read_text().splitlines()
    assert sweep[0] == "alpha,lhs_grad,lhs_u,rhs,ratio,log_scale" and len(sweep) == 3
