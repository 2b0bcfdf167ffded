import csv
import json

import pytest

from polydecay.cli import RunConfig, main

SMALL = {"cells": 128, "cov_cells": 256, "ly_cells": 256, "n_max": 1000, "n_cov": 100,
         "tail_window": [20, 1000], "d_window": [50, 1000], "cov_window": [30, 100],
         "ly_trials": 20, "scaling_n": 1000, "t_points": 8, "renewal_trunc": 30}


def _config(tmp_path, name="cfg.json", **extra):
    path = tmp_path / name
    path.write_text(json.dumps({**SMALL, **extra}))
    return str(path)


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["induce", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["induce", "--config", _config(tmp_path, colour="red"), "--out", str(tmp_path / "o")]) == 2
    assert main(["induce", "--config", _config(tmp_path, n_max=10), "--out", str(tmp_path / "o")]) == 2
    assert main(["validate", "--gamma", "1.5", "--out", str(tmp_path / "o")]) == 2


def test_flags_override_config(tmp_path):
    cfg = RunConfig.load(_config(tmp_path), {"cells": 64, "seed": None})
    assert cfg.cells == 64 and cfg.seed == 42


def test_validate_and_induce(tmp_path):
    out = tmp_path / "o"
    assert main(["induce", "--out", str(out)]) == 0
    rec = json.loads((out / "induce.json").read_text())
    assert rec["fits"]["tail"]["slope"] == pytest.approx(-2.0, abs=0.1)
    assert (out / "cells.tsv").read_text().startswith("j\ti\ttau\tlo\thi\td_ij\n")
    assert main(["validate", "--out", str(out)]) == 0
    assert json.loads((out / "validate.json").read_text())["gcd_return_times"] == 1


def test_corrupted_expected_exponent_fails(tmp_path):
    out = tmp_path / "o"
    assert main(["induce", "--config", _config(tmp_path, expected_tail_exponent=3.0), "--out", str(out)]) == 1


def test_report_names_failing_check(tmp_path):
    ok_out, bad_out = tmp_path / "ok", tmp_path / "bad"
    main(["report", "--config", _config(tmp_path), "--out", str(ok_out)])
    code = main(["report", "--config", _config(tmp_path, "bad.json", expected_tail_exponent=3.0),
                 "--out", str(bad_out)])
    assert code == 1
    ok = json.loads((ok_out / "report.json").read_text())
    bad = json.loads((bad_out / "report.json").read_text())
    assert "tail_exponent" not in ok["failed"]
    assert "tail_exponent" in bad["failed"]
    for ch in bad["checks"]:
        assert {"check", "value", "target", "tol", "bound", "passed"} <= set(ch)


def test_aperiodicity_record(tmp_path):
    out = tmp_path / "o"
    main(["aperiodicity", "--config", _config(tmp_path), "--out", str(out)])
    rec = json.loads((out / "aperiodicity.json").read_text())
    assert rec["gcd_return_times"] == 1
    assert rec["t_grid"] == 8
    assert rec["min_twisted_sv"] > 0


def test_decay_csv_and_determinism(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["decay", "--config", _config(tmp_path), "--out", str(out)]) in (0, 1)
    with open(outs[0] / "decay.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["n", "cov", "stderr_or_bound", "predicted_term", "f_beta"]
    for name in ("decay.csv", "decay.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    fit = json.loads((outs[0] / "decay.json").read_text())["fit"]
    assert set(fit) >= {"slope", "intercept", "window", "max_abs_residual"}


def test_ulam_outputs_deterministic(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["ulam", "--cells", "256", "--out", str(out)]) == 0
    assert (outs[0] / "ulam_matrix.coo").read_bytes() == (outs[1] / "ulam_matrix.coo").read_bytes()


def test_numerical_error_exit_3(tmp_path, monkeypatch):
    from polydecay import cli
    from polydecay.errors import NumericalError

    def boom(self):
        raise NumericalError("power iteration stalled")

    monkeypatch.setattr(cli.Pipeline, "density_stage", boom)
    out = tmp_path / "o"
    assert main(["density", "--out", str(out)]) == 3
    assert json.loads((out / "error.json").read_text())["error"] == "NumericalError"
