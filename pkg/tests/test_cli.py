import csv
import json

import numpy as np
import pytest

from modelrobust.cli import run
from modelrobust.io import read_csv_rows, read_dataset, render_trace_svg, write_csv
from modelrobust.exceptions import DataFormatError


def rows(path):
    return read_csv_rows(path)


@pytest.fixture
def exact_csv(tmp_path):
    p = tmp_path / "exact.csv"
    p.write_text("x,y\n0,1\n1,3\n2,5\n")
    return p


@pytest.fixture
def linear_csv(tmp_path):
    g = np.random.default_rng(0)
    x = g.normal(size=200)
    p = tmp_path / "lin.csv"
    write_csv(p, ["x", "y"], zip(x, 1 + 2 * x))
    return p


def test_fit_exact_line(exact_csv, tmp_path):
    assert run(["fit", str(exact_csv), "--functional", "ols", "-o", str(tmp_path)]) == 0
    r = rows(tmp_path / "estimate.csv")
    assert [x["parameter"] for x in r] == ["intercept", "x"]
    assert np.allclose([float(x["estimate"]) for x in r], [1.0, 2.0], atol=1e-12)


def test_sandwich_adds_hc1(linear_csv, tmp_path):
    assert run(["sandwich", str(linear_csv), "-o", str(tmp_path)]) == 0
    assert "se_hc1" in rows(tmp_path / "estimate.csv")[0]


def test_diagnose_zero_noise_trace(linear_csv, tmp_path):
    assert run(["diagnose", str(linear_csv), "--functional", "ols", "--regressor", "x", "--B", "1000",
                "--seed", "1", "-o", str(tmp_path)]) == 0
    r = rows(tmp_path / "trace.csv")
    assert len(r) == 18
    for comp, val in (("intercept", 1.0), ("x", 2.0)):
        est = [float(x["estimate"]) for x in r if x["component"] == comp]
        assert len(est) == 9 and max(abs(e - val) for e in est) <= 1e-10
    svg = (tmp_path / "trace.svg").read_text()
    assert svg.startswith("<svg") and svg.count('class="panel"') == 2
    again = render_trace_svg(rows(tmp_path / "trace.csv"), rows(tmp_path / "trace_replicates.csv"))
    assert again == svg


def test_outputs_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        o = tmp_path / f"run{k}"
        threads = str(1 + 3 * k)
        assert run(["bootstrap", "quadratic", "--N", "100", "--M", "50,100", "--B", "300", "--seed", "4",
                    "--threads", threads, "-o", str(o)]) == 0
        assert run(["diagnose", "sine", "--N", "150", "--B", "40", "--seed", "4", "--threads", threads,
                    "-o", str(o)]) == 0
        outs.append(o)
    for name in ("estimate.csv", "bootstrap.csv", "trace.csv", "trace_replicates.csv", "trace.svg"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_simulate_then_fit_roundtrip(tmp_path):
    assert run(["simulate", "linear-homo", "--N", "50", "--seed", "2", "-o", str(tmp_path)]) == 0
    d = read_dataset(tmp_path / "data.csv", "y")
    assert d.n_cases == 50 and d.column_names == ("intercept", "x")
    assert run(["fit", str(tmp_path / "data.csv"), "--functional", "huber", "-p", "k=1.5",
                "-o", str(tmp_path)]) == 0


def test_misspec_and_clt_commands(tmp_path):
    assert run(["misspec-test", "quadratic", "--N", "2000", "--B", "100", "--seed", "3", "-o", str(tmp_path)]) == 0
    z = {r["parameter"]: float(r["z"]) for r in rows(tmp_path / "misspec_test.csv")}
    assert abs(z["x"]) > 3
    assert run(["clt-check", "linear-hetero", "--N", "100", "--R", "100", "-o", str(tmp_path)]) == 0
    kinds = {r["quantity"] for r in rows(tmp_path / "clt_report.csv")}
    assert kinds == {"total", "noise", "approx", "cross_corr"}


def test_plugin_limit_command(tmp_path):
    assert run(["plugin-limit", "quadratic", "--M", "50,200,1000,10000", "--B", "50000", "--seed", "1",
                "-o", str(tmp_path)]) == 0
    r = rows(tmp_path / "plugin_limit.csv")
    assert [int(x["M"]) for x in r] == [50, 200, 1000, 10000]
    assert float(r[-1]["rel_gap"]) <= 0.05


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# scenario\nfunctional = huber\nk = 0.5\npop.sigma = 0.1\nN = 80\n")
    assert run(["fit", "linear-homo", "--config", str(cfg), "-p", "k=2", "-o", str(tmp_path)]) == 0
    r = rows(tmp_path / "estimate.csv")
    assert np.allclose([float(x["estimate"]) for x in r], [1.0, 2.0], atol=0.15)


@pytest.mark.parametrize("argv,code,kind", [
    (["fit", "missing.csv"], 1, "IOError"),
    (["fit", "quadratic", "--functional", "lasso"], 2, "UsageError"),
    (["fit", "quadratic", "-p", "bogus=1"], 1, "InvalidHyperparameter"),
    (["fit", "nowhere-pop"], 1, "IOError"),
    (["frobnicate"], 2, "UsageError"),
])
def test_errors_are_json_lines(argv, code, kind, capsys, tmp_path):
    assert run(argv + ["-o", str(tmp_path)] if argv[0] != "frobnicate" else argv) == code
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["error"] == kind


def test_bad_csv(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,y\n1,2\n3,abc\n")
    with pytest.raises(DataFormatError):
        read_dataset(p, "y")
    p.write_text("x,z\n1,2\n")
    with pytest.raises(DataFormatError):
        read_dataset(p, "y")
    assert run(["fit", str(p), "-o", str(tmp_path)]) == 1


def test_csv_number_format(tmp_path):
    p = tmp_path / "o.csv"
    write_csv(p, ["a", "b"], [[1, 0.1], [np.int64(2), np.float64(1 / 3)]])
    assert p.read_text() == "a,b\n1,0.1\n2,0.3333333333333333\n"
