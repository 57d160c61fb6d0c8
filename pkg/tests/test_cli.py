import json
import subprocess
import sys

import pytest
from click.testing import CliRunner

from flatexp import cli

SMALL_GRID = "window=64,decade=8"


def run(*args, env=None):
    return CliRunner().invoke(cli.main, [str(a) for a in args], env=env)


@pytest.fixture(scope="module")
def desk_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk") / "desk.json"
    res = run("construct", "--desk", "--eps", "1/10", "--out", out)
    assert res.exit_code == 0, res.output
    return out


def test_construct_overrides_small_degree(tmp_path):
    out = tmp_path / "c.json"
    res = run("construct", "--beta", 1, "--delta", "e^-5", "--c-ell", 1, "--c-s", 1, "--c-r", 1, "--c-k", 1,
              "--out", out)
    assert res.exit_code == 0, res.output
    meta = json.loads(out.read_text())["meta"]
    assert meta["degree_p_hat"] == 12


@pytest.mark.parametrize("args", [
    ["--beta", "2"],
    ["--beta", "2", "--delta", "2^-20", "--paper-constants", "--c-ell", "1", "--c-s", "1", "--c-r", "1", "--c-k", "1"],
    ["--beta", "2", "--delta", "2^-20", "--c-ell", "1"],
    ["--beta", "2", "--delta", "2^-20", "--ell", "4"],
    ["--beta", "2", "--ell", "4", "--s", "330", "--r", "106", "--k", "424"],
    ["--beta", "abc", "--delta", "1e-3"],
    ["--beta", "4", "--delta", "1/2", "--eps", "1/1000", "--c-ell", "1", "--c-s", "1", "--c-r", "1", "--c-k", "1"],
])
def test_construct_input_errors(tmp_path, args):
    res = run("construct", *args, "--out", tmp_path / "x.json")
    assert res.exit_code == 2, res.output


def test_paper_constants_refused_above_cap(tmp_path):
    out = tmp_path / "p.json"
    res = run("construct", "--beta", 2, "--delta", "2^-20", "--paper-constants", "--out", out)
    assert res.exit_code == 2
    meta = json.loads(out.read_text())["meta"]
    assert "refused" in meta and meta["degree_estimate"] > meta["degree_cap"]


def test_construct_is_deterministic(tmp_path, desk_file):
    other = tmp_path / "desk.json"
    res = run("construct", "--desk", "--eps", "1/10", "--out", other)
    assert res.exit_code == 0
    a = json.loads(desk_file.read_text())
    b = json.loads(other.read_text())
    a["config"].pop("output"), b["config"].pop("output")
    assert a == b
    assert a["meta"]["degree_p_hat"] == 426


def test_under_parameterized_verify_fails(tmp_path):
    con = tmp_path / "under.json"
    res = run("construct", "--beta", 2, "--delta", "2^-20", "--ell", 4, "--s", 330, "--r", 106, "--k", 106,
              "--out", con)
    assert res.exit_code == 0, res.output
    rep = tmp_path / "under_report.json"
    res = run("verify", "--in", con, "--out", rep, "--skip-roots", "--grid", SMALL_GRID)
    assert res.exit_code == 1
    assert "FAIL worst margin" in res.output
    report = json.loads(rep.read_text())
    failing = [r for r in report["p_hat"]["records"] if not r["passed"]]
    assert failing and all("worst_x" in r for r in failing)
    assert rep.with_suffix(".csv").read_text().startswith("property,x,value,reference,margin")


def test_verify_desk_small_grid(tmp_path, desk_file):
    rep = tmp_path / "r.json"
    res = run("verify", "--in", desk_file, "--out", rep, "--skip-roots", "--grid", SMALL_GRID)
    assert res.exit_code == 0, res.output
    assert json.loads(rep.read_text())["passed"] is True


def test_verify_rejects_bad_inputs(tmp_path, desk_file):
    assert run("verify", "--in", tmp_path / "missing.json").exit_code == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("verify", "--in", bad).exit_code == 2
    obj = json.loads(desk_file.read_text())
    obj["meta"]["params"]["k"] = 400
    edited = tmp_path / "edited.json"
    edited.write_text(json.dumps(obj))
    assert run("verify", "--in", edited, "--skip-roots").exit_code == 2
    res = run("verify", "--in", desk_file, "--grid", "window=0,decade=0", "--out", tmp_path / "g.json")
    assert res.exit_code == 2


def test_certify_and_tamper(tmp_path):
    cert = tmp_path / "cert.json"
    res = run("certify", "--toy", "quadratic", "--out", cert)
    assert res.exit_code == 0, res.output
    assert run("verify-cert", "--in", cert).exit_code == 0
    obj = json.loads(cert.read_text())
    # change the leading hex digit of one coefficient of the first square
    hx = obj["squares"][0]["coeffs"][0]["hex"]
    pos = hx.index("0x") + 2
    obj["squares"][0]["coeffs"][0]["hex"] = hx[:pos] + ("3" if hx[pos] != "3" else "5") + hx[pos + 1:]
    (tmp_path / "t.json").write_text(json.dumps(obj))
    assert run("verify-cert", "--in", tmp_path / "t.json").exit_code == 1
    (tmp_path / "m.json").write_text(json.dumps({"squares": []}))
    assert run("verify-cert", "--in", tmp_path / "m.json").exit_code == 2


def test_certify_refuses_large_degree(tmp_path, desk_file):
    res = run("certify", "--in", desk_file, "--out", tmp_path / "c.json")
    assert res.exit_code == 2
    assert "exceeds" in res.output


def test_bench_empty_and_small(tmp_path):
    out = tmp_path / "b.csv"
    res = run("bench", "--betas", "", "--out", out)
    assert res.exit_code == 0
    assert out.read_text().count("\n") == 1
    res = run("bench", "--betas", "1-2", "--out", out)
    assert res.exit_code == 0, res.output
    assert out.read_text().count("\n") == 3
    assert run("bench", "--betas", "x", "--out", out).exit_code == 2


def test_demo_gibbs(tmp_path):
    out = tmp_path / "g.json"
    res = run("demo-gibbs", "--n", 3, "--seed", 1, "--out", out)
    assert res.exit_code == 0, res.output
    assert json.loads(out.read_text())["max_error"] < 0.1
    assert run("demo-gibbs", "--n", 11, "--out", out).exit_code == 2
    assert run("demo-gibbs", "--beta", "3/2", "--out", out).exit_code == 2


def test_precision_environment(tmp_path):
    out = tmp_path / "c.json"
    args = ["construct", "--beta", 1, "--delta", "e^-5", "--c-ell", 1, "--c-s", 1, "--c-r", 1, "--c-k", 1,
            "--out", out]
    assert run(*args, env={"FLATEXP_PRECISION": "32"}).exit_code == 2
    assert run(*args, env={"FLATEXP_PRECISION": "lots"}).exit_code == 2
    assert run(*args, env={"FLATEXP_PRECISION": "256"}).exit_code == 0
    assert json.loads(out.read_text())["config"]["precision_bits"] == 256


def test_run_config_round_trip():
    cfg = cli.RunConfig("construct", beta="2", delta="2^-20", overrides=["1", "2", "3", "4"],
                        ints={"ell": 4, "s": 330, "r": 106, "k": 424}, grid=SMALL_GRID, seed=7)
    assert cli.RunConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg


def test_parse_betas():
    assert cli.parse_betas("1-5") == [1, 2, 3, 4, 5]
    assert cli.parse_betas("1,3") == [1, 3]
    assert cli.parse_betas(" ") == []


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "flatexp", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("construct", "verify", "certify", "verify-cert", "bench", "demo-gibbs"):
        assert cmd in res.stdout
