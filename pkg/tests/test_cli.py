import csv
import io
import json
from pathlib import Path

import pytest

from lrguard.cases import VECTOR_A1
from lrguard.cli import SIM_COLUMNS, main, read_simulation, summarize

GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_bus_csv(path, column, values):
    path.write_text(f"bus,{column}\n" + "".join(f"{i + 1},{v}\n" for i, v in enumerate(values)))
    return str(path)


def test_no_arguments_is_usage_error(capsys):
    code, out, err = run(capsys)
    assert code == 2 and "usage" in err and out == ""


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "ptdf", "--case", "builtin:case3", "--bogus")
    assert code == 2 and "unrecognized" in err


def test_bad_numeric_range_is_usage_error(capsys):
    code, _, _ = run(capsys, "attack", "--case", "builtin:case6", "--target", "3-5", "--alpha", "1.5")
    assert code == 2


@pytest.mark.parametrize(
    "argv, golden",
    [
        (["attack", "--case", "builtin:case6", "--target", "3-5", "--alpha", "0.10"], "case6_attack_3-5.csv"),
        (["dcopf", "--case", "builtin:case3"], "case3_dcopf.csv"),
        (["ptdf", "--case", "builtin:case3"], "case3_ptdf.csv"),
    ],
)
def test_golden_outputs(capsys, argv, golden):
    code, out, err = run(capsys, *argv)
    assert code == 0
    assert out == (GOLDEN / golden).read_text()
    assert err.startswith("# config ")


def test_attack_summary(capsys):
    _, _, err = run(capsys, "attack", "--case", "builtin:case6", "--target", "3-5", "--method", "lp")
    summary = json.loads(err.splitlines()[-1])
    assert summary["optimal"] and summary["target"] == 8 and summary["direction"] == 1


def test_ptdf_precision(capsys):
    _, out, _ = run(capsys, "ptdf", "--case", "builtin:case6", "--branches", "3-5")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 6
    assert len(rows[2]["ptdf"].lstrip("-0.").replace(".", "")) >= 9


def test_detect_a1_flags(capsys, tmp_path):
    dev = write_bus_csv(tmp_path / "a1.csv", "delta_mw", VECTOR_A1)
    code, out, _ = run(capsys, "detect", "--case", "builtin:case6", "--targets", "3-5",
                       "--alpha-min-mode", "deviation", "--deviation-threshold", "0.3", "--deviations", dev)
    doc = json.loads(out)
    assert code == 0 and doc["flagged"] is True
    assert doc["assets"][0]["ratio"] == 0.75 and doc["assets"][0]["npdsb"] == 3


def test_profile_cache_then_detect(capsys, tmp_path):
    code, _, _ = run(capsys, "--out-dir", str(tmp_path), "profile", "--case", "builtin:case6", "--targets", "3-5",
                     "--alpha-min-mode", "deviation", "--deviation-threshold", "0.3")
    assert code == 0
    prof = tmp_path / "profiles.json"
    assert json.loads(prof.read_text())["profiles"][0]["alpha_min"] == 0.035
    est = write_bus_csv(tmp_path / "est.csv", "load_mw", [10 + VECTOR_A1[0], 15 + VECTOR_A1[1], 15 + VECTOR_A1[2],
                                                         30 + VECTOR_A1[3], 20 + VECTOR_A1[4], 10 + VECTOR_A1[5]])
    code, out, _ = run(capsys, "detect", "--case", "builtin:case6", "--profiles", str(prof), "--estimated", est)
    assert json.loads(out)["assets"][0]["ratio"] == 0.75


def test_detect_needs_input(capsys):
    code, _, err = run(capsys, "detect", "--case", "builtin:case6", "--targets", "3-5", "--alpha-min", "0.05")
    assert code == 1 and "needs --estimated" in err


def test_missing_case_is_domain_error(capsys, tmp_path):
    code, _, err = run(capsys, "validate", "--case", str(tmp_path / "none.grid"))
    assert code == 1 and "not found" in err


def test_malformed_case_is_domain_error(capsys, tmp_path):
    bad = tmp_path / "bad.grid"
    bad.write_text("BUS\n1 10 1\nBRANCH\n1 1 2 0.1 10\n")
    code, _, err = run(capsys, "validate", "--case", str(bad))
    assert code == 1 and "unknown bus 2" in err


def test_validate_ok(capsys):
    code, out, _ = run(capsys, "validate", "--case", "builtin:case6")
    assert code == 0 and json.loads(out)["ok"] is True


def test_convert_round_trip(capsys, tmp_path):
    from test_grid import MATPOWER

    src = tmp_path / "tiny.m"
    src.write_text(MATPOWER)
    code, out, _ = run(capsys, "convert", str(src), "--rating-scale", "0.5")
    assert code == 0
    grid = tmp_path / "tiny.grid"
    grid.write_text(out)
    code, out, _ = run(capsys, "validate", "--case", str(grid))
    assert code == 0


def test_dcopf_with_loads_file(capsys, tmp_path):
    loads = write_bus_csv(tmp_path / "l.csv", "load_mw", [105, 95, 0])
    code, out, err = run(capsys, "dcopf", "--case", "builtin:case3", "--loads", loads)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [float(r["dispatch_mw"]) for r in rows] == pytest.approx([142.5, 57.5, 0])
    assert json.loads(err.splitlines()[-1])["total_cost"] == pytest.approx(11725)


def test_loads_file_errors(capsys, tmp_path):
    short = tmp_path / "s.csv"
    short.write_text("bus,load_mw\n1,100\n")
    code, _, err = run(capsys, "dcopf", "--case", "builtin:case3", "--loads", str(short))
    assert code == 1 and "no value for buses" in err


def test_bdd_demo(capsys, tmp_path):
    dev = write_bus_csv(tmp_path / "d.csv", "delta_mw", [-1, 1.5, 1.5, -1, -2, 1])
    code, out, _ = run(capsys, "bdd-demo", "--case", "builtin:case6", "--deviations", dev)
    doc = json.loads(out)
    assert code == 0 and abs(doc["difference"]) < 1e-9


def test_config_file_with_override(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# attack settings\ncase = builtin:case6\ntarget = 3-5\nalpha = 0.05\n")
    code, out, err = run(capsys, "--config", str(cfg), "attack", "--alpha", "0.10")
    assert code == 0
    assert out == (GOLDEN / "case6_attack_3-5.csv").read_text()
    echo = json.loads(err.splitlines()[0][len("# config "):])
    assert echo["alpha"] == 0.1 and echo["case"] == "builtin:case6"


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("case = builtin:case6\ncolour = blue\n")
    code, _, _ = run(capsys, "--config", str(cfg), "validate")
    assert code == 2


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["--out-dir", str(out), "simulate", "--case", "builtin:sep60", "--targets", "5",
                 "--attacks", "10", "--noise", "5", "--seed", "3"]) == 0
    return out / "simulate.csv"


def test_simulate_layout(sim_csv):
    lines = sim_csv.read_text().splitlines()
    meta = json.loads(lines[0][2:])
    assert meta["seed"] == 3 and meta["target"] == 5 and meta["config"]["cutoff"] == 0.05
    assert lines[1].split(",") == SIM_COLUMNS
    assert len(lines) == 2 + 10 + 5 + 5


def test_simulate_deterministic(sim_csv, tmp_path):
    assert main(["--out-dir", str(tmp_path), "simulate", "--case", "builtin:sep60", "--targets", "5",
                 "--attacks", "10", "--noise", "5", "--seed", "3"]) == 0
    strip = lambda p: [l for l in p.read_text().splitlines() if not l.startswith("#")]  # noqa: E731
    assert strip(tmp_path / "simulate.csv") == strip(sim_csv)


def test_report_matches_recount(capsys, sim_csv):
    code, out, _ = run(capsys, "report", str(sim_csv))
    doc = json.loads(out)
    with open(sim_csv) as fh:
        rows = [r for r in csv.DictReader(l for l in fh if not l.startswith("#"))]
    for kind in ("attack", "gaussian", "cauchy"):
        sel = [r for r in rows if r["kind"] == kind]
        assert doc["kinds"][kind]["count"] == len(sel)
        assert doc["kinds"][kind]["flag_rate"] == sum(r["flagged"] == "1" for r in sel) / len(sel)
    assert doc["kinds"]["attack"]["flag_rate"] == 1.0
    assert doc["thresholds"]["tnsb"] == 47


def test_report_empty_batch_warns(capsys, tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("# {}\n" + ",".join(SIM_COLUMNS) + "\n")
    code, out, err = run(capsys, "report", str(p))
    assert code == 0 and "empty" in json.loads(out)["warning"] and "empty batch" in err


def test_report_malformed(capsys, tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    code, _, err = run(capsys, "report", str(p))
    assert code == 1 and "unexpected columns" in err


def test_summarize_all_flagged():
    rows = [{"index": i, "kind": "attack", "npdsb": 5, "tnsb": 6, "ratio": 5 / 6, "flagged": True,
             "overflow_mw": 1.0} for i in range(10)]
    assert summarize({}, rows)["kinds"]["attack"]["flag_rate"] == 1.0


def test_read_simulation_rejects_bad_rows():
    text = ",".join(SIM_COLUMNS) + "\n0,attack,x,1,2,0.5,1,,,\n"
    with pytest.raises(Exception, match="malformed"):
        read_simulation(io.StringIO(text))
