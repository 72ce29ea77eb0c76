import csv
import json
import subprocess
import sys

import pytest

from conftest import illustrative_doc
from ldtmarket.cli import main
from ldtmarket.evaluate import evaluate
from ldtmarket.formulations import clear
from ldtmarket.model import load_case


def _write(tmp_path, doc, name="case.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_solve_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["solve", "illustrative", "--model", "ldt-cc", "--out", str(out), "--table"]) == 0
    printed = capsys.readouterr().out
    assert "ldt-cc:beta" in printed and "41.46" in printed
    doc = json.loads((out / "result.json").read_text())
    assert doc["model"] == "ldt-cc" and doc["omega_star"] == 235.0
    assert doc["case_hash"] and doc["manifest"]["model"] == "ldt-cc"
    prices = json.loads((out / "prices.json").read_text())
    assert prices["chi"] == pytest.approx(600.0, rel=1e-6)
    rows = list(csv.DictReader((out / "settlement.csv").open()))
    assert [r["producer"] for r in rows] == ["G1", "G2", "G3"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest) >= {"case_path", "model", "options", "tool_version", "timestamp", "outputs"}


def test_solve_json_is_sorted(tmp_path, capsys):
    assert main(["solve", "illustrative", "--model", "cc", "--json", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    doc = json.loads(text)
    assert text == json.dumps(doc, indent=2, sort_keys=True) + "\n"


def test_evaluate_round_trip_matches_library(tmp_path, capsys):
    out = tmp_path / "out"
    for model in ("cc", "ldt-wcc"):
        assert main(["solve", "illustrative", "--model", model, "--out", str(out / model)]) == 0
    args = ["evaluate", "illustrative", str(out / "cc" / "result.json"), str(out / "ldt-wcc" / "result.json"),
            "--scenarios", "300", "--seed", "4", "--out", str(out), "--summary"]
    assert main(args) == 0
    assert "ldt-wcc" in capsys.readouterr().out
    rows = {r["model"]: r for r in csv.DictReader((out / "summary.csv").open())}
    case = load_case(illustrative_doc())
    want = evaluate(clear(case, "ldt-wcc"), case, 300, 4)
    assert float(rows["ldt-wcc"]["mean_cost"]) == pytest.approx(want.mean_cost, rel=1e-9)
    assert (out / "scenarios_cc.csv").exists() and (out / "scenarios_ldt-wcc.json").exists()


def test_evaluate_rejects_foreign_result(tmp_path):
    assert main(["solve", "illustrative", "--model", "cc", "--out", str(tmp_path)]) == 0
    doc = illustrative_doc()
    doc["demand"] = 260.0
    other = _write(tmp_path, doc, "other.json")
    assert main(["evaluate", other, str(tmp_path / "result.json"), "--out", str(tmp_path)]) == 1


def test_min_side_keeps_case_hash(tmp_path):
    assert main(["solve", "illustrative", "--model", "cc", "--min-side", "--out", str(tmp_path)]) == 0
    assert main(["evaluate", "illustrative", str(tmp_path / "result.json"), "--scenarios", "10",
                 "--out", str(tmp_path)]) == 0


def test_min_side_cc_moves_off_the_one_sided_point(tmp_path):
    # Both-sided limits are feasible here; the one-sided schedule is not.
    assert main(["solve", "illustrative", "--model", "cc", "--min-side", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "result.json").read_text())
    assert [doc["p"][g] for g in ("G1", "G2", "G3")] == pytest.approx([56.38, 63.62, 0.0], abs=0.01)
    assert doc["alpha"]["G3"] == pytest.approx(0.0, abs=1e-6)
    one_sided = clear(load_case(illustrative_doc()), "cc")
    shat = one_sided.sigma_hat["G3"]
    assert one_sided.p["G3"] - one_sided.alpha["G3"] * shat < 0.0


@pytest.mark.parametrize(
    "argv, code",
    [
        (["solve", "missing.json", "--model", "cc"], 1),
        (["solve", "illustrative", "--model", "bogus"], 2),
        (["evaluate", "illustrative", "nowhere.json"], 1),
        (["evaluate", "illustrative", "x.json", "--scenarios", "-1"], 1),
    ],
)
def test_input_errors(tmp_path, argv, code):
    argv = [a if not a.endswith(".json") or a == "illustrative" else str(tmp_path / a) for a in argv]
    if code == 2:
        with pytest.raises(SystemExit) as info:
            main(argv + ["--out", str(tmp_path)])
        assert info.value.code == 2
    else:
        assert main(argv + ["--out", str(tmp_path)]) == code


def test_invalid_case_file(tmp_path):
    doc = illustrative_doc()
    doc["generators"][0]["p_min"] = 500.0
    assert main(["solve", _write(tmp_path, doc), "--model", "cc", "--out", str(tmp_path)]) == 1


def test_infeasible_exit(tmp_path):
    doc = illustrative_doc()
    doc["demand"] = 600.0
    assert main(["solve", _write(tmp_path, doc), "--model", "cc", "--out", str(tmp_path)]) == 2


def test_cut_budget_exit(tmp_path):
    doc = illustrative_doc()
    doc["options"]["max_cut_iterations"] = 1
    doc["options"]["cut_tolerance"] = 1e-12
    assert main(["solve", _write(tmp_path, doc), "--model", "ldt-wcc", "--out", str(tmp_path)]) == 3


def test_compare_tables_and_csv(tmp_path, capsys):
    assert main(["compare", "illustrative", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "2524.17" in text and "2919.15" in text
    rows = list(csv.DictReader((tmp_path / "dispatch.csv").open()))
    assert len(rows) == 12
    prices = list(csv.DictReader((tmp_path / "prices.csv").open()))
    assert {r["model"] for r in prices} == {"cc", "wcc", "ldt-cc", "ldt-wcc"}


def test_compare_network_prints_lmps(capsys):
    assert main(["compare", "isone8", "--network", "--models", "cc", "ldt-cc"]) == 0
    text = capsys.readouterr().out
    assert "node" in text and "ME" in text


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ldtmarket", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
