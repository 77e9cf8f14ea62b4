import csv
import json

import numpy as np
import pytest

from oqw.cli.main import CoinSpecFile, load_coin_file, main
from oqw.cli.registry import REGISTRY, build_fixture, fixture_names
from oqw.qcore.main import StructuralError


def export(tmp_path, fixture):
    out = tmp_path / f"{fixture}.json"
    assert main(["export", fixture, "--out", str(out)]) == 0
    return out


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_registry_has_ten_examples():
    assert len(REGISTRY) == 10
    names = fixture_names()
    assert len(names) == len(set(names))
    with pytest.raises(KeyError):
        build_fixture("nope")


def test_export_round_trip(tmp_path):
    path = export(tmp_path, "ex5_2")
    spec = load_coin_file(str(path))
    assert spec.kind == "oqw1d"
    assert spec.metadata == {"fixture": "ex5_2"}
    again = CoinSpecFile.from_coin(spec.to_coin(), metadata=spec.metadata)
    assert again.model_dump(mode="json") == json.loads(path.read_text())
    original = build_fixture("ex5_2")
    for a, b in zip(original.kraus, spec.to_coin().kraus):
        assert np.array_equal(a, b)


def test_validate_ok(tmp_path, capsys):
    code, out, _ = run(capsys, ["validate", str(export(tmp_path, "ex5_4"))])
    assert code == 0
    assert "valid: True" in out


def test_validate_perturbed_coin(tmp_path, capsys):
    path = export(tmp_path, "ex5_4")
    doc = json.loads(path.read_text())
    doc["matrices"]["L"][0][0][0] += 1e-3
    path.write_text(json.dumps(doc))
    code, out, _ = run(capsys, ["validate", str(path)])
    assert code == 1
    assert "normalization: FAILED" in out


def test_truncated_file(tmp_path, capsys):
    path = export(tmp_path, "ex5_4")
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    code, _, err = run(capsys, ["validate", str(path)])
    assert code == 2
    assert "line" in err and "column" in err


def test_wrong_dimension_names_the_field(tmp_path, capsys):
    path = export(tmp_path, "ex5_4")
    doc = json.loads(path.read_text())
    doc["dimension"] = 3
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, ["classify", str(path)])
    assert code == 2
    assert "expected 3x3" in err


def test_missing_matrix_is_structural(tmp_path):
    path = export(tmp_path, "ex7_2")
    doc = json.loads(path.read_text())
    del doc["matrices"]["D3"]
    path.write_text(json.dumps(doc))
    with pytest.raises(StructuralError):
        load_coin_file(str(path)).to_coin()


def test_non_numeric_entry_names_the_field(tmp_path, capsys):
    path = export(tmp_path, "ex5_2")
    doc = json.loads(path.read_text())
    doc["matrices"]["B"][0][0] = ["x", 0.0]
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, ["validate", str(path)])
    assert code == 2
    assert "matrices.B" in err


@pytest.mark.parametrize(
    "fixture, kind, transient_rank",
    [("ex5_4", "Split", 1), ("ex7_2", "Transient", 3), ("ex7_3_H2", "Recurrent", 0), ("2d_split", "Split", 3)],
)
def test_classify_json(tmp_path, capsys, fixture, kind, transient_rank):
    path = export(tmp_path, fixture)
    code, out, _ = run(capsys, ["classify", str(path), "--json"])
    assert code == 0
    doc = json.loads(out)
    assert doc["kind"] == kind
    assert doc["transient_rank"] == transient_rank
    assert len(doc["transient_basis"]) == transient_rank


def test_classify_output_is_stable(tmp_path, capsys):
    path = export(tmp_path, "ex5_4")
    _, first, _ = run(capsys, ["classify", str(path), "--json"])
    _, second, _ = run(capsys, ["classify", str(path), "--json"])
    assert first == second
    (vector,) = json.loads(first)["transient_basis"]
    assert vector == [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]
    assert "e-" not in first.split("transient_basis")[1]


def test_classify_text_report(tmp_path, capsys):
    code, out, _ = run(capsys, ["classify", str(export(tmp_path, "ex5_5"))])
    assert code == 0
    assert "kind: Transient" in out
    assert "criterion: generalized-1d" in out


def test_tolerance_flag(tmp_path, capsys):
    path = export(tmp_path, "ex5_3")
    _, out, _ = run(capsys, ["classify", str(path), "--json"])
    assert json.loads(out)["kind"] == "Transient"
    _, out, _ = run(capsys, ["classify", str(path), "--json", "--tolerance", "0.5"])
    assert json.loads(out)["kind"] == "Recurrent"


def test_criterion_unavailable_exit_code(tmp_path, capsys):
    L = np.diag([0.5, 0.5, 0.6])
    B = np.diag([0.5, 0.7, 0.6])
    R = np.sqrt(np.eye(3) - L @ L - B @ B)
    doc = {
        "kind": "oqw1d",
        "dimension": 3,
        "matrices": {n: [[[float(x), 0.0] for x in row] for row in m] for n, m in (("L", L), ("B", B), ("R", R))},
    }
    path = tmp_path / "lazy.json"
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, ["classify", str(path)])
    assert code == 3
    assert "error:" in err


def test_reproduce_all(capsys):
    code, out, _ = run(capsys, ["reproduce", "all"])
    assert code == 0
    assert out.strip().splitlines()[-1] == "10/10 PASS"


def test_reproduce_single_example(capsys):
    code, out, _ = run(capsys, ["reproduce", "ex5_1b"])
    assert code == 0
    assert out.count("PASS") == 5
    assert "1/1 PASS" in out


def test_reproduce_unknown_example(capsys):
    code, _, err = run(capsys, ["reproduce", "ex9_9"])
    assert code == 2
    assert "unknown example" in err


def test_export_unknown_fixture(capsys):
    code, _, _ = run(capsys, ["export", "nope"])
    assert code == 2


def test_simulate_exact_partial_sums(tmp_path, capsys):
    path = export(tmp_path, "classical")
    out = tmp_path / "sums.csv"
    assert main(["simulate", str(path), "--steps", "4", "--exact", "--csv", str(out)]) == 0
    rows = list(csv.reader(out.read_text().splitlines()))
    assert rows[0] == ["k", "p00", "S"]
    assert [float(r[1]) for r in rows[1:]] == pytest.approx([1.0, 0.0, 0.5, 0.0, 0.375])
    assert float(rows[-1][2]) == pytest.approx(1.875)


def test_simulate_budget_exit_code(tmp_path, capsys):
    path = export(tmp_path, "classical")
    code, _, err = run(capsys, ["simulate", str(path), "--steps", "20001", "--exact"])
    assert code == 4
    assert "budget" in err


def test_simulate_csv_is_deterministic(tmp_path, capsys):
    path = export(tmp_path, "ex5_4")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        code, report, _ = run(capsys, ["simulate", str(path), "--steps", "25", "--trajectories", "6",
                                       "--seed", "42", "--initial", "e4", "--csv", str(out)])
        assert code == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.reader(a.read_text().splitlines()))
    assert rows[0] == ["traj", "t", "x1"]
    assert len(rows) == 1 + 6 * 26
    stats = json.loads(report)
    assert stats["trajectories"] == 6
    assert stats["compensated_drift"] == pytest.approx([-1 / 3])


def test_simulate_continuous_time(tmp_path, capsys):
    path = export(tmp_path, "ex7_3_H2")
    code, report, _ = run(capsys, ["simulate", str(path), "--tmax", "2", "--trajectories", "3"])
    assert code == 0
    stats = json.loads(report)
    assert stats["time_at_origin"] is not None
    assert len(stats["drift"]) == 2


def test_simulate_requires_horizon(tmp_path, capsys):
    path = export(tmp_path, "ex5_4")
    code, _, _ = run(capsys, ["simulate", str(path)])
    assert code == 2
    code, _, _ = run(capsys, ["simulate", str(path), "--steps", "5", "--initial", "e9"])
    assert code == 2
