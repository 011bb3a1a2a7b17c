import json
import subprocess
import sys

import numpy as np
import pytest

from ensemble_reach import __version__
from ensemble_reach.cli import main
from ensemble_reach.model import (MatrixEnsemble, MatrixFamily, ParameterGrid, TargetEnsemble,
                                  dumps_canonical, load_ensemble, parallel_compose, to_document)

from conftest import mixed3_blocks


def _write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(dumps_canonical(doc))
    return str(path)


def _mixed3_doc(K=21, C=False):
    e = parallel_compose(*mixed3_blocks(K))
    if C:
        c = np.zeros((K, 1, 3))
        c[:, 0, 0] = 1
        e = e.with_families(C=MatrixFamily.samples(c))
    th = e.points.real
    tgt = TargetEnsemble(np.stack([np.cos(th), th ** 2, np.exp(-th ** 2)], axis=1))
    return to_document(e, tgt)


def _circle_doc(K=256):
    g = ParameterGrid.circle(K)
    z = g.points
    e = MatrixEnsemble.from_arrays(g, z[:, None, None], np.ones((K, 1, 1)))
    return to_document(e, TargetEnsemble((1 / z)[:, None]))


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_certify_three_state_example_passes_via_r3(tmp_path, capsys):
    spec = _write(tmp_path, "p3.json", _mixed3_doc())
    code, out, _ = _run(["certify", "--input", spec], capsys)
    doc = json.loads(out)
    assert code == 0
    assert doc["result"]["route"].startswith("R3")
    assert doc["version"] == __version__
    assert {"rank", "spec", "measure"} <= set(doc["tolerances"])


def test_synthesize_circle_not_achieved(tmp_path, capsys):
    spec = _write(tmp_path, "circ.json", _circle_doc())
    csv = tmp_path / "curve.csv"
    code, out, _ = _run(["synthesize", "--input", spec, "--epsilon", "0.5", "--max-degree", "40",
                         "--csv", str(csv)], capsys)
    doc = json.loads(out)
    assert code == 2
    assert doc["result"]["achieved"] is False
    assert doc["result"]["achieved_sup_error"] >= 0.99
    assert csv.read_text().splitlines()[0] == "degree,sup_error,q_error"


def test_malformed_spec_names_key(tmp_path, capsys):
    doc = _mixed3_doc()
    doc["Amat"] = doc.pop("A")
    spec = _write(tmp_path, "bad.json", doc)
    code, out, err = _run(["certify", "--input", spec], capsys)
    assert code == 1 and out == ""
    assert "Amat" in err and len(err.strip().splitlines()) == 1


@pytest.mark.parametrize("argv", [
    ["certify", "--input", "X", "--epsilon", "0"],
    ["certify", "--input", "X", "--tol-rank", "-1"],
    ["certify", "--input", "X", "--max-degree", "-2"],
    ["certify", "--input", "X", "--norm", "linf"],
    ["bogus", "--input", "X"],
])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1


def test_missing_file_and_invalid_json(tmp_path, capsys):
    code, _, err = _run(["certify", "--input", str(tmp_path / "none.json")], capsys)
    assert code == 1 and "none.json" in err
    p = tmp_path / "x.json"
    p.write_text("{not json")
    code, _, err = _run(["certify", "--input", str(p)], capsys)
    assert code == 1 and "invalid JSON" in err


def test_output_is_deterministic(tmp_path, capsys):
    spec = _write(tmp_path, "p3.json", _mixed3_doc(C=True))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["certify", "--input", spec, "--out", str(a)]) == 0
    assert main(["certify", "--input", spec, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["result"]["output"]["verdict"] == "pass"


def test_decompose_writes_block_specs(tmp_path, capsys):
    spec = _write(tmp_path, "p3.json", _mixed3_doc())
    out = tmp_path / "dec.json"
    assert main(["decompose", "--input", spec, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert sorted(doc["result"]["ranks"]) == [1, 2]
    assert max(doc["result"]["residuals"].values()) < 1e-7
    for name in doc["result"]["block_files"]:
        sub = load_ensemble(json.loads((tmp_path / name).read_text()))
        assert sub.K == 21 and sub.n in (1, 2)


def test_decompose_single_cluster_fails(tmp_path, capsys):
    g = ParameterGrid.interval(0, 1, 11)
    e = MatrixEnsemble.from_arrays(g, g.points.real[:, None, None], np.ones((11, 1, 1)))
    spec = _write(tmp_path, "s.json", to_document(e))
    code, out, _ = _run(["decompose", "--input", spec], capsys)
    assert code == 2 and "error" in json.loads(out)["result"]


def test_spectrum_csv(tmp_path, capsys):
    spec = _write(tmp_path, "p3.json", _mixed3_doc())
    csv = tmp_path / "eig.csv"
    assert main(["spectrum", "--input", spec, "--csv", str(csv)]) == 0
    lines = csv.read_text().splitlines()
    assert len(lines) == 1 + 21
    assert lines[0].split(",")[:4] == ["theta_re", "theta_im", "lambda1_re", "lambda1_im"]
    assert all(len(row.split(",")) == 8 for row in lines[1:])


def test_moments_and_steer_average(tmp_path, capsys):
    spec = _write(tmp_path, "p3c.json", _mixed3_doc(K=201, C=True))
    code, out, _ = _run(["moments", "--input", spec], capsys)
    assert code == 0 and json.loads(out)["result"]["rank"] == 1
    code, out, _ = _run(["steer-average", "--input", spec, "--y-star", "2",
                         "--epsilon", "1e-3", "--max-degree", "40"], capsys)
    assert code == 0
    assert json.loads(out)["result"]["achieved"] is True
    plain = _write(tmp_path, "p3.json", _mixed3_doc())
    code, _, err = _run(["moments", "--input", plain], capsys)
    assert code == 1 and "C" in err


def test_certify_inconclusive_exit_3(tmp_path, capsys):
    # two-input scalar pair with a shared double root: no route decides it
    g = ParameterGrid.interval(-1, 1, 101)
    th = g.points.real
    B = np.stack([np.ones_like(th), th], axis=1)[:, None, :]
    e = MatrixEnsemble.from_arrays(g, (th ** 2)[:, None, None], B)
    spec = _write(tmp_path, "two.json", to_document(e))
    code, out, _ = _run(["certify", "--input", spec], capsys)
    assert code == 3 and json.loads(out)["result"]["verdict"] == "inconclusive"


def test_console_script_entry_point(tmp_path):
    spec = _write(tmp_path, "p3.json", _mixed3_doc())
    proc = subprocess.run([sys.executable, "-m", "ensemble_reach.cli", "certify", "--input", spec],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "certify"


def test_thread_cap_env(tmp_path, monkeypatch, capsys):
    spec = _write(tmp_path, "p3.json", _mixed3_doc())
    monkeypatch.setenv("ENSEMBLE_REACH_THREADS", "1")
    assert _run(["certify", "--input", spec], capsys)[0] == 0
    monkeypatch.setenv("ENSEMBLE_REACH_THREADS", "zero")
    code, _, err = _run(["certify", "--input", spec], capsys)
    assert code == 1 and "ENSEMBLE_REACH_THREADS" in err
