import csv
import hashlib
import json
from pathlib import Path

import pytest

from ppacdc import analysis, cli, sim
from ppacdc.eigen import EigenConvergenceError

GOLDEN = Path(__file__).parent / "golden"


def _write(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


BASE = {
    "graph": {"kind": "ring", "n": 5},
    "protocol": {"gamma": 0.2, "alpha": 1.2, "d_bar": 4, "bits": 8},
    "seed": 4,
}


def test_preset_list_and_dump(capsys):
    assert cli.main(["preset", "--list"]) == 0
    names = capsys.readouterr().out.split()
    assert names == ["paper-fig2", "paper-fig3", "paper-fig4"]
    assert cli.main(["preset", "paper-fig3", "--dump"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["protocol"]["alpha"] == 5.0
    assert cli.main(["preset", "nope"]) == 1


@pytest.mark.parametrize("name", ["paper-fig2", "paper-fig3"])
def test_presets_match_golden(tmp_path, name, capsys):
    assert cli.main(["preset", name, "--out", str(tmp_path)]) == 0
    sums = dict(reversed(line.split()) for line in
                (GOLDEN / "traces.sha256").read_text().splitlines())
    for b in ("b3", "b8", "b24"):
        stem = f"{name}_{b}"
        got = (tmp_path / f"{stem}_result.json").read_text()
        assert got == (GOLDEN / f"{stem}_result.json").read_text()
        trace = (tmp_path / f"{stem}_trace.csv").read_bytes()
        assert hashlib.sha256(trace).hexdigest() == sums[f"{stem}_trace.csv"]
    assert "converged at k=" in capsys.readouterr().out


def test_run_writes_outputs_and_uses_env_dir(tmp_path, monkeypatch):
    cfg = _write(tmp_path / "exp.json", BASE)
    out = tmp_path / "env_out"
    monkeypatch.setenv("PPACDC_OUT", str(out))
    assert cli.main(["run", "--config", cfg]) == 0
    rows = list(csv.reader((out / "exp_trace.csv").open()))
    assert rows[0] == sim.TRACE_HEADER
    result = json.loads((out / "exp_result.json").read_text())
    assert result["converged"] and result["seed"] == 4
    assert sorted(p.name for p in out.iterdir()) == ["exp_result.json", "exp_trace.csv"]


def test_run_not_converged_exit_code(tmp_path):
    cfg = _write(tmp_path / "short.json", BASE | {"max_iters": 10})
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_seed_and_override_flags(tmp_path):
    cfg = _write(tmp_path / "exp.json", BASE)
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path), "--seed", "9",
                     "--override", "protocol.bits=12"]) == 0
    result = json.loads((tmp_path / "exp_result.json").read_text())
    assert result["seed"] == 9
    assert result["bits_total"] == result["rounds"] * 5 * (4 * 12 + 18)


def test_malformed_json_reports_position(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "graph": {"kind": "ring", "n": 5},\n  "protocol": {,}\n}')
    assert cli.main(["run", "--config", str(p)]) == 1
    err = capsys.readouterr().err
    assert "line 3 column" in err


def test_unknown_key_and_bad_values_rejected(tmp_path, capsys):
    cfg = _write(tmp_path / "typo.json", BASE | {"max_iter": 5})
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "max_iter" in capsys.readouterr().err
    cfg = _write(tmp_path / "dbar.json",
                 BASE | {"protocol": BASE["protocol"] | {"d_bar": 2}})
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "diameter" in capsys.readouterr().err
    path_graph = {"kind": "edges", "n": 3, "edges": [[1, 0], [2, 1]]}
    cfg = _write(tmp_path / "path.json", BASE | {"graph": path_graph})
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "strongly connected" in capsys.readouterr().err
    assert not list(tmp_path.glob("*.csv"))


def test_one_cell_sweep_matches_run(tmp_path):
    doc = BASE | {"sweep": {"alphas": [1.2], "bits": [8], "n_seeds": 1}}
    cfg = _write(tmp_path / "one.json", doc)
    assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "one_sweep.csv").open()))
    cfg2 = _write(tmp_path / "single.json", BASE)
    assert cli.main(["run", "--config", cfg2, "--out", str(tmp_path)]) == 0
    result = json.loads((tmp_path / "single_result.json").read_text())
    assert rows == [{"alpha": "1.2", "bits": "8", "seeds": "1", "converged_count": "1",
                     "mean_iters": f"{float(result['convergence_iter'])!r}",
                     "min_iters": str(result["convergence_iter"]),
                     "max_iters": str(result["convergence_iter"])}]


def test_sweep_flags_saturated_cell(tmp_path, capsys):
    doc = BASE | {"max_iters": 2000,
                  "sweep": {"alphas": [10.0], "bits": [2], "n_seeds": 2}}
    cfg = _write(tmp_path / "sat.json", doc)
    assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert "NOT CONVERGED" in capsys.readouterr().out
    text = (tmp_path / "sat_sweep.csv").read_text()
    assert text.splitlines()[1] == "10.0,2,2,0,,,"
    cfg = _write(tmp_path / "nosweep.json", BASE)
    assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_analyze(capsys):
    assert cli.main(["analyze", "--preset", "ring5", "--gamma", "0.2"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passes"] and abs(report["dominant_re"] - 1) <= 1e-9
    assert cli.main(["analyze", "--preset", "ring5", "--gamma", "10"]) == 1
    assert not json.loads(capsys.readouterr().out)["passes"]
    assert cli.main(["analyze", "--preset", "ring5", "--gamma", "0"]) == 1
    assert cli.main(["analyze", "--preset", "complete:4", "--gamma", "0.2"]) == 0
    assert cli.main(["analyze", "--preset", "star", "--gamma", "0.2"]) == 1


def test_analyze_graph_file(tmp_path, capsys):
    out = tmp_path / "g.txt"
    assert cli.main(["gen-graph", "--n", "6", "--prob", "0.3", "--seed", "2",
                     "--out", str(out)]) == 0
    capsys.readouterr()
    assert cli.main(["analyze", "--graph", str(out), "--gamma", "0.2"]) in (0, 1)
    assert "second_modulus" in capsys.readouterr().out


def test_analyze_eigen_failure_exit_code(monkeypatch):
    def boom(*args, **kwargs):
        raise EigenConvergenceError("no deflation")

    monkeypatch.setattr(analysis, "eigenvalues", boom)
    assert cli.main(["analyze", "--preset", "ring5", "--gamma", "0.2"]) == 3


def test_gamma_warning(tmp_path, caplog):
    doc = BASE | {"protocol": BASE["protocol"] | {"gamma": 0.9}, "max_iters": 20}
    cfg = _write(tmp_path / "g.json", doc)
    with caplog.at_level("WARNING"):
        cli.main(["run", "--config", cfg, "--out", str(tmp_path)])
    assert "fails the spectral check" in caplog.text


def test_gen_graph(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert cli.main(["gen-graph", "--n", "5", "--out", str(a)]) == 0
    assert capsys.readouterr().out.strip() == "n=5 m=5 diameter=4"
    assert cli.main(["gen-graph", "--n", "5", "--prob", "1", "--out", str(b)]) == 0
    assert capsys.readouterr().out.strip() == "n=5 m=20 diameter=1"
    assert cli.main(["gen-graph", "--n", "9", "--prob", "0.2", "--seed", "4",
                     "--out", str(a)]) == 0
    assert cli.main(["gen-graph", "--n", "9", "--prob", "0.2", "--seed", "4",
                     "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert cli.main(["gen-graph", "--n", "1", "--out", str(a)]) == 1
    assert cli.main(["gen-graph", "--n", "4", "--out", str(tmp_path / "no" / "x")]) == 1


def test_graph_file_config(tmp_path):
    g = tmp_path / "g.txt"
    cli.main(["gen-graph", "--n", "5", "--prob", "0.3", "--seed", "1", "--out", str(g)])
    doc = BASE | {"graph": {"kind": "file", "path": "g.txt"}}
    cfg = _write(tmp_path / "f.json", doc)
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path)]) == 0
