import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from regmdp.cli import CSV_HEADER, check_csv, main
from regmdp.mdp import make_mdp, serialize_mdp


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def one_state_file(tmp_path):
    path = tmp_path / "one.json"
    path.write_text(serialize_mdp(make_mdp(np.ones((1, 2, 1)), [[1.0, 0.0]], 0.5)))
    return str(path)


@pytest.fixture
def md_config(tmp_path):
    return write_json(tmp_path / "exp.json", {
        "mdp": {"garnet": {"n_states": 8, "n_actions": 3, "branching": 2, "sparsity": 0.5}},
        "scheme": {"scheme": "md_mpi_1", "m": 2, "K": 30, "regularizer": {"kind": "entropy", "bregman": True}},
        "seeds": [0, 1, 2],
    })


def read_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


# ------------------------------------------------------------------ run


def test_run_exact_md_writes_outputs_and_passes(tmp_path, md_config):
    out = tmp_path / "out"
    assert main(["run", "--config", md_config, "--out", str(out)]) == 0
    files = read_bytes(out)
    assert len([n for n in files if n.startswith("diagnostics_seed")]) == 3
    assert len(files) == 9
    doc = json.loads(files["bounds_seed1.json"])
    assert doc["all_hold"] and doc["seed"] == 1 and doc["scheme"] == "md_mpi_1"
    rows = list(csv.reader(files["diagnostics_seed0.csv"].decode().splitlines()))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 31
    assert rows[1][-1] == "NaN"  # no weights outside the weighted scheme


def test_run_is_byte_deterministic(tmp_path, md_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", md_config, "--out", str(a)]) == 0
    assert main(["run", "--config", md_config, "--out", str(b), "--jobs", "2"]) == 0
    assert read_bytes(a) == read_bytes(b)


def test_seed_override(tmp_path, md_config):
    out = tmp_path / "o"
    assert main(["run", "--config", md_config, "--out", str(out), "--seed-override", "7"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["bounds_seed7.json", "diagnostics_seed7.csv", "trace_seed7.json"]


def test_csv_values_use_full_precision(tmp_path, md_config):
    out = tmp_path / "o"
    main(["run", "--config", md_config, "--out", str(out)])
    trace = json.loads((out / "trace_seed0.json").read_text())
    rows = list(csv.DictReader((out / "diagnostics_seed0.csv").read_text().splitlines()))
    assert float(rows[4]["eps_prime_sup"]) == trace["eps_prime"][4]


def test_gamma_one_is_a_config_error(tmp_path, capsys):
    cfg = write_json(tmp_path / "bad.json", {
        "mdp": {"garnet": {"n_states": 4, "n_actions": 2, "branching": 1, "sparsity": 0.5, "gamma": 1.0}},
        "scheme": {"scheme": "reg_mpi", "K": 3},
    })
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "RangeError" in capsys.readouterr().err


@pytest.mark.parametrize("obj", [
    {"scheme": {"scheme": "reg_mpi"}},
    {"mdp": {"garnet": {"n_states": 4}}, "scheme": {"scheme": "reg_mpi"}},
    {"mdp": {"nowhere": {}}, "scheme": {"scheme": "reg_mpi"}},
    {"mdp": {"file": "missing.json"}, "scheme": {"scheme": "reg_mpi"}},
    {"mdp": {"garnet": {"n_states": 4, "n_actions": 2, "branching": 1, "sparsity": 0.5}},
     "scheme": {"scheme": "reg_mpi"}, "seeds": []},
    {"mdp": {"garnet": {"n_states": 4, "n_actions": 2, "branching": 1, "sparsity": 0.5}},
     "scheme": {"scheme": "reg_mpi"}, "bounds": ["made_up"]},
    {"mdp": {"garnet": {"n_states": 4, "n_actions": 2, "branching": 1, "sparsity": 0.5}},
     "scheme": {"scheme": "reg_mpi", "m": 0}},
])
def test_invalid_experiment_configs(tmp_path, obj, capsys):
    cfg = write_json(tmp_path / "bad.json", obj)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_malformed_json_reports_position(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"mdp": ')
    assert main(["run", "--config", str(path)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_file_and_inline_sources(tmp_path, one_state_file):
    inline = json.loads(open(one_state_file).read())
    for source in ({"file": "one.json"}, {"inline": inline}):
        cfg = write_json(tmp_path / "exp.json", {"mdp": source, "scheme": {"scheme": "reg_mpi", "K": 5},
                                                "bounds": ["auto"]})
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


def test_named_bounds(tmp_path):
    cfg = write_json(tmp_path / "exp.json", {
        "mdp": {"garnet": {"n_states": 6, "n_actions": 2, "branching": 2, "sparsity": 0.5}},
        "scheme": {"scheme": "md_mpi_2", "m": 3, "K": 40, "error": {"eval_sup": 0.02, "greedy_sup": 0.02}},
        "bounds": ["md_mpi_regret", "lemma", "asymptotic_regret"],
    })
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "bounds_seed0.json").read_text())
    assert [r["theorem"] for r in doc["reports"]] == [
        "md_mpi_regret", "lemma_residual", "lemma_shift", "lemma_distance", "asymptotic_regret"]


def test_inapplicable_named_bound_is_config_error(tmp_path):
    cfg = write_json(tmp_path / "exp.json", {
        "mdp": {"garnet": {"n_states": 4, "n_actions": 2, "branching": 1, "sparsity": 0.5}},
        "scheme": {"scheme": "reg_mpi", "K": 3}, "bounds": ["weighted_regret"],
    })
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


# ---------------------------------------------------------- check-bounds


def test_check_bounds_reproduces_report(tmp_path, md_config):
    out = tmp_path / "o"
    main(["run", "--config", md_config, "--out", str(out)])
    recheck = tmp_path / "recheck.json"
    assert main(["check-bounds", "--trace", str(out / "trace_seed2.json"), "--out", str(recheck)]) == 0
    assert recheck.read_bytes() == (out / "bounds_seed2.json").read_bytes()


def test_check_bounds_detects_tampered_trace(tmp_path):
    cfg = write_json(tmp_path / "exp.json", {
        "mdp": {"garnet": {"n_states": 6, "n_actions": 3, "branching": 2, "sparsity": 0.5}},
        "scheme": {"scheme": "reg_mpi", "K": 20},
    })
    out = tmp_path / "o"
    main(["run", "--config", cfg, "--out", str(out)])
    trace = json.loads((out / "trace_seed0.json").read_text())
    # swap the final policy for a deterministic worst-guess one: its loss blows past the bound
    last = np.zeros((6, 3))
    last[:, 0] = 1.0
    optimal = np.argmax(np.array(trace["policies"][-1]), axis=1)
    last[optimal == 0, 0] = 0.0
    last[optimal == 0, 1] = 1.0
    trace["policies"][-1] = last.tolist()
    tampered = write_json(tmp_path / "tampered.json", trace)
    assert main(["check-bounds", "--trace", tampered, "--out", str(tmp_path / "r.json")]) == 2
    assert json.loads((tmp_path / "r.json").read_text())["all_hold"] is False


def test_check_bounds_csv_round_trip_and_tampering(tmp_path, md_config):
    out = tmp_path / "o"
    main(["run", "--config", md_config, "--out", str(out)])
    path = out / "diagnostics_seed0.csv"
    text, ok = check_csv(path, "md_mpi_1")
    assert ok
    rows = list(csv.DictReader(path.read_text().splitlines()))
    expected = [float(r["bound_rhs"]) - float(r["regret_sup"]) for r in rows]
    assert json.loads(text)["margins"] == expected
    # the final margin equals the JSON report's regret margin exactly
    report = json.loads((out / "bounds_seed0.json").read_text())["reports"][0]
    assert report["theorem"] == "md_mpi_regret"
    assert expected[-1] == report["margin"]

    lines = path.read_text().splitlines()
    fields = lines[5].split(",")
    fields[2] = str(float(fields[2]) + 1e6)
    lines[5] = ",".join(fields)
    tampered = tmp_path / "tampered.csv"
    tampered.write_text("\n".join(lines) + "\n")
    assert main(["check-bounds", "--csv", str(tampered), "--scheme", "md_mpi_1", "--out", str(tmp_path / "r")]) == 2


def test_check_bounds_argument_errors(tmp_path, capsys):
    assert main(["check-bounds"]) == 1
    csv_path = tmp_path / "x.csv"
    csv_path.write_text(",".join(CSV_HEADER) + "\n")
    assert main(["check-bounds", "--csv", str(csv_path)]) == 1
    csv_path.write_text("a,b\n")
    assert main(["check-bounds", "--csv", str(csv_path), "--scheme", "reg_mpi"]) == 1


# -------------------------------------------------------- small commands


def test_solve_single_state(one_state_file, capsys):
    assert main(["solve", "--mdp", one_state_file]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["v"][0] == pytest.approx(2 * math.log(math.e + 1), abs=1e-9)
    assert f"{doc['v'][0]:.6f}" == "2.626523"
    assert [round(p, 6) for p in doc["pi"][0]] == [0.731059, 0.268941]


def test_solve_rejects_bad_inputs(tmp_path, one_state_file, capsys):
    assert main(["solve", "--mdp", one_state_file, "--tol", "0"]) == 1
    assert main(["solve", "--mdp", one_state_file, "--reg", "renyi"]) == 1
    assert main(["solve", "--mdp", str(tmp_path / "nope.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_states": 1}')
    assert main(["solve", "--mdp", str(bad)]) == 1


def test_garnet_command_deterministic(tmp_path):
    args = ["garnet", "--states", "20", "--actions", "3", "--branching", "2", "--sparsity", "0.5", "--seed", "1"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["gamma"] == 0.9


def test_garnet_range_error():
    assert main(["garnet", "--states", "3", "--actions", "2", "--branching", "5", "--sparsity", "0.5", "--seed", "0"]) == 1


def test_gradcheck_and_irl(tmp_path, capsys):
    mdp = tmp_path / "g.json"
    main(["garnet", "--states", "5", "--actions", "3", "--branching", "2", "--sparsity", "0.5", "--seed", "2",
          "--out", str(mdp)])
    assert main(["gradcheck", "--mdp", str(mdp), "--scale", "0.1"]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True
    assert main(["irl", "--mdp", str(mdp), "--reg", "tsallis"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["max_total_variation"] <= 1e-6
    assert len(doc["reward"]) == 5


def test_module_entry_point(one_state_file):
    proc = subprocess.run([sys.executable, "-m", "regmdp", "solve", "--mdp", one_state_file],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["v"][0] == pytest.approx(2.626523, abs=1e-6)
