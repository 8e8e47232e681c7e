import json
import subprocess
import sys
import time

import pytest

from bmrl.cli import bundled_configs, main


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_bundled_configs_present():
    names = bundled_configs()
    for n in ("perfect-conditions", "fig3a-human", "fig3b-human", "grid-10x7", "table2-noise-rg-low"):
        assert n in names


def test_solve_writes_policy_and_manifest(tmp_path):
    code, out = run(tmp_path, "solve", "--config", "fig3a-human")
    assert code == 0
    rows = (out / "policy.csv").read_text().splitlines()
    assert rows[0] == "ai_state,human_state,prev_action,action,value"
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "solve" and "policy.csv" in man["outputs"]
    assert "time" not in json.dumps(man)


def test_solve_is_byte_identical(tmp_path):
    _, a = run(tmp_path, "solve", "--config", "fig3b-human", name="a")
    _, b = run(tmp_path, "solve", "--config", "fig3b-human", name="b")
    for f in ("policy.csv", "policy.meta.json", "manifest.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_policy_dump_burden_then_gamma(tmp_path):
    _, out = run(tmp_path, "policy-dump", "--config", "fig3b-human", "--format", "json")
    dump = json.loads((out / "policy_dump.json").read_text())
    labels = [s["action"] for s in dump["rows"]]
    assert labels == ["none"] + ["a_b"] * 6 + ["a_gamma"] * 2 + ["none"]
    assert "t0" in dump["thresholds"]


def test_simulate_then_fit(tmp_path):
    code, sim = run(tmp_path, "simulate", "--config", "fig3b-human", "--n-episodes", "5", name="sim")
    assert code == 0
    lines = (sim / "trajectories.jsonl").read_text().splitlines()
    assert lines and set(json.loads(lines[0])) == {"episode", "step", "state", "action", "reward",
                                                   "next_state"}
    cfg = write_cfg(tmp_path, {"n_states": 10, "data": "sim/trajectories.jsonl", "n_candidates": 300})
    code, fit = run(tmp_path, "fit", "--config", cfg, "--format", "json", name="fit")
    assert code == 0
    body = json.loads((fit / "fit.json").read_text())
    assert body["n_records"] == len(lines) and len(body["chain_actions"]) == 10


def test_equiv_small(tmp_path):
    cfg = write_cfg(tmp_path, {"family": "multichain_a", "n_instances": 4, "seed": 2})
    code, out = run(tmp_path, "equiv", "--config", cfg)
    assert code == 0
    rows = (out / "equivalence.csv").read_text().splitlines()
    assert len(rows) == 5 and all(r.split(",")[1] == "True" for r in rows[1:])


def test_suite_smoke_is_fast_and_deterministic(tmp_path):
    args = ["suite", "--config", "perfect-conditions", "--n-trials", "1", "--n-episodes", "2", "--jobs", "1"]
    t = time.perf_counter()
    code, a = run(tmp_path, *args, name="a")
    assert code == 0 and time.perf_counter() - t < 5
    _, b = run(tmp_path, *args, name="b")
    assert (a / "perfect-conditions.csv").read_bytes() == (b / "perfect-conditions.csv").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


@pytest.mark.parametrize("data,msg", [
    ({"human": {"n_states": 5, "r_b": -0.5, "r_l": 0, "r_g": 1, "r_d": 0, "p_g": 1.5, "p_l": 0,
                "p_d": 0.1, "p_d0": 0.2, "gamma": 0.5}}, "human.p_g"),
    ({"human": {"n_states": 5}}, "human"),
    ({}, "human: required"),
])
def test_solve_config_errors(tmp_path, capsys, data, msg):
    code, _ = run(tmp_path, "solve", "--config", write_cfg(tmp_path, data))
    assert code == 1
    assert msg in capsys.readouterr().err


def test_suite_config_errors(tmp_path, capsys):
    assert run(tmp_path, "suite", "--config", write_cfg(tmp_path, {"world": "hex"}))[0] == 1
    assert run(tmp_path, "suite", "--config", "perfect-conditions", "--n-trials", "0")[0] == 1
    assert run(tmp_path, "suite", "--config", "no-such-config")[0] == 1
    assert "config error" in capsys.readouterr().err


def test_runtime_failure_exit_code(tmp_path, capsys):
    bad = tmp_path / "broken.jsonl"
    bad.write_text('{"episode": 0, "step": 0}\n')
    cfg = write_cfg(tmp_path, {"n_states": 4, "data": str(bad)})
    assert run(tmp_path, "fit", "--config", cfg)[0] == 2
    assert "fit failed" in capsys.readouterr().err


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "bmrl.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("bmrl ")
