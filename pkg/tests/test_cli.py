import json

import pytest

from safevisor.cli import main
from safevisor.persistence import load

COARSE = {
    "model": {"preset": "temperature"},
    "abstraction": {"delta_x": 0.01, "delta_u": 0.024},
    "synthesis": {"rho": 0.01},
    "simulation": {"controller": {"kind": "constant_zero"}, "x0": 19.01, "n_trials": 500, "seed": 7},
}

LONGHAND_MODEL = {
    "p0": 0.978, "p1": -0.05, "q0": -0.022, "q1": 2.5, "noise_variance": 0.04,
    "safe_set": [19, 21], "inputs": {"interval": [0, 0.6]},
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_abstract_then_inspect(tmp_path, capsys):
    cfg = write(tmp_path, dict(COARSE, abstraction={"delta_x": 0.001, "delta_u": 0.024}))
    out = str(tmp_path / "a.svmdp")
    assert main(["abstract", "--config", cfg, "--out", out]) == 0
    capsys.readouterr()
    assert main(["inspect", out]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert "n_states 2000" in lines and "n_inputs 25" in lines
    assert "table none" in lines


def test_synthesize_prints_horizon(tmp_path, capsys):
    cfg = write(tmp_path, COARSE)
    out = str(tmp_path / "s.svmdp")
    assert main(["synthesize", "--config", cfg, "--out", out]) == 0
    text = capsys.readouterr().out
    _, table = load(out)
    assert f"H={table.horizon}\n" in text
    assert float(text.split("max_value=")[1].split()[0]) <= 0.01
    assert main(["inspect", out]) == 0
    assert f"H {table.horizon}" in capsys.readouterr().out


def test_synthesize_from_mdp_file(tmp_path, capsys):
    cfg = write(tmp_path, COARSE)
    mdp_path, syn_path = str(tmp_path / "a.svmdp"), str(tmp_path / "b.svmdp")
    assert main(["abstract", "--config", cfg, "--out", mdp_path]) == 0
    assert main(["synthesize", "--mdp", mdp_path, "--rho", "0.01", "--out", syn_path]) == 0
    assert main(["synthesize", "--config", cfg, "--out", str(tmp_path / "c.svmdp")]) == 0
    _, t1 = load(syn_path)
    _, t2 = load(tmp_path / "c.svmdp")
    assert t1.values.tobytes() == t2.values.tobytes()


def test_simulate_is_deterministic(tmp_path):
    cfg = write(tmp_path, COARSE)
    art = str(tmp_path / "s.svmdp")
    main(["synthesize", "--config", cfg, "--out", art])
    reports = []
    for i, workers in enumerate(["1", "3", "1"]):
        out = tmp_path / f"r{i}.json"
        assert main(["simulate", "--config", cfg, "--artifact", art, "--out", str(out),
                     "--workers", workers, "--no-timing"]) == 0
        reports.append(out.read_bytes())
    assert reports[0] == reports[1] == reports[2]
    assert json.loads(reports[0])["n_trials"] == 500


def test_simulate_flags_and_csv(tmp_path):
    cfg = write(tmp_path, COARSE)
    out, csv_path = tmp_path / "r.json", tmp_path / "t.csv"
    assert main(["simulate", "--config", cfg, "--out", str(out), "--trials", "40", "--seed", "3",
                 "--csv", str(csv_path)]) == 0
    rep = json.loads(out.read_text())
    assert rep["n_trials"] == 40 and rep["seed"] == 3
    assert "latency_mean_us" in rep
    header = csv_path.read_text().splitlines()[0]
    assert header == "trial,k,x,u_proposed,u_applied,verdict"


def test_unverified_mode(tmp_path):
    cfg = write(tmp_path, COARSE)
    out = tmp_path / "r.json"
    assert main(["simulate", "--config", cfg, "--out", str(out), "--mode", "unverified_only"]) == 0
    assert json.loads(out.read_text())["safe_fraction"] == 0.0


def test_preset_equals_longhand(tmp_path):
    longhand = dict(COARSE, model=LONGHAND_MODEL)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["simulate", "--config", write(tmp_path, COARSE, "p.json"), "--out", str(a),
                 "--no-timing"]) == 0
    assert main(["simulate", "--config", write(tmp_path, longhand, "l.json"), "--out", str(b),
                 "--no-timing"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_zero_trials_is_config_error(tmp_path):
    assert main(["simulate", "--config", write(tmp_path, COARSE), "--trials", "0"]) == 2


@pytest.mark.parametrize("cfg", [
    {"model": {"preset": "moon"}, "abstraction": {"delta_x": 0.01}},
    {"model": {"preset": "temperature"}, "abstraction": {"delta_x": 0.3, "delta_u": 0.024}},
    {"model": {"preset": "temperature"}},
    {"model": {"preset": "temperature"}, "abstraction": {"delta_x": "big"}},
    {"model": {"preset": "temperature"}, "abstraction": {"delta_x": 0.01, "delta_u": 0.024},
     "synthesis": {"rho": 1.5}},
    {"model": LONGHAND_MODEL, "abstraction": {"delta_x": 0.01}},
    {"model": {"preset": "temperature"}, "colour": "blue"},
])
def test_config_errors(tmp_path, cfg):
    assert main(["abstract", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "x")]) == 2


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["abstract", "--config", str(p)]) == 2


def test_infeasible_tolerance_exit_code(tmp_path):
    cfg = write(tmp_path, dict(COARSE, synthesis={"rho": 1e-9}))
    assert main(["synthesize", "--config", cfg, "--out", str(tmp_path / "s")]) == 3


def test_io_errors(tmp_path):
    assert main(["abstract", "--config", str(tmp_path / "missing.json")]) == 4
    junk = tmp_path / "junk.svmdp"
    junk.write_bytes(b"garbage")
    assert main(["inspect", str(junk)]) == 4
    cfg = write(tmp_path, COARSE)
    assert main(["abstract", "--config", cfg, "--out", str(tmp_path / "no" / "dir" / "x")]) == 4
