import json
from pathlib import Path

import pytest

from hypchain.cli import main


def _write(tmp_path, name, payload):
    p = tmp_path / name
    p.write_text(json.dumps(payload, indent=1))
    return str(p)


def test_counterexample_scenario(tmp_path):
    cfg = _write(tmp_path, "ce.json", {"counterexample": {"rho33": 1.0}})
    out = tmp_path / "out"
    rc = main(["counterexample", "--config", cfg, "--out", str(out)])
    assert rc == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["scenario"] == "counterexample"
    assert man["stabilizable"] is False
    assert max(man["values_at_zero"].values()) <= 1e-12
    assert (out / "zeros_f0.csv").exists()


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.json", {"counterexample": {"rho33": 1.0},
                                        "bogus_key": 1})
    rc = main(["counterexample", "--config", cfg, "--out",
               str(tmp_path / "o")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "bogus_key" in err
    assert "line" in err


def test_bad_step_reports_field_and_line(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.json",
                 {"spec": {"config": "U1U3", "seed": 3},
                  "h": -0.5})
    rc = main(["reduce", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "h" in capsys.readouterr().err


def test_stabilize_counterexample_exits_3(tmp_path):
    cfg = _write(tmp_path, "ce.json", {"counterexample": {"rho33": 1.0}})
    rc = main(["stabilize", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 3


def test_u4u2_with_zero_q32_is_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, "z.json", {"spec": {
        "config": "U4U2",
        "lambdas": [1.0, 1.0, 1.0], "mus": [1.0, 1.0, 1.0],
        "sigma_plus": [0.1, 0.0, 0.0], "sigma_minus": [0.1, 0.0, 0.0],
        "q": {"q11": 0.5, "q21": 0.4, "q22": 0.3, "q32": 0.0, "q33": 0.2},
        "rho": {"rho11": 0.3, "rho12": 0.4, "rho22": 0.2, "rho23": 0.4,
                "rho33": 0.3}}})
    rc = main(["stabilize", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "q32" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    rc = main(["reduce", "--config", str(tmp_path / "nope.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_reduce_outputs_are_deterministic(tmp_path):
    cfg = _write(tmp_path, "r.json",
                 {"counterexample": {"rho33": 0.9}, "h_id": 0.002})
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = main(["reduce", "--config", cfg, "--out", str(out)])
        assert rc == 0
        outs.append((out / "kernel_N.csv").read_bytes())
    assert outs[0] == outs[1]


def test_stabilize_perturbed_family(tmp_path):
    cfg = _write(tmp_path, "s.json", {"counterexample": {"rho33": 0.9}})
    out = tmp_path / "out"
    rc = main(["stabilize", "--config", cfg, "--out", str(out)])
    assert rc == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["law"]["certificate_radius"] <= 1.0 - 1e-3
    assert man["ide_decay"]["omega"] > 0.0
    assert (out / "gain_g.csv").exists()
    assert (out / "gain_f.csv").exists()
    assert (out / "ide_series.csv").exists()
