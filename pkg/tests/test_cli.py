import json

import pytest

from agestruct.cli import main

CFG = {
    "model": {"family": "classical", "birth": 0.0, "death": 1.0,
              "life_law": {"kind": "deterministic", "k": 0},
              "split_law": {"kind": "deterministic", "k": 2}},
    "initial": {"kind": "atoms", "ages": [0.0], "masses": [1.0]},
    "horizon": 1.0, "dt": 0.004, "dt_out": 0.5,
    "k_values": [60], "replicates": 12, "panel": ["1"], "seed": 5,
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(CFG))
    return p


def test_cli_lln(cfg_path, tmp_path, capsys):
    code = main(["lln", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert code == 0
    assert (tmp_path / "o" / "summary.csv").exists()
    assert (tmp_path / "o" / "manifest.json").exists()
    assert "lln" in capsys.readouterr().out


def test_cli_simulate_with_events(cfg_path, tmp_path):
    code = main(["simulate", "--config", str(cfg_path),
                 "--out", str(tmp_path / "s"), "--emit-events"])
    assert code == 0
    assert any((tmp_path / "s").glob("events_K60_r*.csv"))


def test_cli_limit_fields(cfg_path, tmp_path):
    code = main(["limit", "--config", str(cfg_path),
                 "--out", str(tmp_path / "l"), "--emit-fields"])
    assert code == 0
    assert (tmp_path / "l" / "plotdata" / "totals.csv").exists()
    assert any((tmp_path / "l").glob("limit_frame_*.csv"))


def test_cli_fluctuate(cfg_path, tmp_path):
    cfg = dict(CFG)
    cfg["initial"] = {"kind": "grid", "profile": "uniform",
                      "support": [0.0, 1.0], "mass": 1.0}
    cfg["n_spde_paths"] = 50
    cfg["spde_block"] = 25
    p = tmp_path / "cfg2.json"
    p.write_text(json.dumps(cfg))
    code = main(["fluctuate", "--config", str(p), "--out", str(tmp_path / "f")])
    assert code == 0
    assert (tmp_path / "f" / "plotdata" / "path_stats.csv").exists()


def test_cli_seed_override(cfg_path, tmp_path):
    a = main(["lln", "--config", str(cfg_path), "--out", str(tmp_path / "a"),
              "--seed", "99"])
    b = main(["lln", "--config", str(cfg_path), "--out", str(tmp_path / "b"),
              "--seed", "99"])
    assert a == 0 and b == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() == \
        (tmp_path / "b" / "samples.csv").read_bytes()
