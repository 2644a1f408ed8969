import dataclasses
import json
import os
from pathlib import Path

import pytest

from chainlab import config as C
from chainlab import experiments
from chainlab.cli import main

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


REV_TOML = """
[experiment]
kind = "reversal"
seed = 7
output_dir = "{out}"

[model]
builtin = "nearest_neighbor"
  [model.params]
  d = 1
  c = 1.0

[params]
t = 2.0
x = [-1]
y = [1]
C = [[2]]
  [params.window]
  shape = "box"
  ranges = [[-5, 5]]

[tolerances]
identity = 1e-9
"""


def _rev_cfg(tmp_path):
    return C.parse(REV_TOML.format(out=tmp_path / "out"))


def test_config_round_trip_simple(tmp_path):
    cfg = _rev_cfg(tmp_path)
    assert C.parse(C.serialize(cfg)) == cfg


def test_config_round_trip_all_shipped():
    for path in sorted(CONFIG_DIR.glob("*.toml")):
        cfg = C.load(path)
        again = C.parse(C.serialize(cfg))
        assert again == cfg, path.name
        # serialization is itself a fixed point
        assert C.serialize(again) == C.serialize(cfg)


def test_config_unknown_kind_rejected():
    with pytest.raises(C.ConfigError):
        C.parse("[experiment]\nkind = \"frobnicate\"\nseed = 1\n")


def test_cli_validate_and_list(tmp_path, capsys):
    p = tmp_path / "rev.toml"
    p.write_text(REV_TOML.format(out=tmp_path / "out"))
    assert main(["validate", str(p)]) == 0
    assert main(["list-builtins"]) == 0
    out = capsys.readouterr().out
    assert "nearest_neighbor" in out and "iid_table" in out


def test_cli_run_writes_report_and_exit_code(tmp_path):
    p = tmp_path / "rev.toml"
    p.write_text(REV_TOML.format(out=tmp_path / "out"))
    assert main(["run", str(p)]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["passed"] is True
    assert report["checks"][0]["check_id"] == "reversal_diff"


def test_cli_run_failure_exit_code_and_report(tmp_path):
    text = REV_TOML.format(out=tmp_path / "out").replace("identity = 1e-9", "identity = 1e-30")
    p = tmp_path / "rev.toml"
    p.write_text(text)
    assert main(["run", str(p)]) == 1
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["passed"] is False
    assert report["checks"][0]["value"] > 0  # offending value present


def test_csv_determinism_same_seed(tmp_path):
    cfg_text = """
[experiment]
kind = "clt"
seed = 5
output_dir = "{out}"

[model]
builtin = "nearest_neighbor"
  [model.params]
  d = 1
  c = 1.0

[params]
n_grid = [16]
t = 1.0
a_limit = 2.0
n_paths = 4000
ks_bound = 0.5
include_discrete = false
"""
    outs = []
    for tag in ("a", "b"):
        p = tmp_path / f"clt_{tag}.toml"
        p.write_text(cfg_text.format(out=tmp_path / f"out_{tag}"))
        assert main(["run", str(p)]) in (0, 1)
        outs.append((tmp_path / f"out_{tag}" / "clt.csv").read_bytes())
    assert outs[0] == outs[1]


def test_freeze_and_refreeze_byte_identical(tmp_path):
    p = tmp_path / "rev.toml"
    p.write_text(REV_TOML.format(out=tmp_path / "out"))
    frozen = tmp_path / "rev.frozen.json"
    assert main(["freeze", str(p), "--checks", "reversal_diff", "--out", str(frozen)]) == 0
    first = frozen.read_bytes()
    assert main(["freeze", str(p), "--checks", "reversal_diff", "--out", str(frozen)]) == 0
    assert frozen.read_bytes() == first
    # and the frozen file is honored on run
    assert main(["run", str(p), "--frozen", str(frozen)]) == 0


def test_freeze_refuses_failed_and_missing_checks(tmp_path):
    p = tmp_path / "rev.toml"
    p.write_text(
        REV_TOML.format(out=tmp_path / "out").replace("identity = 1e-9", "identity = 1e-30")
    )
    assert main(["freeze", str(p), "--checks", "reversal_diff"]) == 2
    p2 = tmp_path / "rev2.toml"
    p2.write_text(REV_TOML.format(out=tmp_path / "out2"))
    assert main(["freeze", str(p2), "--checks", "no_such_check"]) == 2


def test_env_seed_override(tmp_path):
    p = tmp_path / "rev.toml"
    p.write_text(REV_TOML.format(out=tmp_path / "out"))
    cfg = C.load(p)
    os.environ["CHAINLAB_BASE_SEED"] = "99"
    try:
        report = experiments.run_config(cfg, write_report=False)
        assert report.seed == 99
    finally:
        del os.environ["CHAINLAB_BASE_SEED"]


def test_report_emitted_even_on_failure(tmp_path):
    cfg = dataclasses.replace(
        _rev_cfg(tmp_path), tolerances={"identity": 1e-30}, output_dir=str(tmp_path / "o")
    )
    report = experiments.run_config(cfg)
    assert not report.passed
    assert (tmp_path / "o" / "report.json").exists()


def test_sparse_matrix_coordinate_export():
    from chainlab.lattice import LatticeWindow, build_generator
    from chainlab.models import nearest_neighbor

    g = build_generator(nearest_neighbor(1, 1.0), LatticeWindow.box([(0, 2)]), 1e-12)
    text = g.to_coordinate_text()
    lines = text.strip().splitlines()
    assert "0 0 -2" in lines[0]
    assert all(len(line.split()) == 3 for line in lines)


def test_model_from_jump_table_csv(tmp_path):
    csv = tmp_path / "table.csv"
    csv.write_text("dx_1,dx_2,weight\n1,0,1.0\n-1,0,1.0\n0,1,0.5\n0,-1,0.5\n")
    cfg = C.parse(
        """
[experiment]
kind = "check-assumptions"
seed = 2
output_dir = "{out}"

[model]
table_csv = "{csv}"
d = 2

[params]
  [params.window]
  shape = "box"
  ranges = [[0, 3], [0, 3]]
""".format(out=tmp_path / "o", csv=csv)
    )
    report = experiments.run_config(cfg, write_report=False)
    assert report.passed


def test_event_log_artifact(tmp_path):
    cfg = C.parse(
        """
[experiment]
kind = "exit-prob"
seed = 3
output_dir = "{out}"

[model]
builtin = "nearest_neighbor"
  [model.params]
  d = 1
  c = 1.0

[params]
A = 1.0
D_values = [4.0]
gamma = 0.2
n_paths = 500
processes = ["Y"]
  [params.event_log]
  kind = "Y"
  horizon = 3.0
  n_paths = 8
""".format(out=tmp_path / "o")
    )
    report = experiments.run_config(cfg)
    log = (tmp_path / "o" / "events.log").read_text().strip().splitlines()
    assert len(log) > 8
    pid, t, coord = log[0].split()
    assert pid == "0" and float(t) == 0.0
