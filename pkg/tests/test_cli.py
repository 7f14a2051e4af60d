import json
from pathlib import Path

import pytest

from stiffscale.cli import main

SMALL = """
[run]
seed = 3
output_dir = "out"
network = "{network}"

[sampling]
n_initial = 20
n_evolution_steps = 3

[model]
hidden = [8, 8]

[train]
stage1_epochs = 3
stage1_batch = 16
stage2_epochs = 2
stage2_batch_multiplier = 2

[sim]
nx = 6
ny = 6
n_steps = 4
snapshot_every = 2

[freq]
n_k0 = 6
cap = 40

[rollout]
n_steps = 5
"""


def _config(tmp_path, network="rober"):
    p = tmp_path / "run.toml"
    p.write_text(SMALL.format(network=network))
    return p


def _snapshot(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_all_commands_smoke(tmp_path, capsys):
    cfg = str(_config(tmp_path))
    out = tmp_path / "out"
    assert main(["gen-data", "--config", cfg]) == 0
    assert main(["train", "--config", cfg, "--label-transform", "gbct"]) == 0
    assert main(["train", "--config", cfg, "--label-transform", "bct"]) == 0
    ck_g, ck_b = out / "train_gbct" / "model.json", out / "train_bct" / "model.json"
    assert main(["rollout", "--config", cfg, "--checkpoint", str(ck_g)]) == 0
    assert main(["simulate", "--config", cfg, "--backend", "direct"]) == 0
    assert main(["simulate", "--config", cfg, "--backend", "surrogate", "--checkpoint", str(ck_g)]) == 0
    assert main(["freq", "--config", cfg]) == 0
    assert main(["compare", "--config", cfg, "--a", str(ck_g), "--b", str(ck_b)]) == 0
    for sub in ("data", "train_gbct", "train_bct", "rollout", "sim_direct", "sim_surrogate", "freq", "compare"):
        manifest = json.loads((out / sub / "run_manifest.json").read_text())
        for name in manifest["outputs"]:
            assert (out / sub / name).is_file(), (sub, name)
    summary = json.loads((out / "freq" / "summary.json").read_text())
    assert summary
    rows = (out / "rollout" / "error.csv").read_text().splitlines()
    assert len(rows) == 1 + 6


def test_determinism_of_gen_data_and_train(tmp_path):
    cfg = str(_config(tmp_path))
    out = tmp_path / "out"
    assert main(["gen-data", "--config", cfg]) == 0
    assert main(["train", "--config", cfg]) == 0
    first = _snapshot(out)
    assert main(["gen-data", "--config", cfg]) == 0
    assert main(["train", "--config", cfg]) == 0
    assert _snapshot(out) == first


def test_missing_network_file_reports_path(tmp_path, capsys):
    cfg = str(_config(tmp_path, network="nope/kinetics.toml"))
    assert main(["gen-data", "--config", cfg]) == 2
    assert "kinetics.toml" in capsys.readouterr().err


def test_missing_config_and_usage_errors(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "missing.toml")]) == 2
    assert main(["bogus"]) == 2
    cfg = str(_config(tmp_path))
    assert main(["train", "--config", cfg]) == 2  # no pairs generated yet
    bad = tmp_path / "bad.toml"
    bad.write_text("[run]\nsed = 1\n")
    assert main(["gen-data", "--config", str(bad)]) == 2


def test_surrogate_backend_requires_checkpoint(tmp_path):
    cfg = str(_config(tmp_path))
    assert main(["simulate", "--config", cfg, "--backend", "surrogate"]) == 2
