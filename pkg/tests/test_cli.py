import csv
import json

import numpy as np
import pytest

from l2hmc.cli import main

TINY = {"energy": {"kind": "std_gaussian", "dim": 2},
        "train": {"n_iters": 5, "batch_size": 8, "M": 2, "eps": 0.2, "n_hidden": 4}}


def write(path, blob):
    path.write_text(json.dumps(blob))
    return str(path)


@pytest.fixture
def trained(tmp_path):
    cfg = write(tmp_path / "cfg.json", TINY)
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(out), "--seed", "3"]) == 0
    return tmp_path, out


def test_train_outputs(trained):
    _, out = trained
    for name in ("checkpoint.json", "train_report.json", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["config"]["train"]["n_iters"] == 5
    for path in manifest["artifacts"].values():
        assert (out / path.split("/")[-1]).exists()
    report = json.loads((out / "train_report.json").read_text())
    assert len(report["loss"]) == 5


def test_train_is_reproducible_from_manifest(trained, tmp_path):
    _, out = trained
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = write(tmp_path / "again.json", manifest["config"])
    out2 = tmp_path / "run2"
    assert main(["train", "--config", cfg, "--out", str(out2)]) == 0
    assert (out / "checkpoint.json").read_bytes() == (out2 / "checkpoint.json").read_bytes()


def test_train_does_not_modify_input(tmp_path):
    cfg = write(tmp_path / "cfg.json", TINY)
    before = (tmp_path / "cfg.json").read_bytes()
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "cfg.json").read_bytes() == before


def test_bad_lambda_exits_2(tmp_path, capsys):
    blob = json.loads(json.dumps(TINY))
    blob["train"]["lam"] = 0.0
    assert main(["train", "--config", write(tmp_path / "c.json", blob), "--out",
                 str(tmp_path / "o")]) == 2
    assert "lambda" in capsys.readouterr().err


@pytest.mark.parametrize("blob", [
    {"energy": {"kind": "nope", "dim": 2}},
    {"energy": {"kind": "std_gaussian", "dim": 2}, "train": {"colour": 1}},
    {"energy": {"kind": "std_gaussian", "dim": 2}, "extra": {}},
    {"train": {}},
])
def test_invalid_configs_exit_2(tmp_path, blob):
    assert main(["train", "--config", write(tmp_path / "c.json", blob), "--out",
                 str(tmp_path / "o")]) == 2


def test_missing_config_exits_4(tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.json"), "--out",
                 str(tmp_path / "o")]) == 4


def test_sample_outputs(trained):
    root, out = trained
    energy = write(root / "energy.json", {"kind": "std_gaussian", "dim": 2})
    s1 = root / "s1"
    argv = ["sample", "--checkpoint", str(out / "checkpoint.json"), "--energy", energy,
            "--steps", "40", "--chains", "2", "--seed", "1"]
    assert main(argv + ["--out", str(s1)]) == 0
    csvs = sorted(s1.glob("trace_*.csv"))
    assert len(csvs) == 2
    with open(csvs[0]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "accepted", "accept_prob", "sq_jump", "x_0", "x_1"]
    assert len(rows) == 41
    diag = json.loads((s1 / "diagnostics.json").read_text())
    for key in ("per_chain_ess", "mean_ess", "autocorr", "truncation_index", "mode_occupancy"):
        assert key in diag
    assert len(diag["per_chain_ess"]) == 2
    s2 = root / "s2"
    assert main(argv + ["--out", str(s2)]) == 0
    for a in csvs:
        assert a.read_bytes() == (s2 / a.name).read_bytes()


def test_sample_hmc_flag_ignores_heads(trained):
    root, out = trained
    energy = write(root / "energy.json", {"kind": "std_gaussian", "dim": 2})
    ck = json.loads((out / "checkpoint.json").read_text())
    # scramble the heads; --hmc must give the same traces as the untouched checkpoint
    for stack in ("v_stack", "x_stack"):
        for head in ("Ws", "bs", "Wq", "bq", "Wt", "bt"):
            data = np.asarray(ck[stack][head]["data"])
            ck[stack][head]["data"] = (data + 0.5).tolist()
    scrambled = write(root / "scrambled.json", ck)
    base = ["--energy", energy, "--steps", "20", "--chains", "1", "--hmc"]
    assert main(["sample", "--checkpoint", str(out / "checkpoint.json"), *base,
                 "--out", str(root / "a")]) == 0
    assert main(["sample", "--checkpoint", scrambled, *base, "--out", str(root / "b")]) == 0
    assert (root / "a" / "trace_0.csv").read_bytes() == (root / "b" / "trace_0.csv").read_bytes()


def test_sample_dim_mismatch_exits_2(trained):
    root, out = trained
    energy = write(root / "e3.json", {"kind": "std_gaussian", "dim": 3})
    assert main(["sample", "--checkpoint", str(out / "checkpoint.json"), "--energy", energy,
                 "--steps", "5", "--out", str(root / "x")]) == 2


def test_benchmark_tiny(tmp_path):
    blob = {"energy": {"kind": "scg", "dim": 2},
            "train": {"n_iters": 3, "batch_size": 8, "M": 2, "n_hidden": 4},
            "hmc": {"eps_grid": [0.05, 0.1], "steps_per_candidate": 30, "n_chains": 3},
            "eval": {"n_chains": 2, "n_steps": 30, "burn_in": 5}}
    out = tmp_path / "b"
    assert main(["benchmark", "--config", write(tmp_path / "b.json", blob), "--out", str(out)]) == 0
    table = json.loads((out / "ess_table.json").read_text())
    row = table["rows"][0]
    assert set(row) == {"distribution", "ess_l2hmc", "ess_hmc", "ratio"}
    assert table["details"]["reference"]["ratio"] == 106.2
    header = (out / "ess_table.csv").read_text().splitlines()[0]
    assert header == "distribution,ess_l2hmc,ess_hmc,ratio"


def test_benchmark_bad_config(tmp_path):
    blob = {"energy": {"kind": "scg", "dim": 2}, "eval": {"chains": 3}}
    assert main(["benchmark", "--config", write(tmp_path / "b.json", blob), "--out",
                 str(tmp_path / "o")]) == 2


def test_check_quick(tmp_path, capsys):
    assert main(["check", "--quick", "--out", str(tmp_path / "c")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all("PASS" in line for line in lines)
    manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert manifest["passed"]
    assert all("max_error" in p for p in manifest["properties"])
