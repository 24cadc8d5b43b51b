import csv
import json
import subprocess
import sys

import pytest

from hamforge import cli
from hamforge.chem import read_dataset, read_sdf, read_xyz, read_xyz_frames, write_sdf

from .helpers import DATA

TINY = {"epochs": 2, "d_f": 8, "T_steps": 3, "gcn_widths": [8, 8], "bond_hidden": 8, "batch_size": 8,
        "hidden": 16}


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    mols = read_sdf(DATA / "qm9_500.sdf")[:20]
    write_sdf(root / "conf.sdf", mols)
    rows = read_dataset(DATA / "qm9_500.csv")
    lines = ["smiles,gap"] + [f"{m.smiles},{y[2]}" for m, y in zip(rows.molecules[:20], rows.targets[:20])]
    (root / "data.csv").write_text("\n".join(lines) + "\n")
    (root / "cfg.json").write_text(json.dumps(TINY))
    return root


def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("train-engine", "train-fp", "eval", "predict-conf", "export-traj", "gradcheck", "ablate", "sweep"):
        assert cmd in out


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as info:
        cli.main(["train-engine", "--out", "x", "--bogus"])
    assert info.value.code == 2


def test_missing_conf_exits_3(files, tmp_path, capsys):
    code = _run("train-engine", "--data", files / "data.csv", "--out", tmp_path / "e.json")
    assert code == 3
    assert capsys.readouterr().err.startswith("data error:")
    assert not (tmp_path / "e.json").exists()


def test_bad_config_exits_2(files, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"eta": -1}))
    assert _run("train-engine", "--conf", files / "conf.sdf", "--config", bad, "--out", tmp_path / "e.json") == 2
    bad.write_text(json.dumps({"no_such_key": 1}))
    assert _run("train-engine", "--conf", files / "conf.sdf", "--config", bad, "--out", tmp_path / "e.json") == 2


def test_engine_workflow(files, tmp_path, capsys):
    ck = tmp_path / "eng.json"
    assert _run("train-engine", "--data", files / "data.csv", "--conf", files / "conf.sdf",
                "--config", files / "cfg.json", "--out", ck, "--workers", 1) == 0
    out = capsys.readouterr().out
    assert cli.KRMSD_HEADER in out and cli.DIST_HEADER in out
    hist = (tmp_path / "eng.json.history.csv").read_text().splitlines()
    assert hist[0].startswith("epoch,train_loss,val_loss") and len(hist) == 3

    assert _run("eval", "--model", ck, "--conf", files / "conf.sdf", "--split", "all") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["split"] == "all" and report["k_rmsd"] > 0

    outdir = tmp_path / "pred"
    assert _run("predict-conf", "--model", ck, "--conf", files / "conf.sdf", "--out-dir", outdir) == 0
    written = sorted(outdir.glob("*.xyz"))
    assert len(written) == 20
    assert read_xyz(written[0]).coordinates.shape[1] == 3

    traj = tmp_path / "traj.xyz"
    assert _run("export-traj", "--model", ck, "--conf", files / "conf.sdf", "--index", 3, "--out", traj) == 0
    assert len(read_xyz_frames(traj)) == TINY["T_steps"] + 1
    assert _run("export-traj", "--model", ck, "--conf", files / "conf.sdf", "--index", 99, "--out", traj) == 3


def test_fingerprint_workflow(files, tmp_path, capsys):
    eng = tmp_path / "eng.json"
    _run("train-engine", "--conf", files / "conf.sdf", "--config", files / "cfg.json", "--out", eng)
    capsys.readouterr()
    fp = tmp_path / "fp.json"
    fps = tmp_path / "fps.csv"
    assert _run("train-fp", "--data", files / "data.csv", "--engine", eng, "--config", files / "cfg.json",
                "--out", fp, "--export-fingerprints", fps) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["split"] == "test" and metrics["rmse"] >= 0
    with open(fps) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 21 and len(rows[1]) == 1 + TINY["hidden"]

    assert _run("eval", "--model", fp, "--data", files / "data.csv") == 0
    assert "rmse" in json.loads(capsys.readouterr().out)
    # engine mode without a checkpoint is a data error
    assert _run("train-fp", "--data", files / "data.csv", "--config", files / "cfg.json",
                "--out", tmp_path / "x.json") == 3
    assert _run("train-fp", "--data", files / "data.csv", "--config", files / "cfg.json", "--conf-mode", "none",
                "--out", tmp_path / "y.json") == 0


@pytest.mark.parametrize("variant", ["no-lstm", "no-dyn", "no-phi", "no-adj3"])
def test_ablate_variants(files, tmp_path, variant, capsys):
    assert _run("ablate", "--variant", variant, "--conf", files / "conf.sdf", "--config", files / "cfg.json",
                "--out", tmp_path / "a.json") == 0
    assert variant in capsys.readouterr().out


def test_sweep_records_divergence(files, tmp_path):
    out = tmp_path / "sweep.csv"
    assert _run("sweep", "--param", "eta", "--values", "0.04,10", "--conf", files / "conf.sdf",
                "--config", files / "cfg.json", "--out", out) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["diverged"] for r in rows] == ["0", "1"]
    assert float(rows[0]["seconds"]) > 0
    assert _run("sweep", "--param", "T", "--values", "1.5", "--conf", files / "conf.sdf", "--out", out) == 2


def test_seed_precedence(files, tmp_path, monkeypatch):
    monkeypatch.setenv("HAMFORGE_SEED", "5")
    args = cli.build_parser().parse_args(["train-engine", "--out", "x", "--config", str(files / "cfg.json")])
    assert cli._load_config(args).seed == 5
    args = cli.build_parser().parse_args(["train-engine", "--out", "x", "--seed", "9"])
    assert cli._load_config(args).seed == 9
    monkeypatch.setenv("HAMFORGE_SEED", "abc")
    assert _run("train-engine", "--conf", files / "conf.sdf", "--out", tmp_path / "e.json") == 2


def test_gradcheck_command_and_console_script():
    res = subprocess.run([sys.executable, "-m", "hamforge.cli", "gradcheck", "--seed", "1"],
                         capture_output=True, text=True, timeout=600)
    assert res.returncode == 0, res.stdout + res.stderr
    assert "FAIL" not in res.stdout and "end_to_end_engine" in res.stdout
