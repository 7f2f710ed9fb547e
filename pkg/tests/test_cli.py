import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mgpvae import cli, datasets
from mgpvae.cli import RunConfig
from mgpvae.errors import ConfigError

SMALL = {"data": {"num_sequences": 30}, "model": {"epochs": 1}, "predictor": {"epochs": 1}}


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "c.json").write_text(json.dumps(SMALL))
    assert cli.main(["gen-data", "--config", str(d / "c.json"), "--out", str(d / "d.mgpd")]) == 0
    assert cli.main(["train", "--config", str(d / "c.json"), "--data", str(d / "d.mgpd"), "--out", str(d / "run")]) == 0
    return d


def run(workdir, *args):
    return cli.main([args[0], "--config", str(workdir / "c.json"), *args[1:]])


def test_config_defaults_and_round_trip():
    cfg = RunConfig()
    assert cfg.model.beta == 2.0 and cfg.model.lr == 1e-3 and cfg.model.epochs == 200
    assert cfg.geodesic.num_interior == 4 and cfg.geodesic.iters == 16 and cfg.geodesic.alpha == 0.05
    assert cfg.predictor.hidden == 128 and cfg.predictor.geodesic is cfg.geodesic
    doc = cfg.to_dict()
    assert RunConfig.from_dict(doc).to_dict() == doc
    custom = {"model": {"channels": [{"kind": "bridge_fixed", "a": -2, "b": 2}] * 3}, "geodesic": {"iters": 18},
              "predictor": {"k": 2, "loss_kind": "geodesic"}, "data": {"family": "ColouredShapes"}}
    once = RunConfig.from_dict(custom).to_dict()
    assert RunConfig.from_dict(json.loads(json.dumps(once))).to_dict() == once
    assert once["geodesic"]["iters"] == 18


@pytest.mark.parametrize(
    "doc",
    [
        {"modle": {}},
        {"model": {"betta": 2}},
        {"geodesic": {"steps": 3}},
        {"predictor": {"geodesic": {}}},
        {"data": {"frames": 8}},
        {"model": {"channels": [{"kind": "fbm", "hurst": 0.2, "a": 1}]}},
        {"model": []},
    ],
)
def test_config_rejects_unknown_keys(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_gen_data_and_manifest(workdir):
    batch = datasets.load(workdir / "d.mgpd")
    assert len(batch) == 30
    man = json.loads((workdir / "d.manifest.json").read_text())
    assert man["command"] == "gen-data" and man["artifacts"] == ["d.mgpd"]
    assert man["seed"]["data"] == 0 and man["version"].startswith("0.1.0")
    assert RunConfig.from_dict(man["config"]).data.num_sequences == 30


def test_train_outputs(workdir):
    assert (workdir / "run" / "model.mgpc").exists()
    rows = read_csv(workdir / "run" / "history.csv")
    assert [r["epoch"] for r in rows] == ["1"]
    man = json.loads((workdir / "run" / "manifest.json").read_text())
    assert man["results"]["final"]["epoch"] == 1


def test_reproducible_artifacts(workdir, tmp_path):
    assert run(workdir, "gen-data", "--out", str(tmp_path / "d2.mgpd")) == 0
    assert (tmp_path / "d2.mgpd").read_bytes() == (workdir / "d.mgpd").read_bytes()
    assert run(workdir, "train", "--data", str(workdir / "d.mgpd"), "--out", str(tmp_path / "run2")) == 0
    assert (tmp_path / "run2" / "model.mgpc").read_bytes() == (workdir / "run" / "model.mgpc").read_bytes()
    for name in ("a", "b"):
        assert run(workdir, "sample-prior", "--paths", "4", "--out", str(tmp_path / f"{name}.csv")) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_seed_override_changes_data(workdir, tmp_path):
    assert run(workdir, "gen-data", "--seed", "5", "--out", str(tmp_path / "s.mgpd")) == 0
    assert (tmp_path / "s.mgpd").read_bytes() != (workdir / "d.mgpd").read_bytes()
    man = json.loads((tmp_path / "s.manifest.json").read_text())
    assert man["seed"] == {"data": 5, "model": 5, "predictor": 5}


def test_sample_prior_smoothness(workdir, tmp_path):
    out = tmp_path / "prior.csv"
    assert run(workdir, "sample-prior", "--paths", "300", "--out", str(out)) == 0
    rows = read_csv(out)
    assert set(rows[0]) == {"path_id", "channel", "t", "value"}
    assert len(rows) == 300 * 2 * 8
    z = np.zeros((2, 300, 8))
    for r in rows:
        z[int(r["channel"]), int(r["path_id"]), int(r["t"]) - 1] = float(r["value"])

    def lag1(paths):
        inc = np.diff(paths, axis=1)
        return np.mean(inc[:, 1:] * inc[:, :-1]) / np.mean(inc * inc)

    assert lag1(z[1]) > lag1(z[0])  # H=0.9 channel smoother than H=0.1
    assert lag1(z[1]) > 0 > lag1(z[0])


def test_export_latents(workdir, tmp_path):
    out = tmp_path / "lat.csv"
    assert cli.main(["export-latents", "--checkpoint", str(workdir / "run" / "model.mgpc"),
                     "--data", str(workdir / "d.mgpd"), "--limit", "6", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 6 * 2 * 8
    assert {(r["seq_id"], r["channel"], r["t"]) for r in rows} == {
        (str(s), str(c), str(t)) for s in range(6) for c in range(2) for t in range(1, 9)
    }
    assert all(float(r["std"]) > 0 for r in rows)


def test_swap(workdir, tmp_path):
    out = tmp_path / "sw"
    assert cli.main(["swap", "--checkpoint", str(workdir / "run" / "model.mgpc"), "--data", str(workdir / "d.mgpd"),
                     "--channel", "1", "--pair", "2", "5", "--out", str(out)]) == 0
    batch = datasets.load(out / "swap.mgpd")
    assert [l["role"] for l in batch.labels][-2:] == ["swapped_a", "swapped_b"]
    res = json.loads((out / "manifest.json").read_text())["results"]
    assert res["pair"] == [2, 5] and "trajectory" in res and "shape" in res


def test_geodesic(workdir, tmp_path):
    out = tmp_path / "g.csv"
    assert cli.main(["geodesic", "--config", str(workdir / "c.json"), "--checkpoint",
                     str(workdir / "run" / "model.mgpc"), "--data", str(workdir / "d.mgpd"), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 2 * 6
    assert rows[0]["z0"] == rows[6]["z0"] and rows[5]["z1"] == rows[11]["z1"]
    energy = [float(r["energy"]) for r in read_csv(tmp_path / "g_energy.csv")]
    assert len(energy) == 17 and energy[-1] <= energy[0]


def test_predict_train_and_eval(workdir, tmp_path, capsys):
    ck, data = str(workdir / "run" / "model.mgpc"), str(workdir / "d.mgpd")
    assert run(workdir, "predict-train", "--checkpoint", ck, "--data", data, "--k", "1",
               "--out", str(tmp_path / "p.mgpc")) == 0
    man = json.loads((tmp_path / "p.manifest.json").read_text())
    assert man["results"]["history"][0]["epoch"] == 0
    capsys.readouterr()
    assert cli.main(["predict-eval", "--checkpoint", ck, "--predictor", str(tmp_path / "p.mgpc"), "--data", data,
                     "--k", "1", "--out", str(tmp_path / "ev")]) == 0
    line = capsys.readouterr().out.strip()
    mse, bce = line.split()
    assert mse.startswith("mse=") and bce.startswith("bce=")
    assert len(mse.split(".")[1]) == 1 and len(bce.split(".")[1]) == 1
    scores = json.loads((tmp_path / "ev" / "eval.json").read_text())
    assert line == f"mse={scores['mse']:.1f} bce={scores['bce']:.1f}"


@pytest.mark.parametrize(
    "argv,code,kind",
    [
        (["train", "--config", "{missing}", "--out", "{tmp}/x"], 2, "ConfigError"),
        (["frobnicate", "--out", "x"], 2, "UsageError"),
        (["swap", "--checkpoint", "{data}", "--out", "{tmp}/x"], 3, "BadMagic"),
        (["swap", "--checkpoint", "{ckpt}", "--data", "{data}", "--channel", "7", "--out", "{tmp}/x"], 2, "BadChannelIndex"),
        (["export-latents", "--checkpoint", "{ckpt}", "--data", "{tmp}/nope.mgpd", "--out", "{tmp}/x"], 3, "FileNotFound"),
    ],
)
def test_errors(workdir, tmp_path, capsys, argv, code, kind):
    subs = {"missing": str(tmp_path / "none.json"), "tmp": str(tmp_path), "data": str(workdir / "d.mgpd"),
            "ckpt": str(workdir / "run" / "model.mgpc")}
    argv = [a.format(**subs) for a in argv]
    assert cli.main(argv) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"code={kind} msg=")


def test_subprocess_entry_point(workdir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": {"beta": -1}}')
    proc = subprocess.run([sys.executable, "-m", "mgpvae", "sample-prior", "--config", str(bad), "--out", str(tmp_path)],
                          capture_output=True, text=True, env={"MGP_THREADS": "1", "PATH": ""})
    assert proc.returncode == 2
    assert proc.stderr.strip() == "code=ConfigError msg=beta must be >= 0"
    ok = subprocess.run([sys.executable, "-m", "mgpvae", "sample-prior", "--paths", "2", "--out", str(tmp_path / "p.csv")],
                        capture_output=True, text=True, env={"MGP_THREADS": "1", "PATH": ""})
    assert ok.returncode == 0, ok.stderr
