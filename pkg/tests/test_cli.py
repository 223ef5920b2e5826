"""CLI surface: exit codes, config resolution, file outputs, determinism."""

import json
import subprocess
import sys

import numpy as np
import pytest

from sscm import data, fileio
from sscm.cli import main, resolve_config
from sscm.errors import ConfigError
from sscm.model import ModelConfig, SSCMModel, desk_config
from sscm.train import checkpoint_entries

TINY_MODEL = dict(channels=8, num_blocks=1, prototypes=2, sub_group=16,
                  window=4, window_stride=2, heads=2)


def write_config(path, iterations=4, **model_kw):
    model = dict(TINY_MODEL)
    model.update(model_kw)
    doc = {"model": model,
           "train": {"iterations": iterations, "lr": 1e-3},
           "data": {"scale": 4}}
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("phantoms")
    rc = main(["make-phantoms", "--count", "2", "--size", "16",
               "--seed", "9", "--out-dir", str(d)])
    assert rc == 0
    return d


def test_make_phantoms_writes_files(tmp_path, capsys):
    rc = main(["make-phantoms", "--count", "3", "--size", "16",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    names = sorted(p.name for p in tmp_path.glob("*.ssct"))
    assert names == [f"pair_{i}_{kind}.ssct"
                     for i in range(3) for kind in ("ref", "tar")]
    assert "wrote 6 files" in capsys.readouterr().out


def test_make_phantoms_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["make-phantoms", "--count", "1", "--size", "16",
                     "--seed", "4", "--out-dir", str(d)]) == 0
    assert (a / "pair_0_tar.ssct").read_bytes() == (b / "pair_0_tar.ssct").read_bytes()
    assert (a / "pair_0_ref.ssct").read_bytes() == (b / "pair_0_ref.ssct").read_bytes()


def test_make_phantoms_count_zero(tmp_path):
    assert main(["make-phantoms", "--count", "0", "--out-dir", str(tmp_path)]) == 0
    assert list(tmp_path.glob("*.ssct")) == []


def test_make_phantoms_negative_count(tmp_path):
    assert main(["make-phantoms", "--count", "-1", "--out-dir", str(tmp_path)]) == 2


def test_degrade_scale_one_reports_inf(phantom_dir, tmp_path, capsys):
    out = tmp_path / "lr.ssct"
    rc = main(["degrade", "--input", str(phantom_dir / "pair_0_tar.ssct"),
               "--scale", "1", "--out", str(out)])
    assert rc == 0
    assert "psnr_db=inf" in capsys.readouterr().out
    hr = fileio.load_ssct(phantom_dir / "pair_0_tar.ssct")
    assert np.array_equal(fileio.load_ssct(out), np.clip(np.abs(hr), 0, 1))


def test_degrade_matches_library(phantom_dir, tmp_path, capsys):
    out = tmp_path / "lr.ssct"
    rc = main(["degrade", "--input", str(phantom_dir / "pair_0_tar.ssct"),
               "--scale", "4", "--out", str(out)])
    assert rc == 0
    hr = fileio.load_ssct(phantom_dir / "pair_0_tar.ssct")
    from sscm.tensor import Tensor
    want = data.degrade_kspace(Tensor(hr), 4).numpy()
    assert np.array_equal(fileio.load_ssct(out), want)
    printed = capsys.readouterr().out
    assert f"psnr_db={data.psnr(Tensor(want), Tensor(hr)):.6f}" in printed


def test_degrade_missing_input(tmp_path):
    rc = main(["degrade", "--input", str(tmp_path / "nope.ssct"),
               "--scale", "4", "--out", str(tmp_path / "o.ssct")])
    assert rc == 3


def test_train_writes_checkpoint_and_csv(phantom_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    ckpt = tmp_path / "model.ssck"
    rc = main(["train", "--config", str(cfg), "--data-dir", str(phantom_dir),
               "--out-ckpt", str(ckpt)])
    assert rc == 0
    out = capsys.readouterr().out
    # grid is taken from the data, not the config defaults
    assert '"height": 16' in out and '"width": 16' in out
    assert ckpt.exists()
    csv = tmp_path / "model.loss.csv"
    lines = csv.read_text().splitlines()
    assert lines[0] == "iter,l1_loss"
    assert len(lines) == 1 + 4


def test_train_descends_over_200_iterations(phantom_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json", iterations=200)
    ckpt = tmp_path / "model.ssck"
    assert main(["train", "--config", str(cfg), "--data-dir", str(phantom_dir),
                 "--out-ckpt", str(ckpt)]) == 0
    capsys.readouterr()
    lines = (tmp_path / "model.loss.csv").read_text().splitlines()[1:]
    losses = [float(row.split(",")[1]) for row in lines]
    assert len(losses) == 200
    assert losses[-1] < losses[0]


def test_train_then_infer_roundtrip(phantom_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    ckpt = tmp_path / "model.ssck"
    assert main(["train", "--config", str(cfg), "--data-dir", str(phantom_dir),
                 "--out-ckpt", str(ckpt)]) == 0
    lr_path = tmp_path / "lr.ssct"
    assert main(["degrade", "--input", str(phantom_dir / "pair_0_tar.ssct"),
                 "--scale", "4", "--out", str(lr_path)]) == 0
    pred_path = tmp_path / "pred.ssct"
    disp_path = tmp_path / "disp.ssct"
    groups_path = tmp_path / "groups.ssct"
    pgm_path = tmp_path / "pred.pgm"
    rc = main(["infer", "--ckpt", str(ckpt), "--tar-lr", str(lr_path),
               "--ref-hr", str(phantom_dir / "pair_0_ref.ssct"),
               "--out", str(pred_path), "--pgm", str(pgm_path),
               "--dump-disp", str(disp_path), "--dump-groups", str(groups_path)])
    assert rc == 0
    capsys.readouterr()
    assert fileio.load_ssct(pred_path).shape == (1, 16, 16)
    assert fileio.load_ssct(disp_path).shape == (2, 16, 16)
    assert fileio.load_ssct(groups_path).shape == (1, 16, 16)
    assert pgm_path.read_bytes().startswith(b"P5")


def test_infer_identity_checkpoint_returns_lr(phantom_dir, tmp_path, capsys):
    # an untrained model is the identity on the LR input; route it through disk
    cfg = ModelConfig(height=16, width=16, **TINY_MODEL)
    model = SSCMModel(cfg, seed=0)
    ckpt = tmp_path / "init.ssck"
    fileio.save_checkpoint(ckpt, checkpoint_entries(model))
    lr_path = tmp_path / "lr.ssct"
    assert main(["degrade", "--input", str(phantom_dir / "pair_0_tar.ssct"),
                 "--scale", "4", "--out", str(lr_path)]) == 0
    pred_path = tmp_path / "pred.ssct"
    rc = main(["infer", "--ckpt", str(ckpt), "--tar-lr", str(lr_path),
               "--ref-hr", str(phantom_dir / "pair_0_ref.ssct"),
               "--out", str(pred_path)])
    assert rc == 0
    capsys.readouterr()
    assert np.array_equal(fileio.load_ssct(pred_path), fileio.load_ssct(lr_path))


def test_infer_bad_checkpoint(phantom_dir, tmp_path):
    bad = tmp_path / "bad.ssck"
    bad.write_bytes(b"junk")
    rc = main(["infer", "--ckpt", str(bad),
               "--tar-lr", str(phantom_dir / "pair_0_tar.ssct"),
               "--ref-hr", str(phantom_dir / "pair_0_ref.ssct"),
               "--out", str(tmp_path / "p.ssct")])
    assert rc == 3


def test_eval_perfect_prediction(phantom_dir, tmp_path, capsys):
    csv = tmp_path / "scores.csv"
    gt = phantom_dir / "pair_0_tar.ssct"
    rc = main(["eval", "--pred", str(gt), "--gt", str(gt), "--csv", str(csv)])
    assert rc == 0
    assert "psnr_db=inf ssim=1.000000 rmse=0.000000" in capsys.readouterr().out
    lines = csv.read_text().splitlines()
    assert lines[0] == "id,psnr_db,ssim,rmse"
    assert lines[1] == "pair_0_tar,inf,1.000000,0.000000"


def test_eval_directories(phantom_dir, tmp_path, capsys):
    pred_dir = tmp_path / "pred"
    pred_dir.mkdir()
    for i in range(2):
        src = fileio.load_ssct(phantom_dir / f"pair_{i}_tar.ssct")
        fileio.save_ssct(pred_dir / f"pair_{i}_tar.ssct", src)
    csv = tmp_path / "scores.csv"
    rc = main(["eval", "--pred", str(pred_dir), "--gt", str(phantom_dir),
               "--csv", str(csv)])
    assert rc == 0
    capsys.readouterr()
    lines = csv.read_text().splitlines()
    assert len(lines) == 3
    assert lines[1].startswith("pair_0_tar,") and lines[2].startswith("pair_1_tar,")


def test_eval_file_dir_mismatch(phantom_dir, tmp_path):
    rc = main(["eval", "--pred", str(phantom_dir), "--csv",
               str(tmp_path / "c.csv"), "--gt", str(phantom_dir / "pair_0_tar.ssct")])
    assert rc == 2


def test_unknown_config_key_exits_2(phantom_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"channles": 8}}))
    rc = main(["train", "--config", str(cfg), "--data-dir", str(phantom_dir),
               "--out-ckpt", str(tmp_path / "m.ssck")])
    assert rc == 2


def test_invalid_json_config_exits_2(phantom_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    rc = main(["train", "--config", str(cfg), "--data-dir", str(phantom_dir),
               "--out-ckpt", str(tmp_path / "m.ssck")])
    assert rc == 2


def test_bad_set_override_exits_2(tmp_path):
    assert main(["param-count", "--set", "model.nope=1"]) == 2
    assert main(["param-count", "--set", "model.channels"]) == 2
    assert main(["param-count", "--set", "model.channels=eight"]) == 2
    # booleans are not integers under strict typing
    assert main(["param-count", "--set", "model.channels=true"]) == 2


def test_missing_data_dir_exits_3(tmp_path):
    rc = main(["train", "--data-dir", str(tmp_path),
               "--out-ckpt", str(tmp_path / "m.ssck")])
    assert rc == 3


def test_missing_reference_exits_3(phantom_dir, tmp_path):
    lone = tmp_path / "data"
    lone.mkdir()
    src = (phantom_dir / "pair_0_tar.ssct").read_bytes()
    (lone / "pair_0_tar.ssct").write_bytes(src)
    rc = main(["train", "--data-dir", str(lone),
               "--out-ckpt", str(tmp_path / "m.ssck")])
    assert rc == 3


def test_sscm_seed_env_override(monkeypatch):
    monkeypatch.setenv("SSCM_SEED", "1234")
    doc = resolve_config(None, None)
    assert doc["train"]["seed"] == 1234
    monkeypatch.setenv("SSCM_SEED", "not-a-number")
    with pytest.raises(ConfigError):
        resolve_config(None, None)


def test_set_override_applies(capsys):
    rc = main(["param-count", "--set", "model.channels=8",
               "--set", "model.num_blocks=1", "--set", "model.heads=2",
               "--set", "model.prototypes=2", "--set", "model.sub_group=16",
               "--set", "model.window=4", "--set", "model.window_stride=2"])
    assert rc == 0
    out = capsys.readouterr().out
    model = SSCMModel(ModelConfig(height=64, width=64, **TINY_MODEL), seed=0)
    assert f"total        {model.param_count()}" in out


def test_param_count_desk_preset(capsys):
    assert main(["param-count", "--preset", "desk"]) == 0
    out = capsys.readouterr().out
    assert f"total        {SSCMModel(desk_config(), seed=0).param_count()}" in out


def test_param_count_paper_preset_disclaims(capsys):
    assert main(["param-count", "--preset", "paper"]) == 0
    out = capsys.readouterr().out
    assert "no specific total" in out


def test_train_determinism_cli_level(phantom_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    blobs = []
    for run in ("a", "b"):
        ckpt = tmp_path / f"{run}.ssck"
        assert main(["train", "--config", str(cfg), "--data-dir", str(phantom_dir),
                     "--out-ckpt", str(ckpt)]) == 0
        blobs.append((ckpt.read_bytes(),
                      (tmp_path / f"{run}.loss.csv").read_bytes()))
    capsys.readouterr()
    assert blobs[0] == blobs[1]


def test_ablate_writes_five_rows(phantom_dir, tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json", iterations=2)
    csv = tmp_path / "ablation.csv"
    rc = main(["ablate", "--config", str(cfg), "--data-dir", str(phantom_dir),
               "--csv", str(csv)])
    assert rc == 0
    capsys.readouterr()
    lines = csv.read_text().splitlines()
    assert lines[0] == "dswm,satab,sffb,psnr,ssim"
    assert len(lines) == 6
    flags = [tuple(l.split(",")[:3]) for l in lines[1:]]
    assert flags[0] == ("false", "false", "false")
    assert flags[-1] == ("true", "true", "true")


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    assert "all ops within tolerance" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sscm", "param-count",
                           "--preset", "desk"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "total" in proc.stdout
