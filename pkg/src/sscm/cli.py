"""Command-line surface: phantoms, degradation, training, inference,
evaluation, ablation sweeps, gradient checking, parameter counting.

Exit codes: 0 success, 2 bad arguments or config, 3 I/O or file-format
failure, 4 numeric failure during training, 5 gradient-check failure.
All outputs are deterministic: identical inputs and seed give bitwise
identical files. ``SSCM_SEED`` overrides the configured seed.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import data, fileio, train as train_mod
from .errors import ConfigError, FormatError, SSCMError, TrainingError
from .gradcheck import gradcheck_suite
from .model import ModelConfig, SSCMModel, desk_config, paper_config
from .tensor import Tensor

DEFAULT_DOC = {
    "model": {
        "channels": 32, "num_blocks": 2, "prototypes": 8, "sub_group": 64,
        "window": 8, "window_stride": 4, "heads": 4, "ffn_expansion": 2,
        "use_dswm": True, "use_satab": True, "use_sffb": True,
        "height": 64, "width": 64,
    },
    "train": {
        "lr": 2e-4, "iterations": 2000, "batch_size": 1, "seed": 0,
        "ema_decay": 0.99, "checkpoint_every": 0,
    },
    "data": {"scale": 4},
}


def _check_value(section: str, key: str, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config {section}.{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config {section}.{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config {section}.{key}: expected a number, got {value!r}")
        return float(value)
    raise ConfigError(f"config {section}.{key}: unsupported field type")


def resolve_config(config_path: str | None, overrides: list[str] | None) -> dict:
    """Defaults -> JSON document -> --set overrides, strictly validated."""
    doc = copy.deepcopy(DEFAULT_DOC)
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as f:
            try:
                user = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config {config_path}: invalid JSON ({e})") from e
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        for section, body in user.items():
            if section not in doc:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            for key, value in body.items():
                if key not in doc[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                doc[section][key] = _check_value(section, key, DEFAULT_DOC[section][key], value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2 or parts[0] not in doc or parts[1] not in doc[parts[0]]:
            raise ConfigError(f"--set: unknown config key {dotted!r}")
        section, key = parts
        try:
            value = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError(f"--set {dotted}: invalid value {raw!r} ({e})") from e
        doc[section][key] = _check_value(section, key, DEFAULT_DOC[section][key], value)
    seed_env = os.environ.get("SSCM_SEED")
    if seed_env is not None:
        try:
            doc["train"]["seed"] = int(seed_env)
        except ValueError as e:
            raise ConfigError(f"SSCM_SEED must be an integer, got {seed_env!r}") from e
    return doc


def echo_config(command: str, doc: dict) -> None:
    print(f"resolved config ({command}): {json.dumps(doc, sort_keys=True)}")


def _model_config(doc: dict) -> ModelConfig:
    return ModelConfig(**doc["model"]).validate()


def _train_config(doc: dict) -> train_mod.TrainConfig:
    cfg = train_mod.TrainConfig(**doc["train"])
    cfg.validate()
    return cfg


def _load_image(path) -> Tensor:
    arr = fileio.load_ssct(path)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] != 1:
        raise FormatError(f"{path}: expected a (H,W) or (1,H,W) tensor, got {arr.shape}")
    return Tensor(arr)


def load_pairs(data_dir, scale: int) -> list[data.ImagePair]:
    """pair_<i>_{tar,ref}.ssct files -> ImagePairs, degraded at ``scale``."""
    root = Path(data_dir)
    tars = {}
    for p in root.glob("pair_*_tar.ssct"):
        m = re.fullmatch(r"pair_(\d+)_tar\.ssct", p.name)
        if m:
            tars[int(m.group(1))] = p
    if not tars:
        raise FormatError(f"{data_dir}: no pair_<i>_tar.ssct files found")
    pairs = []
    grid = None
    for i in sorted(tars):
        ref_path = root / f"pair_{i}_ref.ssct"
        if not ref_path.exists():
            raise FormatError(f"{data_dir}: pair {i} has no reference file")
        tar = _load_image(tars[i])
        ref = _load_image(ref_path)
        if tar.shape != ref.shape:
            raise FormatError(f"pair {i}: target {tar.shape} vs reference {ref.shape}")
        if grid is None:
            grid = tar.shape
        elif tar.shape != grid:
            raise FormatError(f"pair {i}: grid {tar.shape} differs from first pair {grid}")
        pairs.append(data.ImagePair(tar, ref, data.degrade_kspace(tar, scale), scale))
    return pairs


def cmd_make_phantoms(args) -> int:
    echo_config("make-phantoms", {
        "count": args.count, "size": args.size, "seed": args.seed,
        "offset": list(args.offset), "out_dir": str(args.out_dir),
    })
    if args.count < 0:
        raise ConfigError(f"--count must be >= 0, got {args.count}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        spec = data.PhantomSpec(seed=args.seed + i, size=args.size,
                                offset=args.offset, scale=1)
        pair = data.generate_phantom_pair(spec)
        fileio.save_ssct(out / f"pair_{i}_tar.ssct", pair.tar_hr.numpy())
        fileio.save_ssct(out / f"pair_{i}_ref.ssct", pair.ref_hr.numpy())
    print(f"wrote {2 * args.count} files to {out}")
    return 0


def cmd_degrade(args) -> int:
    echo_config("degrade", {"input": str(args.input), "scale": args.scale,
                            "out": str(args.out)})
    hr = _load_image(args.input)
    lr = data.degrade_kspace(hr, args.scale)
    fileio.save_ssct(args.out, lr.numpy())
    print(f"psnr_db={fileio.format_db(data.psnr(lr, hr))}")
    return 0


def cmd_train(args) -> int:
    doc = resolve_config(args.config, args.set)
    pairs = load_pairs(args.data_dir, doc["data"]["scale"])
    h, w = pairs[0].tar_hr.shape[-2:]
    doc["model"]["height"], doc["model"]["width"] = h, w  # grid comes from the data
    echo_config("train", doc)
    mcfg = _model_config(doc)
    tcfg = _train_config(doc)
    model = SSCMModel(mcfg, seed=tcfg.seed)
    loss_csv = args.loss_csv if args.loss_csv else str(Path(args.out_ckpt).with_suffix(".loss.csv"))
    result = train_mod.train(model, pairs, tcfg, checkpoint_path=args.out_ckpt,
                             loss_csv_path=loss_csv)
    print(f"final l1_loss={result.final_loss:.8e} over {tcfg.iterations} iterations")
    print(f"checkpoint={args.out_ckpt} loss_csv={loss_csv}")
    return 0


def cmd_infer(args) -> int:
    echo_config("infer", {"ckpt": str(args.ckpt), "tar_lr": str(args.tar_lr),
                          "ref_hr": str(args.ref_hr), "out": str(args.out)})
    model, _ = train_mod.load_model_checkpoint(args.ckpt)
    lr = _load_image(args.tar_lr)
    ref = _load_image(args.ref_hr)
    pred = model(lr, ref)
    fileio.save_ssct(args.out, pred.numpy())
    if args.pgm:
        fileio.save_pgm(args.pgm, np.clip(pred.numpy()[0], 0.0, 1.0))
    if args.dump_disp:
        disp = model.dswm.last_displacement
        if disp is None:
            disp = np.zeros((2,) + lr.shape[-2:], dtype=np.float32)
        fileio.save_ssct(args.dump_disp, disp)
    if args.dump_groups:
        maps = [m for m in model.assignment_maps() if m is not None]
        stack = (np.stack(maps).astype(np.float32) if maps
                 else np.zeros((0,) + lr.shape[-2:], dtype=np.float32))
        fileio.save_ssct(args.dump_groups, stack)
    print(f"prediction={args.out}")
    return 0


def _eval_pairs(pred_path: Path, gt_path: Path) -> list[tuple[str, Path, Path]]:
    if pred_path.is_dir() != gt_path.is_dir():
        raise ConfigError("eval: --pred and --gt must both be files or both directories")
    if not pred_path.is_dir():
        return [(pred_path.stem, pred_path, gt_path)]
    preds = {p.stem: p for p in pred_path.glob("*.ssct")}
    gts = {p.stem: p for p in gt_path.glob("*.ssct")}
    common = sorted(set(preds) & set(gts))
    if not common:
        raise FormatError("eval: no matching .ssct basenames between --pred and --gt")
    return [(name, preds[name], gts[name]) for name in common]


def cmd_eval(args) -> int:
    echo_config("eval", {"pred": str(args.pred), "gt": str(args.gt),
                         "csv": str(args.csv)})
    rows = []
    for name, ppath, gpath in _eval_pairs(Path(args.pred), Path(args.gt)):
        p, s, r = data.evaluate_pair(_load_image(ppath), _load_image(gpath))
        rows.append((name, fileio.format_db(p), f"{s:.6f}", f"{r:.6f}"))
        print(f"{name}: psnr_db={fileio.format_db(p)} ssim={s:.6f} rmse={r:.6f}")
    fileio.write_csv(args.csv, "id,psnr_db,ssim,rmse", rows)
    return 0


ABLATION_ROWS = [
    (False, False, False),
    (False, True, True),
    (True, False, True),
    (True, True, False),
    (True, True, True),
]


def run_ablation(doc: dict, pairs, val_pairs) -> list[tuple[bool, bool, bool, float, float]]:
    rows = []
    for use_dswm, use_satab, use_sffb in ABLATION_ROWS:
        var = copy.deepcopy(doc)
        var["model"].update(use_dswm=use_dswm, use_satab=use_satab, use_sffb=use_sffb)
        mcfg = _model_config(var)
        tcfg = _train_config(var)
        model = SSCMModel(mcfg, seed=tcfg.seed)
        train_mod.train(model, pairs, tcfg)
        psnrs, ssims = [], []
        for pair in val_pairs:
            pred = model(pair.tar_lr, pair.ref_hr)
            p, s, _ = data.evaluate_pair(pred, pair.tar_hr)
            psnrs.append(p)
            ssims.append(s)
        rows.append((use_dswm, use_satab, use_sffb,
                     float(np.mean(psnrs)), float(np.mean(ssims))))
    return rows


def cmd_ablate(args) -> int:
    doc = resolve_config(args.config, args.set)
    pairs = load_pairs(args.data_dir, doc["data"]["scale"])
    h, w = pairs[0].tar_hr.shape[-2:]
    doc["model"]["height"], doc["model"]["width"] = h, w
    echo_config("ablate", doc)
    val_pairs = load_pairs(args.val_dir, doc["data"]["scale"]) if args.val_dir else pairs
    rows = run_ablation(doc, pairs, val_pairs)
    csv_rows = []
    for d, s, f, p, ss in rows:
        csv_rows.append((str(d).lower(), str(s).lower(), str(f).lower(),
                         fileio.format_db(p), f"{ss:.6f}"))
        print(f"dswm={d} satab={s} sffb={f}: psnr={fileio.format_db(p)} ssim={ss:.6f}")
    fileio.write_csv(args.csv, "dswm,satab,sffb,psnr,ssim", csv_rows)
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck_suite(seed=args.seed)
    for line in report.lines():
        print(line)
    if not report.passed:
        print("gradcheck: FAILED")
        return 5
    print("gradcheck: all ops within tolerance")
    return 0


def cmd_param_count(args) -> int:
    if args.preset == "paper":
        mcfg = paper_config()
    elif args.preset == "desk":
        mcfg = desk_config()
    else:
        doc = resolve_config(args.config, args.set)
        echo_config("param-count", doc)
        mcfg = _model_config(doc)
    model = SSCMModel(mcfg, seed=0)
    for name, count in model.param_breakdown().items():
        print(f"{name:<12s} {count}")
    print(f"total        {model.param_count()}")
    if args.preset == "paper":
        print("note: this preset records architecture hyperparameters only; "
              "no specific total (e.g. 6.1M) is guaranteed.")
    return 0


def _offset(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"offset must be 'dy,dx', got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sscm",
                                 description="Reference-guided multi-contrast super-resolution toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-phantoms", help="generate synthetic two-contrast phantom pairs")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--offset", type=_offset, default=(0.0, 0.0),
                   help="rigid dy,dx shift of the reference contrast")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_make_phantoms)

    p = sub.add_parser("degrade", help="k-space center crop + zero fill")
    p.add_argument("--input", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train on a directory of phantom pairs")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--loss-csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run a checkpoint on one LR/reference pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tar-lr", required=True)
    p.add_argument("--ref-hr", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", help="optional PGM preview of the prediction")
    p.add_argument("--dump-disp", help="write the predicted displacement field as SSCT")
    p.add_argument("--dump-groups", help="write per-block group-assignment maps as SSCT")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM/RMSE of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score the five module on/off combinations")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--val-dir")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("param-count", help="parameter total and per-module breakdown")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--preset", choices=["desk", "paper"])
    p.set_defaults(func=cmd_param_count)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except TrainingError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except SSCMError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
