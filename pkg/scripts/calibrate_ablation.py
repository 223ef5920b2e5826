"""Calibrate the ablation sweep protocol: find a small budget where the
component ordering (full >= each single-removed >= window baseline) is
stable across seeds.  Prints per-seed and mean PSNR per variant.
"""
import copy
import json
import time

from sscm import data
from sscm.cli import ABLATION_ROWS, run_ablation

import os

SIZE = int(os.environ.get("ABL_SIZE", "32"))
SCALE = 4
OFFSET = (float(os.environ.get("ABL_DY", "1.0")), float(os.environ.get("ABL_DX", "0.5")))
VARY = int(os.environ.get("ABL_VARY", "0"))
# per-pair rigid shifts, fixed tables so runs stay reproducible; a shift that
# differs between pairs cannot be absorbed by static convs, only by the warp
TRAIN_OFFSETS = [
    (2.0, 1.0), (-1.0, -2.0), (1.5, -0.5), (-2.0, 1.5),
    (0.5, 2.0), (-1.5, -1.0), (2.0, -2.0), (-0.5, 0.5),
    (1.0, 2.0), (-2.0, -0.5), (0.5, -1.5), (2.0, 0.5),
    (-1.0, 1.0), (1.5, 1.5), (-0.5, -2.0), (1.0, -1.0),
]
VAL_OFFSETS = [(1.2, -0.8), (-1.7, 0.9), (0.8, 1.6), (-0.9, -1.4), (1.8, 0.3), (-0.4, 1.1)]
TRAIN_SEEDS = tuple(200 + i for i in range(int(os.environ.get("ABL_NTRAIN", "8"))))
VAL_SEEDS = (500, 501, 502, 503, 504, 505)  # far from any train-seed range
_seed_base = int(os.environ.get("ABL_SEED_BASE", "0"))
RUN_SEEDS = tuple(range(_seed_base, _seed_base + int(os.environ.get("ABL_NSEEDS", "3"))))
ITERATIONS = int(os.environ.get("ABL_ITERS", "800"))
LR = float(os.environ.get("ABL_LR", "1e-3"))
WINDOW = int(os.environ.get("ABL_WINDOW", "4"))
STRIDE = int(os.environ.get("ABL_STRIDE", "2"))
DECAY = float(os.environ.get("ABL_DECAY", "0.9"))

DOC = {
    "model": {
        "channels": int(os.environ.get("ABL_C", "16")),
        "num_blocks": int(os.environ.get("ABL_N", "1")),
        "prototypes": int(os.environ.get("ABL_K", "4")),
        "sub_group": int(os.environ.get("ABL_G", "32")),
        "window": WINDOW,
        "window_stride": STRIDE,
        "heads": int(os.environ.get("ABL_HEADS", "4")),
        "ffn_expansion": 2,
        "use_dswm": True,
        "use_satab": True,
        "use_sffb": True,
        "height": SIZE,
        "width": SIZE,
    },
    "train": {
        "lr": LR,
        "iterations": ITERATIONS,
        "batch_size": 1,
        "seed": 0,
        "ema_decay": DECAY,
        "checkpoint_every": 0,
    },
    "data": {"scale": SCALE},
}


def make_pairs(seeds, offsets=None):
    out = []
    for i, s in enumerate(seeds):
        off = offsets[i % len(offsets)] if (VARY and offsets) else OFFSET
        spec = data.PhantomSpec(seed=s, size=SIZE, offset=off, scale=SCALE)
        out.append(data.generate_phantom_pair(spec))
    return out


def main():
    train_pairs = make_pairs(TRAIN_SEEDS, TRAIN_OFFSETS)
    val_pairs = make_pairs(VAL_SEEDS, VAL_OFFSETS)
    zp = [data.evaluate_pair(p.tar_lr, p.tar_hr)[0] for p in val_pairs]
    off_desc = "varied" if VARY else str(OFFSET)
    print(f"protocol: iters={ITERATIONS} lr={LR} window={WINDOW}/{STRIDE} "
          f"offset={off_desc} ntrain={len(TRAIN_SEEDS)} decay={DECAY}", flush=True)
    print(f"ZP val PSNRs: {[f'{v:.2f}' for v in zp]}", flush=True)

    per_variant = {row: [] for row in ABLATION_ROWS}
    for seed in RUN_SEEDS:
        doc = copy.deepcopy(DOC)
        doc["train"]["seed"] = seed
        t0 = time.time()
        rows = run_ablation(doc, train_pairs, val_pairs)
        dt = time.time() - t0
        for d, s, f, p, _ in rows:
            per_variant[(d, s, f)].append(p)
        printable = {f"{int(d)}{int(s)}{int(f)}": round(p, 3) for d, s, f, p, _ in rows}
        print(f"seed {seed}: {printable}  ({dt:.0f}s)", flush=True)

    means = {row: sum(v) / len(v) for row, v in per_variant.items()}
    full = means[(True, True, True)]
    base = means[(False, False, False)]
    removed = {
        "no_dswm": means[(False, True, True)],
        "no_satab": means[(True, False, True)],
        "no_sffb": means[(True, True, False)],
    }
    print(json.dumps({
        "means": {f"{int(d)}{int(s)}{int(f)}": round(p, 4) for (d, s, f), p in means.items()},
        "full_minus_removed": {k: round(full - v, 4) for k, v in removed.items()},
        "removed_minus_base": {k: round(v - base, 4) for k, v in removed.items()},
    }, indent=2), flush=True)

    ok = all(full >= v - 0.05 for v in removed.values())
    ok = ok and all(v >= base - 0.05 for v in removed.values())
    print(f"ordering ok (0.05 dB slack): {ok}", flush=True)


if __name__ == "__main__":
    main()
