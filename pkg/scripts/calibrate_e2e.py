"""Calibration run for the toy end-to-end protocol (frozen into tests)."""
import json
import time

import numpy as np

from sscm import data, train
from sscm.model import SSCMModel, desk_config

t0 = time.time()
train_pairs = [data.generate_phantom_pair(data.PhantomSpec(seed=100 + i, size=64, scale=4))
               for i in range(8)]
val_pairs = [data.generate_phantom_pair(data.PhantomSpec(seed=108 + i, size=64, scale=4))
             for i in range(4)]

zp = [data.evaluate_pair(p.tar_lr, p.tar_hr)[0] for p in val_pairs]
print("ZP val PSNRs:", [f"{v:.2f}" for v in zp], "mean", f"{np.mean(zp):.3f}", flush=True)

model = SSCMModel(desk_config(), seed=0)
cfg = train.TrainConfig(lr=2e-4, iterations=2000, seed=0)
res = train.train(model, train_pairs, cfg)
t_train = time.time() - t0

sr = []
for p in val_pairs:
    pred = model(p.tar_lr, p.ref_hr)
    sr.append(data.evaluate_pair(pred, p.tar_hr)[0])
print("SR val PSNRs:", [f"{v:.2f}" for v in sr], "mean", f"{np.mean(sr):.3f}", flush=True)
print(json.dumps({
    "zp_mean": float(np.mean(zp)),
    "sr_mean": float(np.mean(sr)),
    "margin_db": float(np.mean(sr) - np.mean(zp)),
    "first_loss": res.trace[0][1],
    "loss_500": res.trace[499][1],
    "loss_1000": res.trace[999][1],
    "final_loss": res.final_loss,
    "train_seconds": t_train,
}, indent=2), flush=True)
