"""End-to-end miniature training run: pretrain, joint phase, completion, eval.

Runs a deliberately tiny configuration (a couple minutes on a laptop); the
acceptance suite runs the full desk-scale version of the same pipeline.
"""

import numpy as np

from cyclecomplete import losses as L
from cyclecomplete.chamfer import eval_metric
from cyclecomplete.shapes import DatasetSpec, build_dataset
from cyclecomplete.training import TrainConfig, Trainer

spec = DatasetSpec.from_total(("box", "cylinder"), 24, n_points=128, seed=5)
ds = build_dataset(spec)
inc_pool, comp_pool = ds.incomplete_pool(), ds.complete_pool()
print(f"pools: {inc_pool.shape[0]} partial clouds / {comp_pool.shape[0]} complete clouds")

cfg = TrainConfig(d_r=32, d_z=8, n_points=128, batch_size=8,
                  steps=600, pretrain_steps=300, lr=1e-3, seed=2,
                  encoder_widths=(32, 64), decoder_widths=(64, 128),
                  transfer_width=64, critic_width=64)
trainer = Trainer(cfg, inc_pool, comp_pool)

print("\n== training ==")
for i in range(cfg.pretrain_steps + cfg.steps):
    report = trainer.train_step()
    if report.step % 150 == 0:
        line = f"step {report.step:4d}  L_AE={report.l_ae:.4f}"
        if report.l_cycle is not None:
            line += (f"  L_cycle={report.l_cycle:.4f}  L_code={report.l_code:.4f}"
                     f"  L_D={report.l_d:.3f}")
        print(line)

print("\n== held-out completion vs identity baseline ==")
completion, identity = [], []
for sample in ds.by_split("eval"):
    for part in sample.partials:
        pred = L.predict_complete(trainer.bundle, part)
        completion.append(eval_metric(pred, sample.complete))
        identity.append(eval_metric(part, sample.complete))
print(f"mean metric of completions:   {np.mean(completion):8.1f}")
print(f"mean metric of raw partials:  {np.mean(identity):8.1f}")
print("completion beats identity:", np.mean(completion) < np.mean(identity))
