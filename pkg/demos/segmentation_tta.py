"""Short U-Net training on phantom frames; plain vs. rotation-TTA metrics.

    python3 demos/segmentation_tta.py
"""
import numpy as np

from lvtos.metrics import seg_metrics
from lvtos.phantom import PhantomSpec, make_dataset, split
from lvtos.segnet import SegTrainConfig, UNetConfig, predict, train_segnet

cases, manifest = make_dataset(12, PhantomSpec(), seed=2)
train, test = split(cases, manifest)
rng = np.random.default_rng(0)
frames = [(c, t) for c in train for t in rng.choice(c.spec.frames, 3, replace=False)]
x = np.array([c.images[t] for c, t in frames])
y = np.array([c.masks[t] for c, t in frames])
xv = np.array([c.images[0] for c in test])
yv = np.array([c.masks[0] for c in test])

ck, rows = train_segnet(x, y, UNetConfig(base_width=4, levels=3),
                        SegTrainConfig(steps=150, log_every=50), xv, yv)
for r in rows:
    if r["val_dice"] is not None:
        print(f"step {r['step']:4d}  loss {r['loss']:.3f}  val dice {r['val_dice']:.3f}")
for tta in (False, True):
    m = [seg_metrics(p, t) for p, t in zip(predict(xv, ck, tta=tta), yv)]
    print(("tta  " if tta else "plain"),
          " ".join(f"{k} {np.mean([d[k] for d in m]):.3f}" for k in ("dice", "hausdorff_px", "msd_px")))
